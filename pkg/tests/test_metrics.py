import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iedpuf import metrics, sigcore
from iedpuf.metrics import FleetConfig, CsvError

from conftest import IED1, SIG1_DELTA, SIG2_DELTA, REF_DIODE_MV

pytestmark = pytest.mark.filterwarnings("ignore::iedpuf.sigcore.SaturationWarning")

REF_S1_COUNTS = (843, 800, 824, 836, 868, 828, 854, 851, 794, 811, 851, 840)


def test_uniqueness_examples():
    a = "0110" * 10
    comp = "".join("1" if c == "0" else "0" for c in a)
    assert metrics.uniqueness(a, a) == 0.0
    assert metrics.uniqueness(a, comp) == 1.0
    assert metrics.uniqueness(SIG1_DELTA, SIG2_DELTA) == pytest.approx(6 / 22)


def test_uniqueness_matrix_symmetric():
    rng = np.random.default_rng(0)
    sigs = ["".join(map(str, rng.integers(0, 2, 154))) for _ in range(5)]
    mat = metrics.uniqueness_matrix(sigs)
    assert np.allclose(mat, mat.T) and np.all(np.diag(mat) == 0)
    assert mat[1, 3] == pytest.approx(metrics.uniqueness(sigs[1], sigs[3]))


def test_stability():
    assert metrics.stability(["0101", "0101", "0101"]) == {"worst": 0.0, "mean": 0.0}
    assert metrics.stability(["0000", "0001", "0011"]) == {"worst": 0.5, "mean": 0.375}
    with pytest.raises(ValueError):
        metrics.stability(["0101"])


def test_bias():
    assert metrics.bias("0" * 22) == 0.0
    assert metrics.bias(SIG1_DELTA) == pytest.approx(12 / 22)


def test_entropy_examples():
    assert metrics.entropy_of_counts([100] * 12) == pytest.approx(math.log2(12))
    assert metrics.entropy_of_counts([0] * 11 + [50]) == 0.0
    h = metrics.entropy_of_counts(REF_S1_COUNTS)
    assert abs(h - math.log2(12)) / math.log2(12) < 3e-4


def test_identical_challenges_zero_entropy():
    report = metrics.position_entropy([tuple(range(12))] * 50)
    assert report.per_position == [0.0] * 12


def test_position_entropy_via_table():
    # rebuild challenges whose first position reproduces the reference S1 column
    first = [d for d, n in enumerate(REF_S1_COUNTS) for _ in range(n)]
    rows = [(f,) + tuple(x for x in range(12) if x != f) for f in first]
    report = metrics.position_entropy(rows)
    assert [row[0] for row in report.table] == list(REF_S1_COUNTS)
    assert report.per_position[0] == pytest.approx(metrics.entropy_of_counts(REF_S1_COUNTS))


@settings(max_examples=30)
@given(st.lists(st.permutations(range(12)), min_size=1, max_size=40))
def test_entropy_bounds(perms):
    report = metrics.position_entropy(perms)
    assert all(0.0 <= h <= metrics.H_MAX + 1e-12 for h in report.per_position)
    assert all(sum(row[k] for row in report.table) == len(perms) for k in range(12))


def test_position_entropy_rejects_short():
    with pytest.raises(ValueError):
        metrics.position_entropy([(0, 1, 2)])


def test_occurrence_table_format():
    text = metrics.format_occurrence_table(metrics.entropy_experiment(500, seed=3))
    lines = text.splitlines()
    assert len(lines) == 14
    assert lines[0].split() == [f"S{k}" for k in range(1, 13)]
    assert all(len(x.split(".")) == 2 for x in lines[-1].split()[1:])


def test_report_json_round_trip():
    by_dev = {"A": ["0101" * 5, "0101" * 5], "B": ["1100" * 5, "1101" * 5]}
    report = metrics.report_from_signatures(by_dev)
    again = metrics.MetricReport.from_json(report.to_json())
    assert again == report
    s = metrics.summarize(report)
    assert s["worst_intra"] == pytest.approx(0.25)


def test_single_device_flagged():
    report = metrics.report_from_signatures({"A": ["0101", "0111"]})
    assert report.uniqueness["flag"] == "INSUFFICIENT_DEVICES"
    assert report.uniqueness["matrix"] == []


def test_fleet_small_is_deterministic_and_ingestable(tmp_path):
    cfg = FleetConfig(n_devices=2, n_reads=5, supply_points=3)
    r1, csv1 = metrics.run_fleet_experiment(cfg)
    r2, csv2 = metrics.run_fleet_experiment(cfg)
    assert r1.to_json() == r2.to_json() and csv1 == csv2
    path = tmp_path / "raw.csv"
    path.write_text(csv1)
    grouped = metrics.group_by_device(metrics.ingest_csv(path))
    assert sorted(grouped) == ["IED-1", "IED-2"]
    assert len(grouped["IED-1"]) == 5
    again = metrics.report_from_signatures(grouped)
    assert again.stability == r1.stability
    assert again.uniqueness["matrix"] == r1.uniqueness["matrix"]


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_ingest_reference_row(tmp_path):
    path = tmp_path / "bench.csv"
    _write_rows(path, metrics.CSV_COLUMNS, [["IED-1", 0, *REF_DIODE_MV, *IED1[0], IED1[1]]])
    sig = metrics.ingest_csv(path)[("IED-1", "0")]
    assert sig.delta_bits == SIG1_DELTA
    assert sig.diode_bits == sigcore.diode_signature(REF_DIODE_MV)


def test_ingest_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(CsvError):
        metrics.ingest_csv(empty)

    short = tmp_path / "short.csv"
    header = [c for c in metrics.CSV_COLUMNS if c != "d11"]
    _write_rows(short, header, [["X", 0, *REF_DIODE_MV[:11], *IED1[0], IED1[1]]])
    with pytest.raises(CsvError, match="d11"):
        metrics.ingest_csv(short)

    bad = tmp_path / "bad.csv"
    row = ["X", 0, *REF_DIODE_MV, *IED1[0], IED1[1]]
    _write_rows(bad, metrics.CSV_COLUMNS, [row, row[:5] + ["oops"] + row[6:]])
    with pytest.raises(CsvError) as exc:
        metrics.ingest_csv(bad)
    assert exc.value.line == 3 and "d3" in str(exc.value)
