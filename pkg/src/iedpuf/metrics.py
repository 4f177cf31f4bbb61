"""PUF quality metrics, the fleet experiment harness, and CSV ingestion."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels, sigcore
from .hwmodel import SimParams, SimulatedIed, synth_fleet
from .sigcore import BitString, Challenge, N_PORTS, PufSignature

H_MAX = math.log2(N_PORTS)

CSV_COLUMNS = ["device", "read"] + [f"d{i}" for i in range(N_PORTS)] + ["vrg1", "vrg2", "vrg3", "tp_ns"]


class CsvError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


def _bits(sig) -> BitString:
    if isinstance(sig, PufSignature):
        return sig.bits
    return BitString(sig)


def uniqueness(a, b) -> float:
    """Fractional Hamming distance between signatures of two devices."""
    return sigcore.hamming(_bits(a), _bits(b)).fraction


def uniqueness_matrix(sigs: Sequence) -> np.ndarray:
    arrs = np.stack([_bits(s).to_array() for s in sigs])
    return kernels.hamming_matrix(arrs) / arrs.shape[1]


def stability(readings: Sequence) -> dict:
    """Worst and mean fractional Hamming of each later reading against the first."""
    if len(readings) < 2:
        raise ValueError("stability needs at least two readings")
    ref = _bits(readings[0])
    fracs = [sigcore.hamming(ref, _bits(r)).fraction for r in readings[1:]]
    return {"worst": max(fracs), "mean": float(np.mean(fracs))}


def bias(sig) -> float:
    b = _bits(sig)
    return b.count() / len(b) if len(b) else 0.0


def entropy_of_counts(counts) -> float:
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        return 0.0
    p = c[c > 0] / total
    return float(-(p * np.log2(p)).sum()) + 0.0


@dataclass
class EntropyReport:
    per_position: list[float]
    table: list[list[int]]  # rows = diodes D0..D11, columns = positions S1..S12
    n_challenges: int
    h_max: float = H_MAX

    @property
    def max_relative_error(self) -> float:
        return max(abs(h - self.h_max) / self.h_max for h in self.per_position)


def position_entropy(challenges: Iterable) -> EntropyReport:
    rows = [c.ports if isinstance(c, Challenge) else tuple(c) for c in challenges]
    if not rows:
        raise ValueError("no challenges")
    if any(len(r) != N_PORTS for r in rows):
        raise ValueError(f"all challenges must have length {N_PORTS}")
    table = kernels.occurrence_table(np.array(rows, dtype=np.intp), N_PORTS)
    per_pos = [entropy_of_counts(table[:, k]) for k in range(table.shape[1])]
    return EntropyReport(per_pos, table.tolist(), len(rows))


def format_occurrence_table(report: EntropyReport) -> str:
    table = report.table
    width = max(8, max(len(str(x)) for row in table for x in row) + 1)
    head = "".ljust(4) + "".join(f"S{k + 1}".rjust(width) for k in range(len(table[0])))
    lines = [head]
    for i, row in enumerate(table):
        lines.append(f"D{i}".ljust(4) + "".join(str(x).rjust(width) for x in row))
    lines.append("H".ljust(4) + "".join(f"{h:.4f}".rjust(width) for h in report.per_position))
    return "\n".join(lines)


def entropy_experiment(n_challenges: int = 10_000, seed: int = 1) -> EntropyReport:
    from .verifier import VerifierConfig, gen_challenge

    cfg = VerifierConfig(m_range=(N_PORTS, N_PORTS))
    rng = np.random.default_rng(seed)
    return position_entropy(gen_challenge(rng, cfg) for _ in range(n_challenges))


@dataclass
class MetricReport:
    uniqueness: dict
    stability: dict
    bias: dict
    entropy: dict | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def report_from_signatures(by_device: dict[str, list[PufSignature]], config: dict | None = None) -> MetricReport:
    """Uniqueness over first readings, stability against first reading, bias of first reading."""
    devices = list(by_device)
    refs = [by_device[d][0] for d in devices]
    if len(devices) >= 2:
        mat = uniqueness_matrix(refs)
        off = mat[~np.eye(len(devices), dtype=bool)]
        uniq = {
            "devices": devices,
            "matrix": mat.tolist(),
            "worst": float(off.min()),
            "mean": float(off.mean()),
            "flag": None,
        }
    else:
        uniq = {"devices": devices, "matrix": [], "worst": None, "mean": None, "flag": "INSUFFICIENT_DEVICES"}
    stab = {}
    for d in devices:
        reads = by_device[d]
        stab[d] = {**stability(reads), "n_reads": len(reads)} if len(reads) >= 2 else {
            "worst": None, "mean": None, "n_reads": len(reads)
        }
    return MetricReport(
        uniqueness=uniq,
        stability=stab,
        bias={d: bias(by_device[d][0]) for d in devices},
        config=dict(config or {}),
    )


def summarize(report: MetricReport) -> dict:
    worst_intra = max((s["worst"] for s in report.stability.values() if s["worst"] is not None), default=None)
    biases = list(report.bias.values())
    return {
        "worst_intra": worst_intra,
        "mean_inter": report.uniqueness["mean"],
        "worst_inter": report.uniqueness["worst"],
        "bias_min": min(biases) if biases else None,
        "bias_max": max(biases) if biases else None,
    }


@dataclass(frozen=True)
class FleetConfig:
    n_devices: int = 20
    n_reads: int = 50
    supply_sweep: tuple[float, float] = (70.0, 230.0)
    supply_points: int = 9
    fleet_seed: int = 2024
    measure_seed: int = 7
    samples_per_port: int = 16
    params: SimParams = field(default_factory=SimParams)

    def __post_init__(self):
        if self.n_devices < 1:
            raise ValueError("n_devices must be >= 1")
        if self.n_reads < 2:
            raise ValueError("n_reads must be >= 2")
        if self.supply_points < 1 or self.samples_per_port < 1:
            raise ValueError("supply_points and samples_per_port must be >= 1")
        lo, hi = self.supply_sweep
        if not 70.0 <= lo <= hi <= 230.0:
            raise ValueError("supply sweep must lie within [70, 230] V")

    def describe(self) -> dict:
        d = asdict(self)
        d["params"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["params"].items()}
        d["supply_sweep"] = list(self.supply_sweep)
        return d


def run_fleet_experiment(cfg: FleetConfig | None = None) -> tuple[MetricReport, str]:
    """Synthesize a fleet, take the first read as enrollment, re-read across the supply sweep.

    Returns the report and the raw readings as CSV text (ingestable by ``ingest_csv``).
    """
    cfg = cfg or FleetConfig()
    fleet = synth_fleet(cfg.n_devices, cfg.fleet_seed, cfg.params)
    supplies = np.linspace(cfg.supply_sweep[0], cfg.supply_sweep[1], cfg.supply_points)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS + ["supply_v"])
    by_device: dict[str, list[PufSignature]] = {}
    for idx, truth in enumerate(fleet):
        dev = SimulatedIed(truth, cfg.params)
        rng = np.random.default_rng([cfg.measure_seed, idx])
        vrg_raw = dev.serial_query("VRG?")
        tp_raw = dev.serial_query("TP?")
        vrg = [float(x) for x in vrg_raw.split(",")]
        delta = sigcore.delta_signature(sigcore.delta_fields(vrg, float(tp_raw)))
        sigs = []
        for r in range(cfg.n_reads):
            supply = float(supplies[r % len(supplies)])
            dev.set_environment(supply_v=supply)
            volts = [float(np.mean(dev.sample(p, rng, cfg.samples_per_port))) for p in range(N_PORTS)]
            sigs.append(sigcore.full_signature(sigcore.diode_signature(volts), delta))
            writer.writerow([truth.device_id, r] + [repr(v) for v in volts] + vrg_raw.split(",") + [tp_raw, f"{supply:g}"])
        by_device[truth.device_id] = sigs
    report = report_from_signatures(by_device, cfg.describe())
    return report, out.getvalue()


def ingest_csv(path) -> dict[tuple[str, str], PufSignature]:
    """One signature per (device, read) row of a bench CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise CsvError("empty file")
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise CsvError(f"missing column(s): {', '.join(missing)}", line=1)
    out: dict[tuple[str, str], PufSignature] = {}
    for row in reader:
        line = reader.line_num
        try:
            nums = {c: float(row[c]) for c in CSV_COLUMNS[2:]}
        except (TypeError, ValueError):
            bad = next(c for c in CSV_COLUMNS[2:] if not _is_number(row.get(c)))
            raise CsvError(f"non-numeric value in column {bad!r}: {row.get(bad)!r}", line=line) from None
        try:
            volts = sigcore.DiodeVector(tuple(nums[f"d{i}"] for i in range(N_PORTS)))
            delta = sigcore.delta_fields((nums["vrg1"], nums["vrg2"], nums["vrg3"]), nums["tp_ns"])
        except ValueError as exc:
            raise CsvError(str(exc), line=line) from None
        key = (row["device"], row["read"])
        out[key] = sigcore.full_signature(sigcore.diode_signature(volts), sigcore.delta_signature(delta))
    if not out:
        raise CsvError("no data rows")
    return out


def _is_number(v) -> bool:
    try:
        float(v)
        return True
    except (TypeError, ValueError):
        return False


def group_by_device(sigs: dict[tuple[str, str], PufSignature]) -> dict[str, list[PufSignature]]:
    grouped: dict[str, list[tuple[str, PufSignature]]] = {}
    for (dev, read), sig in sigs.items():
        grouped.setdefault(dev, []).append((read, sig))

    def order(item):
        read = item[0]
        return (0, int(read), "") if read.lstrip("-").isdigit() else (1, 0, read)

    return {d: [s for _, s in sorted(items, key=order)] for d, items in grouped.items()}
