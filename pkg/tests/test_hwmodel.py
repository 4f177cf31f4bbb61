import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iedpuf import hwmodel, sigcore
from iedpuf.hwmodel import SimParams, SimulatedIed


def test_synth_is_deterministic():
    assert hwmodel.synth_ied(42) == hwmodel.synth_ied(42)
    assert hwmodel.synth_fleet(5, 3) == hwmodel.synth_fleet(5, 3)
    assert hwmodel.synth_ied(42) != hwmodel.synth_ied(43)


def test_population_bounds():
    for seed in range(1000):
        t = hwmodel.synth_ied(seed)
        assert all(480 <= v <= 540 for v in t.diode_mv)
        for v, nom, bound in zip(t.vrg, sigcore.NOMINAL_VRG, (0.15, 0.15, 0.30)):
            assert abs(v - nom) <= bound + 1e-9
        assert abs(t.tp_ns - 20.0) <= 0.000063 + 1e-12


def test_distinct_seeds_give_distinct_signatures():
    differ = 0
    for k in range(1000):
        a = sigcore.diode_signature(hwmodel.synth_ied(2 * k).diode_mv)
        b = sigcore.diode_signature(hwmodel.synth_ied(2 * k + 1).diode_mv)
        differ += sigcore.hamming(a, b).count > 0
    assert differ / 1000 >= 0.999


def test_only_third_regulator_can_saturate():
    # +-0.15 V fits the 15-step field; the 15 V rail may swing to +-0.30 V and clamp
    for seed in range(300):
        t = hwmodel.synth_ied(seed)
        df = sigcore.delta_fields(t.vrg, t.tp_ns)
        assert abs(df.dv1) <= 150 and abs(df.dv2) <= 150 and abs(df.dtp) <= 63
        assert abs(df.dv3) <= 300


@pytest.mark.parametrize(
    "kw",
    [
        {"diode_sigma_mv": -1.0},
        {"bias_current_ma": 0.0},
        {"sample_noise_mv": -0.1},
        {"adc_bits": 0},
        {"diode_min_mv": 550.0},
    ],
)
def test_degenerate_params_rejected(kw):
    with pytest.raises(ValueError):
        SimParams(**kw)


def test_adc_step():
    assert SimParams().adc_step_mv == pytest.approx(2 * 2048.0 / 2**16)


def test_noise_free_quantization():
    p = hwmodel.noise_free_params()
    dev = SimulatedIed(hwmodel.reference_device(), p)
    assert dev.sample(0, np.random.default_rng(0)) == pytest.approx(500.8125, abs=1e-9)


def test_sample_noise_std():
    p = SimParams(residual_offset_mv=0.0, drift_max_mv=0.0, drift_sigma_mv=0.0)
    dev = SimulatedIed(hwmodel.reference_device(), p)
    s = dev.sample(3, np.random.default_rng(11), n=10_000)
    assert 0.13 <= s.std(ddof=1) <= 0.17


def test_samples_are_on_adc_grid():
    dev = SimulatedIed(hwmodel.synth_ied(5))
    s = dev.sample(2, np.random.default_rng(1), n=100)
    assert all(hwmodel.is_step_multiple(x, dev.params.adc_step_mv) for x in s)


@pytest.mark.parametrize("port", [12, -1, 13])
def test_bad_port(port):
    dev = SimulatedIed(hwmodel.synth_ied(1))
    with pytest.raises(ValueError):
        dev.sample(port, np.random.default_rng(0))


@pytest.mark.parametrize(
    "cmd,expected", [("TP?", "19.999945"), ("VRG?", "3.26,4.95,14.85"), ("FOO?", "ERR")]
)
def test_serial(cmd, expected):
    assert hwmodel.serial_response(hwmodel.reference_device(), cmd) == expected


def test_mcu_zero_sigma():
    puf = hwmodel.McuAdcPuf(3.0, 0.0)
    mu, sigma = hwmodel.estimate_mu_sigma(hwmodel.sample_mcu_adc(puf, 100, np.random.default_rng(0)))
    assert (mu, sigma) == (3.0, 0.0)


def test_mcu_needs_two_samples():
    with pytest.raises(ValueError):
        hwmodel.sample_mcu_adc(hwmodel.McuAdcPuf(0.0, 1.0), 1, np.random.default_rng(0))


def test_mcu_estimator_coverage():
    puf = hwmodel.McuAdcPuf(4.0, 3.0)
    rng = np.random.default_rng(5)
    n = 10_000
    hits = 0
    for _ in range(200):
        mu, _ = hwmodel.estimate_mu_sigma(hwmodel.sample_mcu_adc(puf, n, rng))
        hits += abs(mu - puf.mu) <= 4 * puf.sigma / np.sqrt(n)
    assert hits / 200 >= 0.99


def test_mcu_devices_distinguishable():
    a, b = hwmodel.McuAdcPuf(-3.0, 2.5), hwmodel.McuAdcPuf(2.0, 4.0)
    rng = np.random.default_rng(9)
    sa, sb = hwmodel.sample_mcu_adc(a, 10_000, rng), hwmodel.sample_mcu_adc(b, 10_000, rng)
    se = np.hypot(sa.std(ddof=1), sb.std(ddof=1)) / 100
    assert abs(sa.mean() - sb.mean()) > se


def test_environment_drift_bounds_and_determinism():
    env = hwmodel.set_environment(None, 77, supply_v=230)
    assert all(abs(d) <= 0.5 for d in env.drift_mv)
    again = hwmodel.set_environment(None, 77, supply_v=230)
    assert again.drift_mv == env.drift_mv
    dev = SimulatedIed(hwmodel.synth_ied(77))
    before = dev.env.drift_mv
    dev.set_environment()
    assert dev.env.drift_mv == before


@pytest.mark.parametrize("supply", [300, 69.9, -5])
def test_environment_rejects_supply(supply):
    with pytest.raises(ValueError):
        hwmodel.set_environment(None, 1, supply_v=supply)


@settings(max_examples=40)
@given(st.floats(70, 230), st.integers(0, 10_000))
def test_drift_bound_property(supply, seed):
    env = hwmodel.set_environment(None, seed, supply_v=supply)
    assert max(abs(d) for d in env.drift_mv) <= 0.5


def test_fleet_fixture_round_trip(tmp_path):
    fleet = hwmodel.synth_fleet(3, 7)
    path = tmp_path / "fleet.json"
    hwmodel.save_fleet(path, fleet, seed=7)
    assert hwmodel.load_fleet(path) == fleet
    doc = json.loads(path.read_text())
    assert doc["seed"] == 7
    assert [d["device_id"] for d in doc["devices"]] == ["IED-1", "IED-2", "IED-3"]


def test_traffic_counters():
    dev = SimulatedIed(hwmodel.synth_ied(1))
    dev.sample(0, np.random.default_rng(0), n=16)
    dev.serial_query("TP?")
    assert (dev.measure_calls, dev.serial_calls) == (16, 1)
