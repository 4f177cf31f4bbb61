"""Seedable behavioral model of an IED and the probe's measurement chain.

Nothing here simulates circuits. Each diode has a fixed cut-in voltage
drawn from a truncated normal population; a reading adds a slow drift
offset (re-drawn whenever the supply/temperature changes), a constant
residual offset left over after R_ON compensation, and fast per-sample
noise, then quantizes to the delta-sigma ADC step.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .sigcore import N_PORTS, NOMINAL_TP_NS, NOMINAL_VRG

SUPPLY_RANGE_V = (70.0, 230.0)
ADC_CODE_MIN = -2048
ADC_CODE_MAX = 2047


@dataclass(frozen=True)
class SimParams:
    """Population and instrument parameters; every field is a config key."""

    diode_mean_mv: float = 512.0
    diode_sigma_mv: float = 6.0
    diode_min_mv: float = 480.0
    diode_max_mv: float = 540.0
    vrg_bound_v: tuple[float, float, float] = (0.15, 0.15, 0.30)
    tp_bound_fs: int = 63
    # probe chain
    bias_current_ma: float = 1.0
    mux_r_on_ohm: float = 125.0
    adc_fsr_v: float = 2.048
    adc_bits: int = 16
    sample_noise_mv: float = 0.15
    residual_offset_mv: float = 0.05
    drift_max_mv: float = 0.5
    drift_sigma_mv: float = 0.12
    # probe MCU ADC PUF
    mcu_mu_bound: float = 8.0
    mcu_sigma_range: tuple[float, float] = (2.0, 6.0)

    def __post_init__(self):
        if min(self.diode_sigma_mv, self.sample_noise_mv, self.drift_max_mv, self.drift_sigma_mv) < 0:
            raise ValueError("sigmas and drift bound must be non-negative")
        if not self.diode_min_mv < self.diode_max_mv:
            raise ValueError("diode bounds must satisfy min < max")
        if not self.diode_min_mv <= self.diode_mean_mv <= self.diode_max_mv:
            raise ValueError("diode mean outside truncation bounds")
        if len(self.vrg_bound_v) != 3 or any(b < 0 for b in self.vrg_bound_v):
            raise ValueError("vrg_bound_v needs three non-negative bounds")
        if self.tp_bound_fs < 0:
            raise ValueError("tp_bound_fs must be non-negative")
        if self.bias_current_ma <= 0:
            raise ValueError("bias current must be positive")
        if self.adc_fsr_v <= 0 or self.adc_bits < 1:
            raise ValueError("invalid ADC configuration")
        lo, hi = self.mcu_sigma_range
        if lo < 0 or hi < lo or self.mcu_mu_bound < 0:
            raise ValueError("invalid MCU ADC PUF ranges")

    @property
    def adc_step_mv(self) -> float:
        return 2.0 * self.adc_fsr_v / (1 << self.adc_bits) * 1000.0

    @property
    def probe_hardware(self) -> "ProbeHardware":
        return ProbeHardware(
            bias_current=self.bias_current_ma,
            mux_r_on=self.mux_r_on_ohm,
            adc_fsr=self.adc_fsr_v,
            adc_bits=self.adc_bits,
            sample_noise_sigma=self.sample_noise_mv,
            residual_offset=self.residual_offset_mv,
        )

    @classmethod
    def from_mapping(cls, values: dict) -> "SimParams":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise KeyError(f"unknown simulator parameter {key!r}")
            default = getattr(cls(), key)
            if isinstance(default, tuple):
                parts = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
                kwargs[key] = tuple(float(p) for p in parts)
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs)


@dataclass(frozen=True)
class ProbeHardware:
    bias_current: float  # mA
    mux_r_on: float  # ohm
    adc_fsr: float  # V
    adc_bits: int
    sample_noise_sigma: float  # mV
    residual_offset: float  # mV

    def __post_init__(self):
        if self.bias_current <= 0:
            raise ValueError("bias current must be positive")

    @property
    def step_mv(self) -> float:
        return 2.0 * self.adc_fsr / (1 << self.adc_bits) * 1000.0

    @property
    def v_sw_mv(self) -> float:
        """Uncompensated drop across the mux on-resistance."""
        return self.bias_current * self.mux_r_on


@dataclass(frozen=True)
class IedGroundTruth:
    device_id: str
    seed: int
    diode_mv: tuple[float, ...]
    vrg: tuple[float, float, float]
    tp_ns: float

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "seed": self.seed,
            "diode_mv": list(self.diode_mv),
            "vrg": list(self.vrg),
            "tp_ns": self.tp_ns,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IedGroundTruth":
        diode = tuple(float(x) for x in d["diode_mv"])
        vrg = tuple(float(x) for x in d["vrg"])
        if len(diode) != N_PORTS or len(vrg) != 3:
            raise ValueError(f"malformed ground truth for {d.get('device_id')!r}")
        return cls(str(d["device_id"]), int(d.get("seed", 0)), diode, vrg, float(d["tp_ns"]))


@dataclass(frozen=True)
class McuAdcPuf:
    """Mean and spread, in LSB codes, of a probe MCU's differential ADC reads."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not ADC_CODE_MIN <= self.mu <= ADC_CODE_MAX:
            raise ValueError("mu outside 12-bit code range")


@dataclass
class EnvironmentState:
    supply_v: float = 120.0
    temp_c: float = 25.0
    drift_mv: tuple[float, ...] = field(default_factory=lambda: (0.0,) * N_PORTS)


def _seed_words(*parts) -> list[int]:
    """Stable integer seed material from arbitrary parts (hash, not Python hash())."""
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def synth_ied(seed: int, params: SimParams | None = None, device_id: str | None = None) -> IedGroundTruth:
    """Draw one device from the population; identical seeds give identical devices."""
    params = params or SimParams()
    rng = np.random.default_rng(_seed_words("ied", int(seed)))
    diode = []
    while len(diode) < N_PORTS:
        x = rng.normal(params.diode_mean_mv, params.diode_sigma_mv)
        if params.diode_min_mv <= x <= params.diode_max_mv:
            diode.append(round(float(x), 4))
    vrg = []
    for nominal, bound in zip(NOMINAL_VRG, params.vrg_bound_v):
        steps = int(round(bound * 100))
        dev_steps = int(rng.integers(-steps, steps + 1))
        vrg.append(round(nominal - dev_steps * 0.01, 2))
    dtp = int(rng.integers(-params.tp_bound_fs, params.tp_bound_fs + 1))
    tp_ns = round(NOMINAL_TP_NS - dtp * 1e-6, 6)
    return IedGroundTruth(
        device_id=device_id if device_id is not None else f"IED-{seed}",
        seed=int(seed),
        diode_mv=tuple(diode),
        vrg=(vrg[0], vrg[1], vrg[2]),
        tp_ns=tp_ns,
    )


def synth_fleet(n: int, seed: int, params: SimParams | None = None) -> list[IedGroundTruth]:
    if n < 1:
        raise ValueError("fleet size must be at least 1")
    ss = np.random.SeedSequence(int(seed))
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(n)]
    return [synth_ied(s, params, device_id=f"IED-{i + 1}") for i, s in enumerate(seeds)]


def synth_mcu_puf(seed: int, params: SimParams | None = None) -> McuAdcPuf:
    params = params or SimParams()
    rng = np.random.default_rng(_seed_words("mcu", int(seed)))
    mu = float(rng.uniform(-params.mcu_mu_bound, params.mcu_mu_bound))
    sigma = float(rng.uniform(*params.mcu_sigma_range))
    return McuAdcPuf(round(mu, 3), round(sigma, 3))


def quantize_code(mv, step_mv: float, fsr_mv: float):
    """ADC code for a voltage in mV (nearest step, clamped to full scale)."""
    half = int(round(fsr_mv / step_mv))
    codes = np.rint(np.asarray(mv, dtype=np.float64) / step_mv)
    return np.clip(codes, -half, half - 1).astype(np.int64)


def set_environment(
    env: EnvironmentState | None,
    device_seed: int,
    supply_v: float | None = None,
    temp_c: float | None = None,
    drift_max_mv: float = 0.5,
    drift_sigma_mv: float = 0.12,
) -> EnvironmentState:
    """New environment with per-diode drift re-drawn from (seed, supply, temp).

    Drift is normal with ``drift_sigma_mv`` and clipped to ``+-drift_max_mv``.
    """
    env = env or EnvironmentState()
    supply = env.supply_v if supply_v is None else float(supply_v)
    temp = env.temp_c if temp_c is None else float(temp_c)
    lo, hi = SUPPLY_RANGE_V
    if not lo <= supply <= hi:
        raise ValueError(f"supply {supply} V outside [{lo:g}, {hi:g}]")
    rng = np.random.default_rng(
        _seed_words("drift", int(device_seed), round(supply * 1000), round(temp * 1000))
    )
    drift = np.clip(rng.normal(0.0, drift_sigma_mv, N_PORTS), -drift_max_mv, drift_max_mv)
    return EnvironmentState(supply, temp, tuple(float(d) for d in drift))


def sample_diode(ied: IedGroundTruth, port: int, probe_hw: ProbeHardware, env: EnvironmentState, rng, n=None):
    """One quantized reading (mV) of a port; ``n`` draws an array of readings."""
    if not 0 <= int(port) < N_PORTS or int(port) != port:
        raise ValueError(f"port {port} outside [0, {N_PORTS - 1}]")
    mean = ied.diode_mv[port] + env.drift_mv[port] + probe_hw.residual_offset
    size = 1 if n is None else int(n)
    noise = rng.normal(0.0, probe_hw.sample_noise_sigma, size) if probe_hw.sample_noise_sigma > 0 else np.zeros(size)
    step = probe_hw.step_mv
    codes = quantize_code(mean + noise, step, probe_hw.adc_fsr * 1000.0)
    values = codes * step
    return float(values[0]) if n is None else values


def serial_response(ied: IedGroundTruth, command: str) -> str:
    cmd = command.strip()
    if cmd == "VRG?":
        return ",".join(f"{v:.2f}" for v in ied.vrg)
    if cmd == "TP?":
        return f"{ied.tp_ns:.6f}"
    return "ERR"


def sample_mcu_adc(puf: McuAdcPuf, n: int, rng) -> np.ndarray:
    if n < 2:
        raise ValueError("need at least 2 samples")
    raw = rng.normal(puf.mu, puf.sigma, int(n)) if puf.sigma > 0 else np.full(int(n), puf.mu)
    return np.clip(np.rint(raw), ADC_CODE_MIN, ADC_CODE_MAX).astype(np.int64)


def estimate_mu_sigma(samples) -> tuple[float, float]:
    s = np.asarray(samples, dtype=np.float64)
    if s.size < 2:
        raise ValueError("need at least 2 samples")
    return float(s.mean()), float(s.std(ddof=1))


class SimulatedIed:
    """A device instance with mutable environment and traffic counters.

    Not thread-safe: serialize access to one instance.
    """

    def __init__(self, truth: IedGroundTruth, params: SimParams | None = None, env: EnvironmentState | None = None):
        self.truth = truth
        self.params = params or SimParams()
        self.probe_hw = self.params.probe_hardware
        self.env = env or set_environment(
            None, truth.seed, drift_max_mv=self.params.drift_max_mv, drift_sigma_mv=self.params.drift_sigma_mv
        )
        self.measure_calls = 0
        self.serial_calls = 0

    @property
    def device_id(self) -> str:
        return self.truth.device_id

    def set_environment(self, supply_v: float | None = None, temp_c: float | None = None) -> EnvironmentState:
        self.env = set_environment(
            self.env, self.truth.seed, supply_v, temp_c, self.params.drift_max_mv, self.params.drift_sigma_mv
        )
        return self.env

    def sample(self, port: int, rng, n=None):
        self.measure_calls += 1 if n is None else int(n)
        return sample_diode(self.truth, port, self.probe_hw, self.env, rng, n)

    def serial_query(self, command: str) -> str:
        self.serial_calls += 1
        return serial_response(self.truth, command)

    def with_diode_offset(self, port: int, offset_mv: float) -> "SimulatedIed":
        """Copy of this device with one diode shifted (swap-diode scenario)."""
        diode = list(self.truth.diode_mv)
        diode[port] = round(diode[port] + offset_mv, 4)
        return SimulatedIed(replace(self.truth, diode_mv=tuple(diode)), self.params, self.env)


def save_fleet(path, fleet: Sequence[IedGroundTruth], seed: int | None = None) -> None:
    doc = {"seed": seed, "devices": [d.to_dict() for d in fleet]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_fleet(path) -> list[IedGroundTruth]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    devices = doc["devices"] if isinstance(doc, dict) else doc
    return [IedGroundTruth.from_dict(d) for d in devices]


def reference_device(
    diode_mv: Sequence[float] = (500.8, 516.8, 513.4, 514.2, 511.5, 514.1, 514.3, 502.0, 516.1, 517.6, 515.1, 514.4),
    vrg: Sequence[float] = (3.26, 4.95, 14.85),
    tp_ns: float = 19.999945,
    device_id: str = "IED-1",
    seed: int = 1,
) -> IedGroundTruth:
    """Ground truth from the reference bench values (diodes + IED-1 serial readings)."""
    return IedGroundTruth(device_id, seed, tuple(float(x) for x in diode_mv), tuple(vrg), float(tp_ns))


def noise_free_params(**overrides) -> SimParams:
    base = dict(sample_noise_mv=0.0, residual_offset_mv=0.0, drift_max_mv=0.0, drift_sigma_mv=0.0)
    base.update(overrides)
    return SimParams(**base)


def params_dict(params: SimParams) -> dict:
    d = asdict(params)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def is_step_multiple(value_mv: float, step_mv: float) -> bool:
    k = value_mv / step_mv
    return math.isclose(k, round(k), abs_tol=1e-9)
