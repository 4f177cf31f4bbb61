"""Bit-level encoding of IED PUF signatures.

A full signature is 154 bits: 132 ordered-pair diode comparison bits
followed by 22 bits encoding the regulator and oscillator deviations
(three 5-bit voltage fields and one 7-bit period field, each a sign bit
plus magnitude).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels

N_PORTS = 12
N_DIODE_BITS = N_PORTS * (N_PORTS - 1)
DV_FIELD_BITS = 5
DTP_FIELD_BITS = 7
N_DELTA_BITS = 3 * DV_FIELD_BITS + DTP_FIELD_BITS
N_SIGNATURE_BITS = N_DIODE_BITS + N_DELTA_BITS

NOMINAL_VRG = (3.3, 5.0, 15.0)
NOMINAL_TP_NS = 20.0
DV_STEP_MV = 10
DV_MAX_STEPS = (1 << (DV_FIELD_BITS - 1)) - 1
DTP_MAX_FS = (1 << (DTP_FIELD_BITS - 1)) - 1


class SaturationWarning(UserWarning):
    """A delta magnitude exceeded its field and was clamped."""


class BitString:
    """Immutable string of binary digits, stored as ASCII '0'/'1'."""

    __slots__ = ("_bits",)

    def __init__(self, bits: str | Iterable[int] = ""):
        if isinstance(bits, BitString):
            bits = bits._bits
        elif not isinstance(bits, str):
            bits = "".join("1" if int(b) else "0" for b in bits)
        if bits.strip("01"):
            raise ValueError(f"not a bit string: {bits!r}")
        self._bits = bits

    @classmethod
    def from_array(cls, arr) -> "BitString":
        arr = np.asarray(arr, dtype=np.uint8)
        return cls((arr + ord("0")).tobytes().decode("ascii"))

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self._bits.encode("ascii"), dtype=np.uint8) - ord("0")

    @classmethod
    def from_hex(cls, hex_str: str, length: int) -> "BitString":
        if length < 0:
            raise ValueError("negative length")
        value = int(hex_str, 16) if hex_str else 0
        if value >> length:
            raise ValueError("hex value wider than stated length")
        return cls(format(value, f"0{length}b") if length else "")

    def to_hex(self) -> tuple[str, int]:
        """Hex digits (zero-padded to whole nibbles) and the exact bit length."""
        n = len(self._bits)
        if n == 0:
            return "", 0
        return format(int(self._bits, 2), f"0{(n + 3) // 4}x"), n

    def count(self) -> int:
        return self._bits.count("1")

    def __str__(self) -> str:
        return self._bits

    def __repr__(self) -> str:
        return f"BitString({self._bits!r})"

    def __len__(self) -> int:
        return len(self._bits)

    def __iter__(self):
        return (int(c) for c in self._bits)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return BitString(self._bits[idx])
        return int(self._bits[idx])

    def __add__(self, other: "BitString") -> "BitString":
        return BitString(self._bits + str(other))

    def __eq__(self, other) -> bool:
        if isinstance(other, BitString):
            return self._bits == other._bits
        if isinstance(other, str):
            return self._bits == other
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._bits)


@dataclass(frozen=True)
class DiodeVector:
    """Twelve diode voltages in mV, index 0..11 for ports OUT201..OUT212."""

    v: tuple[float, ...]

    def __post_init__(self):
        v = tuple(float(x) for x in self.v)
        if len(v) != N_PORTS:
            raise ValueError(f"expected {N_PORTS} diode voltages, got {len(v)}")
        for i, x in enumerate(v):
            if not (0.0 < x < 1000.0) or not math.isfinite(x):
                raise ValueError(f"diode {i} voltage {x} mV outside (0, 1000)")
        object.__setattr__(self, "v", v)

    def __getitem__(self, i: int) -> float:
        return self.v[i]


@dataclass(frozen=True)
class DeltaFields:
    """Deviations from nominal: dv1..dv3 in mV (10 mV steps), dtp in fs."""

    dv1: int
    dv2: int
    dv3: int
    dtp: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.dv1, self.dv2, self.dv3, self.dtp)


@dataclass(frozen=True)
class PufSignature:
    diode_bits: BitString
    delta_bits: BitString

    def __post_init__(self):
        if len(self.diode_bits) != N_DIODE_BITS or len(self.delta_bits) != N_DELTA_BITS:
            raise ValueError(
                f"signature parts must be {N_DIODE_BITS}+{N_DELTA_BITS} bits, "
                f"got {len(self.diode_bits)}+{len(self.delta_bits)}"
            )

    @property
    def bits(self) -> BitString:
        return self.diode_bits + self.delta_bits

    def __len__(self) -> int:
        return N_SIGNATURE_BITS

    def __str__(self) -> str:
        return str(self.bits)

    @classmethod
    def parse(cls, s: str) -> "PufSignature":
        if len(s) != N_SIGNATURE_BITS:
            raise ValueError(f"signature must be {N_SIGNATURE_BITS} bits, got {len(s)}")
        return cls(BitString(s[:N_DIODE_BITS]), BitString(s[N_DIODE_BITS:]))


@dataclass(frozen=True)
class Challenge:
    """Ordered list of distinct ports (0-based) selected by the verifier."""

    ports: tuple[int, ...]

    def __post_init__(self):
        ports = tuple(int(p) for p in self.ports)
        if not 2 <= len(ports) <= N_PORTS:
            raise ValueError(f"challenge length {len(ports)} outside [2, {N_PORTS}]")
        if any(not 0 <= p < N_PORTS for p in ports):
            raise ValueError(f"port out of range in {ports}")
        if len(set(ports)) != len(ports):
            raise ValueError(f"duplicate port in {ports}")
        object.__setattr__(self, "ports", ports)

    @property
    def m(self) -> int:
        return len(self.ports)

    @property
    def n_bits(self) -> int:
        return self.m * (self.m - 1)


IDENTITY_CHALLENGE = Challenge(tuple(range(N_PORTS)))


def compare_bit(va: float, vb: float) -> int:
    """1 when va > vb, otherwise 0 (ties read as 0)."""
    return 1 if va > vb else 0


def diode_signature(dv: DiodeVector | Sequence[float]) -> BitString:
    """132 comparison bits in row-major (i, j != i) order."""
    if not isinstance(dv, DiodeVector):
        dv = DiodeVector(tuple(dv))
    return BitString.from_array(kernels.comparison_bits(dv.v, range(N_PORTS)))


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def delta_fields(
    vrg_meas: Sequence[float],
    tp_meas: float,
    nominal_vrg: Sequence[float] = NOMINAL_VRG,
    nominal_tp: float = NOMINAL_TP_NS,
) -> DeltaFields:
    """Deviation of measured regulators (V) and clock period (ns) from nominal.

    Voltage deviations are quantized to 10 mV steps, the period deviation to
    whole femtoseconds. Both are nominal minus measured.
    """
    if len(vrg_meas) != 3 or len(nominal_vrg) != 3:
        raise ValueError("three regulator voltages required")
    if any(not (v > 0) for v in vrg_meas) or not (tp_meas > 0):
        raise ValueError("measured values must be positive")
    dvs = [
        DV_STEP_MV * _round_half_away((nom - meas) * 1000.0 / DV_STEP_MV)
        for nom, meas in zip(nominal_vrg, vrg_meas)
    ]
    dtp = _round_half_away((nominal_tp - tp_meas) * 1e6)
    return DeltaFields(dvs[0], dvs[1], dvs[2], dtp)


def _sign_magnitude(value: int, width: int) -> tuple[str, bool]:
    limit = (1 << (width - 1)) - 1
    mag = abs(value)
    saturated = mag > limit
    mag = min(mag, limit)
    sign = "1" if value < 0 else "0"
    return sign + format(mag, f"0{width - 1}b"), saturated


def encode_delta_voltage(dv: int) -> BitString:
    """Sign bit plus 4-bit count of 10 mV steps; magnitude clamps at 15."""
    steps = _round_half_away(dv / DV_STEP_MV)
    bits, saturated = _sign_magnitude(steps, DV_FIELD_BITS)
    if saturated:
        warnings.warn(f"voltage deviation {dv} mV clamped", SaturationWarning, stacklevel=2)
    return BitString(bits)


def encode_delta_period(dtp: int) -> BitString:
    """Sign bit plus 6-bit femtosecond magnitude; clamps at 63."""
    bits, saturated = _sign_magnitude(int(dtp), DTP_FIELD_BITS)
    if saturated:
        warnings.warn(f"period deviation {dtp} fs clamped", SaturationWarning, stacklevel=2)
    return BitString(bits)


def _decode_sign_magnitude(bits: BitString) -> int:
    s = str(bits)
    mag = int(s[1:], 2)
    return -mag if s[0] == "1" else mag


def decode_delta_voltage(bits: BitString) -> int:
    if len(bits) != DV_FIELD_BITS:
        raise ValueError("voltage field must be 5 bits")
    return DV_STEP_MV * _decode_sign_magnitude(bits)


def decode_delta_period(bits: BitString) -> int:
    if len(bits) != DTP_FIELD_BITS:
        raise ValueError("period field must be 7 bits")
    return _decode_sign_magnitude(bits)


def delta_signature(df: DeltaFields) -> BitString:
    return (
        encode_delta_voltage(df.dv1)
        + encode_delta_voltage(df.dv2)
        + encode_delta_voltage(df.dv3)
        + encode_delta_period(df.dtp)
    )


def decode_delta_signature(bits: BitString) -> DeltaFields:
    if len(bits) != N_DELTA_BITS:
        raise ValueError(f"delta signature must be {N_DELTA_BITS} bits")
    w = DV_FIELD_BITS
    return DeltaFields(
        decode_delta_voltage(bits[0:w]),
        decode_delta_voltage(bits[w : 2 * w]),
        decode_delta_voltage(bits[2 * w : 3 * w]),
        decode_delta_period(bits[3 * w :]),
    )


def full_signature(diode_bits: BitString, delta_bits: BitString) -> PufSignature:
    return PufSignature(BitString(diode_bits), BitString(delta_bits))


def partial_bits(source, c: Challenge) -> BitString:
    """Ordered-pair bits for the challenged ports, in challenge order.

    ``source`` may be a stored 132-bit reference (``BitString`` or
    ``PufSignature``), in which case bits are looked up, or fresh voltages
    (``DiodeVector`` or a sequence of 12 floats), in which case they are
    computed by comparison.
    """
    if not isinstance(c, Challenge):
        c = Challenge(tuple(c))
    if isinstance(source, PufSignature):
        source = source.diode_bits
    if isinstance(source, BitString):
        if len(source) != N_DIODE_BITS:
            raise ValueError(f"reference must be {N_DIODE_BITS} bits")
        return BitString.from_array(kernels.gather_partial(source.to_array(), c.ports, N_PORTS))
    if not isinstance(source, DiodeVector):
        source = DiodeVector(tuple(source))
    return BitString.from_array(kernels.comparison_bits(source.v, c.ports))


@dataclass(frozen=True)
class Hamming:
    count: int
    fraction: float


def hamming(a, b) -> Hamming:
    a, b = BitString(a), BitString(b)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        return Hamming(0, 0.0)
    count = kernels.hamming_count(a.to_array(), b.to_array())
    return Hamming(count, count / len(a))
