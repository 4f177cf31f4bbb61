"""Probe-side state machine: Phase I mutual authentication, Phase II responses."""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels, sigcore
from .hwmodel import McuAdcPuf, SimulatedIed, estimate_mu_sigma, sample_mcu_adc
from .sigcore import BitString, Challenge, N_DELTA_BITS, N_PORTS


class ProbeState(str, Enum):
    IDLE = "Idle"
    HELLO_SENT = "HelloSent"
    MUTUALLY_AUTHENTICATED = "MutuallyAuthenticated"
    DONE = "Done"
    FAILED = "Failed"


class ProtocolError(Exception):
    """A message arrived that the current state cannot accept."""

    def __init__(self, code: str, msg: str = ""):
        super().__init__(f"{code}: {msg}" if msg else code)
        self.code = code
        self.msg = msg


@dataclass(frozen=True)
class ProbeConfig:
    samples_per_port: int = 16
    nominal_vrg: tuple[float, float, float] = sigcore.NOMINAL_VRG
    nominal_tp: float = sigcore.NOMINAL_TP_NS
    mcu_adc_sample_count: int = 10_000

    def __post_init__(self):
        if self.samples_per_port < 1:
            raise ValueError("samples_per_port must be >= 1")
        if self.mcu_adc_sample_count < 2:
            raise ValueError("mcu_adc_sample_count must be >= 2")


@dataclass(frozen=True)
class ProbeHello:
    probe_id: str
    nonce: int
    mu: float
    sigma: float


@dataclass(frozen=True)
class Response:
    partial: BitString
    delta: BitString
    vrg_raw: str | None = None
    tp_raw: str | None = None

    @property
    def n_bits(self) -> int:
        return len(self.partial) + len(self.delta)


@dataclass
class ProbeSession:
    state: ProbeState = ProbeState.IDLE
    nonce: int | None = None
    enroll: bool = False
    challenge: Challenge | None = None
    transitions: list = field(default_factory=list)

    def _move(self, new: ProbeState) -> None:
        self.transitions.append((self.state, new))
        self.state = new


def md5_hex(nonce: int) -> str:
    """MD5 over the ASCII decimal rendering of the nonce."""
    return hashlib.md5(str(int(nonce)).encode("ascii")).hexdigest()


def _parse_digest(digest) -> str:
    if isinstance(digest, (bytes, bytearray)):
        if len(digest) != 16:
            raise ProtocolError("MALFORMED", f"digest must be 16 bytes, got {len(digest)}")
        return bytes(digest).hex()
    s = str(digest)
    if len(s) != 32 or any(c not in "0123456789abcdef" for c in s.lower()):
        raise ProtocolError("MALFORMED", "digest must be 32 hex characters")
    return s.lower()


class Probe:
    """An IED_PUF probe wired to one simulated IED.

    One session runs at a time; ``lock`` guards the attached device.
    """

    def __init__(
        self,
        probe_id: str,
        device: SimulatedIed,
        mcu: McuAdcPuf,
        config: ProbeConfig | None = None,
        seed: int | None = None,
    ):
        self.probe_id = probe_id
        self.device = device
        self.mcu = mcu
        self.config = config or ProbeConfig()
        self.rng = np.random.default_rng(seed)
        self.lock = threading.Lock()

    def new_session(self, enroll: bool = False) -> ProbeSession:
        return ProbeSession(enroll=enroll)

    def on_auth_request(self, session: ProbeSession) -> ProbeHello:
        if session.state is not ProbeState.IDLE:
            raise ProtocolError("BAD_STATE", f"auth request in state {session.state.value}")
        nonce = int(self.rng.integers(0, 1 << 32, dtype=np.uint64))
        samples = sample_mcu_adc(self.mcu, self.config.mcu_adc_sample_count, self.rng)
        mu, sigma = estimate_mu_sigma(samples)
        session.nonce = nonce
        session._move(ProbeState.HELLO_SENT)
        return ProbeHello(self.probe_id, nonce, mu, sigma)

    def on_hash_challenge(self, session: ProbeSession, digest) -> bool:
        if session.state is not ProbeState.HELLO_SENT:
            raise ProtocolError("BAD_STATE", f"hash challenge in state {session.state.value}")
        received = _parse_digest(digest)
        ok = received == md5_hex(session.nonce)
        session._move(ProbeState.MUTUALLY_AUTHENTICATED if ok else ProbeState.FAILED)
        return ok

    def measure_port(self, session: ProbeSession, port: int) -> float:
        if session.state is not ProbeState.MUTUALLY_AUTHENTICATED:
            raise ProtocolError("DENIED", "measurement requires mutual authentication")
        if not isinstance(port, (int, np.integer)) or not 0 <= port < N_PORTS:
            raise ProtocolError("BAD_PORT", f"port {port!r} outside [0, {N_PORTS - 1}]")
        n = self.config.samples_per_port
        return float(np.mean(self.device.sample(int(port), self.rng, n)))

    def read_serial(self) -> tuple[str, str, tuple[float, float, float], float]:
        vrg_raw = self.device.serial_query("VRG?")
        tp_raw = self.device.serial_query("TP?")
        try:
            vrg = tuple(float(x) for x in vrg_raw.split(","))
            tp = float(tp_raw)
        except ValueError:
            raise ProtocolError("SERIAL_FAILURE", f"bad serial reply {vrg_raw!r}/{tp_raw!r}") from None
        if len(vrg) != 3:
            raise ProtocolError("SERIAL_FAILURE", f"bad VRG reply {vrg_raw!r}")
        return vrg_raw, tp_raw, vrg, tp

    def on_puf_challenge(self, session: ProbeSession, c: Challenge) -> Response:
        if session.state is not ProbeState.MUTUALLY_AUTHENTICATED:
            raise ProtocolError("DENIED", f"challenge in state {session.state.value}")
        if not isinstance(c, Challenge):
            try:
                c = Challenge(tuple(c))
            except (TypeError, ValueError) as exc:
                raise ProtocolError("BAD_CHALLENGE", str(exc)) from None
        measured = {p: self.measure_port(session, p) for p in c.ports}
        values = np.zeros(N_PORTS)
        for p, v in measured.items():
            values[p] = v
        partial = BitString.from_array(kernels.comparison_bits(values, c.ports))
        try:
            vrg_raw, tp_raw, vrg, tp = self.read_serial()
        except ProtocolError:
            session._move(ProbeState.FAILED)
            raise
        df = sigcore.delta_fields(vrg, tp, self.config.nominal_vrg, self.config.nominal_tp)
        delta = sigcore.delta_signature(df)
        assert len(delta) == N_DELTA_BITS
        session.challenge = c
        session._move(ProbeState.DONE)
        if session.enroll:
            return Response(partial, delta, vrg_raw, tp_raw)
        return Response(partial, delta)
