"""Central computer system side: enrollment store, probe check, decisions."""

from __future__ import annotations

import json
import math
import os
import threading
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum

import numpy as np

from . import sigcore
from .probe import ProbeHello, Response, md5_hex
from .sigcore import BitString, Challenge, N_DIODE_BITS, N_PORTS, PufSignature


class Reason(str, Enum):
    ACCEPTED = "ACCEPTED"
    ENROLLED = "ENROLLED"
    DIODE_MISMATCH = "DIODE_MISMATCH"
    DELTA_MISMATCH = "DELTA_MISMATCH"
    MALFORMED = "MALFORMED"
    UNKNOWN_DEVICE = "UNKNOWN_DEVICE"
    UNKNOWN_PROBE = "UNKNOWN_PROBE"
    PROBE_MISMATCH = "PROBE_MISMATCH"
    REPLAYED_NONCE = "REPLAYED_NONCE"
    HASH_DENIED = "HASH_DENIED"
    PROTOCOL_ERROR = "PROTOCOL_ERROR"
    TIMEOUT = "TIMEOUT"


class StoreError(Exception):
    def __init__(self, code: str, msg: str):
        super().__init__(f"{code}: {msg}")
        self.code = code


@dataclass(frozen=True)
class VerifierConfig:
    theta: float = 0.20
    mu_tol: float = 2.0
    sigma_tol: float = 0.10
    m_range: tuple[int, int] = (8, 12)
    require_exact_delta: bool = True
    reject_reused_nonce: bool = True

    def __post_init__(self):
        if not 0.0 <= self.theta <= 0.5:
            raise ValueError("theta must lie in [0, 0.5]")
        lo, hi = self.m_range
        if lo > hi:
            raise ValueError("empty m_range")
        if lo < 2 or hi > N_PORTS:
            raise ValueError(f"m_range must lie within [2, {N_PORTS}]")
        if self.mu_tol < 0 or self.sigma_tol < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass(frozen=True)
class EnrollmentRecord:
    device_id: str
    sig_r: PufSignature
    vrg_ref: tuple[float, float, float]
    tp_ref: float
    probe_id: str
    mu_ref: float
    sigma_ref: float
    enrolled_at: str

    def __post_init__(self):
        refs = (*self.vrg_ref, self.tp_ref, self.mu_ref, self.sigma_ref)
        if not all(math.isfinite(x) for x in refs):
            raise ValueError("references must be finite")

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "sig_r": str(self.sig_r),
            "vrg_ref": list(self.vrg_ref),
            "tp_ref": self.tp_ref,
            "probe_id": self.probe_id,
            "mu_ref": self.mu_ref,
            "sigma_ref": self.sigma_ref,
            "enrolled_at": self.enrolled_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnrollmentRecord":
        vrg = tuple(float(x) for x in d["vrg_ref"])
        if len(vrg) != 3:
            raise ValueError("vrg_ref needs three values")
        return cls(
            device_id=str(d["device_id"]),
            sig_r=PufSignature.parse(d["sig_r"]),
            vrg_ref=vrg,
            tp_ref=float(d["tp_ref"]),
            probe_id=str(d["probe_id"]),
            mu_ref=float(d["mu_ref"]),
            sigma_ref=float(d["sigma_ref"]),
            enrolled_at=str(d["enrolled_at"]),
        )


@dataclass(frozen=True)
class Decision:
    accepted: bool
    diode_fraction: float
    delta_match: bool
    reason: Reason


def now_iso() -> str:
    """UTC timestamp; honors SOURCE_DATE_EPOCH for reproducible output files."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return t.replace(microsecond=0).isoformat().replace("+00:00", "Z")


class EnrollmentStore:
    """Device records keyed by id. Reads are lock-free snapshots; writes are exclusive."""

    def __init__(self, records=()):
        self._records: dict[str, EnrollmentRecord] = {}
        self._write_lock = threading.Lock()
        for r in records:
            self._records[r.device_id] = r

    def get(self, device_id: str) -> EnrollmentRecord:
        try:
            return self._records[device_id]
        except KeyError:
            raise LookupError(f"no enrollment record for {device_id!r}") from None

    def __contains__(self, device_id) -> bool:
        return device_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(sorted(self._records.values(), key=lambda r: r.device_id))

    def __eq__(self, other) -> bool:
        return isinstance(other, EnrollmentStore) and self._records == other._records

    def put(self, record: EnrollmentRecord) -> None:
        with self._write_lock:
            updated = dict(self._records)
            updated[record.device_id] = record
            self._records = updated

    def dumps(self) -> str:
        return json.dumps([r.to_dict() for r in self], indent=2, ensure_ascii=False) + "\n"

    def save(self, path) -> None:
        with self._write_lock:
            text = self.dumps()
            tmp = f"{path}.tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "EnrollmentStore":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except FileNotFoundError:
            raise StoreError("NOT_FOUND", str(path)) from None
        try:
            doc = json.loads(text)
            if not isinstance(doc, list):
                raise ValueError("store must be a JSON array")
            return cls(EnrollmentRecord.from_dict(d) for d in doc)
        except (ValueError, KeyError, TypeError) as exc:
            raise StoreError("PARSE_ERROR", f"{path}: {exc}") from None


def make_hash(nonce: int) -> str:
    return md5_hex(nonce)


def check_probe_hello(hello: ProbeHello, record: EnrollmentRecord, cfg: VerifierConfig) -> tuple[bool, Reason | None]:
    if hello.probe_id != record.probe_id:
        return False, Reason.UNKNOWN_PROBE
    if abs(hello.mu - record.mu_ref) > cfg.mu_tol:
        return False, Reason.PROBE_MISMATCH
    if abs(hello.sigma - record.sigma_ref) > cfg.sigma_tol * record.sigma_ref:
        return False, Reason.PROBE_MISMATCH
    return True, None


def gen_challenge(rng: np.random.Generator, cfg: VerifierConfig) -> Challenge:
    lo, hi = cfg.m_range
    m = int(rng.integers(lo, hi + 1))
    ports = rng.permutation(N_PORTS)[:m]
    return Challenge(tuple(int(p) for p in ports))


def expected_response(record: EnrollmentRecord, c: Challenge) -> Response:
    return Response(sigcore.partial_bits(record.sig_r.diode_bits, c), record.sig_r.delta_bits)


def verify(r: Response, r_exp: Response, cfg: VerifierConfig) -> Decision:
    if len(r.partial) != len(r_exp.partial) or len(r.delta) != len(r_exp.delta):
        return Decision(False, 1.0, False, Reason.MALFORMED)
    fraction = sigcore.hamming(r.partial, r_exp.partial).fraction
    delta_match = r.delta == r_exp.delta
    if fraction > cfg.theta:
        return Decision(False, fraction, delta_match, Reason.DIODE_MISMATCH)
    if cfg.require_exact_delta and not delta_match:
        return Decision(False, fraction, delta_match, Reason.DELTA_MISMATCH)
    return Decision(True, fraction, delta_match, Reason.ACCEPTED)


def record_from_enrollment(
    device_id: str, hello: ProbeHello, response: Response, enrolled_at: str | None = None
) -> EnrollmentRecord:
    """Build a record from an identity-order (m=12) enrollment response."""
    if len(response.partial) != N_DIODE_BITS:
        raise ValueError("enrollment needs the full 132-bit diode response")
    if response.vrg_raw is None or response.tp_raw is None:
        raise ValueError("enrollment response lacks raw serial references")
    vrg = tuple(float(x) for x in response.vrg_raw.split(","))
    return EnrollmentRecord(
        device_id=device_id,
        sig_r=sigcore.full_signature(response.partial, response.delta),
        vrg_ref=vrg,
        tp_ref=float(response.tp_raw),
        probe_id=hello.probe_id,
        mu_ref=hello.mu,
        sigma_ref=hello.sigma,
        enrolled_at=enrolled_at or now_iso(),
    )


class AuditLog:
    """Append-only session outcomes, optionally mirrored to a JSON-lines file."""

    def __init__(self, path=None):
        self.path = path
        self.entries: list[dict] = []
        self._lock = threading.Lock()
        self._base = 0
        if path is not None and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                self._base = sum(1 for line in fh if line.strip())

    def append(self, entry: dict) -> None:
        with self._lock:
            entry = {"seq": self._base + len(self.entries) + 1, **entry}
            self.entries.append(entry)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self.entries)


NONCE_MEMORY = 65_536


class Verifier:
    """Holds the store, thresholds, challenge RNG, audit log and recent nonces."""

    def __init__(self, store: EnrollmentStore | None = None, cfg: VerifierConfig | None = None, seed=None, audit: AuditLog | None = None):
        self.store = store if store is not None else EnrollmentStore()
        self.cfg = cfg or VerifierConfig()
        self.rng = np.random.default_rng(seed)
        self.audit = audit if audit is not None else AuditLog()
        self._rng_lock = threading.Lock()
        self._nonces: dict[str, tuple[set, deque]] = {}
        self._nonce_lock = threading.Lock()

    def note_nonce(self, device_id: str, nonce: int) -> bool:
        """Remember ``nonce`` for ``device_id``; False when it was already seen."""
        with self._nonce_lock:
            seen, order = self._nonces.setdefault(device_id, (set(), deque()))
            if nonce in seen:
                return False
            seen.add(nonce)
            order.append(nonce)
            if len(order) > NONCE_MEMORY:
                seen.discard(order.popleft())
            return True

    def new_challenge(self) -> Challenge:
        with self._rng_lock:
            return gen_challenge(self.rng, self.cfg)

    def log(self, device_id: str, decision: Decision, challenge: Challenge | None = None, mode: str = "auth") -> None:
        self.audit.append(
            {
                "mode": mode,
                "device": device_id,
                "challenge": list(challenge.ports) if challenge else None,
                "fraction": round(decision.diode_fraction, 6),
                "delta_match": decision.delta_match,
                "accepted": decision.accepted,
                "reason": decision.reason.value,
            }
        )


def response_from_bits(partial: str, delta: str) -> Response:
    return Response(BitString(partial), BitString(delta))
