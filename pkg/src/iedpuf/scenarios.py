"""Bench wiring (fleet -> probes -> verifier) and the attack scenarios."""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace

import numpy as np

from .hwmodel import IedGroundTruth, SimParams, SimulatedIed, synth_ied, synth_mcu_puf
from .probe import Probe, ProbeConfig
from .verifier import Reason, Verifier
from .wire import DEFAULT_TIMEOUT, MemoryTransport, ProbeEndpoint, VerifierEndpoint, memory_session


def probe_id_for(device_id: str) -> str:
    return f"PROBE-{device_id}"


class Bench:
    """Simulated devices, each with its own probe, built from a fleet fixture."""

    def __init__(self, fleet, params: SimParams | None = None, probe_cfg: ProbeConfig | None = None, seed: int = 0):
        self.params = params or SimParams()
        self.probe_cfg = probe_cfg or ProbeConfig()
        self.seed = seed
        self.truths: dict[str, IedGroundTruth] = {t.device_id: t for t in fleet}
        self._probes: dict[str, Probe] = {}

    def truth(self, device_id: str) -> IedGroundTruth:
        try:
            return self.truths[device_id]
        except KeyError:
            raise LookupError(f"device {device_id!r} not in fixture") from None

    def probe(self, device_id: str, physical: IedGroundTruth | None = None) -> Probe:
        """Probe for ``device_id``; ``physical`` swaps in other hardware under that identity."""
        truth = self.truth(device_id)
        if physical is None and device_id in self._probes:
            return self._probes[device_id]
        hw = truth if physical is None else replace(physical, device_id=device_id)
        p = Probe(
            probe_id_for(device_id),
            SimulatedIed(hw, self.params),
            synth_mcu_puf(truth.seed, self.params),
            self.probe_cfg,
            seed=[self.seed, truth.seed, 0 if physical is None else physical.seed],
        )
        if physical is None:
            self._probes[device_id] = p
        return p


@dataclass
class AttackReport:
    kind: str
    trials: int
    rejected: int
    reasons: dict

    @property
    def rejection_rate(self) -> float:
        return self.rejected / self.trials if self.trials else 0.0

    @property
    def accept_rate(self) -> float:
        return 1.0 - self.rejection_rate

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "trials": self.trials,
            "rejected": self.rejected,
            "rejection_rate": self.rejection_rate,
            "reasons": dict(sorted(self.reasons.items())),
        }


def _tally(kind: str, decisions) -> AttackReport:
    reasons: dict[str, int] = {}
    rejected = 0
    for d in decisions:
        reasons[d.reason.value] = reasons.get(d.reason.value, 0) + 1
        rejected += not d.accepted
    return AttackReport(kind, len(decisions), rejected, reasons)


def clone_attack(bench: Bench, verifier: Verifier, victim: str, trials: int, seed: int = 0) -> AttackReport:
    """Fresh impostor hardware presented under the victim's identity and probe."""
    decisions = []
    for k in range(trials):
        impostor = synth_ied(10_000_000 + seed * 100_003 + k, bench.params)
        probe = bench.probe(victim, physical=impostor)
        outcome, _ = memory_session(verifier, probe, victim)
        decisions.append(outcome.decision)
    return _tally("clone", decisions)


class ReplayEndpoint:
    """Answers each incoming frame with the next recorded probe frame, ignoring content."""

    def __init__(self, recorded: list[bytes], transport, timeout: float = DEFAULT_TIMEOUT):
        self.recorded = list(recorded)
        self.transport = transport
        self.timeout = timeout

    def serve(self) -> None:
        for frame in self.recorded:
            try:
                incoming = self.transport.recv(self.timeout)
                if incoming.startswith((b'{"t":"AUTH_RESULT"', b'{"t":"ERR"')):
                    return
                self.transport.send(frame)
            except Exception:
                return
        try:
            self.transport.recv(self.timeout)
        except Exception:
            pass


def replay_attack(bench: Bench, verifier: Verifier, device_id: str, trials: int, timeout: float = DEFAULT_TIMEOUT) -> AttackReport:
    """Capture one genuine transcript, then replay the probe's frames into fresh sessions."""
    _, transcript = memory_session(verifier, bench.probe(device_id), device_id, timeout=timeout)
    probe_frames = [f for direction, f in transcript if direction == "<"]
    decisions = []
    for _ in range(trials):
        a, b = MemoryTransport.pair()
        ve = VerifierEndpoint(verifier, a, device_id, timeout=timeout)
        worker = threading.Thread(target=ReplayEndpoint(probe_frames, b, timeout).serve, daemon=True)
        worker.start()
        decisions.append(ve.run().decision)
        worker.join(timeout + 1.0)
    return _tally("replay", decisions)


def swap_diode_attack(
    bench: Bench, verifier: Verifier, device_id: str, trials: int, offset_mv: float, port: int = 0
) -> AttackReport:
    """Genuine device with one diode shifted by ``offset_mv``; rejection rate is the detection rate."""
    truth = bench.truth(device_id)
    diode = list(truth.diode_mv)
    diode[port] = round(diode[port] + offset_mv, 4)
    tampered = replace(truth, diode_mv=tuple(diode))
    probe = bench.probe(device_id, physical=tampered)
    decisions = []
    rng = np.random.default_rng([bench.seed, 99])
    for _ in range(trials):
        probe.device.set_environment(supply_v=float(rng.uniform(70, 230)))
        outcome, _ = memory_session(verifier, probe, device_id)
        decisions.append(outcome.decision)
    return _tally("swap-diode", decisions)


def genuine_trials(bench: Bench, verifier: Verifier, device_id: str, trials: int) -> AttackReport:
    probe = bench.probe(device_id)
    rng = np.random.default_rng([bench.seed, 98])
    decisions = []
    for _ in range(trials):
        probe.device.set_environment(supply_v=float(rng.uniform(70, 230)))
        outcome, _ = memory_session(verifier, probe, device_id)
        decisions.append(outcome.decision)
    return _tally("genuine", decisions)


def enroll_all(bench: Bench, verifier: Verifier, device_ids=None) -> None:
    for dev in device_ids or list(bench.truths):
        outcome, _ = memory_session(verifier, bench.probe(dev), dev, enroll=True)
        if outcome.decision.reason is not Reason.ENROLLED:
            raise RuntimeError(f"enrollment of {dev} failed: {outcome.decision.reason.value}")
