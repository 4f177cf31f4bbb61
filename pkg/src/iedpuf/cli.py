"""Command-line entry point.

Exit codes: 0 success/accept, 1 reject, 2 usage, 3 I/O, 4 protocol.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import DEFAULT_PORT, PORT_ENV, CliConfig, ConfigError, load_config
from .hwmodel import load_fleet, save_fleet, synth_fleet
from .metrics import (
    CsvError,
    FleetConfig,
    entropy_experiment,
    format_occurrence_table,
    group_by_device,
    ingest_csv,
    report_from_signatures,
    run_fleet_experiment,
    summarize,
)
from .scenarios import Bench, clone_attack, replay_attack, swap_diode_attack
from .sigcore import SaturationWarning
from .verifier import AuditLog, EnrollmentStore, Reason, StoreError, Verifier
from .wire import (
    ProbeEndpoint,
    SessionServer,
    TcpTransport,
    VerifierEndpoint,
    memory_session,
    parse_hostport,
)

EXIT_OK, EXIT_REJECT, EXIT_USAGE, EXIT_IO, EXIT_PROTOCOL = 0, 1, 2, 3, 4

_PROTOCOL_REASONS = {Reason.PROTOCOL_ERROR, Reason.TIMEOUT}


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: error: {message}", EXIT_USAGE)


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file ([sim] [probe] [verifier] [cli])")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--store", help="enrollment store JSON (env IEDPUF_STORE)")
    common.add_argument("--theta", type=float, help="diode Hamming acceptance threshold")
    common.add_argument("--timeout", type=float, default=5.0, help="per-frame timeout, seconds")

    fixture = argparse.ArgumentParser(add_help=False)
    fixture.add_argument("--fixture", required=True, help="fleet ground-truth JSON from `synth`")
    fixture_opt = argparse.ArgumentParser(add_help=False)
    fixture_opt.add_argument("--fixture", help="fleet ground-truth JSON (required for the memory transport)")

    p = _Parser(prog="iedpuf", description="Diode/regulator PUF authentication for IEDs (simulated bench).")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic fleet fixture")
    s.add_argument("-n", type=_positive, required=True, help="number of devices")
    s.add_argument("--out", required=True)

    for name in ("enroll", "auth"):
        s = sub.add_parser(name, parents=[common, fixture_opt], help=f"{name} one device")
        s.add_argument("device")
        s.add_argument("--transport", help="memory (default) or tcp:HOST:PORT of a running serve-probe")
        s.add_argument("--audit", help="append session outcomes to this JSON-lines file")
        if name == "auth":
            s.add_argument("--impersonate", metavar="DEVICE", help="present DEVICE's hardware under the claimed identity")

    s = sub.add_parser("attack", parents=[common, fixture], help="run an attack scenario")
    s.add_argument("kind", choices=["clone", "replay", "swap-diode"])
    s.add_argument("--device", required=True, help="victim device id (must be enrolled)")
    s.add_argument("--trials", type=_positive, default=100)
    s.add_argument("--offset-mv", type=float, default=5.0, help="swap-diode perturbation")
    s.add_argument("--port", type=int, default=0, help="swap-diode port")
    s.add_argument("--out", help="write the scenario report JSON here")

    s = sub.add_parser("metrics", parents=[common], help="PUF quality experiments")
    s.add_argument("--entropy", action="store_true", help="challenge-position entropy experiment")
    s.add_argument("--challenges", type=_positive, default=10_000)
    s.add_argument("--fleet", action="store_true", help="simulated fleet uniqueness/stability/bias")
    s.add_argument("--devices", type=_positive, default=20)
    s.add_argument("--reads", type=int, default=50)
    s.add_argument("--ingest", metavar="CSV", help="bench CSV: device,read,d0..d11,vrg1,vrg2,vrg3,tp_ns")
    s.add_argument("--out-dir", default=".", help="where report.json / raw.csv are written")

    s = sub.add_parser("serve-probe", parents=[common, fixture], help="listen as a probe bound to one device")
    s.add_argument("--device", required=True)
    s.add_argument("--listen", default=None, help="HOST:PORT (env IEDPUF_PORT)")
    s.add_argument("--max-sessions", type=int, default=0, help="stop after N sessions (0 = forever)")

    s = sub.add_parser("serve-ccs", parents=[common], help="listen as the CCS; each connecting probe is authenticated")
    s.add_argument("--device", required=True, help="device id expected behind connecting probes")
    s.add_argument("--listen", default=None, help="HOST:PORT (env IEDPUF_PORT)")
    s.add_argument("--audit")
    s.add_argument("--max-sessions", type=int, default=0)

    s = sub.add_parser("probe", parents=[common, fixture], help="dial a CCS and serve one session")
    s.add_argument("--device", required=True)
    s.add_argument("--connect", required=True, help="HOST:PORT of serve-ccs")

    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return p


def _effective_config(args) -> CliConfig:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    if args.seed is not None:
        cfg.seed = args.seed
    if cfg.seed < 0:
        raise CliError("--seed must be non-negative", EXIT_USAGE)
    if args.store is not None:
        cfg.store = args.store
    if getattr(args, "transport", None):
        cfg.transport = args.transport
    if args.theta is not None:
        try:
            cfg.verifier = replace(cfg.verifier, theta=args.theta)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_USAGE) from None
    return cfg


def _load_fixture(path, cfg: CliConfig) -> Bench:
    try:
        fleet = load_fleet(path)
    except FileNotFoundError:
        raise CliError(f"fixture not found: {path}", EXIT_IO) from None
    except (ValueError, KeyError) as exc:
        raise CliError(f"bad fixture {path}: {exc}", EXIT_IO) from None
    return Bench(fleet, cfg.sim, cfg.probe, seed=cfg.seed)


def _load_store(cfg: CliConfig, missing_ok: bool) -> EnrollmentStore:
    try:
        return EnrollmentStore.load(cfg.store)
    except StoreError as exc:
        if exc.code == "NOT_FOUND" and missing_ok:
            return EnrollmentStore()
        raise CliError(str(exc), EXIT_IO) from None


def _save_store(store: EnrollmentStore, cfg: CliConfig) -> None:
    try:
        store.save(cfg.store)
    except OSError as exc:
        raise CliError(f"cannot write store {cfg.store}: {exc}", EXIT_IO) from None


def _verifier(cfg: CliConfig, store: EnrollmentStore, audit_path=None) -> Verifier:
    return Verifier(store, cfg.verifier, seed=[cfg.seed, 2], audit=AuditLog(audit_path))


def _listen_addr(spec) -> tuple[str, int]:
    if spec:
        return parse_hostport(spec)
    return "127.0.0.1", int(os.environ.get(PORT_ENV, DEFAULT_PORT))


def _exit_for(decision) -> int:
    if decision.accepted:
        return EXIT_OK
    if decision.reason in _PROTOCOL_REASONS:
        return EXIT_PROTOCOL
    return EXIT_REJECT


def _session(args, cfg, device_id, enroll, verifier, bench):
    if cfg.transport == "memory":
        if bench is None:
            raise CliError("memory transport needs --fixture", EXIT_USAGE)
        physical = None
        if getattr(args, "impersonate", None):
            try:
                physical = bench.truth(args.impersonate)
            except LookupError as exc:
                raise CliError(str(exc), EXIT_USAGE) from None
        if device_id not in bench.truths:
            if enroll or device_id in verifier.store:
                raise CliError(f"device {device_id!r} not in fixture", EXIT_USAGE)
            # never contacted: the verifier rejects before any frame is sent
            return VerifierEndpoint(verifier, None, device_id, timeout=args.timeout).run()
        probe = bench.probe(device_id, physical=physical)
        outcome, _ = memory_session(verifier, probe, device_id, enroll=enroll, timeout=args.timeout)
        return outcome
    if cfg.transport.startswith("tcp:"):
        host, port = parse_hostport(cfg.transport[4:])
        try:
            t = TcpTransport.connect(host, port, args.timeout)
        except OSError as exc:
            raise CliError(f"cannot connect to {host}:{port}: {exc}", EXIT_PROTOCOL) from None
        try:
            return VerifierEndpoint(verifier, t, device_id, enroll=enroll, timeout=args.timeout).run()
        finally:
            t.close()
    raise CliError(f"unknown transport {cfg.transport!r}", EXIT_USAGE)


def cmd_synth(args, cfg: CliConfig) -> int:
    fleet = synth_fleet(args.n, cfg.seed, cfg.sim)
    try:
        save_fleet(args.out, fleet, seed=cfg.seed)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    print(f"wrote {len(fleet)} devices to {args.out}")
    return EXIT_OK


def cmd_enroll(args, cfg: CliConfig) -> int:
    bench = _load_fixture(args.fixture, cfg) if args.fixture else None
    store = _load_store(cfg, missing_ok=True)
    verifier = _verifier(cfg, store, args.audit)
    outcome = _session(args, cfg, args.device, True, verifier, bench)
    d = outcome.decision
    if d.reason is not Reason.ENROLLED:
        print(f"enroll {args.device}: FAILED reason={d.reason.value}")
        return _exit_for(d) if not d.accepted else EXIT_REJECT
    _save_store(store, cfg)
    print(f"enroll {args.device}: OK store={cfg.store}")
    return EXIT_OK


def cmd_auth(args, cfg: CliConfig) -> int:
    bench = _load_fixture(args.fixture, cfg) if args.fixture else None
    store = _load_store(cfg, missing_ok=True)
    verifier = _verifier(cfg, store, args.audit)
    outcome = _session(args, cfg, args.device, False, verifier, bench)
    d = outcome.decision
    ch = ",".join(map(str, outcome.challenge.ports)) if outcome.challenge else "-"
    verdict = "ACCEPT" if d.accepted else "REJECT"
    print(f"auth {args.device}: {verdict} reason={d.reason.value} fraction={d.diode_fraction:.4f} delta_match={str(d.delta_match).lower()} challenge={ch}")
    return _exit_for(d)


def cmd_attack(args, cfg: CliConfig) -> int:
    bench = _load_fixture(args.fixture, cfg)
    store = _load_store(cfg, missing_ok=False)
    if args.device not in store:
        raise CliError(f"device {args.device!r} is not enrolled", EXIT_USAGE)
    verifier = _verifier(cfg, store)
    if args.kind == "clone":
        report = clone_attack(bench, verifier, args.device, args.trials, seed=cfg.seed)
    elif args.kind == "replay":
        report = replay_attack(bench, verifier, args.device, args.trials, timeout=args.timeout)
    else:
        if not 0 <= args.port < 12:
            raise CliError("--port must be in [0, 11]", EXIT_USAGE)
        report = swap_diode_attack(bench, verifier, args.device, args.trials, args.offset_mv, args.port)
    doc = report.to_dict()
    if args.kind == "swap-diode":
        doc.update(offset_mv=args.offset_mv, port=args.port)
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        try:
            Path(args.out).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    sys.stdout.write(text)
    return EXIT_OK


def cmd_metrics(args, cfg: CliConfig) -> int:
    if not (args.entropy or args.fleet or args.ingest):
        raise CliError("metrics: choose at least one of --entropy, --fleet, --ingest", EXIT_USAGE)
    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out_dir}: {exc}", EXIT_IO) from None
    report = None
    raw_csv = None
    if args.ingest:
        try:
            sigs = ingest_csv(args.ingest)
        except FileNotFoundError:
            raise CliError(f"no such file: {args.ingest}", EXIT_IO) from None
        except CsvError as exc:
            raise CliError(f"{args.ingest}: {exc}", EXIT_IO) from None
        report = report_from_signatures(group_by_device(sigs), {"ingest": str(args.ingest)})
        report.config["signatures"] = {f"{d}/{r}": str(s) for (d, r), s in sigs.items()}
    elif args.fleet:
        if args.reads < 2:
            raise CliError("--reads must be >= 2", EXIT_USAGE)
        fc = FleetConfig(n_devices=args.devices, n_reads=args.reads, fleet_seed=cfg.seed, measure_seed=cfg.seed + 1, params=cfg.sim)
        report, raw_csv = run_fleet_experiment(fc)
    if args.entropy:
        ent = entropy_experiment(args.challenges, cfg.seed)
        ent_doc = {
            "n_challenges": ent.n_challenges,
            "h_max": ent.h_max,
            "per_position": ent.per_position,
            "max_relative_error": ent.max_relative_error,
            "table": ent.table,
        }
        if report is None:
            report = report_from_signatures({}, {})
        report.entropy = ent_doc
        print(format_occurrence_table(ent))
    report.config.setdefault("seed", cfg.seed)
    try:
        (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
        if raw_csv is not None:
            (out_dir / "raw.csv").write_text(raw_csv, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write reports: {exc}", EXIT_IO) from None
    if report.stability or report.bias:
        print(json.dumps(summarize(report)))
    print(f"wrote {out_dir / 'report.json'}" + (f" and {out_dir / 'raw.csv'}" if raw_csv else ""))
    return EXIT_OK


def cmd_serve_probe(args, cfg: CliConfig) -> int:
    bench = _load_fixture(args.fixture, cfg)
    try:
        probe = bench.probe(args.device)
    except LookupError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    return _serve(args, lambda t: ProbeEndpoint(probe, t, timeout=args.timeout).serve(), f"probe for {args.device}")


def cmd_serve_ccs(args, cfg: CliConfig) -> int:
    store = _load_store(cfg, missing_ok=False)
    verifier = _verifier(cfg, store, args.audit)

    def handle(t):
        d = VerifierEndpoint(verifier, t, args.device, timeout=args.timeout).run().decision
        print(f"session {args.device}: {'ACCEPT' if d.accepted else 'REJECT'} reason={d.reason.value}", flush=True)

    return _serve(args, handle, "CCS")


def _serve(args, handler, label: str) -> int:
    host, port = _listen_addr(args.listen)
    remaining = threading.Semaphore(0)
    limit = args.max_sessions

    def wrapped(t):
        try:
            handler(t)
        finally:
            remaining.release()

    try:
        server = SessionServer((host, port), wrapped)
    except OSError as exc:
        raise CliError(f"cannot listen on {host}:{port}: {exc}", EXIT_IO) from None
    print(f"{label} listening on {host}:{server.port}", flush=True)
    server.start()
    try:
        if limit > 0:
            for _ in range(limit):
                remaining.acquire()
        else:
            threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return EXIT_OK


def cmd_probe(args, cfg: CliConfig) -> int:
    bench = _load_fixture(args.fixture, cfg)
    try:
        probe = bench.probe(args.device)
    except LookupError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    host, port = parse_hostport(args.connect)
    try:
        t = TcpTransport.connect(host, port, args.timeout)
    except OSError as exc:
        raise CliError(f"cannot connect to {host}:{port}: {exc}", EXIT_PROTOCOL) from None
    try:
        session = ProbeEndpoint(probe, t, timeout=args.timeout).serve()
    finally:
        t.close()
    print(f"probe session ended in state {session.state.value}")
    return EXIT_OK if session.state.value == "Done" else EXIT_PROTOCOL


def cmd_config(args, cfg: CliConfig) -> int:
    print(json.dumps(cfg.effective(), indent=2))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "enroll": cmd_enroll,
    "auth": cmd_auth,
    "attack": cmd_attack,
    "metrics": cmd_metrics,
    "serve-probe": cmd_serve_probe,
    "serve-ccs": cmd_serve_ccs,
    "probe": cmd_probe,
    "config": cmd_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _effective_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SaturationWarning)
            return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
