"""Newline-delimited JSON framing and the two session endpoints.

Every frame is a single compact UTF-8 JSON object whose first key is ``t``
(the message type), followed by that type's fields in a fixed order, and a
single trailing ``\\n``. Real numbers travel as decimal strings so that
transcripts are byte-stable.
"""

from __future__ import annotations

import json
import queue
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Callable

from .probe import Probe, ProbeHello, ProbeSession, ProbeState, ProtocolError, Response
from .sigcore import BitString, Challenge, IDENTITY_CHALLENGE
from .verifier import Decision, Reason, Verifier, check_probe_hello, expected_response, make_hash
from .verifier import record_from_enrollment, verify

MAX_FRAME = 64 * 1024
DEFAULT_TIMEOUT = 5.0

MESSAGE_TYPES = (
    "AUTH_REQ",
    "PROBE_HELLO",
    "HASH_CHALLENGE",
    "HASH_ACK",
    "PUF_CHALLENGE",
    "PUF_RESPONSE",
    "AUTH_RESULT",
    "ERR",
)


def _is_str(v):
    return isinstance(v, str)


def _is_bool(v):
    return isinstance(v, bool)


def _is_uint_str(v):
    return isinstance(v, str) and v.isdigit() and v.isascii()


def _is_decimal_str(v):
    if not isinstance(v, str) or not v:
        return False
    try:
        float(v)
    except ValueError:
        return False
    return all(c in "0123456789.-" for c in v)


def _is_hex32(v):
    return isinstance(v, str) and len(v) == 32 and all(c in "0123456789abcdef" for c in v)


def _is_ports(v):
    return isinstance(v, list) and all(isinstance(p, int) and not isinstance(p, bool) for p in v)


def _is_bits(v):
    return isinstance(v, str) and not v.strip("01")


# (required fields, optional fields), each in canonical order
SCHEMA: dict[str, tuple[tuple, tuple]] = {
    "AUTH_REQ": ((("dev", _is_str),), (("mode", _is_str),)),
    "PROBE_HELLO": (
        (("probe", _is_str), ("nonce", _is_uint_str), ("mu", _is_decimal_str), ("sigma", _is_decimal_str)),
        (),
    ),
    "HASH_CHALLENGE": ((("digest", _is_hex32),), ()),
    "HASH_ACK": ((("ok", _is_bool),), ()),
    "PUF_CHALLENGE": ((("ports", _is_ports),), ()),
    "PUF_RESPONSE": ((("partial", _is_bits), ("delta", _is_bits)), (("vrg", _is_str), ("tp", _is_str))),
    "AUTH_RESULT": (
        (("accepted", _is_bool), ("reason", _is_str), ("fraction", _is_decimal_str), ("delta_match", _is_bool)),
        (),
    ),
    "ERR": ((("code", _is_str), ("msg", _is_str)), ()),
}


class FrameError(Exception):
    """Frame could not be decoded; ``code`` names the failure."""

    def __init__(self, code: str, msg: str = ""):
        super().__init__(f"{code}: {msg}" if msg else code)
        self.code = code


class TransportTimeout(Exception):
    pass


class TransportClosed(Exception):
    pass


@dataclass(frozen=True)
class WireMessage:
    t: str
    fields: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.fields[key]

    def get(self, key, default=None):
        return self.fields.get(key, default)


def _validate(t: str, fields: dict) -> list[str]:
    if t not in SCHEMA:
        raise FrameError("UNKNOWN_TYPE", repr(t))
    required, optional = SCHEMA[t]
    order = []
    for name, check in required:
        if name not in fields:
            raise FrameError("BAD_FIELD", f"{t} missing {name!r}")
        if not check(fields[name]):
            raise FrameError("BAD_FIELD", f"{t}.{name} = {fields[name]!r}")
        order.append(name)
    for name, check in optional:
        if name in fields:
            if not check(fields[name]):
                raise FrameError("BAD_FIELD", f"{t}.{name} = {fields[name]!r}")
            order.append(name)
    extra = set(fields) - set(order)
    if extra:
        raise FrameError("BAD_FIELD", f"{t} has unexpected fields {sorted(extra)}")
    return order


def encode_frame(msg: WireMessage) -> bytes:
    order = _validate(msg.t, msg.fields)
    obj = {"t": msg.t}
    for name in order:
        obj[name] = msg.fields[name]
    data = json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + b"\n"
    if len(data) > MAX_FRAME:
        raise FrameError("FRAME_TOO_LARGE", f"{len(data)} bytes")
    return data


def decode_frame(data: bytes) -> WireMessage:
    if len(data) > MAX_FRAME:
        raise FrameError("FRAME_TOO_LARGE", f"{len(data)} bytes")
    if not data.endswith(b"\n"):
        raise FrameError("FRAME_TRUNCATED", "missing terminating newline")
    body = data[:-1]
    if b"\n" in body:
        raise FrameError("BAD_JSON", "embedded newline")
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FrameError("BAD_UTF8", str(exc)) from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FrameError("BAD_JSON", str(exc)) from None
    if not isinstance(obj, dict) or "t" not in obj:
        raise FrameError("BAD_JSON", "frame must be an object with a 't' key")
    t = obj.pop("t")
    if not isinstance(t, str):
        raise FrameError("UNKNOWN_TYPE", repr(t))
    _validate(t, obj)
    return WireMessage(t, obj)


def msg(t: str, **fields) -> WireMessage:
    return WireMessage(t, fields)


def fmt_real(x: float) -> str:
    return f"{x:.6f}"


# --- transports -------------------------------------------------------------


class _LineTransport:
    """Shared newline framing over a chunked byte source."""

    def __init__(self):
        self._buf = bytearray()
        self.transcript: list[tuple[str, bytes]] | None = None

    def record(self) -> list[tuple[str, bytes]]:
        self.transcript = []
        return self.transcript

    def _read_chunk(self, timeout: float | None) -> bytes:
        raise NotImplementedError

    def _write(self, data: bytes) -> None:
        raise NotImplementedError

    def send(self, data: bytes) -> None:
        if self.transcript is not None:
            self.transcript.append((">", data))
        self._write(data)

    def recv(self, timeout: float | None = DEFAULT_TIMEOUT) -> bytes:
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                frame = bytes(self._buf[: nl + 1])
                del self._buf[: nl + 1]
                if len(frame) > MAX_FRAME:
                    raise FrameError("FRAME_TOO_LARGE", f"{len(frame)} bytes")
                if self.transcript is not None:
                    self.transcript.append(("<", frame))
                return frame
            if len(self._buf) > MAX_FRAME:
                self._buf.clear()
                raise FrameError("FRAME_TOO_LARGE", "no newline within limit")
            chunk = self._read_chunk(timeout)
            if not chunk:
                if self._buf:
                    self._buf.clear()
                    raise FrameError("FRAME_TRUNCATED", "stream ended mid-frame")
                raise TransportClosed("peer closed")
            self._buf.extend(chunk)

    def send_msg(self, m: WireMessage) -> None:
        self.send(encode_frame(m))

    def recv_msg(self, timeout: float | None = DEFAULT_TIMEOUT) -> WireMessage:
        return decode_frame(self.recv(timeout))


class MemoryTransport(_LineTransport):
    """One end of an in-process duplex byte pipe."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        super().__init__()
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    @classmethod
    def pair(cls) -> tuple["MemoryTransport", "MemoryTransport"]:
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b), cls(b, a)

    def _read_chunk(self, timeout):
        try:
            chunk = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(f"no frame within {timeout} s") from None
        return chunk

    def _write(self, data: bytes) -> None:
        if self._closed:
            raise TransportClosed("transport closed")
        self._outbox.put(bytes(data))

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(b"")


class TcpTransport(_LineTransport):
    def __init__(self, sock: socket.socket):
        super().__init__()
        self.sock = sock

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> "TcpTransport":
        return cls(socket.create_connection((host, port), timeout=timeout))

    def _read_chunk(self, timeout):
        self.sock.settimeout(timeout)
        try:
            return self.sock.recv(65536)
        except socket.timeout:
            raise TransportTimeout(f"no frame within {timeout} s") from None
        except OSError:
            return b""

    def _write(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportClosed(str(exc)) from None

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def parse_hostport(spec: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, _, port = spec.rpartition(":")
    return (host or default_host), int(port)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        transport = TcpTransport(self.request)
        try:
            self.server.session_handler(transport)
        finally:
            transport.close()


class SessionServer(socketserver.ThreadingTCPServer):
    """TCP server running ``session_handler(transport)`` per connection, each in its own thread."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, session_handler: Callable):
        self.session_handler = session_handler
        super().__init__(address, _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


# --- endpoints --------------------------------------------------------------


@dataclass
class SessionOutcome:
    decision: Decision
    challenge: Challenge | None = None
    record: object = None


class ProbeEndpoint:
    """Serves one protocol session for a probe over a transport."""

    def __init__(self, probe: Probe, transport, timeout: float = DEFAULT_TIMEOUT):
        self.probe = probe
        self.transport = transport
        self.timeout = timeout
        self.session: ProbeSession | None = None

    def _err(self, code: str, text: str) -> None:
        try:
            self.transport.send_msg(msg("ERR", code=code, msg=text))
        except TransportClosed:
            pass

    def serve(self) -> ProbeSession:
        with self.probe.lock:
            return self._serve()

    def _serve(self) -> ProbeSession:
        p = self.probe
        session = self.session = p.new_session()
        while True:
            try:
                m = self.transport.recv_msg(self.timeout)
            except FrameError as exc:
                self._err(exc.code, str(exc))
                return session
            except (TransportTimeout, TransportClosed):
                return session
            try:
                if m.t == "AUTH_REQ":
                    if session.state is ProbeState.IDLE:
                        session.enroll = m.get("mode") == "enroll"
                        if m.get("dev") != p.device.device_id:
                            self._err("WRONG_DEVICE", f"probe is attached to {p.device.device_id}")
                            return session
                    hello = p.on_auth_request(session)
                    self.transport.send_msg(
                        msg(
                            "PROBE_HELLO",
                            probe=hello.probe_id,
                            nonce=str(hello.nonce),
                            mu=fmt_real(hello.mu),
                            sigma=fmt_real(hello.sigma),
                        )
                    )
                elif m.t == "HASH_CHALLENGE":
                    ok = p.on_hash_challenge(session, m["digest"])
                    self.transport.send_msg(msg("HASH_ACK", ok=ok))
                    if not ok:
                        return session
                elif m.t == "PUF_CHALLENGE":
                    try:
                        c = Challenge(tuple(m["ports"]))
                    except ValueError as exc:
                        raise ProtocolError("BAD_CHALLENGE", str(exc)) from None
                    r = p.on_puf_challenge(session, c)
                    fields = {"partial": str(r.partial), "delta": str(r.delta)}
                    if r.vrg_raw is not None:
                        fields.update(vrg=r.vrg_raw, tp=r.tp_raw)
                    self.transport.send_msg(WireMessage("PUF_RESPONSE", fields))
                elif m.t == "AUTH_RESULT":
                    return session
                elif m.t == "ERR":
                    return session
                else:
                    raise ProtocolError("UNEXPECTED", f"{m.t} not valid for a probe")
            except ProtocolError as exc:
                self._err(exc.code, exc.msg)
                return session
            except TransportClosed:
                return session


class VerifierEndpoint:
    """Drives one session from the CCS side and returns the decision."""

    def __init__(self, verifier: Verifier, transport, device_id: str, enroll: bool = False, timeout: float = DEFAULT_TIMEOUT):
        self.verifier = verifier
        self.transport = transport
        self.device_id = device_id
        self.enroll = enroll
        self.timeout = timeout
        self.outcome: SessionOutcome | None = None

    def _finish(self, decision: Decision, challenge=None, send_result=True, record=None) -> SessionOutcome:
        self.verifier.log(self.device_id, decision, challenge, mode="enroll" if self.enroll else "auth")
        if send_result:
            try:
                self.transport.send_msg(
                    msg(
                        "AUTH_RESULT",
                        accepted=decision.accepted,
                        reason=decision.reason.value,
                        fraction=fmt_real(decision.diode_fraction),
                        delta_match=decision.delta_match,
                    )
                )
            except TransportClosed:
                pass
        self.outcome = SessionOutcome(decision, challenge, record)
        return self.outcome

    def _expect(self, t: str) -> WireMessage:
        m = self.transport.recv_msg(self.timeout)
        if m.t == "ERR":
            raise ProtocolError(m["code"], m["msg"])
        if m.t != t:
            try:
                self.transport.send_msg(msg("ERR", code="OUT_OF_ORDER", msg=f"expected {t}, got {m.t}"))
            except TransportClosed:
                pass
            raise ProtocolError("OUT_OF_ORDER", f"expected {t}, got {m.t}")
        return m

    def run(self) -> SessionOutcome:
        v = self.verifier
        record = None
        if not self.enroll:
            try:
                record = v.store.get(self.device_id)
            except LookupError:
                return self._finish(Decision(False, 1.0, False, Reason.UNKNOWN_DEVICE), send_result=False)
        challenge = None
        try:
            fields = {"dev": self.device_id}
            if self.enroll:
                fields["mode"] = "enroll"
            self.transport.send_msg(WireMessage("AUTH_REQ", fields))
            m = self._expect("PROBE_HELLO")
            hello = ProbeHello(m["probe"], int(m["nonce"]), float(m["mu"]), float(m["sigma"]))
            if record is not None:
                ok, reason = check_probe_hello(hello, record, v.cfg)
                if not ok:
                    return self._finish(Decision(False, 1.0, False, reason))
            if not v.note_nonce(self.device_id, hello.nonce) and v.cfg.reject_reused_nonce:
                return self._finish(Decision(False, 1.0, False, Reason.REPLAYED_NONCE))
            self.transport.send_msg(msg("HASH_CHALLENGE", digest=make_hash(hello.nonce)))
            ack = self._expect("HASH_ACK")
            if not ack["ok"]:
                return self._finish(Decision(False, 1.0, False, Reason.HASH_DENIED))
            challenge = IDENTITY_CHALLENGE if self.enroll else v.new_challenge()
            self.transport.send_msg(msg("PUF_CHALLENGE", ports=list(challenge.ports)))
            m = self._expect("PUF_RESPONSE")
            response = Response(BitString(m["partial"]), BitString(m["delta"]), m.get("vrg"), m.get("tp"))
            if self.enroll:
                try:
                    new_record = record_from_enrollment(self.device_id, hello, response)
                except ValueError:
                    return self._finish(Decision(False, 1.0, False, Reason.MALFORMED), challenge)
                v.store.put(new_record)
                return self._finish(Decision(True, 0.0, True, Reason.ENROLLED), challenge, record=new_record)
            decision = verify(response, expected_response(record, challenge), v.cfg)
            return self._finish(decision, challenge)
        except (TransportTimeout, TransportClosed):
            return self._finish(Decision(False, 1.0, False, Reason.TIMEOUT), challenge, send_result=False)
        except (ProtocolError, FrameError):
            return self._finish(Decision(False, 1.0, False, Reason.PROTOCOL_ERROR), challenge, send_result=False)


def run_session(verifier_endpoint: VerifierEndpoint, probe_endpoint: ProbeEndpoint | None = None) -> Decision:
    """Run both endpoints to completion and return the CCS decision.

    With ``probe_endpoint`` given (in-process peer), the probe is served on a
    worker thread; otherwise the verifier talks to whatever is on the other end
    of its transport.
    """
    worker = None
    if probe_endpoint is not None:
        worker = threading.Thread(target=probe_endpoint.serve, daemon=True)
        worker.start()
    outcome = verifier_endpoint.run()
    if worker is not None:
        worker.join(timeout=verifier_endpoint.timeout + 1.0)
    return outcome.decision


def memory_session(verifier: Verifier, probe: Probe, device_id: str, enroll: bool = False, timeout: float = DEFAULT_TIMEOUT):
    """Convenience: one session over a fresh in-memory pipe. Returns (outcome, transcript)."""
    a, b = MemoryTransport.pair()
    transcript = a.record()
    ve = VerifierEndpoint(verifier, a, device_id, enroll=enroll, timeout=timeout)
    pe = ProbeEndpoint(probe, b, timeout=timeout)
    run_session(ve, pe)
    a.close()
    b.close()
    return ve.outcome, transcript


def tcp_session(verifier: Verifier, probe: Probe, device_id: str, enroll: bool = False, timeout: float = DEFAULT_TIMEOUT):
    """One session over loopback TCP: the probe listens, the CCS dials."""
    done = threading.Event()

    def handler(transport):
        ProbeEndpoint(probe, transport, timeout=timeout).serve()
        done.set()

    server = SessionServer(("127.0.0.1", 0), handler)
    server.start()
    try:
        t = TcpTransport.connect("127.0.0.1", server.port, timeout)
        transcript = t.record()
        ve = VerifierEndpoint(verifier, t, device_id, enroll=enroll, timeout=timeout)
        ve.run()
        done.wait(timeout + 1.0)
        t.close()
    finally:
        server.shutdown()
        server.server_close()
    return ve.outcome, transcript
