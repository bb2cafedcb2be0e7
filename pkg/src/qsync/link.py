"""Framed request/response link between a sync controller and a pulse source.

Frame layout, all integers little-endian::

    b"QSYN" | version u8 (=1) | msg_type u8 | payload_len u32 | payload

Messages::

    0x01 SetGate    detector_id u8, gate_time_ps u64, accumulation_us u64
    0x02 Counts     detector_id u8, count u64
    0x03 SetAttack  UTF-8 JSON attack profile (also echoed back as the ack)
    0x7F Error      code u16, UTF-8 text

Error code 1 is a malformed or unexpected frame and closes the connection;
code 2 is an out-of-range field and leaves it open. One request is
outstanding per connection at a time.
"""
from __future__ import annotations

import json
import logging
import os
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from typing import BinaryIO, Optional, Union

import numpy as np

from .physics import STATES, AttackProfile, Scenario, accumulate_counts

log = logging.getLogger(__name__)

MAGIC = b"QSYN"
VERSION = 0x01
MAX_PAYLOAD = 64 * 1024
HEADER = struct.Struct("<4sBBI")

SET_GATE, COUNTS, SET_ATTACK, ERROR = 0x01, 0x02, 0x03, 0x7F
E_MALFORMED, E_RANGE = 1, 2

_SET_GATE = struct.Struct("<BQQ")
_COUNTS = struct.Struct("<BQ")
_ERROR = struct.Struct("<H")


class ProtocolError(Exception):
    """A frame violated the wire format, or the peer reported an error."""

    def __init__(self, message: str, code: int = E_MALFORMED):
        super().__init__(message)
        self.code = code


class TransportError(ConnectionError):
    """The byte stream failed; the request may be retried on a new connection."""


@dataclass(frozen=True)
class SetGate:
    detector_id: int
    gate_time_ps: int
    accumulation_us: int


@dataclass(frozen=True)
class Counts:
    detector_id: int
    count: int


@dataclass(frozen=True)
class SetAttack:
    profile: AttackProfile


@dataclass(frozen=True)
class Error:
    code: int
    text: str


Message = Union[SetGate, Counts, SetAttack, Error]


def attack_to_json(profile: AttackProfile) -> dict:
    return {
        "state_offsets": dict(zip(STATES, profile.state_offset)),
        "common_offset": profile.common_offset,
        "states": None if profile.states is None else dict(zip(STATES, profile.states)),
        "active_during": profile.active_during,
    }


def attack_from_json(doc: dict) -> AttackProfile:
    return AttackProfile(
        state_offset=doc.get("state_offsets", {}),
        common_offset=doc.get("common_offset", 0),
        states=doc.get("states"),
        active_during=doc.get("active_during", "calibration"),
    )


def encode_payload(msg: Message) -> tuple[int, bytes]:
    try:
        if isinstance(msg, SetGate):
            return SET_GATE, _SET_GATE.pack(msg.detector_id, msg.gate_time_ps, msg.accumulation_us)
        if isinstance(msg, Counts):
            return COUNTS, _COUNTS.pack(msg.detector_id, msg.count)
        if isinstance(msg, SetAttack):
            doc = json.dumps(attack_to_json(msg.profile), sort_keys=True, separators=(",", ":"))
            return SET_ATTACK, doc.encode()
        if isinstance(msg, Error):
            return ERROR, _ERROR.pack(msg.code) + msg.text.encode()
    except struct.error as exc:
        raise ValueError(f"field out of range for {type(msg).__name__}: {exc}") from None
    raise TypeError(f"not a link message: {msg!r}")


def encode(msg: Message) -> bytes:
    msg_type, payload = encode_payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def decode_payload(msg_type: int, payload: bytes) -> Message:
    try:
        if msg_type == SET_GATE:
            return SetGate(*_SET_GATE.unpack(payload))
        if msg_type == COUNTS:
            return Counts(*_COUNTS.unpack(payload))
        if msg_type == SET_ATTACK:
            return SetAttack(attack_from_json(json.loads(payload.decode())))
        if msg_type == ERROR:
            (code,) = _ERROR.unpack(payload[:_ERROR.size])
            return Error(code, payload[_ERROR.size:].decode())
    except (struct.error, UnicodeDecodeError, ValueError, TypeError, AttributeError) as exc:
        raise ProtocolError(f"bad payload for message type {msg_type:#04x}: {exc}") from None
    raise ProtocolError(f"unknown message type {msg_type:#04x}")


def decode(frame: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(frame) < HEADER.size:
        raise ProtocolError("truncated frame header")
    magic, version, msg_type, length = HEADER.unpack_from(frame)
    _check_header(magic, version, length)
    payload = frame[HEADER.size:]
    if len(payload) != length:
        raise ProtocolError(f"payload length {len(payload)} does not match header {length}")
    return decode_payload(msg_type, payload)


def _check_header(magic: bytes, version: int, length: int) -> None:
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {length} exceeds {MAX_PAYLOAD}")


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return buf


def read_message(stream: BinaryIO) -> Optional[Message]:
    """Next message from ``stream``, or ``None`` on a clean end of stream."""
    head = _read_exact(stream, HEADER.size)
    if not head:
        return None
    if len(head) < HEADER.size:
        raise ProtocolError("truncated frame header")
    magic, version, msg_type, length = HEADER.unpack(head)
    _check_header(magic, version, length)
    payload = _read_exact(stream, length)
    if len(payload) < length:
        raise ProtocolError("truncated frame payload")
    return decode_payload(msg_type, payload)


# --- server -----------------------------------------------------------------

class SourceState:
    """Scenario behind a server; only the attack profile ever changes."""

    def __init__(self, scenario: Scenario):
        self._scenario = scenario
        self._lock = threading.Lock()

    @property
    def scenario(self) -> Scenario:
        with self._lock:
            return self._scenario

    def swap_attack(self, profile: AttackProfile) -> None:
        with self._lock:
            self._scenario = self._scenario.with_attack(profile)


def serve_connection(rfile: BinaryIO, wfile: BinaryIO, state: SourceState) -> None:
    """Answer requests on one connection until the peer closes or misbehaves."""
    rng = np.random.default_rng(state.scenario.seed)

    def send(msg: Message) -> None:
        wfile.write(encode(msg))
        wfile.flush()

    while True:
        try:
            msg = read_message(rfile)
        except ProtocolError as exc:
            log.debug("closing connection: %s", exc)
            send(Error(E_MALFORMED, str(exc)))
            return
        if msg is None:
            return
        if isinstance(msg, SetGate):
            scenario = state.scenario
            if not 1 <= msg.detector_id <= scenario.n_detectors:
                send(Error(E_RANGE, f"detector_id {msg.detector_id} outside 1..{scenario.n_detectors}"))
                continue
            if msg.gate_time_ps >= scenario.period or msg.accumulation_us == 0:
                send(Error(E_RANGE, f"gate_time_ps {msg.gate_time_ps} or accumulation_us "
                                    f"{msg.accumulation_us} out of range"))
                continue
            count = accumulate_counts(scenario.detector(msg.detector_id), msg.gate_time_ps,
                                      msg.accumulation_us, scenario, rng)
            send(Counts(msg.detector_id, count))
        elif isinstance(msg, SetAttack):
            state.swap_attack(msg.profile)
            send(msg)
        else:
            send(Error(E_MALFORMED, f"unexpected {type(msg).__name__} from client"))
            return


class _Handler(socketserver.StreamRequestHandler):
    def setup(self):
        super().setup()
        with self.server.conn_lock:
            self.server.connections.add(self.connection)

    def handle(self):
        try:
            serve_connection(self.rfile, self.wfile, self.server.source_state)
        except (OSError, ValueError):
            # Peer vanished or stop() tore the socket down under us.
            pass

    def finish(self):
        with self.server.conn_lock:
            self.server.connections.discard(self.connection)
        try:
            super().finish()
        except (OSError, ValueError):
            pass


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class _UnixServer(socketserver.ThreadingUnixStreamServer):
    daemon_threads = True


def parse_endpoint(endpoint: str) -> tuple[str, Union[tuple[str, int], str]]:
    """``host:port`` is TCP; ``unix:PATH`` or anything containing ``/`` is a local socket."""
    if endpoint.startswith("unix:"):
        return "unix", endpoint[5:]
    host, sep, port = endpoint.rpartition(":")
    if sep and port.isdigit() and "/" not in endpoint:
        return "tcp", (host or "127.0.0.1", int(port))
    if "/" in endpoint:
        return "unix", endpoint
    raise ValueError(f"cannot parse endpoint {endpoint!r}; use host:port or a socket path")


class LinkServer:
    """Threaded server answering gate queries from a scenario.

    Usable as a context manager; ``endpoint`` reports the bound address,
    which matters when listening on port 0.
    """

    def __init__(self, scenario: Scenario, endpoint: str = "127.0.0.1:0"):
        kind, addr = parse_endpoint(endpoint)
        if kind == "unix":
            if os.path.exists(addr):
                os.unlink(addr)
            self._server = _UnixServer(addr, _Handler)
        else:
            self._server = _TCPServer(addr, _Handler)
        self._server.source_state = SourceState(scenario)
        self._server.connections = set()
        self._server.conn_lock = threading.Lock()
        self._kind = kind
        self._thread: Optional[threading.Thread] = None

    @property
    def endpoint(self) -> str:
        addr = self._server.server_address
        if self._kind == "unix":
            return f"unix:{addr}"
        return f"{addr[0]}:{addr[1]}"

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def start(self) -> "LinkServer":
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.05},
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        """Stop listening and drop every open connection."""
        if self._thread is not None:
            self._server.shutdown()
        self._server.server_close()
        with self._server.conn_lock:
            for conn in list(self._server.connections):
                try:
                    conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
        if self._kind == "unix":
            try:
                os.unlink(self._server.server_address)
            except OSError:
                pass

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(scenario: Scenario, endpoint: str) -> None:
    """Serve ``scenario`` on ``endpoint`` until interrupted."""
    server = LinkServer(scenario, endpoint)
    log.info("serving on %s", server.endpoint)
    try:
        server.serve_forever()
    finally:
        server.stop()


# --- client -----------------------------------------------------------------

class RemoteSource:
    """Pulse source reached over a byte stream.

    Satisfies the same ``counts`` contract as the in-process source. Stream
    failures raise :class:`TransportError`; server-reported problems raise
    :class:`ProtocolError`.
    """

    def __init__(self, sock: socket.socket, period: int, n_detectors: int,
                 fwhm_ps: Optional[int] = None):
        self._sock = sock
        self._rfile = sock.makefile("rb")
        self.period = period
        self.n_detectors = n_detectors
        self.fwhm_ps = fwhm_ps

    @classmethod
    def connect(cls, endpoint: str, period: int, n_detectors: int,
                fwhm_ps: Optional[int] = None, timeout: float = 10.0) -> "RemoteSource":
        kind, addr = parse_endpoint(endpoint)
        try:
            if kind == "unix":
                sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
                sock.settimeout(timeout)
                sock.connect(addr)
            else:
                sock = socket.create_connection(addr, timeout=timeout)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError as exc:
            raise TransportError(f"cannot reach {endpoint}: {exc}") from exc
        return cls(sock, period, n_detectors, fwhm_ps)

    def _request(self, msg: Message) -> Message:
        try:
            self._sock.sendall(encode(msg))
            reply = read_message(self._rfile)
        except OSError as exc:
            raise TransportError(f"link failed: {exc}") from exc
        if reply is None:
            raise TransportError("server closed the connection")
        if isinstance(reply, Error):
            raise ProtocolError(reply.text, reply.code)
        return reply

    def counts(self, detector_id: int, gate_time_ps: int, accumulation_us: int) -> int:
        reply = self._request(SetGate(detector_id, gate_time_ps, accumulation_us))
        if not isinstance(reply, Counts) or reply.detector_id != detector_id:
            raise ProtocolError(f"unexpected reply {reply!r} to SetGate")
        return reply.count

    def set_attack(self, profile: AttackProfile) -> None:
        reply = self._request(SetAttack(profile))
        if not isinstance(reply, SetAttack):
            raise ProtocolError(f"unexpected reply {reply!r} to SetAttack")

    def close(self) -> None:
        try:
            self._rfile.close()
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def remote_source(endpoint: str, scenario_or_period, n_detectors: Optional[int] = None,
                  fwhm_ps: Optional[int] = None) -> RemoteSource:
    """Connect to ``endpoint``; geometry comes from a scenario or explicit values."""
    if isinstance(scenario_or_period, Scenario):
        sc = scenario_or_period
        return RemoteSource.connect(endpoint, sc.period, sc.n_detectors, sc.pulse.fwhm_ps)
    return RemoteSource.connect(endpoint, int(scenario_or_period), int(n_detectors), fwhm_ps)


def connect_inprocess(scenario: Scenario) -> RemoteSource:
    """Framed link to a server thread over a socket pair, without any listener."""
    client, server = socket.socketpair()
    state = SourceState(scenario)

    def run():
        with server, server.makefile("rb") as rfile, server.makefile("wb") as wfile:
            try:
                serve_connection(rfile, wfile, state)
            except OSError:
                pass

    threading.Thread(target=run, daemon=True).start()
    return RemoteSource(client, scenario.period, scenario.n_detectors, scenario.pulse.fwhm_ps)
