"""Live mode: the four agents exchange the protocol over framed byte streams
with real clocks and deadline enforcement.

Frame layout (lengths big-endian):

    length  u32   bytes after this field (= 9 + payload size)
    type    u8    0x01 CHALLENGE  0x02 ANSWER   0x03 REVEAL  0x04 ABORT
                  0x05 HELLO      0x06 SCHEDULE 0x07 RECORDS 0x08 VERDICT
    round   u64   round index (0 for HELLO/SCHEDULE)
    payload       type-dependent, see below

CHALLENGE/ANSWER carry exactly one element (n/8 bytes, little-endian bit
order); REVEAL is one bit byte plus the final secret. RECORDS and VERDICT
carry the post-reveal verifier-to-verifier exchange: each verifier sends its
transcript half, both assemble the same transcript, verify independently,
and cross-check the serialized transcript byte-for-byte (by hash) along with
the verdict.

All deadline decisions use time.monotonic_ns(); wall-clock adjustments
cannot forge timeliness. Light-cone gaps at field scale (microseconds over
kilometers) are not reachable on commodity hosts, so a session scales
every plan time by `scale_factor` (default 1000), preserving all ratios;
the transcript records the factor so audits scale alongside.

Topology: A1 and B2's link both terminate at B1's listener; A2 connects to
B2. B1 picks the session epoch and ships it to B2 in a SCHEDULE frame; the
residual loopback skew (microseconds) is absorbed by the scaled margins.
"""

from __future__ import annotations

import hashlib
import socket
import struct
import time
from dataclasses import dataclass, field as dfield
from pathlib import Path

from .field import FieldSpec
from .planner import ProtocolPlan
from .protocol import (
    AliceAgent,
    BobAgent,
    ProtocolError,
    RevealMessage,
    RoundRecord,
    Transcript,
    Verdict,
    bob_verify,
    station_of,
)
from .storage import TapeReader, _pack_record, _record_size, _unpack_record, transcript_to_bytes

FRAME_CHALLENGE = 0x01
FRAME_ANSWER = 0x02
FRAME_REVEAL = 0x03
FRAME_ABORT = 0x04
FRAME_HELLO = 0x05
FRAME_SCHEDULE = 0x06
FRAME_RECORDS = 0x07
FRAME_VERDICT = 0x08

_FRAME_TYPES = frozenset((FRAME_CHALLENGE, FRAME_ANSWER, FRAME_REVEAL, FRAME_ABORT,
                          FRAME_HELLO, FRAME_SCHEDULE, FRAME_RECORDS, FRAME_VERDICT))

MAX_FRAME_PAYLOAD = 1 << 24

_HEAD = struct.Struct(">IBQ")  # length, type, round

ROLES = ("A1", "A2", "B1", "B2")

ABORT_CONFIG = "config"
ABORT_CONNECTION = "connection"
ABORT_DEADLINE = "deadline"
ABORT_TAPE = "tape"
ABORT_MISMATCH = "transcript-mismatch"

EXIT_ACCEPT = 0
EXIT_USAGE = 1
EXIT_ABORT = 2
EXIT_REJECT = 3


class TransportError(Exception):
    pass


class MalformedFrameError(TransportError):
    """Frame violates the wire layout; carries the faulting byte offset."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class WireFrame:
    type: int
    round_index: int
    payload: bytes


def encode_frame(ftype: int, round_index: int, payload: bytes = b"") -> bytes:
    if ftype not in _FRAME_TYPES:
        raise MalformedFrameError(f"unknown frame type 0x{ftype:02x}", 4)
    if len(payload) > MAX_FRAME_PAYLOAD:
        raise MalformedFrameError(f"payload too large: {len(payload)}", 0)
    return _HEAD.pack(9 + len(payload), ftype, round_index) + payload


def decode_frame(data: bytes) -> WireFrame:
    """Decode one complete frame; rejects truncation, oversize, unknown type."""
    if len(data) < 4:
        raise MalformedFrameError("truncated before length field", len(data))
    (length,) = struct.unpack_from(">I", data)
    if length < 9:
        raise MalformedFrameError(f"length {length} below fixed fields", 0)
    if length > 9 + MAX_FRAME_PAYLOAD:
        raise MalformedFrameError(f"length {length} exceeds maximum", 0)
    if len(data) != 4 + length:
        raise MalformedFrameError(
            f"frame is {len(data)} bytes, header promises {4 + length}",
            min(len(data), 4 + length),
        )
    ftype = data[4]
    if ftype not in _FRAME_TYPES:
        raise MalformedFrameError(f"unknown frame type 0x{ftype:02x}", 4)
    (round_index,) = struct.unpack_from(">Q", data, 5)
    return WireFrame(ftype, round_index, data[13:])


def send_frame(sock: socket.socket, ftype: int, round_index: int,
               payload: bytes = b"") -> None:
    sock.sendall(encode_frame(ftype, round_index, payload))


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    buf = bytearray()
    while len(buf) < size:
        chunk = sock.recv(size - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf += chunk
    return bytes(buf)


def recv_frame(sock: socket.socket, deadline_ns: int | None = None) -> WireFrame:
    """Read one frame; with a deadline, raises TimeoutError once
    monotonic_ns passes it."""
    if deadline_ns is not None:
        remaining = deadline_ns - time.monotonic_ns()
        if remaining <= 0:
            raise TimeoutError("deadline already passed")
        sock.settimeout(remaining / 1e9)
    else:
        sock.settimeout(None)
    try:
        head = _recv_exact(sock, 4)
        (length,) = struct.unpack(">I", head)
        if length < 9 or length > 9 + MAX_FRAME_PAYLOAD:
            raise MalformedFrameError(f"bad frame length {length}", 0)
        body = _recv_exact(sock, length)
    except socket.timeout as exc:
        raise TimeoutError(str(exc)) from exc
    return decode_frame(head + body)


@dataclass
class AbortReport:
    reason: str
    round_index: int | None = None
    detail: str = ""


@dataclass
class AgentResult:
    role: str
    exit_code: int
    transcript: Transcript | None = None
    verdict: Verdict | None = None
    abort: AbortReport | None = None
    transcript_sha: str | None = None
    peer_agrees: bool | None = None


@dataclass
class SessionConfig:
    """Everything one agent process needs to run its role."""

    role: str
    plan: ProtocolPlan
    scale_factor: int = 1000
    bit: int = 0                          # committer roles only
    secrets_path: str | Path | None = None
    challenges_path: str | Path | None = None
    listen: tuple[str, int] | None = None
    listen_socket: socket.socket | None = None   # pre-bound (tests)
    peers: dict[str, tuple[str, int]] = dfield(default_factory=dict)
    start_delay_s: float = 0.3
    io_timeout_s: float = 10.0
    # fault injection: committer stalls this round by this much before answering
    delay_round: int | None = None
    delay_extra_s: float = 0.0

    def __post_init__(self):
        if self.role not in ROLES:
            raise TransportError(f"unknown role {self.role!r}")
        if self.scale_factor < 1:
            raise TransportError("scale factor must be >= 1")


class _TapeFileView:
    """Indexable view over a tape file (constant memory, O(1) element seek)."""

    def __init__(self, reader: TapeReader):
        self._r = reader

    def __len__(self) -> int:
        return self._r.count

    def __getitem__(self, i: int) -> int:
        self._r.seek(i)
        return self._r.read()


def _sleep_until_ns(target_ns: int) -> int:
    """Sleep to roughly `target_ns` (monotonic); returns the wakeup time.

    Plain sleeps only: a busy tail would starve the peer threads of the
    loopback harness. Sub-millisecond wakeup error is absorbed by the scaled
    deadlines.
    """
    while True:
        now = time.monotonic_ns()
        delta = target_ns - now
        if delta <= 0:
            return now
        time.sleep(min(delta / 2e9, 0.05) if delta > 1_000_000 else 2e-4)


def _hello_payload(role: str, plan_hash: str) -> bytes:
    return ROLES.index(role).to_bytes(1, "big") + bytes.fromhex(plan_hash)


def _parse_hello(payload: bytes) -> tuple[str, str]:
    if len(payload) != 33:
        raise MalformedFrameError(f"HELLO payload must be 33 bytes, got {len(payload)}", 13)
    return ROLES[payload[0]], payload[1:].hex()


def _records_payload(records: list[RoundRecord], eb: int,
                     reveal: RevealMessage | None, reveal_at: int) -> bytes:
    out = bytearray(struct.pack(">I", len(records)))
    for rec in records:
        out += _pack_record(rec, eb)
    if reveal is None:
        out += b"\x00"
    else:
        out += b"\x01" + bytes([reveal.bit]) + reveal.final_secret.to_bytes(eb, "little")
        out += struct.pack(">q", reveal_at)
    return bytes(out)


def _parse_records(payload: bytes, eb: int) -> tuple[list[RoundRecord], RevealMessage | None, int]:
    (count,) = struct.unpack_from(">I", payload)
    rec_size = _record_size(eb)
    pos = 4
    records = []
    for _ in range(count):
        records.append(_unpack_record(payload, pos, eb))
        pos += rec_size
    has_reveal = payload[pos]
    pos += 1
    if not has_reveal:
        return records, None, 0
    bit = payload[pos]
    a_m = int.from_bytes(payload[pos + 1:pos + 1 + eb], "little")
    (reveal_at,) = struct.unpack_from(">q", payload, pos + 1 + eb)
    return records, RevealMessage(bit, a_m), reveal_at


def _verdict_payload(verdict: Verdict, sha: bytes) -> bytes:
    reason = (verdict.reason or "").encode()
    bit = verdict.bit if verdict.bit is not None else 0xFF
    return struct.pack(">BB32sH", int(verdict.accepted), bit, sha, len(reason)) + reason


def _parse_verdict(payload: bytes) -> tuple[Verdict, bytes]:
    accepted, bit, sha, reason_len = struct.unpack_from(">BB32sH", payload)
    reason = payload[36:36 + reason_len].decode() if reason_len else None
    if accepted:
        return Verdict.accept(bit), sha
    return Verdict.reject(reason or "unknown"), sha


class _Session:
    """State shared by one agent's serial protocol loop."""

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg
        self.plan = cfg.plan
        self.spec = FieldSpec(self.plan.n)
        self.scale = cfg.scale_factor
        self.station = int(cfg.role[1])
        self.is_bob = cfg.role.startswith("B")
        self.m = self.plan.m
        self.sockets: dict[str, socket.socket] = {}
        self.listener: socket.socket | None = None
        self.epoch_ns: int | None = None

    # scaled schedule helpers ------------------------------------------------
    def start_ns(self, k: int) -> int:
        return self.plan.round_start_ns(k) * self.scale

    def tau_eff(self, station: int) -> int:
        tau = self.plan.tau1_ns if station == 1 else self.plan.tau2_ns
        return tau * self.scale

    def close(self) -> None:
        for s in self.sockets.values():
            try:
                s.close()
            except OSError:
                pass
        if self.listener is not None and self.cfg.listen_socket is None:
            try:
                self.listener.close()
            except OSError:
                pass


def _connect(addr: tuple[str, int], timeout: float) -> socket.socket:
    deadline = time.monotonic() + timeout
    last_err: Exception | None = None
    while time.monotonic() < deadline:
        try:
            s = socket.create_connection(addr, timeout=1.0)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return s
        except OSError as exc:
            last_err = exc
            time.sleep(0.02)
    raise TransportError(f"cannot connect to {addr}: {last_err}")


def _abort_all(ses: _Session, reason: str, round_index: int) -> None:
    frame = encode_frame(FRAME_ABORT, round_index, reason.encode())
    for sock in ses.sockets.values():
        try:
            sock.sendall(frame)
        except OSError:
            pass


def _expect_hello(ses: _Session, sock: socket.socket) -> str | None:
    """Receive + answer a HELLO; returns the peer role or None on hash
    mismatch (mismatch is answered with ABORT)."""
    frame = recv_frame(sock, time.monotonic_ns() + int(ses.cfg.io_timeout_s * 1e9))
    if frame.type != FRAME_HELLO:
        raise TransportError(f"expected HELLO, got type 0x{frame.type:02x}")
    role, plan_hash = _parse_hello(frame.payload)
    if plan_hash != ses.plan.plan_hash:
        send_frame(sock, FRAME_ABORT, 0, ABORT_CONFIG.encode())
        return None
    send_frame(sock, FRAME_HELLO, 0, _hello_payload(ses.cfg.role, ses.plan.plan_hash))
    return role


def _send_hello(ses: _Session, sock: socket.socket) -> bool:
    """Initiate a HELLO exchange; False on plan-hash mismatch or peer abort."""
    send_frame(sock, FRAME_HELLO, 0, _hello_payload(ses.cfg.role, ses.plan.plan_hash))
    frame = recv_frame(sock, time.monotonic_ns() + int(ses.cfg.io_timeout_s * 1e9))
    if frame.type == FRAME_ABORT:
        return False
    if frame.type != FRAME_HELLO:
        raise TransportError(f"expected HELLO reply, got type 0x{frame.type:02x}")
    _, plan_hash = _parse_hello(frame.payload)
    return plan_hash == ses.plan.plan_hash


def _drain_abort(sock: socket.socket) -> WireFrame | None:
    """Non-blocking poll for a pending frame (abort propagation)."""
    sock.setblocking(False)
    try:
        head = sock.recv(4, socket.MSG_PEEK)
    except (BlockingIOError, InterruptedError):
        return None
    except OSError:
        return None
    finally:
        sock.setblocking(True)
    if not head:
        return None
    try:
        return recv_frame(sock, time.monotonic_ns() + 1_000_000_000)
    except (TransportError, TimeoutError, ConnectionError):
        return None


def run_agent(cfg: SessionConfig) -> AgentResult:
    """Run one agent role to completion; see module docstring for topology."""
    ses = _Session(cfg)
    try:
        if cfg.role == "B1":
            return _run_b1(ses)
        if cfg.role == "B2":
            return _run_b2(ses)
        return _run_alice(ses)
    finally:
        ses.close()


# -- committer side ---------------------------------------------------------


def _load_alice_tape(ses: _Session):
    cfg = ses.cfg
    if cfg.secrets_path is None:
        raise TransportError("committer roles need secrets_path")
    reader = TapeReader(cfg.secrets_path)
    if reader.count < ses.m:
        reader.close()
        return None
    if reader.spec != ses.spec:
        reader.close()
        raise TransportError("secrets tape field does not match the plan")
    return _TapeFileView(reader)


def _run_alice(ses: _Session) -> AgentResult:
    cfg = ses.cfg
    tape = _load_alice_tape(ses)
    if tape is None:
        return AgentResult(cfg.role, EXIT_ABORT,
                           abort=AbortReport(ABORT_TAPE, None, "secrets tape too short"))
    agent = AliceAgent(ses.station, ses.spec, tape, cfg.bit, ses.m)
    sock = _connect(cfg.peers[f"B{ses.station}"], cfg.io_timeout_s)
    ses.sockets["B"] = sock
    if not _send_hello(ses, sock):
        return AgentResult(cfg.role, EXIT_ABORT,
                           abort=AbortReport(ABORT_CONFIG, None, "plan hash mismatch"))

    reveal_station = station_of(ses.m + 1)
    my_rounds = range(ses.station, ses.m + 1, 2)
    last_round = max(my_rounds) if ses.station <= ses.m else 0
    gap_to_reveal = (ses.start_ns(ses.m + 1) - ses.start_ns(ses.m - 1)
                     if ses.m >= 2 else ses.start_ns(ses.m + 1))
    timeout_ns = int(cfg.io_timeout_s * 1e9)
    last_recv_ns = 0
    try:
        while True:
            frame = recv_frame(sock, time.monotonic_ns() + timeout_ns)
            if frame.type == FRAME_ABORT:
                return AgentResult(cfg.role, EXIT_ABORT,
                                   abort=AbortReport(frame.payload.decode() or ABORT_DEADLINE,
                                                     frame.round_index or None))
            if frame.type != FRAME_CHALLENGE:
                raise TransportError(f"unexpected frame type 0x{frame.type:02x}")
            k = frame.round_index
            x = ses.spec.decode(frame.payload)
            last_recv_ns = time.monotonic_ns()
            if cfg.delay_round == k and cfg.delay_extra_s > 0:
                time.sleep(cfg.delay_extra_s)
            y = agent.handle_challenge(k, x)
            send_frame(sock, FRAME_ANSWER, k, ses.spec.encode(y))
            if k == last_round and ses.station == reveal_station:
                # self-schedule the reveal one schedule interval after the
                # last own-round challenge arrived
                _sleep_until_ns(last_recv_ns + gap_to_reveal)
                msg = agent.reveal()
                payload = bytes([msg.bit]) + ses.spec.encode(msg.final_secret)
                send_frame(sock, FRAME_REVEAL, ses.m + 1, payload)
            if k == last_round:
                break
        # wait for the verifier's outcome: ABORT, or EOF on clean completion
        sock.settimeout(cfg.io_timeout_s)
        try:
            frame = recv_frame(sock)
            if frame.type == FRAME_ABORT:
                return AgentResult(cfg.role, EXIT_ABORT,
                                   abort=AbortReport(frame.payload.decode() or ABORT_DEADLINE,
                                                     frame.round_index or None))
        except (ConnectionError, TimeoutError):
            pass
        return AgentResult(cfg.role, EXIT_ACCEPT)
    except (ConnectionError, TimeoutError) as exc:
        return AgentResult(cfg.role, EXIT_ABORT,
                           abort=AbortReport(ABORT_CONNECTION, None, str(exc)))
    except ProtocolError as exc:
        return AgentResult(cfg.role, EXIT_ABORT,
                           abort=AbortReport("protocol", None, str(exc)))


# -- verifier side ------------------------------------------------------------


def _bob_listener(ses: _Session) -> socket.socket:
    if ses.cfg.listen_socket is not None:
        return ses.cfg.listen_socket
    if ses.cfg.listen is None:
        raise TransportError(f"{ses.cfg.role} needs a listen address")
    lst = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    lst.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    lst.bind(ses.cfg.listen)
    lst.listen(2)
    return lst


def _accept_role(ses: _Session, expect: set[str]) -> dict[str, socket.socket]:
    """Accept connections until each expected peer has said HELLO."""
    got: dict[str, socket.socket] = {}
    ses.listener.settimeout(ses.cfg.io_timeout_s)
    while set(got) != expect:
        conn, _ = ses.listener.accept()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        role = _expect_hello(ses, conn)
        if role is None:
            raise _HandshakeAbort()
        if role not in expect or role in got:
            conn.close()
            raise TransportError(f"unexpected peer {role}")
        got[role] = conn
    return got


class _HandshakeAbort(Exception):
    pass


def _bob_round_loop(ses: _Session, alice_sock: socket.socket,
                    bob_link: socket.socket, challenges) -> tuple[list[RoundRecord], RevealMessage | None, int, AbortReport | None]:
    """Issue this station's challenges on schedule; returns records and, at
    station 1, the reveal. Aborts propagate over both links."""
    cfg = ses.cfg
    agent = BobAgent(ses.station, ses.spec, challenges, ses.m)
    records: list[RoundRecord] = []
    reveal: RevealMessage | None = None
    reveal_at = 0
    tau_eff = ses.tau_eff(ses.station)
    reveal_round = ses.m + 1
    hosts_reveal = station_of(reveal_round) == ses.station
    my_rounds = list(range(ses.station, ses.m + 1, 2))

    for k in my_rounds:
        # harvest a propagated abort from the peer verifier between rounds
        frame = _drain_abort(bob_link)
        if frame is not None and frame.type == FRAME_ABORT:
            return records, None, 0, AbortReport(frame.payload.decode() or ABORT_DEADLINE,
                                                 frame.round_index or None, "peer abort")
        x = agent.issue_challenge(k)
        _sleep_until_ns(ses.epoch_ns + ses.start_ns(k))
        issued = time.monotonic_ns()
        send_frame(alice_sock, FRAME_CHALLENGE, k, ses.spec.encode(x))
        deadline = issued + tau_eff
        try:
            frame = recv_frame(alice_sock, deadline)
            received = time.monotonic_ns()
        except TimeoutError:
            received = time.monotonic_ns()
            frame = None
        if frame is None or frame.type != FRAME_ANSWER or frame.round_index != k:
            report = AbortReport(ABORT_DEADLINE, k, "no answer within tau")
            _abort_all(ses, ABORT_DEADLINE, k)
            return records, None, 0, report
        y = ses.spec.decode(frame.payload)
        records.append(RoundRecord(k, ses.station, x, y, issued, received))
        if received - issued > tau_eff:
            report = AbortReport(ABORT_DEADLINE, k, "answer after tau")
            _abort_all(ses, ABORT_DEADLINE, k)
            return records, None, 0, report

    if hosts_reveal:
        deadline = ses.epoch_ns + ses.start_ns(reveal_round) + ses.tau_eff(station_of(reveal_round))
        try:
            frame = recv_frame(alice_sock, deadline)
            received = time.monotonic_ns()
        except TimeoutError:
            received = time.monotonic_ns()
            frame = None
        if frame is None or frame.type != FRAME_REVEAL:
            report = AbortReport(ABORT_DEADLINE, reveal_round, "no reveal within tau")
            _abort_all(ses, ABORT_DEADLINE, reveal_round)
            return records, None, 0, report
        bit = frame.payload[0]
        a_m = ses.spec.decode(frame.payload[1:])
        reveal = RevealMessage(bit, a_m)
        reveal_at = received
        if received - (ses.epoch_ns + ses.start_ns(reveal_round)) > ses.tau_eff(station_of(reveal_round)):
            report = AbortReport(ABORT_DEADLINE, reveal_round, "reveal after tau")
            _abort_all(ses, ABORT_DEADLINE, reveal_round)
            return records, reveal, reveal_at, report
    return records, reveal, reveal_at, None


def _assemble_and_judge(ses: _Session, own: list[RoundRecord],
                        theirs: list[RoundRecord], reveal: RevealMessage | None,
                        reveal_at: int, bob_link: socket.socket,
                        aborted: AbortReport | None) -> AgentResult:
    """Merge halves, verify, and byte-compare outcomes with the peer."""
    cfg = ses.cfg
    rounds = sorted(own + theirs, key=lambda r: r.k)
    transcript = Transcript(
        spec=ses.spec,
        m=ses.m,
        tau1_ns=ses.plan.tau1_ns * ses.scale,
        tau2_ns=ses.plan.tau2_ns * ses.scale,
        rounds=rounds,
        reveal=reveal,
        reveal_received_at=reveal_at,
        plan_hash=ses.plan.plan_hash,
        scale_factor=ses.scale,
    )
    if aborted is not None:
        transcript.reveal = None
        transcript.mark_aborted(aborted.reason, aborted.round_index or 0)
        return AgentResult(cfg.role, EXIT_ABORT, transcript=transcript, abort=aborted)

    verdict = bob_verify(transcript)
    blob = transcript_to_bytes(transcript)
    sha = hashlib.sha256(blob).digest()
    send_frame(bob_link, FRAME_VERDICT, 0, _verdict_payload(verdict, sha))
    frame = recv_frame(bob_link, time.monotonic_ns() + int(cfg.io_timeout_s * 1e9))
    if frame.type == FRAME_ABORT:
        report = AbortReport(frame.payload.decode() or ABORT_MISMATCH, frame.round_index or None)
        return AgentResult(cfg.role, EXIT_ABORT, transcript=transcript, abort=report)
    if frame.type != FRAME_VERDICT:
        raise TransportError(f"expected VERDICT, got 0x{frame.type:02x}")
    peer_verdict, peer_sha = _parse_verdict(frame.payload)
    agrees = peer_sha == sha and peer_verdict.accepted == verdict.accepted
    if not agrees:
        report = AbortReport(ABORT_MISMATCH, None, "verifiers disagree")
        return AgentResult(cfg.role, EXIT_ABORT, transcript=transcript,
                           verdict=verdict, transcript_sha=sha.hex(),
                           peer_agrees=False, abort=report)
    code = EXIT_ACCEPT if verdict.accepted else EXIT_REJECT
    return AgentResult(cfg.role, code, transcript=transcript, verdict=verdict,
                       transcript_sha=sha.hex(), peer_agrees=True)


def _load_challenges(ses: _Session):
    if ses.cfg.challenges_path is None:
        raise TransportError("verifier roles need challenges_path")
    reader = TapeReader(ses.cfg.challenges_path)
    if reader.count < ses.m:
        reader.close()
        return None
    if reader.spec != ses.spec:
        reader.close()
        raise TransportError("challenge tape field does not match the plan")
    return _TapeFileView(reader)


def _run_b1(ses: _Session) -> AgentResult:
    cfg = ses.cfg
    challenges = _load_challenges(ses)
    if challenges is None:
        return AgentResult(cfg.role, EXIT_ABORT,
                           abort=AbortReport(ABORT_TAPE, None, "challenge tape too short"))
    ses.listener = _bob_listener(ses)
    try:
        try:
            peers = _accept_role(ses, {"A1", "B2"})
        except _HandshakeAbort:
            return AgentResult(cfg.role, EXIT_ABORT,
                               abort=AbortReport(ABORT_CONFIG, None, "plan hash mismatch"))
        ses.sockets.update(peers)
        alice_sock, bob_link = peers["A1"], peers["B2"]
        # fix the session epoch and ship it to B2
        ses.epoch_ns = time.monotonic_ns() + int(cfg.start_delay_s * 1e9)
        start_in = ses.epoch_ns - time.monotonic_ns()
        send_frame(bob_link, FRAME_SCHEDULE, 0, struct.pack(">Q", start_in))
        own, reveal, reveal_at, aborted = _bob_round_loop(ses, alice_sock, bob_link, challenges)
        if aborted is None:
            send_frame(bob_link, FRAME_RECORDS, 0,
                       _records_payload(own, ses.spec.element_bytes, reveal, reveal_at))
            frame = recv_frame(bob_link, time.monotonic_ns() + int(cfg.io_timeout_s * 1e9))
            if frame.type == FRAME_ABORT:
                aborted = AbortReport(frame.payload.decode() or ABORT_DEADLINE,
                                      frame.round_index or None, "peer abort")
                theirs = []
            elif frame.type != FRAME_RECORDS:
                raise TransportError(f"expected RECORDS, got 0x{frame.type:02x}")
            else:
                theirs, _, _ = _parse_records(frame.payload, ses.spec.element_bytes)
        else:
            theirs = []
        return _assemble_and_judge(ses, own, theirs, reveal, reveal_at, bob_link, aborted)
    except (ConnectionError, TimeoutError) as exc:
        return AgentResult(cfg.role, EXIT_ABORT,
                           abort=AbortReport(ABORT_CONNECTION, None, str(exc)))


def _run_b2(ses: _Session) -> AgentResult:
    cfg = ses.cfg
    challenges = _load_challenges(ses)
    if challenges is None:
        return AgentResult(cfg.role, EXIT_ABORT,
                           abort=AbortReport(ABORT_TAPE, None, "challenge tape too short"))
    ses.listener = _bob_listener(ses)
    try:
        bob_link = _connect(cfg.peers["B1"], cfg.io_timeout_s)
        ses.sockets["B1"] = bob_link
        if not _send_hello(ses, bob_link):
            return AgentResult(cfg.role, EXIT_ABORT,
                               abort=AbortReport(ABORT_CONFIG, None, "plan hash mismatch"))
        try:
            peers = _accept_role(ses, {"A2"})
        except _HandshakeAbort:
            return AgentResult(cfg.role, EXIT_ABORT,
                               abort=AbortReport(ABORT_CONFIG, None, "plan hash mismatch"))
        ses.sockets.update(peers)
        alice_sock = peers["A2"]
        frame = recv_frame(bob_link, time.monotonic_ns() + int(cfg.io_timeout_s * 1e9))
        if frame.type == FRAME_ABORT:
            return AgentResult(cfg.role, EXIT_ABORT,
                               abort=AbortReport(frame.payload.decode() or ABORT_CONFIG,
                                                 frame.round_index or None))
        if frame.type != FRAME_SCHEDULE:
            raise TransportError(f"expected SCHEDULE, got 0x{frame.type:02x}")
        (start_in,) = struct.unpack(">Q", frame.payload)
        ses.epoch_ns = time.monotonic_ns() + start_in
        own, _, _, aborted = _bob_round_loop(ses, alice_sock, bob_link, challenges)
        reveal: RevealMessage | None = None
        reveal_at = 0
        if aborted is None:
            send_frame(bob_link, FRAME_RECORDS, 0,
                       _records_payload(own, ses.spec.element_bytes, None, 0))
            frame = recv_frame(bob_link, time.monotonic_ns() + int(cfg.io_timeout_s * 1e9))
            if frame.type == FRAME_ABORT:
                aborted = AbortReport(frame.payload.decode() or ABORT_DEADLINE,
                                      frame.round_index or None, "peer abort")
                theirs = []
            elif frame.type != FRAME_RECORDS:
                raise TransportError(f"expected RECORDS, got 0x{frame.type:02x}")
            else:
                theirs, reveal, reveal_at = _parse_records(frame.payload, ses.spec.element_bytes)
        else:
            theirs = []
        return _assemble_and_judge(ses, own, theirs, reveal, reveal_at, bob_link, aborted)
    except (ConnectionError, TimeoutError) as exc:
        return AgentResult(cfg.role, EXIT_ABORT,
                           abort=AbortReport(ABORT_CONNECTION, None, str(exc)))


def run_loopback_session(plan: ProtocolPlan, tape_dir: str | Path, bit: int = 0,
                         scale_factor: int = 1000, seed: int = 0,
                         delay_round: int | None = None,
                         delay_extra_s: float = 0.0) -> dict[str, AgentResult]:
    """Convenience harness: generate tapes, run all four agents in threads on
    loopback sockets, return each role's result. Used by tests and the demo.
    """
    import threading

    from .storage import generate_tape

    tape_dir = Path(tape_dir)
    tape_dir.mkdir(parents=True, exist_ok=True)
    secrets_path = tape_dir / "alice.tape"
    challenges_path = tape_dir / "bob.tape"
    generate_tape(plan, "alice-secrets", secrets_path, seed=seed)
    generate_tape(plan, "bob-challenges", challenges_path, seed=seed + 1)

    listeners = {}
    addrs = {}
    for role in ("B1", "B2"):
        lst = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        lst.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        lst.bind(("127.0.0.1", 0))
        lst.listen(2)
        listeners[role] = lst
        addrs[role] = lst.getsockname()

    def cfg_for(role: str) -> SessionConfig:
        common = dict(plan=plan, scale_factor=scale_factor, bit=bit)
        if role == "B1":
            return SessionConfig(role=role, challenges_path=challenges_path,
                                 listen_socket=listeners["B1"], **common)
        if role == "B2":
            return SessionConfig(role=role, challenges_path=challenges_path,
                                 listen_socket=listeners["B2"],
                                 peers={"B1": addrs["B1"]}, **common)
        station = role[1]
        return SessionConfig(role=role, secrets_path=secrets_path,
                             peers={f"B{station}": addrs[f"B{station}"]},
                             delay_round=delay_round if role == "A1" else None,
                             delay_extra_s=delay_extra_s if role == "A1" else 0.0,
                             **common)

    results: dict[str, AgentResult] = {}
    errors: dict[str, BaseException] = {}

    def runner(role: str) -> None:
        try:
            results[role] = run_agent(cfg_for(role))
        except BaseException as exc:  # surfaced to the caller below
            errors[role] = exc

    threads = [threading.Thread(target=runner, args=(r,), daemon=True)
               for r in ("B1", "B2", "A1", "A2")]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=120)
    for role, lst in listeners.items():
        try:
            lst.close()
        except OSError:
            pass
    if errors:
        role, exc = next(iter(errors.items()))
        raise TransportError(f"{role} crashed: {exc!r}") from exc
    if len(results) != 4:
        raise TransportError(f"agents did not finish: {sorted(results)}")
    return results
