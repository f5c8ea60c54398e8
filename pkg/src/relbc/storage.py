"""Tape and transcript persistence with streaming access.

Both formats are self-describing and versioned; multi-byte header integers
are big-endian, element payloads are the canonical little-endian byte order
of `relbc.field`.

Tape file ("RBCT"): header (magic, version, field, role, element count,
seed provenance) followed by fixed-size elements. Challenge tapes contain
only nonzero elements.

Transcript file ("RBCX"): header (magic, version, plan hash, field, m,
recorded round count, scale factor, deadlines, status, reveal) followed by
fixed-size round records (k, station, x, y, two timestamps), so the backward
verification pass can seek any record in O(1) and stream the file in reverse
chunks with memory independent of its length.
"""

from __future__ import annotations

import io
import random
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .field import FieldSpec, NonInvertibleError, _batch_inverse_spread, batch_inverse
from .planner import ProtocolPlan
from .protocol import (
    REJECT_ABORTED,
    REJECT_BIT_MISMATCH,
    REJECT_MALFORMED,
    REJECT_TIMING,
    REJECT_ZERO_CHALLENGE,
    ROLE_ALICE_SECRETS,
    ROLE_BOB_CHALLENGES,
    RevealMessage,
    RoundRecord,
    STATUS_ABORTED,
    STATUS_COMPLETE,
    Transcript,
    Verdict,
    commit_answer_matches,
    honest_round_stream,
    station_of,
)

TAPE_MAGIC = b"RBCT"
TRANSCRIPT_MAGIC = b"RBCX"
FORMAT_VERSION = 1

_ROLE_CODES = {ROLE_ALICE_SECRETS: 1, ROLE_BOB_CHALLENGES: 2}
_ROLE_NAMES = {v: k for k, v in _ROLE_CODES.items()}

PROVENANCE_ENTROPY = 0
PROVENANCE_SEEDED = 1

_WRITE_CHUNK_ELEMENTS = 1 << 14


class StorageError(Exception):
    """Corrupt or mismatched on-disk data."""


class TapeFormatError(StorageError):
    pass


class TranscriptFormatError(StorageError):
    pass


class PlanHashMismatchError(StorageError):
    """The file was produced under a different plan than the one supplied."""


def _read_exact(f, size: int, what: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise StorageError(f"short read while reading {what}: wanted {size} bytes, "
                           f"got {len(data)}")
    return data


# -- tapes ---------------------------------------------------------------------


_TAPE_HEAD = struct.Struct(">4sHIH")       # magic, version, n, poly byte length
_TAPE_META = struct.Struct(">BQBQ")        # role, count, provenance, seed


def tape_element_count(plan: ProtocolPlan, role: str) -> int:
    """Elements a tape must hold under `plan`: the full m-element sequence
    for either role (each challenger agent consumes only its station's
    parity, (m+1)//2 rounds at station 1 and m//2 at station 2)."""
    if role not in _ROLE_CODES:
        raise StorageError(f"unknown tape role {role!r}")
    return plan.m


def tape_sizing(plan: ProtocolPlan) -> dict:
    """Sizing arithmetic for one commitment at `plan` scale.

    Cross-checks the planner: total protocol data (challenges + answers +
    reveal) equals plan.bytes_total to within one round's rounding.
    """
    eb = plan.element_bytes
    per_tape = plan.m * eb
    per_station_stream = {
        1: ((plan.m + 1) // 2) * eb,
        2: (plan.m // 2) * eb,
    }
    return {
        "element_bytes": eb,
        "tape_bytes": {ROLE_ALICE_SECRETS: per_tape, ROLE_BOB_CHALLENGES: per_tape},
        "per_station_challenge_stream_bytes": per_station_stream,
        "protocol_data_bytes": plan.bytes_total,
    }


def write_tape(path: str | Path, spec: FieldSpec, role: str,
               elements: Iterable[int], count: int,
               provenance: int = PROVENANCE_SEEDED, seed: int = 0) -> None:
    """Stream `count` elements to a tape file."""
    if role not in _ROLE_CODES:
        raise StorageError(f"unknown tape role {role!r}")
    eb = spec.element_bytes
    poly_bytes = spec.poly.to_bytes((spec.n + 7) // 8, "little")
    nonzero_required = role == ROLE_BOB_CHALLENGES
    with open(path, "wb") as f:
        f.write(_TAPE_HEAD.pack(TAPE_MAGIC, FORMAT_VERSION, spec.n, len(poly_bytes)))
        f.write(poly_bytes)
        f.write(_TAPE_META.pack(_ROLE_CODES[role], count, provenance, seed))
        buf = bytearray()
        written = 0
        for v in elements:
            if written == count:
                break
            if nonzero_required and v == 0:
                raise StorageError("challenge tapes must not contain zero elements")
            buf += v.to_bytes(eb, "little")
            written += 1
            if len(buf) >= _WRITE_CHUNK_ELEMENTS * eb:
                f.write(buf)
                buf.clear()
        if written != count:
            raise StorageError(f"element source exhausted at {written}/{count}")
        f.write(buf)


def generate_tape(plan: ProtocolPlan, role: str, path: str | Path,
                  seed: int | None = None, spec: FieldSpec | None = None) -> int:
    """Generate a tape per `plan` (seeded = reproducible, None = system
    entropy); returns the element count."""
    spec = spec or FieldSpec(plan.n)
    count = tape_element_count(plan, role)
    if seed is None:
        rng: random.Random = random.SystemRandom()
        provenance, seed_field = PROVENANCE_ENTROPY, 0
    else:
        rng = random.Random(seed)
        provenance, seed_field = PROVENANCE_SEEDED, seed & 0xFFFFFFFFFFFFFFFF
    nonzero = role == ROLE_BOB_CHALLENGES
    elements = (spec.random_int(rng, nonzero=nonzero) for _ in range(count))
    write_tape(path, spec, role, elements, count, provenance, seed_field)
    return count


class TapeReader:
    """Sequential, resumable cursor over a tape file (constant memory)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._f = open(self.path, "rb")
        try:
            head = _read_exact(self._f, _TAPE_HEAD.size, "tape header")
            magic, version, n, poly_len = _TAPE_HEAD.unpack(head)
            if magic != TAPE_MAGIC:
                raise TapeFormatError(f"{self.path}: not a tape file (magic {magic!r})")
            if version != FORMAT_VERSION:
                raise TapeFormatError(f"{self.path}: unsupported tape version {version}")
            poly = int.from_bytes(_read_exact(self._f, poly_len, "tape polynomial"),
                                  "little")
            meta = _read_exact(self._f, _TAPE_META.size, "tape metadata")
            role_code, count, provenance, seed = _TAPE_META.unpack(meta)
            if role_code not in _ROLE_NAMES:
                raise TapeFormatError(f"{self.path}: unknown role code {role_code}")
            self.spec = FieldSpec(n, poly)
            self.role = _ROLE_NAMES[role_code]
            self.count = count
            self.provenance = provenance
            self.seed = seed
            self._base = self._f.tell()
            self._index = 0
            body = self.path.stat().st_size - self._base
            if body != count * self.spec.element_bytes:
                raise TapeFormatError(
                    f"{self.path}: body is {body} bytes, header promises "
                    f"{count} x {self.spec.element_bytes}"
                )
        except Exception:
            self._f.close()
            raise

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "TapeReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def position(self) -> int:
        return self._index

    def seek(self, index: int) -> None:
        """Position the cursor at element `index` (0-based)."""
        if index < 0 or index > self.count:
            raise TapeFormatError(f"seek to {index} outside 0..{self.count}")
        self._index = index
        self._f.seek(self._base + index * self.spec.element_bytes)

    def read(self) -> int:
        """Next element; raises on exhaustion or a short read."""
        if self._index >= self.count:
            raise TapeFormatError(f"{self.path}: tape exhausted at element {self.count}")
        eb = self.spec.element_bytes
        data = self._f.read(eb)
        if len(data) != eb:
            raise TapeFormatError(
                f"{self.path}: short read at element {self._index}"
            )
        self._index += 1
        return int.from_bytes(data, "little")

    def __iter__(self) -> Iterator[int]:
        while self._index < self.count:
            yield self.read()

    def read_all(self) -> list[int]:
        self.seek(0)
        return list(self)


# -- transcripts -----------------------------------------------------------------


_XH_FIXED = struct.Struct(">4sH32sIH")     # magic, version, plan hash, n, poly len
_XH_META = struct.Struct(">QQIqq")         # m, round count, scale, tau1, tau2
_XH_STATUS = struct.Struct(">BQH")         # status, abort round, reason length
_XH_REVEAL = struct.Struct(">BB")          # reveal flag, claimed bit
_REC_HEAD = struct.Struct(">QB")           # k, station
_REC_TIMES = struct.Struct(">qq")          # issued, received (station-local ns)

_STATUS_CODES = {STATUS_COMPLETE: 1, STATUS_ABORTED: 2}
_STATUS_NAMES = {v: k for k, v in _STATUS_CODES.items()}


def _record_size(eb: int) -> int:
    return _REC_HEAD.size + 2 * eb + _REC_TIMES.size


def _pack_record(rec: RoundRecord, eb: int) -> bytes:
    return (_REC_HEAD.pack(rec.k, rec.station)
            + rec.challenge.to_bytes(eb, "little")
            + rec.answer.to_bytes(eb, "little")
            + _REC_TIMES.pack(rec.challenge_issued_at, rec.answer_received_at))


def _unpack_record(data: bytes, offset: int, eb: int) -> RoundRecord:
    k, station = _REC_HEAD.unpack_from(data, offset)
    p = offset + _REC_HEAD.size
    x = int.from_bytes(data[p:p + eb], "little")
    y = int.from_bytes(data[p + eb:p + 2 * eb], "little")
    issued, received = _REC_TIMES.unpack_from(data, p + 2 * eb)
    return RoundRecord(k, station, x, y, issued, received)


@dataclass
class TranscriptHeader:
    """Parsed transcript-file header plus the offset of the round records."""

    spec: FieldSpec
    plan_hash: str
    m: int
    round_count: int
    scale_factor: int
    tau1_ns: int
    tau2_ns: int
    status: str
    abort_round: int | None
    abort_reason: str | None
    reveal: RevealMessage | None
    reveal_received_at: int
    records_base: int
    record_size: int


def _write_transcript_to(f, spec: FieldSpec, m: int,
                         rounds: Iterable[RoundRecord], round_count: int,
                         reveal: RevealMessage | None, reveal_received_at: int,
                         tau1_ns: int, tau2_ns: int,
                         status: str = STATUS_COMPLETE,
                         abort_round: int | None = None,
                         abort_reason: str | None = None,
                         plan_hash: str = "", scale_factor: int = 1) -> None:
    eb = spec.element_bytes
    poly_bytes = spec.poly.to_bytes((spec.n + 7) // 8, "little")
    hash_bytes = bytes.fromhex(plan_hash) if plan_hash else b"\x00" * 32
    if len(hash_bytes) != 32:
        raise TranscriptFormatError("plan hash must be 32 bytes (sha256) or empty")
    reason = (abort_reason or "").encode()
    f.write(_XH_FIXED.pack(TRANSCRIPT_MAGIC, FORMAT_VERSION, hash_bytes,
                           spec.n, len(poly_bytes)))
    f.write(poly_bytes)
    f.write(_XH_META.pack(m, round_count, scale_factor, tau1_ns, tau2_ns))
    f.write(_XH_STATUS.pack(_STATUS_CODES[status], abort_round or 0, len(reason)))
    f.write(reason)
    if reveal is None:
        f.write(_XH_REVEAL.pack(0, 0))
        f.write(b"\x00" * eb)
        f.write(struct.pack(">q", 0))
    else:
        f.write(_XH_REVEAL.pack(1, reveal.bit))
        f.write(reveal.final_secret.to_bytes(eb, "little"))
        f.write(struct.pack(">q", reveal_received_at))
    written = 0
    buf = bytearray()
    for rec in rounds:
        buf += _pack_record(rec, eb)
        written += 1
        if len(buf) >= _WRITE_CHUNK_ELEMENTS * _record_size(eb):
            f.write(buf)
            buf.clear()
    f.write(buf)
    if written != round_count:
        raise TranscriptFormatError(
            f"round iterator produced {written} records, expected {round_count}"
        )


def write_transcript_stream(path: str | Path, spec: FieldSpec, m: int,
                            rounds: Iterable[RoundRecord], round_count: int,
                            reveal: RevealMessage | None, reveal_received_at: int,
                            tau1_ns: int, tau2_ns: int,
                            status: str = STATUS_COMPLETE,
                            abort_round: int | None = None,
                            abort_reason: str | None = None,
                            plan_hash: str = "", scale_factor: int = 1) -> None:
    """Write a transcript file from a round iterator (constant memory)."""
    with open(path, "wb") as f:
        _write_transcript_to(f, spec, m, rounds, round_count, reveal,
                             reveal_received_at, tau1_ns, tau2_ns, status,
                             abort_round, abort_reason, plan_hash, scale_factor)


def transcript_to_bytes(transcript: Transcript) -> bytes:
    """Serialize a transcript to its canonical file bytes."""
    buf = io.BytesIO()
    _write_transcript_to(
        buf, transcript.spec, transcript.m, iter(transcript.rounds),
        len(transcript.rounds), transcript.reveal, transcript.reveal_received_at,
        transcript.tau1_ns, transcript.tau2_ns, transcript.status,
        transcript.abort_round, transcript.abort_reason, transcript.plan_hash,
        transcript.scale_factor,
    )
    return buf.getvalue()


def write_transcript(transcript: Transcript, path: str | Path) -> None:
    write_transcript_stream(
        path,
        transcript.spec,
        transcript.m,
        iter(transcript.rounds),
        len(transcript.rounds),
        transcript.reveal,
        transcript.reveal_received_at,
        transcript.tau1_ns,
        transcript.tau2_ns,
        status=transcript.status,
        abort_round=transcript.abort_round,
        abort_reason=transcript.abort_reason,
        plan_hash=transcript.plan_hash,
        scale_factor=transcript.scale_factor,
    )


def read_transcript_header(f) -> TranscriptHeader:
    head = _read_exact(f, _XH_FIXED.size, "transcript header")
    magic, version, hash_bytes, n, poly_len = _XH_FIXED.unpack(head)
    if magic != TRANSCRIPT_MAGIC:
        raise TranscriptFormatError(f"not a transcript file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise TranscriptFormatError(f"unsupported transcript version {version}")
    poly = int.from_bytes(_read_exact(f, poly_len, "transcript polynomial"), "little")
    spec = FieldSpec(n, poly)
    m, round_count, scale, tau1, tau2 = _XH_META.unpack(
        _read_exact(f, _XH_META.size, "transcript metadata"))
    status_code, abort_round, reason_len = _XH_STATUS.unpack(
        _read_exact(f, _XH_STATUS.size, "transcript status"))
    if status_code not in _STATUS_NAMES:
        raise TranscriptFormatError(f"unknown status code {status_code}")
    reason = _read_exact(f, reason_len, "abort reason").decode() if reason_len else None
    reveal_flag, bit = _XH_REVEAL.unpack(_read_exact(f, _XH_REVEAL.size, "reveal flag"))
    a_m = int.from_bytes(_read_exact(f, spec.element_bytes, "reveal payload"), "little")
    (reveal_at,) = struct.unpack(">q", _read_exact(f, 8, "reveal timestamp"))
    reveal = RevealMessage(bit, a_m) if reveal_flag else None
    plan_hash = hash_bytes.hex() if hash_bytes != b"\x00" * 32 else ""
    return TranscriptHeader(
        spec=spec,
        plan_hash=plan_hash,
        m=m,
        round_count=round_count,
        scale_factor=scale,
        tau1_ns=tau1,
        tau2_ns=tau2,
        status=_STATUS_NAMES[status_code],
        abort_round=abort_round or None,
        abort_reason=reason,
        reveal=reveal,
        reveal_received_at=reveal_at,
        records_base=f.tell(),
        record_size=_record_size(spec.element_bytes),
    )


def read_transcript(path: str | Path) -> Transcript:
    """Load a whole transcript into memory (use verify_file for huge ones)."""
    with open(path, "rb") as f:
        h = read_transcript_header(f)
        expected = h.round_count * h.record_size
        body = _read_exact(f, expected, "round records")
        if f.read(1):
            raise TranscriptFormatError(f"{path}: trailing bytes after round records")
    eb = h.spec.element_bytes
    rounds = [_unpack_record(body, i * h.record_size, eb)
              for i in range(h.round_count)]
    return Transcript(
        spec=h.spec,
        m=h.m,
        tau1_ns=h.tau1_ns,
        tau2_ns=h.tau2_ns,
        rounds=rounds,
        reveal=h.reveal,
        reveal_received_at=h.reveal_received_at,
        status=h.status,
        abort_reason=h.abort_reason,
        abort_round=h.abort_round,
        plan_hash=h.plan_hash,
        scale_factor=h.scale_factor,
    )


@dataclass
class VerifyStats:
    rounds: int
    seconds: float

    @property
    def rounds_per_second(self) -> float:
        return self.rounds / self.seconds if self.seconds > 0 else float("inf")


def verify_file(path: str | Path, plan: ProtocolPlan | None = None,
                chunk_rounds: int = 4096) -> tuple[Verdict, VerifyStats]:
    """Stream a transcript file backward and verify it in constant memory.

    Reads fixed-size round records in reverse chunk order (O(1) seeks), runs
    the backward chain with per-chunk batch inversion, then checks the commit
    round against the claimed bit. Memory is bounded by `chunk_rounds`
    regardless of file size.
    """
    t0 = time.perf_counter()
    with open(path, "rb") as f:
        h = read_transcript_header(f)
        if plan is not None and h.plan_hash and h.plan_hash != plan.plan_hash:
            raise PlanHashMismatchError(
                f"{path}: transcript was produced under plan {h.plan_hash[:12]}..., "
                f"supplied plan is {plan.plan_hash[:12]}..."
            )
        spec = h.spec
        eb = spec.element_bytes
        rec_size = h.record_size

        def stats() -> VerifyStats:
            return VerifyStats(h.round_count, time.perf_counter() - t0)

        if h.status != STATUS_COMPLETE or h.reveal is None:
            return Verdict.reject(REJECT_ABORTED), stats()
        if h.round_count != h.m or h.m < 1 or h.reveal.bit not in (0, 1):
            return Verdict.reject(REJECT_MALFORMED), stats()

        use_spread = spec._spread_ok
        if use_spread:
            smul, sxor, spread = spec._smul, spec._sxor, spec._spread
            s_cur = spread(h.reveal.final_secret)
        else:
            a_cur = h.reveal.final_secret
        first_x = first_y = None
        hi = h.m  # rounds (lo+1 .. hi] remain to be consumed, newest first
        while hi >= 1:
            lo = max(0, hi - chunk_rounds)
            f.seek(h.records_base + lo * rec_size)
            data = _read_exact(f, (hi - lo) * rec_size, f"rounds {lo + 1}..{hi}")
            xs, ys = [], []
            for i in range(hi - lo):
                rec = _unpack_record(data, i * rec_size, eb)
                k = lo + i + 1
                if rec.k != k or rec.station != station_of(k):
                    return Verdict.reject(REJECT_MALFORMED), stats()
                bound = h.tau1_ns if rec.station == 1 else h.tau2_ns
                if rec.answer_received_at - rec.challenge_issued_at > bound:
                    return Verdict.reject(REJECT_TIMING), stats()
                xs.append(rec.challenge)
                ys.append(rec.answer)
            if lo == 0:
                first_x, first_y = xs[0], ys[0]
                xs_chain, ys_chain = xs[1:], ys[1:]
            else:
                xs_chain, ys_chain = xs, ys
            try:
                if use_spread:
                    sxinvs = _batch_inverse_spread(spec, xs_chain)
                    for i in range(len(xs_chain) - 1, -1, -1):
                        s_cur = smul(sxor(spread(ys_chain[i]), s_cur), sxinvs[i])
                else:
                    xinvs = batch_inverse(spec, xs_chain)
                    for i in range(len(xs_chain) - 1, -1, -1):
                        a_cur = spec.mul(ys_chain[i] ^ a_cur, xinvs[i])
            except NonInvertibleError:
                return Verdict.reject(REJECT_ZERO_CHALLENGE), stats()
            hi = lo
        a1 = spec._compact(s_cur) if use_spread else a_cur
        if commit_answer_matches(spec, first_x, first_y, a1, h.reveal.bit):
            return Verdict.accept(h.reveal.bit), stats()
        return Verdict.reject(REJECT_BIT_MISMATCH), stats()


def generate_honest_transcript_file(path: str | Path, spec: FieldSpec, m: int,
                                    secrets: Iterable[int], challenges: Iterable[int],
                                    d: int, tau1_ns: int = 1_000_000,
                                    tau2_ns: int = 1_000_000,
                                    plan_hash: str = "") -> None:
    """Forward-generate an honest m-round transcript file in constant memory.

    `secrets` and `challenges` may be TapeReader iterators; the final secret
    must be recoverable, so the secrets stream is tee'd one element behind.
    """
    last_secret = 0

    def tap(source: Iterable[int]) -> Iterator[int]:
        nonlocal last_secret
        for v in source:
            last_secret = v
            yield v

    def rounds() -> Iterator[RoundRecord]:
        yield from honest_round_stream(spec, tap(secrets), challenges, d, m)

    # a placeholder reveal cannot be used: the header precedes the rounds, and
    # a_m is only known after streaming. Write rounds to the final file first
    # via a temporary header, then rewrite the header in place.
    path = Path(path)
    write_transcript_stream(
        path, spec, m, rounds(), m,
        reveal=RevealMessage(d, 0), reveal_received_at=(m + 1) * 1000 + 1,
        tau1_ns=tau1_ns, tau2_ns=tau2_ns, plan_hash=plan_hash,
    )
    # patch the reveal payload with the true a_m
    with open(path, "r+b") as f:
        h = read_transcript_header(f)
        reveal_payload_offset = h.records_base - 8 - spec.element_bytes
        f.seek(reveal_payload_offset)
        f.write(last_secret.to_bytes(spec.element_bytes, "little"))
