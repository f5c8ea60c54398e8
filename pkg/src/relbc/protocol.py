"""Four-agent commitment protocol logic: commit / sustain / reveal answers,
tapes, transcripts, and the receiving party's full verification.

Round k is 1-based. Odd rounds run at station 1, even rounds at station 2;
round m+1 is the reveal and carries no challenge. The committing party's
answer chain is

    y_1 = a_1                (commit 0)   or   x_1 XOR a_1   (commit 1)
    y_k = x_k * a_{k-1} XOR a_k           for 2 <= k <= m
    y_{m+1} = a_m            (reveal, together with the claimed bit)

Verification recovers the chain backward from the revealed a_m:
a_{k-1} = (y_k XOR a_k) * x_k^-1, then checks y_1 against the claimed bit.

Everything here is pure and deterministic; timing is produced by the
simulator (`simnet`) or the live runner (`transport`) and only *checked*
here (per-round answer deadlines use station-local clock deltas).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import Iterable, Iterator, Sequence

from .field import (
    FieldElement,
    FieldSpec,
    NonInvertibleError,
    _batch_inverse_spread,
    batch_inverse,
)

ROLE_ALICE_SECRETS = "alice-secrets"
ROLE_BOB_CHALLENGES = "bob-challenges"

STATUS_COMPLETE = "complete"
STATUS_ABORTED = "aborted"

REJECT_ABORTED = "aborted-transcript"
REJECT_TIMING = "timing"
REJECT_ZERO_CHALLENGE = "zero-challenge"
REJECT_BIT_MISMATCH = "bit-mismatch"
REJECT_MALFORMED = "malformed-transcript"

# Verification chunk size: bounds memory for the backward pass and is the
# batch-inversion granularity.
VERIFY_CHUNK = 4096


class ProtocolError(Exception):
    """Protocol-logic violation (bad state transition, malformed input)."""


class SequencingError(ProtocolError):
    """An agent was driven out of its expected round order."""


class UnverifiableTranscriptError(ProtocolError):
    """The transcript cannot be verified at all (e.g. a zero challenge)."""


def station_of(k: int) -> int:
    """Station hosting round k: 1 for odd k, 2 for even."""
    return 1 if k & 1 else 2


def check_bit(d: int) -> int:
    if d not in (0, 1):
        raise ProtocolError(f"commitment bit must be 0 or 1, got {d!r}")
    return d


@dataclass(frozen=True)
class RevealMessage:
    """The opening: claimed bit and the final chain secret a_m."""

    bit: int
    final_secret: int


@dataclass
class Tape:
    """Pre-shared randomness: the committing side's secrets a_1..a_m or the
    challenger side's x_1..x_m (challenges are sampled nonzero so the
    backward recursion is always defined).

    Elements are canonical ints under `spec`; element k of round k is
    ``elements[k-1]``.
    """

    role: str
    spec: FieldSpec
    elements: list[int]

    def __post_init__(self):
        if self.role not in (ROLE_ALICE_SECRETS, ROLE_BOB_CHALLENGES):
            raise ProtocolError(f"unknown tape role {self.role!r}")
        if self.role == ROLE_BOB_CHALLENGES:
            for i, v in enumerate(self.elements):
                if v == 0:
                    raise ProtocolError(f"challenge tape has zero element at index {i}")

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, i: int) -> int:
        return self.elements[i]

    def element(self, k: int) -> FieldElement:
        """Round-k element as a typed FieldElement (1-based)."""
        return FieldElement(self.spec, self.elements[k - 1])


@dataclass(slots=True)
class RoundRecord:
    """One challenge/answer exchange with station-local timestamps (ns)."""

    k: int
    station: int
    challenge: int
    answer: int
    challenge_issued_at: int
    answer_received_at: int


@dataclass
class Transcript:
    """Ordered record of all rounds plus the reveal; the unit of verification.

    ``tau1_ns``/``tau2_ns`` are the enforced per-station answer deadlines in
    the same (already scale-adjusted) units as the record timestamps, making
    the transcript self-verifying without the plan.
    """

    spec: FieldSpec
    m: int
    tau1_ns: int
    tau2_ns: int
    rounds: list[RoundRecord] = dfield(default_factory=list)
    reveal: RevealMessage | None = None
    reveal_received_at: int = 0
    status: str = STATUS_COMPLETE
    abort_reason: str | None = None
    abort_round: int | None = None
    plan_hash: str = ""
    scale_factor: int = 1

    @property
    def is_complete(self) -> bool:
        return self.status == STATUS_COMPLETE and self.reveal is not None

    def tau_ns(self, station: int) -> int:
        return self.tau1_ns if station == 1 else self.tau2_ns

    def mark_aborted(self, reason: str, k: int) -> None:
        self.status = STATUS_ABORTED
        self.abort_reason = reason
        self.abort_round = k


@dataclass
class Verdict:
    """Outcome of verification: accept(bit) or reject(reason)."""

    accepted: bool
    bit: int | None = None
    reason: str | None = None

    @classmethod
    def accept(cls, bit: int) -> "Verdict":
        return cls(True, bit=bit)

    @classmethod
    def reject(cls, reason: str) -> "Verdict":
        return cls(False, reason=reason)

    def __repr__(self) -> str:
        if self.accepted:
            return f"Verdict(accept bit={self.bit})"
        return f"Verdict(reject: {self.reason})"


# -- pure answer operations -------------------------------------------------


def alice_commit_answer(x1: FieldElement, a1: FieldElement, d: int) -> FieldElement:
    """Round-1 answer: a1 commits 0, x1 XOR a1 commits 1."""
    check_bit(d)
    masked = x1 + a1  # validates the shared spec for both branches
    return masked if d else a1


def alice_sustain_answer(xk: FieldElement, a_prev: FieldElement,
                         ak: FieldElement) -> FieldElement:
    """Round-k answer for 2 <= k <= m: x_k * a_{k-1} XOR a_k."""
    return xk * a_prev + ak


def alice_reveal(d: int, a_m: FieldElement) -> RevealMessage:
    """The opening message (d, a_m); sequencing guards live on the agent."""
    return RevealMessage(check_bit(d), a_m.value)


# -- agent state machines -----------------------------------------------------


class BobAgent:
    """Challenger-side agent at one station: issues x_k for its parity."""

    def __init__(self, station: int, spec: FieldSpec, challenges: Tape, m: int):
        if station not in (1, 2):
            raise ProtocolError(f"station must be 1 or 2, got {station}")
        self.station = station
        self.spec = spec
        self.challenges = challenges
        self.m = m
        self.next_k = station  # station 1 issues odd rounds, station 2 even
        self.aborted = False

    def issue_challenge(self, k: int) -> int:
        if self.aborted:
            raise SequencingError(f"B{self.station} already aborted")
        if k != self.next_k or k > self.m:
            self.aborted = True
            raise SequencingError(
                f"B{self.station} expected round {self.next_k}, got {k}"
            )
        self.next_k += 2
        return self.challenges[k - 1]


class AliceAgent:
    """Committing-side agent at one station: answers its parity's rounds.

    Both agents hold the full secrets tape and the agreed bit; the reveal is
    issued by whichever station hosts round m+1.
    """

    def __init__(self, station: int, spec: FieldSpec, secrets: Tape, d: int, m: int):
        if station not in (1, 2):
            raise ProtocolError(f"station must be 1 or 2, got {station}")
        self.station = station
        self.spec = spec
        self.secrets = secrets
        self.d = check_bit(d)
        self.m = m
        self.next_k = station
        self.revealed = False
        self.aborted = False

    def handle_challenge(self, k: int, x_k: int) -> int:
        if self.aborted:
            raise SequencingError(f"A{self.station} already aborted")
        if k != self.next_k or k > self.m:
            self.aborted = True
            raise SequencingError(
                f"A{self.station} expected round {self.next_k}, got {k}"
            )
        spec = self.spec
        if k == 1:
            y = x_k ^ self.secrets[0] if self.d else self.secrets[0]
        else:
            y = spec.mul(x_k, self.secrets[k - 2]) ^ self.secrets[k - 1]
        self.next_k += 2
        return y

    def reveal(self) -> RevealMessage:
        reveal_round = self.m + 1
        if self.station != station_of(reveal_round):
            raise SequencingError(
                f"reveal for m={self.m} belongs to station {station_of(reveal_round)}"
            )
        if self.revealed:
            raise SequencingError("reveal already issued")
        if self.next_k != reveal_round:
            raise SequencingError(
                f"reveal before round {self.next_k} was answered at A{self.station}"
            )
        self.revealed = True
        return RevealMessage(self.d, self.secrets[self.m - 1])


# -- verification --------------------------------------------------------------


def _recover_ints(spec: FieldSpec, challenges: Sequence[int],
                  answers: Sequence[int], a_m: int,
                  full_chain: bool = True) -> list[int]:
    """Backward chain recovery from round data (challenges[i] is x_{i+1}).

    Returns [a_1..a_m] when `full_chain`, else just [a_1]; uses batch
    inversion per chunk; raises UnverifiableTranscriptError on a zero
    challenge.
    """
    m = len(challenges)
    chain = [0] * m if full_chain else [0]
    if full_chain:
        chain[m - 1] = a_m
    use_spread = spec._spread_ok
    if use_spread:
        smul, spread, sxor = spec._smul, spec._spread, spec._sxor
        compact = spec._compact
        s_cur = spread(a_m)
    else:
        a_cur = a_m
    hi = m  # recover a_{k-1} for k in (lo+1 .. hi], chunked
    while hi >= 2:
        lo = max(1, hi - VERIFY_CHUNK)
        xs = challenges[lo:hi]  # x_{lo+1} .. x_hi
        try:
            if use_spread:
                sxinvs = _batch_inverse_spread(spec, xs)
                for i in range(hi - 1, lo - 1, -1):
                    s_cur = smul(sxor(spread(answers[i]), s_cur), sxinvs[i - lo])
                    if full_chain:
                        chain[i - 1] = compact(s_cur)
            else:
                xinvs = batch_inverse(spec, xs)
                for i in range(hi - 1, lo - 1, -1):
                    a_cur = spec.mul(answers[i] ^ a_cur, xinvs[i - lo])
                    if full_chain:
                        chain[i - 1] = a_cur
        except NonInvertibleError as exc:
            raise UnverifiableTranscriptError(
                "zero challenge makes the chain unrecoverable"
            ) from exc
        hi = lo
    if not full_chain:
        if m == 1:
            chain[0] = a_m
        elif use_spread:
            chain[0] = compact(s_cur)
        else:
            chain[0] = a_cur
    return chain


def recover_chain(transcript: Transcript) -> list[FieldElement]:
    """Recompute a_1..a_m from a complete transcript's reveal."""
    if not transcript.is_complete:
        raise ProtocolError("cannot recover the chain of an incomplete transcript")
    _check_round_layout(transcript)
    xs = [r.challenge for r in transcript.rounds]
    ys = [r.answer for r in transcript.rounds]
    ints = _recover_ints(transcript.spec, xs, ys, transcript.reveal.final_secret)
    return [FieldElement(transcript.spec, v) for v in ints]


def _check_round_layout(t: Transcript) -> None:
    if len(t.rounds) != t.m:
        raise ProtocolError(
            f"transcript has {len(t.rounds)} rounds, expected m={t.m}"
        )
    for i, rec in enumerate(t.rounds, start=1):
        if rec.k != i or rec.station != station_of(i):
            raise ProtocolError(f"round {i} record is out of order or misplaced")


def commit_answer_matches(spec: FieldSpec, x1: int, y1: int, a1: int, d: int) -> bool:
    return y1 == (x1 ^ a1 if d else a1)


def bob_verify(transcript: Transcript) -> Verdict:
    """Full verification: timing bounds, backward chain, commit-bit check."""
    if transcript.status != STATUS_COMPLETE or transcript.reveal is None:
        return Verdict.reject(REJECT_ABORTED)
    try:
        _check_round_layout(transcript)
    except ProtocolError:
        return Verdict.reject(REJECT_MALFORMED)
    d = transcript.reveal.bit
    if d not in (0, 1):
        return Verdict.reject(REJECT_MALFORMED)
    for rec in transcript.rounds:
        bound = transcript.tau_ns(rec.station)
        if rec.answer_received_at - rec.challenge_issued_at > bound:
            return Verdict.reject(REJECT_TIMING)
    spec = transcript.spec
    xs = [r.challenge for r in transcript.rounds]
    ys = [r.answer for r in transcript.rounds]
    try:
        a1 = _recover_ints(spec, xs, ys, transcript.reveal.final_secret,
                           full_chain=False)[0]
    except UnverifiableTranscriptError:
        return Verdict.reject(REJECT_ZERO_CHALLENGE)
    if commit_answer_matches(spec, xs[0], ys[0], a1, d):
        return Verdict.accept(d)
    return Verdict.reject(REJECT_BIT_MISMATCH)


# -- honest drive (reference harness) ------------------------------------------


def honest_round_stream(spec: FieldSpec, secrets: Iterable[int],
                        challenges: Iterable[int], d: int, m: int,
                        issue_times: Iterable[int] | None = None,
                        answer_delay_ns: int = 1) -> Iterator[RoundRecord]:
    """Yield the m honest RoundRecords without materializing the tapes.

    `secrets` and `challenges` are consumed lazily, so arbitrarily long
    transcripts can be generated in constant memory. Timestamps default to a
    fixed 1 ns turnaround on a synthetic schedule (1 us per round).
    """
    check_bit(d)
    it_a = iter(secrets)
    it_x = iter(challenges)
    times = iter(issue_times) if issue_times is not None else None
    use_spread = spec._spread_ok
    a_prev = None
    s_prev = None
    for k in range(1, m + 1):
        a_k = next(it_a)
        x_k = next(it_x)
        if k == 1:
            y = x_k ^ a_k if d else a_k
        elif use_spread:
            y = spec._compact(
                spec._sxor(spec._smul(spec._spread(x_k), s_prev), spec._spread(a_k))
            )
        else:
            y = spec.mul(x_k, a_prev) ^ a_k
        if use_spread:
            s_prev = spec._spread(a_k)
        a_prev = a_k
        issued = next(times) if times is not None else k * 1000
        yield RoundRecord(k, station_of(k), x_k, y, issued, issued + answer_delay_ns)


def run_honest_protocol(spec: FieldSpec, secrets: Tape, challenges: Tape, d: int,
                        tau1_ns: int = 1_000_000, tau2_ns: int = 1_000_000,
                        plan_hash: str = "") -> Transcript:
    """Drive all four agents over in-memory tapes; returns a complete transcript.

    This is the reference harness used by tests and by transcript-file
    generation; the discrete-event simulator and the live transport produce
    the same records with physical timestamps instead.
    """
    m = len(secrets)
    if len(challenges) < m:
        raise ProtocolError("challenge tape shorter than the secrets tape")
    alices = {1: AliceAgent(1, spec, secrets, d, m), 2: AliceAgent(2, spec, secrets, d, m)}
    bobs = {1: BobAgent(1, spec, challenges, m), 2: BobAgent(2, spec, challenges, m)}
    t = Transcript(spec=spec, m=m, tau1_ns=tau1_ns, tau2_ns=tau2_ns,
                   plan_hash=plan_hash)
    for k in range(1, m + 1):
        s = station_of(k)
        x_k = bobs[s].issue_challenge(k)
        y_k = alices[s].handle_challenge(k, x_k)
        issued = k * 1000
        t.rounds.append(RoundRecord(k, s, x_k, y_k, issued, issued + 1))
    reveal_station = station_of(m + 1)
    t.reveal = alices[reveal_station].reveal()
    t.reveal_received_at = (m + 1) * 1000 + 1
    return t
