"""Deterministic discrete-event simulation of the four agents.

Agents sit on a 1-D axis (stations at 0 and L); every message, including the
adversary's covert relays, travels at the configured speed of light. Times
are integer nanoseconds in a global frame; each agent owns a ClockModel
mapping its local clock to the global frame, and the challengers schedule,
stamp, and enforce deadlines strictly on their local clocks.

Round k+1 starts t_L - (tau_{station(k+1)} + t_M) after round k starts, so an
answer that depends on the previous round's challenge cannot arrive on time:
light itself would miss the deadline by t_M.

The engine is single-threaded and reproducible: events are processed in
(time, sequence) order and identical inputs give byte-identical transcripts
and reports. Parallelism is only across independent runs (`run_many`).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from heapq import heappush, heappop, heapify
from typing import Iterable, Sequence

from .field import FieldSpec
from .planner import ProtocolPlan, NS
from .protocol import (
    AliceAgent,
    BobAgent,
    ROLE_ALICE_SECRETS,
    ROLE_BOB_CHALLENGES,
    RevealMessage,
    RoundRecord,
    Tape,
    Transcript,
    bob_verify,
    station_of,
)

AGENTS = ("A1", "A2", "B1", "B2")

HONEST = "honest"
LATE_DECISION = "late-decision"
RELAY = "relay"
WRONG_BIT_REVEAL = "wrong-bit-reveal"
PLACEMENT_CHEAT = "placement-cheat"

STRATEGIES = (HONEST, LATE_DECISION, RELAY, WRONG_BIT_REVEAL, PLACEMENT_CHEAT)

ABORT_DEADLINE = "deadline"
ABORT_TIMEOUT = "timeout"

# event kinds (processed in (time, seq) order)
_EV_START = 0
_EV_CH_ARRIVE = 1
_EV_ANS_ARRIVE = 2
_EV_DEADLINE = 3
_EV_COVERT = 4
_EV_REVEAL_SEND = 5
_EV_REVEAL_ARRIVE = 6


class SimulationError(Exception):
    """Malformed simulation input (placement, plan, strategy)."""


@dataclass(frozen=True)
class NodePlacement:
    """Agent position in meters along the station axis."""

    agent: str
    position_m: float

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise SimulationError(f"unknown agent {self.agent!r}")


@dataclass(frozen=True)
class ClockModel:
    """Local clock: offset plus fractional rate error, optionally disciplined
    by a once-per-second pulse that bounds the accumulated error."""

    offset_ns: int = 0
    rate: float = 0.0
    discipline: str = "none"          # "none" | "pps"
    pps_tolerance_ns: int = 8

    def __post_init__(self):
        if self.discipline not in ("none", "pps"):
            raise SimulationError(f"unknown clock discipline {self.discipline!r}")

    def drift_ns(self, global_ns: int) -> int:
        if self.discipline == "pps":
            return round(self.rate * (global_ns % NS))
        return round(self.rate * global_ns)

    def local_at_global(self, global_ns: int) -> int:
        return global_ns + self.offset_ns + self.drift_ns(global_ns)

    def global_at_local(self, local_ns: int) -> int:
        g = local_ns - self.offset_ns
        for _ in range(4):
            g = local_ns - self.offset_ns - self.drift_ns(g)
        while self.local_at_global(g) < local_ns:
            g += 1
        while g > 0 and self.local_at_global(g - 1) >= local_ns:
            g -= 1
        return g

    @property
    def pps_violation(self) -> bool:
        """True when the per-second accumulated error exceeds the tolerance."""
        return self.discipline == "pps" and abs(self.rate) * NS > self.pps_tolerance_ns


EXACT_CLOCK = ClockModel()


@dataclass(frozen=True)
class AdversaryStrategy:
    """Committer-side behavior; acts only through messages and timing.

    kinds:
      honest           answer immediately from the tapes
      late-decision    delay the `target_round` answer so it arrives
                       `margin_ns` before its deadline (negative = after)
      relay            forward every challenge to the other agent at light
                       speed and answer sustain rounds only once the previous
                       round's challenge has been relayed over
      wrong-bit-reveal honest rounds, flipped bit in the reveal
      placement-cheat  honest behavior from beyond the allowed offset
    """

    kind: str = HONEST
    target_round: int = 1
    margin_ns: int = 1
    cheat_offset_factor: float = 2.0  # placement-cheat: A1 at l1 * factor

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise SimulationError(f"unknown strategy kind {self.kind!r}")


@dataclass
class SimReport:
    """Per-run timing evidence produced alongside the transcript."""

    strategy: str
    seed: int
    bit: int
    aborted: bool
    abort_round: int | None
    abort_reason: str | None
    rounds_recorded: int
    event_count: int
    worst_true_slack_ns: int | None   # min over pairs of issued(k)+t_L-deadline(k+1)
    margin_violation_rounds: list[int]   # rounds starting > t_M from nominal
    discipline_violations: list[str]     # agents whose pps clock is out of spec
    reveal_received: bool


@dataclass
class AuditReport:
    """Post-hoc no-signaling audit of a transcript against a plan."""

    ok: bool
    pairs_checked: int
    worst_slack_ns: int | None
    violations: list[tuple[int, str]]    # (round index, what went wrong)
    late_answer_rounds: list[int]

    @property
    def worst_slack_seconds(self) -> float | None:
        return None if self.worst_slack_ns is None else self.worst_slack_ns / NS


def default_placements(plan: ProtocolPlan,
                       strategy: AdversaryStrategy | None = None) -> dict[str, float]:
    """Honest default: committer agents colocated with their stations."""
    L = plan.config.L
    pos = {"B1": 0.0, "A1": 0.0, "B2": L, "A2": L}
    if strategy is not None and strategy.kind == PLACEMENT_CHEAT:
        pos["A1"] = min(plan.config.l1 * strategy.cheat_offset_factor, L / 2)
    return pos


def make_tapes(plan: ProtocolPlan, spec: FieldSpec, seed: int) -> tuple[Tape, Tape]:
    """Seeded pre-shared randomness: secrets a_1..a_m, then challenges
    x_1..x_m (nonzero), drawn in that order from one stream."""
    rng = random.Random(seed)
    m = plan.m
    secrets = [spec.random_int(rng) for _ in range(m)]
    challenges = [spec.random_int(rng, nonzero=True) for _ in range(m)]
    return (Tape(ROLE_ALICE_SECRETS, spec, secrets),
            Tape(ROLE_BOB_CHALLENGES, spec, challenges))


def _travel_ns(pos_a: float, pos_b: float, c: float) -> int:
    return math.ceil(abs(pos_a - pos_b) * NS / c)


def run_simulation(plan: ProtocolPlan,
                   placements: Iterable[NodePlacement] | dict[str, float] | None = None,
                   clocks: dict[str, ClockModel] | None = None,
                   strategy: AdversaryStrategy | None = None,
                   seed: int = 0,
                   bit: int = 0,
                   tapes: tuple[Tape, Tape] | None = None,
                   spec: FieldSpec | None = None) -> tuple[Transcript, SimReport]:
    """Execute one full commitment under the plan's schedule.

    Returns the transcript exactly as the verifier stations recorded it
    (station-local timestamps) plus a timing report in the global frame.
    """
    strategy = strategy or AdversaryStrategy()
    if spec is None:
        spec = FieldSpec(plan.n)
    m = plan.m
    if m < 1:
        raise SimulationError("plan has no rounds")
    if tapes is None:
        tapes = make_tapes(plan, spec, seed)
    secrets, challenges = tapes
    if len(secrets) < m or len(challenges) < m:
        raise SimulationError("tapes shorter than the plan's round count")

    if placements is None:
        pos = default_placements(plan, strategy)
    elif isinstance(placements, dict):
        pos = {"B1": 0.0, "B2": plan.config.L, **placements}
    else:
        pos = {"B1": 0.0, "B2": plan.config.L}
        for p in placements:
            pos[p.agent] = p.position_m
    for agent in AGENTS:
        if agent not in pos:
            raise SimulationError(f"placement missing for {agent}")

    clocks = clocks or {}
    clk = {agent: clocks.get(agent, EXACT_CLOCK) for agent in AGENTS}
    c = plan.config.c
    travel_ba = {1: _travel_ns(pos["B1"], pos["A1"], c),
                 2: _travel_ns(pos["B2"], pos["A2"], c)}
    travel_aa = _travel_ns(pos["A1"], pos["A2"], c)
    t_l_ns = plan.t_l_ns
    tau = {1: plan.tau1_ns, 2: plan.tau2_ns}

    alice = {1: AliceAgent(1, spec, secrets, bit, m),
             2: AliceAgent(2, spec, secrets, bit, m)}
    bob = {1: BobAgent(1, spec, challenges, m), 2: BobAgent(2, spec, challenges, m)}

    reveal_round = m + 1
    reveal_station = station_of(reveal_round)

    # per-round state (index k)
    records: list[RoundRecord | None] = [None] * (reveal_round + 1)
    issue_global = [0] * (reveal_round + 1)
    deadline_global = [0] * (reveal_round + 1)
    pending_x = [0] * (reveal_round + 1)

    transcript = Transcript(spec=spec, m=m, tau1_ns=plan.tau1_ns,
                            tau2_ns=plan.tau2_ns, plan_hash=plan.plan_hash)
    reveal_received = False

    heap: list[tuple[int, int, int, int, int]] = []
    seq = 0
    for k in range(1, reveal_round + 1):
        st = station_of(k)
        b_clk = clk[f"B{st}"]
        start_local = plan.round_start_ns(k)
        g_start = b_clk.global_at_local(start_local)
        g_deadline = b_clk.global_at_local(start_local + tau[st])
        issue_global[k] = g_start
        deadline_global[k] = g_deadline
        if k <= m:
            heap.append((g_start, seq, _EV_START, k, 0))
            seq += 1
        # fires one tick past the deadline so an arrival exactly at the
        # deadline is still counted as on time
        heap.append((g_deadline + 1, seq, _EV_DEADLINE, k, 0))
        seq += 1
    # the committer self-schedules the reveal on her own clock
    a_clk = clk[f"A{reveal_station}"]
    g_reveal_send = a_clk.global_at_local(plan.round_start_ns(reveal_round))
    heap.append((g_reveal_send, seq, _EV_REVEAL_SEND, reveal_round, 0))
    seq += 1
    heapify(heap)

    # relay-strategy bookkeeping
    covert_known: set[int] = set()   # challenge indexes relayed to the peer
    relay_waiting: dict[int, int] = {}  # round stalled on a relay -> station

    aborted = False
    abort_round: int | None = None
    abort_reason: str | None = None
    events = 0

    def do_abort(k: int, reason: str) -> None:
        nonlocal aborted, abort_round, abort_reason
        aborted = True
        abort_round = k
        abort_reason = reason

    def answer_round(st: int, k: int, x: int, send_global: int) -> tuple[int, int, int]:
        """Compute the honest answer and its arrival event at B_st."""
        y = alice[st].handle_challenge(k, x)
        arrive = send_global + travel_ba[st]
        assert arrive >= send_global  # causality
        return arrive, k, y

    while heap:
        t, _, kind, k, payload = heappop(heap)
        if aborted:
            break
        events += 1
        if kind == _EV_START:
            st = station_of(k)
            x = bob[st].issue_challenge(k)
            pending_x[k] = x
            arrive = t + travel_ba[st]
            assert arrive >= t  # causality: delivery never precedes emission
            heappush(heap, (arrive, seq, _EV_CH_ARRIVE, k, x))
            seq += 1
        elif kind == _EV_CH_ARRIVE:
            st = station_of(k)
            x = payload
            skind = strategy.kind
            if skind == RELAY:
                # covertly forward this challenge to the peer agent
                heappush(heap, (t + travel_aa, seq, _EV_COVERT, k, x))
                seq += 1
                if k == 1 or (k - 1) in covert_known:
                    arrive, _, y = answer_round(st, k, x, t)
                    heappush(heap, (arrive, seq, _EV_ANS_ARRIVE, k, y))
                    seq += 1
                else:
                    relay_waiting[k] = st
            elif skind == LATE_DECISION and k == strategy.target_round:
                target_arrival = deadline_global[k] - strategy.margin_ns
                send = max(t, target_arrival - travel_ba[st])
                arrive, _, y = answer_round(st, k, x, send)
                arrive = max(arrive, target_arrival)
                heappush(heap, (arrive, seq, _EV_ANS_ARRIVE, k, y))
                seq += 1
            else:  # honest content, immediate answer
                arrive, _, y = answer_round(st, k, x, t)
                heappush(heap, (arrive, seq, _EV_ANS_ARRIVE, k, y))
                seq += 1
        elif kind == _EV_COVERT:
            covert_known.add(k)
            nxt = k + 1
            if nxt in relay_waiting:
                st = relay_waiting.pop(nxt)
                arrive, _, y = answer_round(st, nxt, pending_x[nxt], t)
                heappush(heap, (arrive, seq, _EV_ANS_ARRIVE, nxt, y))
                seq += 1
        elif kind == _EV_ANS_ARRIVE:
            st = station_of(k)
            b_clk = clk[f"B{st}"]
            received_local = b_clk.local_at_global(t)
            issued_local = plan.round_start_ns(k)
            records[k] = RoundRecord(k, st, pending_x[k], payload,
                                     issued_local, received_local)
            if received_local - issued_local > tau[st]:
                do_abort(k, ABORT_DEADLINE)
        elif kind == _EV_DEADLINE:
            if k <= m:
                if records[k] is None:
                    do_abort(k, ABORT_TIMEOUT)
            elif not reveal_received:
                do_abort(k, ABORT_TIMEOUT)
        elif kind == _EV_REVEAL_SEND:
            msg = alice[reveal_station].reveal()
            if strategy.kind == WRONG_BIT_REVEAL:
                msg = RevealMessage(msg.bit ^ 1, msg.final_secret)
            arrive = t + travel_ba[reveal_station]
            heappush(heap, (arrive, seq, _EV_REVEAL_ARRIVE, reveal_round, 0))
            seq += 1
            transcript.reveal = msg
        elif kind == _EV_REVEAL_ARRIVE:
            b_clk = clk[f"B{reveal_station}"]
            received_local = b_clk.local_at_global(t)
            transcript.reveal_received_at = received_local
            issued_local = plan.round_start_ns(reveal_round)
            if received_local - issued_local > tau[reveal_station]:
                do_abort(k, ABORT_DEADLINE)
            else:
                reveal_received = True

    # assemble the contiguous round prefix
    rounds: list[RoundRecord] = []
    for k in range(1, m + 1):
        rec = records[k]
        if rec is None:
            break
        rounds.append(rec)
    transcript.rounds = rounds
    if aborted:
        transcript.reveal = None
        transcript.mark_aborted(abort_reason, abort_round)
    elif not reveal_received:
        transcript.reveal = None
        transcript.mark_aborted(ABORT_TIMEOUT, reveal_round)
        aborted, abort_round, abort_reason = True, reveal_round, ABORT_TIMEOUT

    # global-frame diagnostics
    worst_slack: int | None = None
    last_pair = reveal_round if (reveal_received or not aborted) else (len(rounds))
    for k in range(1, last_pair):
        slack = issue_global[k] + t_l_ns - deadline_global[k + 1]
        if worst_slack is None or slack < worst_slack:
            worst_slack = slack
    margin_violations = []
    t_m_ns = plan.t_m_ns
    for k in range(1, (reveal_round if not aborted else len(rounds)) + 1):
        nominal = plan.round_start_ns(k)
        if abs(issue_global[k] - nominal) > t_m_ns:
            margin_violations.append(k)
            if len(margin_violations) >= 100:
                break
    discipline = [a for a in AGENTS if clk[a].pps_violation]

    report = SimReport(
        strategy=strategy.kind,
        seed=seed,
        bit=bit,
        aborted=aborted,
        abort_round=abort_round,
        abort_reason=abort_reason,
        rounds_recorded=len(rounds),
        event_count=events,
        worst_true_slack_ns=worst_slack,
        margin_violation_rounds=margin_violations,
        discipline_violations=discipline,
        reveal_received=reveal_received,
    )
    return transcript, report


def no_signaling_audit(transcript: Transcript, plan: ProtocolPlan,
                       placements: Iterable[NodePlacement] | None = None) -> AuditReport:
    """Check every consecutive round pair against the light cone.

    The answer to round k+1 must be independent of challenge k: even at light
    speed, information from the challenge issued at issued(k) reaches the
    other station only t_L later, so the audit requires

        deadline(k+1) <= issued(k) + t_L * scale

    and reports the worst slack (honest schedules leave ~t_M). The committer
    offset allowances cancel: sitting closer to the far station means
    learning the challenge earlier but also having to emit the answer
    earlier, both at light speed. Per-round answer lateness is reported
    separately. Timestamps must exist for every recorded round.
    """
    scale = max(1, transcript.scale_factor)
    t_l_ns = plan.t_l_ns * scale
    violations: list[tuple[int, str]] = []
    late_rounds: list[int] = []
    worst: int | None = None
    rounds = transcript.rounds
    if not rounds:
        return AuditReport(False, 0, None, [(0, "no rounds to audit")], [])
    for rec in rounds:
        if rec.answer_received_at is None or rec.challenge_issued_at is None:
            return AuditReport(False, 0, None,
                               [(rec.k, "missing timestamps: audit incomplete")], [])
        bound = transcript.tau_ns(rec.station)
        if rec.answer_received_at - rec.challenge_issued_at > bound:
            late_rounds.append(rec.k)
    pairs = 0
    for i in range(len(rounds) - 1):
        cur, nxt = rounds[i], rounds[i + 1]
        deadline_next = nxt.challenge_issued_at + transcript.tau_ns(nxt.station)
        slack = cur.challenge_issued_at + t_l_ns - deadline_next
        pairs += 1
        if worst is None or slack < worst:
            worst = slack
        if slack < 0:
            violations.append((nxt.k, f"answer window ends {-slack} ns inside "
                                      f"the light cone of round {cur.k}"))
    # the reveal is round m+1: audit it against round m using its receipt time
    if transcript.is_complete and rounds:
        last = rounds[-1]
        slack = last.challenge_issued_at + t_l_ns - transcript.reveal_received_at
        pairs += 1
        if worst is None or slack < worst:
            worst = slack
        if slack < 0:
            violations.append((transcript.m + 1,
                               f"reveal arrived {-slack} ns inside the light "
                               f"cone of round {last.k}"))
    for k in late_rounds:
        violations.append((k, "answer received after its deadline"))
    return AuditReport(not violations, pairs, worst, violations, late_rounds)


# -- embarrassingly parallel sweeps -------------------------------------------


def _run_one_summary(args) -> dict:
    """Worker for run_many: returns a small, picklable summary."""
    plan, strategy, seed, bit = args
    transcript, report = run_simulation(plan, strategy=strategy, seed=seed, bit=bit)
    verdict = bob_verify(transcript)
    audit = no_signaling_audit(transcript, plan)
    return {
        "seed": seed,
        "bit": bit,
        "strategy": strategy.kind,
        "aborted": report.aborted,
        "abort_round": report.abort_round,
        "abort_reason": report.abort_reason,
        "accepted": verdict.accepted,
        "verdict_bit": verdict.bit,
        "reject_reason": verdict.reason,
        "audit_ok": audit.ok,
        "audit_worst_slack_ns": audit.worst_slack_ns,
    }


def run_many(plan: ProtocolPlan, strategy: AdversaryStrategy,
             seeds: Sequence[int], bits: Sequence[int],
             processes: int | None = None) -> list[dict]:
    """Run the (seed, bit) grid of independent simulations, optionally on a
    process pool; results are ordered like the input grid."""
    jobs = [(plan, strategy, seed, bit) for seed in seeds for bit in bits]
    if processes is not None and processes > 1 and len(jobs) > 1:
        import multiprocessing as mp

        ctx = mp.get_context("fork") if hasattr(mp, "get_context") else mp
        with ctx.Pool(processes) as pool:
            return pool.map(_run_one_summary, jobs, chunksize=4)
    return [_run_one_summary(job) for job in jobs]
