"""Protocol logic: answer operations, agents, chain recovery, verification."""

import random

import pytest

from relbc.field import FieldMismatchError, gf2_8, gf2_128
from relbc.protocol import (
    REJECT_ABORTED,
    REJECT_BIT_MISMATCH,
    REJECT_TIMING,
    REJECT_ZERO_CHALLENGE,
    AliceAgent,
    BobAgent,
    ProtocolError,
    RevealMessage,
    SequencingError,
    Tape,
    UnverifiableTranscriptError,
    alice_commit_answer,
    alice_reveal,
    alice_sustain_answer,
    bob_verify,
    honest_round_stream,
    recover_chain,
    run_honest_protocol,
    station_of,
)

from helpers import random_tapes, schoolbook_mul

S8 = gf2_8()
S128 = gf2_128()


class TestCommitAnswer:
    def test_bit_zero_returns_secret(self):
        rng = random.Random(0)
        for _ in range(20):
            x = S128.element(S128.random_int(rng))
            a = S128.element(S128.random_int(rng))
            assert alice_commit_answer(x, a, 0) == a

    def test_bit_one_xors(self):
        a = S8.element(0x5A)
        assert alice_commit_answer(S8.zero, a, 1) == a
        assert alice_commit_answer(a, a, 1).value == 0

    def test_rejects_bad_bit_and_mismatch(self):
        with pytest.raises(ProtocolError):
            alice_commit_answer(S8.element(1), S8.element(2), 2)
        with pytest.raises(FieldMismatchError):
            alice_commit_answer(S8.element(1), S128.element(2), 0)


class TestSustainAnswer:
    def test_zero_prev_annihilates_product(self):
        rng = random.Random(1)
        x = S128.element(S128.random_int(rng))
        ak = S128.element(S128.random_int(rng))
        assert alice_sustain_answer(x, S128.zero, ak) == ak

    def test_unit_challenge(self):
        rng = random.Random(2)
        prev = S8.element(S8.random_int(rng))
        ak = S8.element(S8.random_int(rng))
        assert alice_sustain_answer(S8.one, prev, ak) == prev + ak

    def test_matches_schoolbook_oracle(self):
        rng = random.Random(3)
        for _ in range(100):
            x, prev, ak = (S8.random_int(rng) for _ in range(3))
            got = alice_sustain_answer(S8.element(x), S8.element(prev), S8.element(ak))
            assert got.value == schoolbook_mul(x, prev, 8, 0x1B) ^ ak


class TestAgents:
    def test_first_challenge_is_first_tape_element(self):
        _, challenges = random_tapes(S8, 6, seed=4)
        bob = BobAgent(1, S8, challenges, 6)
        assert bob.issue_challenge(1) == challenges[0]

    def test_parity_guard(self):
        _, challenges = random_tapes(S8, 6, seed=5)
        bob = BobAgent(1, S8, challenges, 6)
        with pytest.raises(SequencingError):
            bob.issue_challenge(2)
        assert bob.aborted

    def test_out_of_order_alice(self):
        secrets, _ = random_tapes(S8, 6, seed=6)
        alice = AliceAgent(1, S8, secrets, 0, 6)
        alice.handle_challenge(1, 7)
        with pytest.raises(SequencingError):
            alice.handle_challenge(1, 7)
        assert alice.aborted

    def test_reveal_guards(self):
        secrets, _ = random_tapes(S8, 2, seed=7)
        alice = AliceAgent(1, S8, secrets, 1, 2)
        with pytest.raises(SequencingError):
            alice.reveal()  # before any round
        alice.handle_challenge(1, 3)
        msg = alice.reveal()
        assert msg == RevealMessage(1, secrets[1])
        with pytest.raises(SequencingError):
            alice.reveal()  # twice

    def test_reveal_station_follows_parity_of_m_plus_1(self):
        secrets, _ = random_tapes(S8, 1, seed=8)
        a1 = AliceAgent(1, S8, secrets, 0, 1)
        a2 = AliceAgent(2, S8, secrets, 0, 1)
        a1.handle_challenge(1, 9)
        with pytest.raises(SequencingError):
            a1.reveal()  # m+1 = 2 belongs to station 2
        assert a2.reveal().final_secret == secrets[0]

    def test_alice_reveal_op(self):
        msg = alice_reveal(0, S8.element(0x2F))
        assert msg == RevealMessage(0, 0x2F)


class TestRoundTrip:
    @pytest.mark.parametrize("spec", [S8, S128], ids=["n8", "n128"])
    @pytest.mark.parametrize("m", [1, 2, 9, 1000])
    @pytest.mark.parametrize("d", [0, 1])
    def test_honest_accepts_committed_bit(self, spec, m, d):
        for seed in (0, 1):
            secrets, challenges = random_tapes(spec, m, seed=seed)
            t = run_honest_protocol(spec, secrets, challenges, d)
            v = bob_verify(t)
            assert v.accepted and v.bit == d

    def test_station_parity_in_records(self):
        secrets, challenges = random_tapes(S8, 12, seed=9)
        t = run_honest_protocol(S8, secrets, challenges, 0)
        for rec in t.rounds:
            assert rec.station == (1 if rec.k % 2 else 2)

    def test_stream_matches_driver(self):
        secrets, challenges = random_tapes(S8, 10, seed=10)
        t = run_honest_protocol(S8, secrets, challenges, 1)
        stream = list(honest_round_stream(S8, secrets.elements, challenges.elements, 1, 10))
        assert [(r.k, r.challenge, r.answer) for r in stream] == \
            [(r.k, r.challenge, r.answer) for r in t.rounds]


class TestRecoverChain:
    def test_single_round_returns_reveal(self):
        secrets, challenges = random_tapes(S8, 1, seed=11)
        t = run_honest_protocol(S8, secrets, challenges, 0)
        chain = recover_chain(t)
        assert [e.value for e in chain] == [secrets[0]]

    def test_five_round_roundtrip(self):
        secrets, challenges = random_tapes(S8, 5, seed=12)
        t = run_honest_protocol(S8, secrets, challenges, 1)
        chain = recover_chain(t)
        assert [e.value for e in chain] == secrets.elements

    def test_flipped_answer_changes_recovered_root(self):
        secrets, challenges = random_tapes(S8, 5, seed=13)
        t = run_honest_protocol(S8, secrets, challenges, 1)
        honest_a1 = recover_chain(t)[0].value
        t.rounds[2].answer ^= 0x10
        assert recover_chain(t)[0].value != honest_a1

    def test_zero_challenge_unverifiable(self):
        secrets, challenges = random_tapes(S8, 4, seed=14)
        t = run_honest_protocol(S8, secrets, challenges, 1)
        t.rounds[1].challenge = 0
        with pytest.raises(UnverifiableTranscriptError):
            recover_chain(t)
        assert bob_verify(t).reason == REJECT_ZERO_CHALLENGE

    def test_incomplete_rejected(self):
        secrets, challenges = random_tapes(S8, 4, seed=15)
        t = run_honest_protocol(S8, secrets, challenges, 1)
        t.mark_aborted("deadline", 3)
        with pytest.raises(ProtocolError):
            recover_chain(t)
        assert bob_verify(t).reason == REJECT_ABORTED


class TestBinding:
    """Single-field tampering must flip the verdict (2^-8 collision risk is
    dodged by fixed seeds known to reject)."""

    def _honest(self, seed, m=9, d=1):
        secrets, challenges = random_tapes(S8, m, seed=seed)
        return run_honest_protocol(S8, secrets, challenges, d)

    def test_flipped_claimed_bit(self):
        for seed in range(5):
            t = self._honest(seed)
            t.reveal = RevealMessage(t.reveal.bit ^ 1, t.reveal.final_secret)
            assert not bob_verify(t).accepted

    def test_tampered_answer(self):
        for seed in range(5):
            t = self._honest(seed)
            t.rounds[4].answer ^= 1
            assert bob_verify(t).reason == REJECT_BIT_MISMATCH

    def test_tampered_challenge(self):
        for seed in range(5):
            t = self._honest(seed)
            t.rounds[6].challenge ^= 0x40
            assert not bob_verify(t).accepted

    def test_tampered_reveal_secret(self):
        for seed in range(5):
            t = self._honest(seed)
            t.reveal = RevealMessage(t.reveal.bit, t.reveal.final_secret ^ 0x08)
            assert not bob_verify(t).accepted


class TestHiding:
    def test_commit_answer_bijective_in_secret(self):
        """For fixed x1 and either bit, a1 -> y1 is a bijection, so a uniform
        secret gives a uniform first answer."""
        for x1 in (0x00, 0x1D, 0xFF):
            for d in (0, 1):
                image = {alice_commit_answer(S8.element(x1), S8.element(a), d).value
                         for a in range(256)}
                assert image == set(range(256))


class TestTimingCheck:
    def test_late_round_rejected(self):
        secrets, challenges = random_tapes(S8, 4, seed=16)
        t = run_honest_protocol(S8, secrets, challenges, 0, tau1_ns=100, tau2_ns=100)
        t.rounds[2].answer_received_at = t.rounds[2].challenge_issued_at + 101
        assert bob_verify(t).reason == REJECT_TIMING

    def test_at_deadline_accepted(self):
        secrets, challenges = random_tapes(S8, 4, seed=17)
        t = run_honest_protocol(S8, secrets, challenges, 0, tau1_ns=100, tau2_ns=100)
        for rec in t.rounds:
            rec.answer_received_at = rec.challenge_issued_at + 100
        assert bob_verify(t).accepted


class TestTape:
    def test_zero_challenge_rejected(self):
        with pytest.raises(ProtocolError):
            Tape("bob-challenges", S8, [1, 0, 2])

    def test_zero_secret_allowed(self):
        Tape("alice-secrets", S8, [0, 1, 2])

    def test_unknown_role(self):
        with pytest.raises(ProtocolError):
            Tape("carol-hints", S8, [1])

    def test_element_accessor_is_one_based(self):
        tape = Tape("alice-secrets", S8, [10, 20, 30])
        assert tape.element(2).value == 20


def test_station_of():
    assert [station_of(k) for k in range(1, 6)] == [1, 2, 1, 2, 1]
