"""Multi-round relativistic bit commitment.

Subpackages by concern:

- :mod:`relbc.field` — GF(2^n) arithmetic (XOR add, carry-less multiply,
  inversion) in canonical little-endian bit order.
- :mod:`relbc.protocol` — the four agent state machines, answer operations,
  transcripts, and backward-chain verification.
- :mod:`relbc.planner` — closed-form schedule, security-bound, and resource
  planning from a spacetime configuration.
- :mod:`relbc.simnet` — deterministic discrete-event simulation with
  light-speed delivery, clock models, adversaries, and a no-signaling audit.
- :mod:`relbc.transport` — live mode: framed byte-stream agents with real
  (monotonic) clocks and deadline enforcement.
- :mod:`relbc.storage` — tape and transcript files, streaming generation and
  constant-memory backward verification.
- :mod:`relbc.cli` — the `relbc` command.
"""

from .field import (
    FieldElement,
    FieldError,
    FieldMismatchError,
    FieldSpec,
    NonInvertibleError,
    add,
    batch_inverse,
    gf2_8,
    gf2_128,
    inv,
    mul,
    random_element,
)
from .planner import (
    InfeasibleGeometryError,
    PlannerError,
    ProtocolPlan,
    SpacetimeConfig,
    compute_round_count,
    compute_tq,
    drift_budget,
    epsilon_exponential,
    epsilon_linear,
    min_separation,
    resource_plan,
)
from .protocol import (
    AliceAgent,
    BobAgent,
    ProtocolError,
    RevealMessage,
    RoundRecord,
    SequencingError,
    Tape,
    Transcript,
    UnverifiableTranscriptError,
    Verdict,
    alice_commit_answer,
    alice_reveal,
    alice_sustain_answer,
    bob_verify,
    recover_chain,
    run_honest_protocol,
)

__version__ = "0.1.0"
