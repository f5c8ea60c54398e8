"""Shared test fixtures: independent oracles and small plan builders."""

from __future__ import annotations

import random

from relbc.field import FieldSpec
from relbc.planner import SPEED_OF_LIGHT, SpacetimeConfig, compute_tq, resource_plan
from relbc.protocol import ROLE_ALICE_SECRETS, ROLE_BOB_CHALLENGES, Tape


def schoolbook_mul(a: int, b: int, n: int, poly: int) -> int:
    """Naive shift-and-reduce multiplication, the oracle for the fast path.

    Deliberately the dumbest correct implementation: accumulate partial
    products, then long-divide by the full reduction polynomial.
    """
    p = 0
    for i in range(n):
        if (b >> i) & 1:
            p ^= a << i
    full = poly | (1 << n)
    for i in range(2 * n - 2, n - 1, -1):
        if (p >> i) & 1:
            p ^= full << (i - n)
    return p


def small_plan(m_target: int, n: int = 8, tau: float = 3e-6, t_m: float = 3.3e-6,
               c: float = SPEED_OF_LIGHT, L: float = 7000.0):
    """A feasible plan with exactly `m_target` rounds (even) and
    tau_i = 2*l_i/c, so the schedule interval equals the geometric one."""
    l = c * tau / 2.0
    cfg = SpacetimeConfig(L=L, l1=l, l2=l, tau1=tau, tau2=tau, t_m=t_m,
                          T=1.0, n=n, c=c)
    tq = compute_tq(cfg)
    cfg = SpacetimeConfig(L=L, l1=l, l2=l, tau1=tau, tau2=tau, t_m=t_m,
                          T=(m_target + 1.5) * tq / 2.0, n=n, c=c)
    plan = resource_plan(cfg)
    assert plan.m == m_target, (plan.m, m_target)
    return plan


def random_tapes(spec: FieldSpec, m: int, seed: int) -> tuple[Tape, Tape]:
    rng = random.Random(seed)
    secrets = [spec.random_int(rng) for _ in range(m)]
    challenges = [spec.random_int(rng, nonzero=True) for _ in range(m)]
    return (Tape(ROLE_ALICE_SECRETS, spec, secrets),
            Tape(ROLE_BOB_CHALLENGES, spec, challenges))


def plan_grid(count: int = 20, n: int = 8, seed: int = 99):
    """Feasible plans spanning metropolitan to intercontinental scales."""
    plans = []
    rng = random.Random(seed)
    while len(plans) < count:
        tau = rng.choice([1e-6, 3e-6, 10e-6, 1e-3, 20e-3])
        t_m = tau * rng.choice([0.3, 1.0, 2.0])
        l = SPEED_OF_LIGHT * tau / 2
        L = (2 * l + SPEED_OF_LIGHT * t_m) * rng.uniform(1.7, 40.0)
        m = rng.choice([6, 8, 10])
        try:
            cfg = SpacetimeConfig(L=L, l1=l, l2=l, tau1=tau, tau2=tau, t_m=t_m,
                                  T=1.0, n=n)
            tq = compute_tq(cfg)
            cfg = SpacetimeConfig(L=L, l1=l, l2=l, tau1=tau, tau2=tau, t_m=t_m,
                                  T=(m + 1.5) * tq / 2.0, n=n)
            plans.append(resource_plan(cfg))
        except Exception:
            continue
    return plans
