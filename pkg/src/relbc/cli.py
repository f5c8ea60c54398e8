"""Command-line entry point.

Subcommands:

    plan      evaluate a config: human table + machine-readable plan file
    tape      generate a pre-shared randomness tape for a plan
    simulate  run the discrete-event simulation, write transcript + audit
    run       run one live agent (A1/A2/B1/B2) over TCP
    verify    stream-verify a transcript file
    bench     field and verification throughput, with a case-1 projection

Exit codes are stable for scripting: 0 success/accept, 1 usage or config
error, 2 protocol abort, 3 verification reject. Every command writes a run
manifest (JSON) recording the resolved inputs, seeds, plan hash, and output
paths; re-running the recorded argv reproduces the outputs bit-for-bit
(live `run` timestamps excepted).
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import time
from dataclasses import asdict
from importlib import resources
from pathlib import Path

from . import __version__
from .field import FieldSpec
from .planner import (
    InfeasibleGeometryError,
    PlannerError,
    ProtocolPlan,
    SpacetimeConfig,
    format_plan_table,
    load_config,
    load_plan,
    parse_config,
    parse_duration,
    resource_plan,
    save_plan,
)
from .protocol import honest_round_stream
from .simnet import AdversaryStrategy, STRATEGIES, no_signaling_audit, run_simulation
from .storage import (
    PlanHashMismatchError,
    StorageError,
    generate_tape,
    verify_file,
    write_transcript,
)
from .transport import EXIT_ABORT, EXIT_ACCEPT, EXIT_REJECT, EXIT_USAGE, SessionConfig, run_agent

CASE1_ROUNDS = 5_068_195_604  # case-1 / 24 h round count, for bench projection


def _builtin_config(name: str) -> str | None:
    ref = resources.files("relbc").joinpath(f"configs/{name}.cfg")
    try:
        return ref.read_text()
    except (FileNotFoundError, OSError):
        return None


def _resolve_config(arg: str) -> SpacetimeConfig:
    """Accept a path or a shipped config name (case1, case2)."""
    p = Path(arg)
    if p.exists():
        return load_config(p)
    text = _builtin_config(arg)
    if text is not None:
        return parse_config(text)
    raise PlannerError(f"config {arg!r}: no such file or built-in config")


def _write_manifest(args: argparse.Namespace, outputs: list[str],
                    plan_hash: str | None = None, seeds: list[int] | None = None,
                    resolved: dict | None = None) -> None:
    manifest = {
        "tool_version": __version__,
        "subcommand": args.command,
        "argv": sys.argv[1:],
        "resolved": resolved or {},
        "plan_hash": plan_hash,
        "seeds": seeds or [],
        "outputs": outputs,
    }
    path = getattr(args, "manifest", None)
    if path is None:
        base = Path(outputs[0]) if outputs else Path(f"relbc-{args.command}")
        path = base.with_suffix(base.suffix + ".manifest.json")
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _plan_for_args(args: argparse.Namespace) -> ProtocolPlan:
    if getattr(args, "plan", None):
        return load_plan(args.plan)
    cfg = _resolve_config(args.config)
    overrides = {}
    if getattr(args, "duration", None):
        overrides["T"] = parse_duration(args.duration, year_days=args.year_days)
    if getattr(args, "n", None):
        overrides["n"] = args.n
    if getattr(args, "rounds", None):
        # pick T so the planner lands exactly on the requested (even) count
        from .planner import compute_tq

        overrides["T"] = (args.rounds + 1.5) * compute_tq(cfg) / 2.0
    if overrides:
        cfg = SpacetimeConfig(**{**cfg.to_dict(), **overrides})
    return resource_plan(cfg)


def cmd_plan(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args.config)
    if args.duration:
        cfg = SpacetimeConfig(**{**cfg.to_dict(),
                                 "T": parse_duration(args.duration, year_days=args.year_days)})
    try:
        plan = resource_plan(cfg)
    except InfeasibleGeometryError as exc:
        print(f"infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    label = cfg.name or Path(args.config).stem
    print(format_plan_table([(label, plan)]))
    print(f"\nt_Q = {plan.t_q * 1e6:.4f} us   t_L = {plan.t_l * 1e6:.4f} us   "
          f"m = {plan.m}   eps_old = {plan.epsilon_exponential:.3g}")
    print(f"min separation for these deadlines: {plan.min_separation_m / 1000:.3f} km")
    print(f"drift budget (t_m/T): {plan.drift_budget:.3g}")
    outputs = []
    if args.out:
        save_plan(plan, args.out)
        outputs.append(str(args.out))
        print(f"plan written to {args.out}")
    _write_manifest(args, outputs, plan.plan_hash, resolved=cfg.to_dict())
    return 0


def cmd_tape(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan)
    count = generate_tape(plan, args.role, args.out, seed=args.seed)
    print(f"{args.role}: {count} elements ({count * plan.element_bytes} bytes) -> {args.out}")
    _write_manifest(args, [str(args.out)], plan.plan_hash,
                    seeds=[args.seed] if args.seed is not None else [])
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    plan = _plan_for_args(args)
    strategy = AdversaryStrategy(kind=args.strategy, target_round=args.target_round,
                                 margin_ns=args.margin_ns)
    transcript, report = run_simulation(plan, strategy=strategy, seed=args.seed,
                                        bit=args.bit)
    audit = no_signaling_audit(transcript, plan)
    out = Path(args.out)
    write_transcript(transcript, out)
    audit_path = out.with_suffix(".audit.json")
    audit_path.write_text(json.dumps({
        "ok": audit.ok,
        "pairs_checked": audit.pairs_checked,
        "worst_slack_ns": audit.worst_slack_ns,
        "violations": audit.violations,
        "late_answer_rounds": audit.late_answer_rounds,
        "report": asdict(report),
    }, indent=2))
    print(f"strategy={args.strategy} seed={args.seed} bit={args.bit} m={plan.m}")
    if report.aborted:
        print(f"ABORT at round {report.abort_round}: {report.abort_reason}")
    else:
        print(f"complete: {report.rounds_recorded} rounds; "
              f"audit {'ok' if audit.ok else 'VIOLATIONS'}; "
              f"worst slack {audit.worst_slack_ns} ns")
    print(f"transcript -> {out}\naudit      -> {audit_path}")
    _write_manifest(args, [str(out), str(audit_path)], plan.plan_hash, seeds=[args.seed])
    return EXIT_ABORT if report.aborted else EXIT_ACCEPT


def cmd_verify(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan) if args.plan else None
    try:
        verdict, stats = verify_file(args.transcript, plan=plan)
    except PlanHashMismatchError as exc:
        print(f"plan mismatch: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rate = stats.rounds_per_second
    print(f"rounds: {stats.rounds}   time: {stats.seconds:.3f} s   "
          f"throughput: {rate:,.0f} rounds/s")
    if verdict.accepted:
        print(f"ACCEPT bit={verdict.bit}")
        code = EXIT_ACCEPT
    else:
        print(f"REJECT: {verdict.reason}")
        code = EXIT_REJECT
    _write_manifest(args, [], None)
    return code


def cmd_run(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan)
    peers = {}
    for spec_str in args.peer or []:
        role, _, addr = spec_str.partition("=")
        host, _, port = addr.rpartition(":")
        peers[role] = (host, int(port))
    listen = None
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        listen = (host, int(port))
    cfg = SessionConfig(
        role=args.role,
        plan=plan,
        scale_factor=args.scale,
        bit=args.bit,
        secrets_path=args.secrets,
        challenges_path=args.challenges,
        listen=listen,
        peers=peers,
    )
    result = run_agent(cfg)
    if result.abort is not None:
        where = f" at round {result.abort.round_index}" if result.abort.round_index else ""
        print(f"{args.role}: ABORT ({result.abort.reason}){where} {result.abort.detail}")
    elif result.verdict is not None:
        agree = "peers agree" if result.peer_agrees else "PEER DISAGREES"
        print(f"{args.role}: {result.verdict!r} ({agree})")
    else:
        print(f"{args.role}: completed")
    outputs = []
    if args.out and result.transcript is not None:
        write_transcript(result.transcript, args.out)
        outputs.append(str(args.out))
        print(f"transcript -> {args.out}")
    _write_manifest(args, outputs, plan.plan_hash)
    return result.exit_code


def cmd_bench(args: argparse.Namespace) -> int:
    spec = FieldSpec(128)
    rng = random.Random(args.seed)
    pairs = [(spec.random_int(rng), spec.random_int(rng)) for _ in range(args.mul_ops)]
    t0 = time.perf_counter()
    for a, b in pairs:
        spec.mul(a, b)
    mul_dt = time.perf_counter() - t0
    mul_rate = args.mul_ops / mul_dt

    m = args.rounds
    secrets = [spec.random_int(rng) for _ in range(m)]
    challenges = [spec.random_int(rng, nonzero=True) for _ in range(m)]
    t0 = time.perf_counter()
    records = list(honest_round_stream(spec, secrets, challenges, 1, m))
    gen_dt = time.perf_counter() - t0
    from .protocol import _recover_ints

    xs = [r.challenge for r in records]
    ys = [r.answer for r in records]
    t0 = time.perf_counter()
    a1 = _recover_ints(spec, xs, ys, secrets[-1], full_chain=False)[0]
    ver_dt = time.perf_counter() - t0
    assert a1 == secrets[0]
    ver_rate = m / ver_dt
    case1_hours = CASE1_ROUNDS / ver_rate / 3600.0

    rows = {
        "mul_ops_per_s": mul_rate,
        "mul_us_per_op": 1e6 / mul_rate,
        "answer_gen_rounds_per_s": m / gen_dt,
        "verify_rounds_per_s": ver_rate,
        "case1_rounds": CASE1_ROUNDS,
        "case1_verify_hours_projected": case1_hours,
    }
    print(f"{'GF(2^128) multiply':34s} {mul_rate:12,.0f} ops/s   "
          f"({1e6 / mul_rate:.2f} us/op)")
    print(f"{'honest answer generation':34s} {m / gen_dt:12,.0f} rounds/s")
    print(f"{'backward chain verification':34s} {ver_rate:12,.0f} rounds/s")
    print(f"{'projected case-1 verification':34s} {case1_hours:12,.1f} hours "
          f"({CASE1_ROUNDS:.3g} rounds)")
    outputs = []
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2))
        outputs.append(str(args.json))
    _write_manifest(args, outputs, None, seeds=[args.seed])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="relbc",
        description="Multi-round relativistic bit commitment toolkit",
    )
    ap.add_argument("--version", action="version", version=f"relbc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="evaluate a spacetime config")
    p.add_argument("config", help="config file path or built-in name (case1, case2)")
    p.add_argument("--duration", help="override commitment duration (e.g. 24h, 1y, 600)")
    p.add_argument("--year-days", type=float, default=365.0,
                   help="days per year for the 'y' duration unit (365 or 365.25)")
    p.add_argument("--out", help="write the machine-readable plan JSON here")
    p.add_argument("--manifest", help="run manifest path")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("tape", help="generate a pre-shared randomness tape")
    p.add_argument("--plan", required=True, help="plan JSON from `relbc plan --out`")
    p.add_argument("--role", required=True, choices=["alice-secrets", "bob-challenges"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="seeded (reproducible); omit for system entropy")
    p.add_argument("--manifest", help="run manifest path")
    p.set_defaults(func=cmd_tape)

    p = sub.add_parser("simulate", help="run the discrete-event simulation")
    p.add_argument("--plan", help="plan JSON (otherwise --config)")
    p.add_argument("--config", default="case1", help="config path or built-in name")
    p.add_argument("--rounds", type=int, help="override the round count m")
    p.add_argument("--n", type=int, help="override the string width (e.g. 8)")
    p.add_argument("--duration", help="override commitment duration")
    p.add_argument("--year-days", type=float, default=365.0)
    p.add_argument("--strategy", default="honest", choices=list(STRATEGIES))
    p.add_argument("--target-round", type=int, default=1,
                   help="round attacked by late-decision")
    p.add_argument("--margin-ns", type=int, default=1,
                   help="late-decision arrival margin before the deadline (ns)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bit", type=int, default=0, choices=[0, 1])
    p.add_argument("--out", default="transcript.rbcx")
    p.add_argument("--manifest", help="run manifest path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run one live agent")
    p.add_argument("--role", required=True, choices=["A1", "A2", "B1", "B2"])
    p.add_argument("--plan", required=True)
    p.add_argument("--secrets", help="secrets tape (committer roles)")
    p.add_argument("--challenges", help="challenge tape (verifier roles)")
    p.add_argument("--listen", help="host:port to listen on (verifier roles)")
    p.add_argument("--peer", action="append", metavar="ROLE=HOST:PORT",
                   help="peer address, repeatable")
    p.add_argument("--scale", type=int, default=1000,
                   help="multiply all plan times by this factor")
    p.add_argument("--bit", type=int, default=0, choices=[0, 1])
    p.add_argument("--out", help="write the assembled transcript here (verifier roles)")
    p.add_argument("--manifest", help="run manifest path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="stream-verify a transcript file")
    p.add_argument("transcript")
    p.add_argument("--plan", help="plan JSON to pin the plan hash")
    p.add_argument("--manifest", help="run manifest path")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="field/verification throughput")
    p.add_argument("--mul-ops", type=int, default=20000)
    p.add_argument("--rounds", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write machine-readable results here")
    p.add_argument("--manifest", help="run manifest path")
    p.set_defaults(func=cmd_bench)

    return ap


def main(argv: list[str] | None = None) -> int:
    from .transport import TransportError

    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (PlannerError, StorageError, TransportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
