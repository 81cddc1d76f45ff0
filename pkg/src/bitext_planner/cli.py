"""``bitext-planner`` command line: ingest -> plan -> diagnose/compare -> dro -> schedule.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULTS, load_config, validate
from .corpus import (
    filter_min_pairs,
    load_marginal_override,
    load_stats,
    stats_to_dict,
    symmetrize,
    to_joint,
)
from .diagnostics import compare, diagnose, histogram_csv
from .dro import (
    RecordedLosses,
    ball_from_plan,
    ibr_run,
    movers_to_dict,
    parse_loss_records,
    top_movers,
    trajectory_to_jsonl,
)
from .errors import ConvergenceError, InputError, PlannerError, VerificationError
from .schedule import generate, schedule_from_jsonl, schedule_to_jsonl, verify
from .synthetic import make_loss_model, power_law_corpus
from .transport import (
    SinkhornConfig,
    TransportPlan,
    load_plan,
    plan_to_dict,
    solve_m2m,
    solve_proposed,
    solve_temperature,
)

logger = logging.getLogger("bitext_planner")


def _write_json(path: Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _settings(args: argparse.Namespace, names: list[str], required: tuple[str, ...] = ()) -> dict:
    """Merge flags, config file and defaults (in that order of precedence)."""
    cfg = load_config(args.config)
    out = {}
    for name in names:
        flag = getattr(args, name, None)
        conf = getattr(cfg, name)
        if flag is not None and conf is not None and flag != conf:
            logger.warning("--%s=%s overrides config value %s", name.replace("_", "-"), flag, conf)
        value = flag if flag is not None else conf
        out[name] = DEFAULTS.get(name) if value is None else value
    for name in required:
        if out.get(name) is None:
            raise InputError(f"--{name.replace('_', '-')} is required (flag or config)")
    validate({k: v for k, v in out.items() if v is not None})
    return out


def _joint(stats_path: Path):
    stats = load_stats(stats_path)
    return to_joint(stats)


def _solve(s: dict) -> TransportPlan:
    joint = _joint(s["stats"])
    p = None
    if s.get("marginals") is not None:
        p = load_marginal_override(_read_text(s["marginals"]), joint.index)
    config = SinkhornConfig(s["tolerance"], s["max_iterations"])
    if s["method"] == "ent-ot":
        return solve_proposed(joint, s["temperature"], s["epsilon"], config, p)
    if s["method"] == "m2m":
        return solve_m2m(joint, s["temperature"], s["gamma"], config, p)
    return solve_temperature(joint, s["temperature"], p)


# ---------------------------------------------------------------- subcommands


def cmd_ingest(args) -> int:
    s = _settings(args, ["input", "output", "min_pairs", "filter_mode", "directed"], ("input", "output"))
    stats = load_stats(s["input"])
    raw_pairs, raw_langs = stats.num_pairs, stats.index.size
    if s["min_pairs"]:
        stats = filter_min_pairs(stats, s["min_pairs"], s["filter_mode"])
    if not s["directed"]:
        stats = symmetrize(stats)
    _write_json(s["output"], stats_to_dict(stats))
    print(
        f"ingest: L={stats.index.size} pairs={stats.num_pairs} total={stats.total} "
        f"(from L={raw_langs} pairs={raw_pairs}, min_pairs={s['min_pairs']}, "
        f"{stats.directedness}) -> {s['output']}"
    )
    return 0


PLAN_PARAMS = ["stats", "output", "method", "temperature", "epsilon", "gamma", "tolerance", "max_iterations", "marginals"]


def cmd_plan(args) -> int:
    s = _settings(args, PLAN_PARAMS, ("stats", "output"))
    try:
        plan = _solve(s)
    except ConvergenceError as exc:
        d = exc.diagnostic
        print(
            f"error: {exc} [iterations={d.get('iterations')}, violation={d.get('violation'):.3e}]",
            file=sys.stderr,
        )
        return exc.exit_code
    _write_json(s["output"], plan_to_dict(plan))
    print(
        f"plan: method={plan.method} L={plan.index.size} T={s['temperature']} "
        f"iterations={plan.iterations_used} violation={plan.marginal_violation:.3e} "
        f"objective={plan.objective_value:.6g} -> {s['output']}"
    )
    return 0


def cmd_diagnose(args) -> int:
    s = _settings(args, ["plan", "stats", "output", "histogram", "tau", "bins"], ("plan", "stats", "output"))
    plan = load_plan(s["plan"])
    report = diagnose(plan, _joint(s["stats"]), s["tau"], s["bins"])
    doc = report.to_dict()
    doc["plan_digest"] = plan.digest()
    _write_json(s["output"], doc)
    if s["histogram"] is not None:
        Path(s["histogram"]).write_text(histogram_csv(report.histogram), encoding="utf-8")
    print(
        f"diagnose: method={report.method} entropy={report.entropy:.4f} "
        f"support_fraction={report.support_fraction:.4f} wastage={report.wastage:.4g} "
        f"tau={report.tau:g} -> {s['output']}"
    )
    return 0


def cmd_compare(args) -> int:
    s = _settings(args, ["plan_a", "plan_b", "stats", "output", "tau"], ("plan_a", "plan_b", "stats", "output"))
    a, b = load_plan(s["plan_a"]), load_plan(s["plan_b"])
    report = compare(a, b, _joint(s["stats"]), s["tau"])
    doc = report.to_dict()
    doc.update(method_a=a.method, method_b=b.method)
    _write_json(s["output"], doc)
    print(
        f"compare: {a.method} - {b.method}: wastage_delta={report.wastage_delta:.4g} "
        f"support_fraction_delta={report.support_fraction_delta:.4f} tv={report.tv_distance:.4f} "
        f"-> {s['output']}"
    )
    return 0


DRO_PARAMS = [
    "plan", "output", "movers", "output_plan", "rho", "lam", "resamples", "rounds_between",
    "loss_file", "synthetic_model", "group_size", "adaptation", "support_tau", "top_k",
    "seed", "reanchor",
]


def cmd_dro(args) -> int:
    s = _settings(args, DRO_PARAMS, ("plan", "output", "rho"))
    if (s["loss_file"] is None) == (s["synthetic_model"] is None):
        raise InputError("give exactly one of --loss-file or --synthetic-model")
    plan = load_plan(s["plan"])
    ball = ball_from_plan(plan, s["rho"], s["support_tau"])
    if s["loss_file"] is not None:
        source = RecordedLosses(parse_loss_records(_read_text(s["loss_file"])), ball.pairs, s["lam"])
    else:
        source = make_loss_model(
            s["synthetic_model"], ball.pairs, ball.base, s["group_size"], s["seed"], s["adaptation"], s["lam"]
        )
    traj = ibr_run(ball, source, s["resamples"], s["rounds_between"], s["reanchor"])
    Path(s["output"]).write_text(trajectory_to_jsonl(traj), encoding="utf-8")
    if traj.rounds and s["movers"] is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            up, down = top_movers(traj, s["top_k"])
        _write_json(s["movers"], movers_to_dict(up, down))
    if traj.rounds and s["output_plan"] is not None:
        p = np.zeros_like(plan.p_star)
        pos = plan.index.position
        for (src, tgt), v in zip(ball.pairs, traj.final):
            p[pos(src), pos(tgt)] = v
        reweighted = dataclasses.replace(plan, p_star=p, method="dro", objective_value=traj.rounds[-1][1].objective, objective_kind="worst_case_loss")
        _write_json(s["output_plan"], plan_to_dict(reweighted))
    if traj.error:
        print(f"error: loss source failed, trajectory truncated: {traj.error}", file=sys.stderr)
        return 3
    last = traj.rounds[-1][1]
    print(
        f"dro: rho={s['rho']:g} rounds={len(traj.rounds)} pairs={len(ball.pairs)} "
        f"objective={last.objective:.6g} chi2={last.chi2_used:.4g} -> {s['output']}"
    )
    return 0


def cmd_schedule(args) -> int:
    s = _settings(args, ["plan", "output", "batches", "batch_size", "seed", "flip_prob"], ("plan", "output"))
    plan = load_plan(s["plan"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sched = generate(plan, s["batches"], s["batch_size"], s["seed"], s["flip_prob"])
    for w in caught:
        logger.warning("%s", w.message)
    Path(s["output"]).write_text(schedule_to_jsonl(sched), encoding="utf-8")
    print(
        f"schedule: entries={len(sched)} batches={sched.batches} batch_size={sched.batch_size} "
        f"seed={sched.seed} flip_prob={sched.flip_prob:g} -> {s['output']}"
    )
    return 0


def cmd_verify(args) -> int:
    s = _settings(args, ["schedule", "plan", "output", "significance"], ("schedule", "plan"))
    plan = load_plan(s["plan"])
    sched = schedule_from_jsonl(_read_text(s["schedule"]))
    report = verify(sched, plan, s["significance"])
    if s["output"] is not None:
        _write_json(s["output"], report)
    failed = [k for k, v in report["checks"].items() if not v["pass"]]
    if failed:
        print(f"verify: FAIL ({', '.join(failed)})")
        return VerificationError.exit_code
    print(f"verify: pass ({len(report['checks'])} checks)")
    return 0


def cmd_synth_corpus(args) -> int:
    stats = power_law_corpus(args.languages, args.density, seed=args.seed or 0)
    lines = [f"{s}\t{t}\t{n}" for (s, t), n in sorted(stats.counts.items())]
    Path(args.output).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"synth-corpus: L={stats.index.size} pairs={len(lines)} -> {args.output}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitext-planner", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"bitext-planner {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML/JSON RunConfig document")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "validate pair counts and write a stats artifact")
    p.add_argument("input", nargs="?", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--min-pairs", type=int)
    p.add_argument("--filter-mode", choices=["pair", "language"])
    p.add_argument("--directed", action="store_const", const=True, help="keep pair direction")

    p = add("plan", cmd_plan, "solve a sampling plan")
    p.add_argument("--stats", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--method", choices=["temperature", "m2m", "ent-ot"])
    p.add_argument("-T", "--temperature", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--marginals", type=Path, help="code<TAB>weight language marginal override")

    p = add("diagnose", cmd_diagnose, "sparsity/wastage report and log10 histogram")
    p.add_argument("--plan", type=Path)
    p.add_argument("--stats", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--histogram", type=Path, help="CSV output path")
    p.add_argument("--tau", type=float)
    p.add_argument("--bins", type=int)

    p = add("compare", cmd_compare, "compare two plans (A - B)")
    p.add_argument("--plan-a", type=Path)
    p.add_argument("--plan-b", type=Path)
    p.add_argument("--stats", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--tau", type=float)

    p = add("dro", cmd_dro, "chi-square-ball reweighting with iterated best response")
    p.add_argument("--plan", type=Path)
    p.add_argument("-o", "--output", type=Path, help="trajectory JSONL")
    p.add_argument("--movers", type=Path, help="top movers JSON")
    p.add_argument("--output-plan", type=Path, help="final distribution as a plan JSON")
    p.add_argument("--rho", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--resamples", type=int)
    p.add_argument("--rounds-between", type=int)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--loss-file", type=Path)
    src.add_argument("--synthetic-model", choices=["trivial-pair", "noisy-pair", "constant"])
    p.add_argument("--group-size", type=int)
    p.add_argument("--adaptation", type=float)
    p.add_argument("--support-tau", type=float)
    p.add_argument("--top-k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--reanchor", action="store_const", const=True)

    p = add("schedule", cmd_schedule, "generate a seeded batch schedule")
    p.add_argument("--plan", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--batches", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--flip-prob", type=float)

    p = add("verify", cmd_verify, "check a schedule against its plan")
    p.add_argument("--schedule", type=Path)
    p.add_argument("--plan", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--significance", type=float)

    p = add("synth-corpus", cmd_synth_corpus, "write a synthetic power-law pair-count TSV")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--languages", type=int, default=100)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except PlannerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
