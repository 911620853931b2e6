"""``guirl`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path

from . import __version__
from .errors import GuiRLError

log = logging.getLogger("guirl")


def _global_flags(p: argparse.ArgumentParser, top: bool) -> None:
    # accepted before or after the subcommand; SUPPRESS keeps the sub-parser
    # from overwriting a value given at the top level
    default = None if top else argparse.SUPPRESS
    p.add_argument("--jobs", type=int, default=default, help="worker processes for rollouts (default: logical cores)")
    p.add_argument("--seed", type=int, default=default, help="base random seed")
    p.add_argument("--quiet", action="store_true", default=False if top else argparse.SUPPRESS, help="only print results and errors")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guirl", description="GUI-agent RL toolkit: rewards, GRPO, CSRS data, benchmarks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(p, top=True)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("score-static", help="score single-step predictions against annotations")
    s.add_argument("--annotations", help="annotation JSON array (default: bundled 40-step fixture)")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--predictions", help="predictions JSONL {step_id, action}")
    g.add_argument("--gt-as-predictions", action="store_true", help="score the ground truth against itself")
    s.add_argument("--judge", choices=("mock", "remote"), help="judge for text-valued steps")
    s.add_argument("--macro", action="store_true", help="macro instead of micro AVG")
    s.add_argument("--csv", help="also write the report as CSV")

    s = sub.add_parser("reward", help="per-step rewards of trajectories against ground-truth actions")
    s.add_argument("--trajectories", required=True, help="trajectory JSONL")
    s.add_argument("--gt", required=True, help="JSONL with one line per trajectory: {actions: [...]} or a task with gt_plan")
    s.add_argument("--config", help="run config JSON (reward section)")
    s.add_argument("--judge", choices=("mock", "remote"), default="mock")

    s = sub.add_parser("train-toy", help="closed-loop GRPO training on the synthetic environment")
    s.add_argument("--config", help="run config JSON")
    s.add_argument("--rounds", type=int, default=200)
    s.add_argument("--csv", default="diagnostics.csv", help="diagnostics CSV (appended)")
    s.add_argument("--no-hindsight", action="store_true", help="disable hinted re-rolls of failed groups")
    s.add_argument("--summary", help="write the run summary JSON here")

    s = sub.add_parser("csrs-extract", help="calibrate trajectories, extract training records, route them to stages")
    s.add_argument("--trajectories", required=True, help="trajectory JSONL")
    s.add_argument("--tasks", help="task JSONL; enables verifier calibration (matched by instruction)")
    s.add_argument("--out", default="csrs_out", help="output directory")
    s.add_argument("--config", help="run config JSON (csrs section)")

    s = sub.add_parser("gen-tasks", help="generate verified tasks as JSONL")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--difficulty", choices=("atomic", "composite", "conditional"), default="atomic")
    s.add_argument("--config", help="run config JSON (env section)")

    s = sub.add_parser("diagnose", help="summary statistics of a diagnostics CSV")
    s.add_argument("--csv", required=True)
    s.add_argument("--json", action="store_true", help="print JSON instead of a table")

    for sp in sub.choices.values():
        _global_flags(sp, top=False)
    return p


# ---------------------------------------------------------------- subcommands

def _judge(kind: str | None):
    if kind is None:
        return None
    from .judge import make_judge

    return make_judge(kind)


def cmd_score_static(args) -> int:
    from .static_bench import load_annotations, load_predictions, score_benchmark

    anns = load_annotations(args.annotations)
    preds = {a.step_id: a.ground_truth() for a in anns} if args.gt_as_predictions else load_predictions(args.predictions)
    report = score_benchmark(preds, anns, _judge(args.judge), macro=args.macro)
    print(report.to_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return 0


def _gt_actions(line: dict):
    from .actions import Action, parse_action

    acts = line.get("gt_plan", line.get("actions"))
    if not isinstance(acts, list):
        raise GuiRLError("each ground-truth line needs an 'actions' or 'gt_plan' list")
    return [a if isinstance(a, Action) else parse_action(a) for a in acts]


def cmd_reward(args) -> int:
    from .actions import Action, iter_trajectories
    from .config import load_config
    from .rewards import joint_reward

    cfg = load_config(args.config)
    judge = _judge(args.judge)
    with open(args.gt, encoding="utf-8") as fh:
        gts = [_gt_actions(json.loads(l)) for l in fh if l.strip()]
    for i, traj in enumerate(iter_trajectories(args.trajectories)):
        if i >= len(gts):
            raise GuiRLError(f"trajectory {i} has no ground-truth line")
        gt = gts[i]
        steps = []
        for k, step in enumerate(traj.steps):
            if k < len(gt):
                b = joint_reward(step.action, gt[k], cfg.reward, judge)
                steps.append({"type": b.type_score, "value": b.value_score, "judge": b.judge_score, "total": b.total})
            else:
                steps.append({"type": 0, "value": 0.0, "judge": None, "total": 0.0})
        mean = sum(s["total"] for s in steps) / len(steps)
        print(json.dumps({"index": i, "task": traj.task, "steps": steps, "mean": mean}, ensure_ascii=False))
    return 0


def cmd_train_toy(args) -> int:
    from .config import load_config
    from .loop import train_toy

    cfg = load_config(args.config)
    if args.rounds < 1:
        raise GuiRLError("--rounds must be positive")
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    summaries = []
    for seed in seeds:
        csv_path = Path(args.csv)
        if len(seeds) > 1:
            csv_path = csv_path.with_name(f"{csv_path.stem}-seed{seed}{csv_path.suffix}")
        log.info("seed %d: %d rounds, diagnostics -> %s", seed, args.rounds, csv_path)
        res = train_toy(cfg, seed, args.rounds, csv_path, jobs=jobs, hindsight=False if args.no_hindsight else None)
        summ = res.summary()
        summaries.append(summ)
        log.info("seed %d: held-out success %.2f -> %.2f", seed, res.initial_success, res.final_success)
    out = summaries[0] if len(summaries) == 1 else summaries
    text = json.dumps(out, indent=1)
    if args.summary:
        Path(args.summary).write_text(text + "\n", encoding="utf-8")
    if not args.quiet:
        print(text)
    return 0


def cmd_csrs_extract(args) -> int:
    from .actions import iter_trajectories
    from .config import load_config
    from .csrs import (
        PassRateLabel, Sample, TemplateExtractor, calibrate, complexity_tag, extract,
        partition_refinement, route, trajectory_id, write_records, write_stage_plan,
    )
    from .sim_env import EnvVerifier, SimEnv, AppGraph, load_tasks

    cfg = load_config(args.config)
    verifiers, difficulty = {}, {}
    if args.tasks:
        env = SimEnv(AppGraph.load(cfg.env.fixture), cfg.env.step_cap)
        for t in load_tasks(args.tasks):
            verifiers[t.instruction] = EnvVerifier(env, t)
            difficulty[t.instruction] = t.difficulty
    ext = TemplateExtractor()
    records = []
    tallies: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for traj in iter_trajectories(args.trajectories):
        label = calibrate(traj, verifiers.get(traj.task))
        records.extend(extract(traj, label, ext))
        tallies[traj.task][0] += 1
        tallies[traj.task][1] += label.verdict.value == "success"
    samples = [
        Sample(task, PassRateLabel(task, n, k), complexity_tag(difficulty.get(task, "atomic")))
        for task, (n, k) in tallies.items()
    ]
    plan = route(partition_refinement(samples, cfg.csrs.low, cfg.csrs.high), records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = write_records(out / "records.jsonl", records)
    write_stage_plan(plan, out)
    if not args.quiet:
        print(json.dumps({"records": n, "tasks": len(samples), "stages": plan.counts()}))
    return 0


def cmd_gen_tasks(args) -> int:
    from .config import load_config
    from .sim_env import AppGraph, SimEnv

    if args.n < 1:
        raise GuiRLError("--n must be positive")
    cfg = load_config(args.config)
    env = SimEnv(AppGraph.load(cfg.env.fixture), cfg.env.step_cap)
    base = args.seed if args.seed is not None else 0
    for i in range(args.n):
        print(json.dumps(env.generate_task(base + i, args.difficulty).to_dict(), ensure_ascii=False))
    return 0


def cmd_diagnose(args) -> int:
    from .diagnostics import format_summary, read_csv, summarize

    records = read_csv(args.csv)
    summ = summarize(records)
    if args.json:
        print(json.dumps({"rows": len(records), "metrics": summ}, indent=1))
    else:
        print(format_summary(summ, len(records)))
    return 0


COMMANDS = {
    "score-static": cmd_score_static,
    "reward": cmd_reward,
    "train-toy": cmd_train_toy,
    "csrs-extract": cmd_csrs_extract,
    "gen-tasks": cmd_gen_tasks,
    "diagnose": cmd_diagnose,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except GuiRLError as e:
        print(f"error[{getattr(e, 'origin', 'guirl')}]: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error[io]: {e}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as e:
        print(f"error[io]: invalid JSON: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
