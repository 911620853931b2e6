"""Closed-loop toy training: generate, roll out, calibrate, extract,
re-roll failed groups with hints, update, and log diagnostics.

Everything random is derived from the run seed and the round index, so a
run is reproducible regardless of how many worker processes collect the
rollouts.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import diagnostics as diag
from .actions import Outcome, Trajectory, serialize_action
from .agent import ToyAgent
from .config import RunConfig
from .csrs import (
    Category,
    PassRateLabel,
    Sample,
    TemplateExtractor,
    calibrate,
    complexity_tag,
    extract,
    partition_refinement,
    route,
)
from .grpo import RolloutGroup, ToyPolicy, grpo_update, hindsight_pass
from .judge import JudgeRequest, MockJudge
from .sim_env import AppGraph, EnvVerifier, SimEnv, TaskSpec, hint_augment

log = logging.getLogger(__name__)

EVAL_SEED_BASE = 1_000_000_000
TRAIN_SEED_RANGE = EVAL_SEED_BASE  # training task seeds stay below the held-out ones


@dataclass
class HindsightEvent:
    round: int
    task_id: str
    before: float
    after: float


@dataclass
class TrainResult:
    seed: int
    rounds: int
    initial_success: float
    final_success: float
    records: list[diag.DiagRecord]
    hindsight: list[HindsightEvent] = field(default_factory=list)
    stage_counts: dict[str, int] = field(default_factory=dict)
    category_counts: dict[str, int] = field(default_factory=dict)
    success_curve: list[tuple[int, float]] = field(default_factory=list)

    @property
    def mean_entropy(self) -> float:
        return float(np.mean([r.entropy for r in self.records])) if self.records else float("nan")

    @property
    def hindsight_gain_rate(self) -> float:
        if not self.hindsight:
            return float("nan")
        return sum(e.after > e.before for e in self.hindsight) / len(self.hindsight)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "rounds": self.rounds,
            "initial_success": self.initial_success,
            "final_success": self.final_success,
            "mean_entropy": self.mean_entropy,
            "hindsight_events": len(self.hindsight),
            "hindsight_gain_rate": self.hindsight_gain_rate,
            "stage_counts": self.stage_counts,
            "category_counts": self.category_counts,
        }


def eval_tasks(env: SimEnv, n: int, difficulty: str) -> list[TaskSpec]:
    """Held-out tasks: seeds disjoint from every training round."""
    return [env.generate_task(EVAL_SEED_BASE + i, difficulty) for i in range(n)]


def success_rate(env: SimEnv, agent: ToyAgent, tasks: Sequence[TaskSpec], max_steps: int) -> float:
    greedy = ToyAgent(agent.policy, agent.graph, agent.hint_follow_prob, greedy=True)
    wins = sum(env.rollout(greedy, t, t.seed, max_steps).succeeded for t in tasks)
    return wins / len(tasks)


# ---------------------------------------------------------------- rollout workers

_worker_env: SimEnv | None = None


def _init_worker(graph_data: dict, step_cap: int) -> None:
    global _worker_env
    _worker_env = SimEnv(AppGraph(graph_data), step_cap)


def _rollout_job(args) -> list[Trajectory]:
    policy, hint_follow_prob, task, seeds, max_steps = args
    env = _worker_env
    agent = ToyAgent(policy, env.graph, hint_follow_prob)
    return [env.rollout(agent, task, int(s), max_steps) for s in seeds]


class _Collector:
    """Runs rollout jobs serially or on a process pool."""

    def __init__(self, env: SimEnv, jobs: int):
        self.env = env
        self.pool = None
        if jobs > 1:
            self.pool = ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(env.graph.data, env.step_cap))

    def run(self, policy: ToyPolicy, hint_follow_prob: float, jobs: list[tuple[TaskSpec, Sequence[int]]], max_steps: int):
        if self.pool is None:
            agent = ToyAgent(policy, self.env.graph, hint_follow_prob)
            return [[self.env.rollout(agent, t, int(s), max_steps) for s in seeds] for t, seeds in jobs]
        args = [(policy, hint_follow_prob, t, seeds, max_steps) for t, seeds in jobs]
        return list(self.pool.map(_rollout_job, args))

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()


# ---------------------------------------------------------------- training

def _reward_fn(cfg: RunConfig) -> Callable[[Trajectory], float]:
    w = cfg.reward.judge_weight
    judge = MockJudge() if w > 0 else None

    def reward(traj: Trajectory) -> float:
        r = 1.0 if traj.outcome is Outcome.SUCCESS else 0.0
        if judge is None:
            return r
        ctx = tuple(serialize_action(s.action) for s in traj.steps)
        q = judge.score(JudgeRequest("trajectory_quality", ctx[-1], "", ctx)).score
        return (1 - w) * r + w * q

    return reward


def _diag_record(step: int, entropy: float, stats) -> diag.DiagRecord:
    batch = stats.batch
    old = batch.old_logp
    new = stats.last_logp
    delta = new - old
    ratios = np.exp(delta)
    return diag.DiagRecord(
        step=step,
        rollout_log_ppl=diag.rollout_log_ppl(old),
        ppl_ratio=diag.ppl_ratio(new, old),
        k3_kl=diag.k3_kl(delta),
        chi2_token=diag.chi2(ratios, "token"),
        chi2_seq=diag.chi2(ratios, "sequence", diag.seq_bounds_from_ids(batch.seq)),
        entropy=entropy,
        clip_fraction=float(np.mean(stats.clip_fraction)),
    )


def train_toy(
    cfg: RunConfig,
    seed: int,
    rounds: int,
    csv_path: str | Path | None = None,
    jobs: int = 1,
    graph: AppGraph | None = None,
    eval_every: int = 0,
    hindsight: bool | None = None,
) -> TrainResult:
    """Run ``rounds`` rounds of the closed loop; one diagnostics row per round.

    ``hindsight`` overrides ``cfg.train.hindsight`` when given.
    """
    tc = cfg.train
    gc = cfg.grpo
    use_hints = tc.hindsight if hindsight is None else hindsight
    if graph is None:
        graph = AppGraph.load(cfg.env.fixture)
    env = SimEnv(graph, cfg.env.step_cap)
    agent = ToyAgent.fresh(graph, seed, tc.init_scale, hint_follow_prob=tc.hint_follow_prob)
    policy = agent.policy
    encode = agent.encode_step
    reward_fn = _reward_fn(cfg)
    extractor = TemplateExtractor()
    held_out = eval_tasks(env, tc.eval_tasks, tc.difficulty)
    order = {"simple": 0, "functional": 1, "intent": 2}

    result = TrainResult(seed, rounds, success_rate(env, agent, held_out, tc.max_steps), float("nan"), [])
    result.success_curve.append((0, result.initial_success))
    stage_counts = {"midtrain": 0, "coldstart": 0, "rlvr": 0}
    cat_counts = {c.name: 0 for c in Category}
    collector = _Collector(env, jobs)
    try:
        for rnd in range(rounds):
            rng = np.random.default_rng([seed, rnd])
            task_seeds = rng.integers(0, TRAIN_SEED_RANGE, size=tc.tasks_per_round)
            tasks = [env.generate_task(int(s), tc.difficulty) for s in task_seeds]
            tasks.sort(key=lambda t: order[complexity_tag(t.difficulty)])
            roll_seeds = rng.integers(0, 2**63 - 1, size=(len(tasks), 2, gc.group_size))

            trajs = collector.run(policy, tc.hint_follow_prob, [(t, roll_seeds[j, 0]) for j, t in enumerate(tasks)], tc.max_steps)
            groups, samples, records = [], [], []
            for task, ts in zip(tasks, trajs):
                verifier = EnvVerifier(env, task, tc.max_steps)
                labeled = []
                for t in ts:
                    label = calibrate(t, verifier)
                    labeled.append(t.with_outcome(label.verdict))
                    records.extend(extract(t, label, extractor))
                n_pass = sum(t.succeeded for t in labeled)
                samples.append(Sample(task.task_id, PassRateLabel(task.task_id, len(labeled), n_pass), complexity_tag(task.difficulty)))
                groups.append(RolloutGroup(task.task_id, tuple(labeled), tuple(reward_fn(t) for t in labeled)))

            if use_hints:
                failed = [j for j, g in enumerate(groups) if all(r == 0 for r in g.rewards)]
                if failed:
                    hinted_runs = collector.run(
                        policy, tc.hint_follow_prob,
                        [(hint_augment(tasks[j]), roll_seeds[j, 1]) for j in failed], tc.max_steps,
                    )
                    for j, ts in zip(failed, hinted_runs):
                        for t in ts:
                            t.meta["hinted"] = True
                        new = RolloutGroup(groups[j].task_id, tuple(ts), tuple(reward_fn(t) for t in ts), None, True)
                        result.hindsight.append(HindsightEvent(rnd, tasks[j].task_id, groups[j].mean_reward, new.mean_reward))
                        groups[j] = new

            groups = [g.with_advantages(gc.advantage_eps) for g in groups]
            plan = route(partition_refinement(samples, cfg.csrs.low, cfg.csrs.high), records)
            for k, v in plan.counts().items():
                stage_counts[k] += v
            for rec in records:
                cat_counts[rec.category.name] += 1

            new_policy, stats = grpo_update(policy, groups, gc, encode)
            entropy = agent.batch_entropy(t for g in groups for t in g.trajectories)
            rec = _diag_record(rnd, entropy, stats)
            result.records.append(rec)
            if csv_path is not None:
                diag.emit([rec], csv_path)
            policy = new_policy
            agent = ToyAgent(policy, graph, tc.hint_follow_prob)
            encode = agent.encode_step
            if eval_every and (rnd + 1) % eval_every == 0 and rnd + 1 < rounds:
                result.success_curve.append((rnd + 1, success_rate(env, agent, held_out, tc.max_steps)))
            log.debug("round %d entropy %.4f clip %.3f", rnd, rec.entropy, rec.clip_fraction)
    finally:
        collector.close()

    result.final_success = success_rate(env, agent, held_out, tc.max_steps)
    result.success_curve.append((rounds, result.final_success))
    result.stage_counts = stage_counts
    result.category_counts = cat_counts
    return result


def scripted_hindsight_check(env: SimEnv, task: TaskSpec, policy: ToyPolicy, seeds: Sequence[int], hint_follow_prob: float, max_steps: int):
    """Roll a plain group, and when it fails completely, its hinted re-roll;
    returns (plain group, hinted group or None)."""
    agent = ToyAgent(policy, env.graph, hint_follow_prob)
    trajs = [env.rollout(agent, task, int(s), max_steps) for s in seeds]
    plain = RolloutGroup(task.task_id, tuple(trajs), tuple(1.0 if t.succeeded else 0.0 for t in trajs))
    if any(plain.rewards):
        return plain, None
    return plain, hindsight_pass(plain, env, agent, task, [int(s) + 1 for s in seeds], max_steps)
