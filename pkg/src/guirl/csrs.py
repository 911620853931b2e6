"""Calibrated step reward system: trajectory-level labels anchor all
extracted training data.

A verifier (or a human label already on the trajectory) decides
success/failure. Successful trajectories yield all seven extraction
categories; failed ones yield only the knowledge categories 1-6, so an
erroneous action is never turned into an action-prediction target.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .actions import Outcome, Trajectory, dumps_trajectory, serialize_action
from .errors import GuiRLError


class CsrsError(GuiRLError):
    origin = "csrs_pipeline"


class VerifierError(CsrsError):
    pass


class ThresholdError(CsrsError, ValueError):
    pass


class Category(enum.IntEnum):
    ProgressTracking = 1
    StateSummary = 2
    EffectPrediction = 3
    SelfReflection = 4
    StateVerification = 5
    IntentExecution = 6
    ActionPrediction = 7


KNOWLEDGE_CATEGORIES = tuple(c for c in Category if c is not Category.ActionPrediction)


@dataclass(frozen=True)
class TrajectoryLabel:
    verdict: Outcome
    source: str  # "verifier" or "human"

    def __post_init__(self):
        if self.verdict not in (Outcome.SUCCESS, Outcome.FAILURE):
            raise CsrsError("a label is either success or failure")
        if self.source not in ("verifier", "human"):
            raise CsrsError(f"unknown label source {self.source!r}")


@dataclass(frozen=True)
class ExtractionRecord:
    category: Category
    trajectory_id: str
    step_index: int | None
    prompt: str
    target: str

    def to_dict(self) -> dict:
        d = {"category": int(self.category), "trajectory_id": self.trajectory_id}
        if self.step_index is not None:
            d["step_index"] = self.step_index
        d["prompt"] = self.prompt
        d["target"] = self.target
        return d


def trajectory_id(traj: Trajectory) -> str:
    return hashlib.sha256(dumps_trajectory(traj).encode("utf-8")).hexdigest()[:16]


# a verifier returns True for success; it may raise on a malformed program
Verifier = Callable[[Trajectory], bool]


def calibrate(traj: Trajectory, verifier: Verifier | None) -> TrajectoryLabel:
    """Binary trajectory label. Without a verifier the trajectory must
    already carry a (human) outcome."""
    if verifier is None:
        if traj.outcome is Outcome.UNLABELED:
            raise VerifierError("no verifier and no human label")
        return TrajectoryLabel(traj.outcome, "human")
    complete = getattr(verifier, "complete", None)
    if complete is not None and not complete(traj):
        raise VerifierError("trajectory is neither terminated nor at the step cap")
    try:
        ok = verifier(traj)
    except CsrsError:
        raise
    except GuiRLError as e:
        raise VerifierError(str(e)) from e
    return TrajectoryLabel(Outcome.SUCCESS if ok else Outcome.FAILURE, "verifier")


class Extractor(Protocol):
    def generate(self, traj: Trajectory, label: TrajectoryLabel, category: Category) -> list[ExtractionRecord]: ...


# per-step categories produce one record per step, the rest one per trajectory
PER_STEP = frozenset({
    Category.ProgressTracking, Category.StateSummary, Category.EffectPrediction,
    Category.IntentExecution, Category.ActionPrediction,
})


class TemplateExtractor:
    """Deterministic stand-in for an LLM extractor: fills fixed prompt and
    target templates from the trajectory's steps."""

    def yields(self, traj: Trajectory, category: Category) -> int:
        return len(traj.steps) if category in PER_STEP else 1

    def generate(self, traj: Trajectory, label: TrajectoryLabel, category: Category) -> list[ExtractionRecord]:
        tid = trajectory_id(traj)
        acts = [serialize_action(s.action) for s in traj.steps]
        n = len(acts)
        verdict = label.verdict.value
        out = []
        if category in PER_STEP:
            for i, s in enumerate(traj.steps):
                prompt, target = _TEMPLATES[category](traj.task, s.observation_id, acts, i, n, verdict)
                out.append(ExtractionRecord(category, tid, i, prompt, target))
        elif category is Category.SelfReflection:
            out.append(ExtractionRecord(
                category, tid, None,
                f"Task: {traj.task}\nActions: {' | '.join(acts)}\nWhat went right or wrong?",
                f"The attempt ended in {verdict} after {n} steps.",
            ))
        else:  # StateVerification
            last = traj.steps[-1].observation_id
            out.append(ExtractionRecord(
                category, tid, None,
                f"Task: {traj.task}\nFinal screen: {last}\nIs the task complete?",
                "yes" if label.verdict is Outcome.SUCCESS else "no",
            ))
        return out


_TEMPLATES: dict[Category, Callable] = {
    Category.ProgressTracking: lambda task, obs, acts, i, n, v: (
        f"Task: {task}\nDone so far: {' | '.join(acts[:i]) or 'nothing'}\nHow far along is the task?",
        f"Step {i + 1} of {n}.",
    ),
    Category.StateSummary: lambda task, obs, acts, i, n, v: (
        f"Describe the screen {obs}.", f"The agent is on {obs}.",
    ),
    Category.EffectPrediction: lambda task, obs, acts, i, n, v: (
        f"On {obs}, what happens after {acts[i]}?",
        f"The interface responds to {acts[i]}" + (f"; the next action is {acts[i + 1]}." if i + 1 < n else "; the episode ends."),
    ),
    Category.IntentExecution: lambda task, obs, acts, i, n, v: (
        f"Task: {task}\nScreen: {obs}\nWhat is the intent of the next step?",
        f"Carry out step {i + 1} toward the goal with {acts[i].split('(')[0]}.",
    ),
    Category.ActionPrediction: lambda task, obs, acts, i, n, v: (
        f"Task: {task}\nScreen: {obs}\nNext action?", acts[i],
    ),
}


def extract(traj: Trajectory, label: TrajectoryLabel, generator: Extractor) -> list[ExtractionRecord]:
    """Selective learning: ActionPrediction only from successful trajectories."""
    allowed = tuple(Category) if label.verdict is Outcome.SUCCESS else KNOWLEDGE_CATEGORIES
    records = []
    for cat in allowed:
        for rec in generator.generate(traj, label, cat):
            if rec.category not in allowed:
                raise CsrsError(f"extractor produced {rec.category.name} for a {label.verdict.value} trajectory")
            records.append(rec)
    return records


# ---------------------------------------------------------------- pass rates and partitioning

@dataclass(frozen=True)
class PassRateLabel:
    task_id: str
    n_rollouts: int
    n_pass: int

    def __post_init__(self):
        if self.n_rollouts < 1 or not 0 <= self.n_pass <= self.n_rollouts:
            raise CsrsError(f"invalid pass counts {self.n_pass}/{self.n_rollouts}")

    @property
    def rate(self) -> float:
        return self.n_pass / self.n_rollouts


def pass_rate_label(task, policy, n: int, env, verifier: Verifier, seed: int = 0, max_steps: int | None = None) -> PassRateLabel:
    """n independent rollouts with seeds seed..seed+n-1, labeled by ``verifier``."""
    if n < 1:
        raise CsrsError("n must be >= 1")
    passes = 0
    for i in range(n):
        traj = env.rollout(policy, task, seed + i, max_steps)
        passes += calibrate(traj, verifier).verdict is Outcome.SUCCESS
    return PassRateLabel(task.task_id, n, passes)


def complexity_tag(difficulty: str) -> str:
    """Curriculum tag: simple localization, functional understanding or
    intent alignment."""
    return {"atomic": "simple", "composite": "functional", "conditional": "intent"}.get(difficulty, "intent")


@dataclass(frozen=True)
class Sample:
    sample_id: str
    label: PassRateLabel
    tag: str = "simple"


@dataclass
class Partition:
    accepted: list[Sample]
    rejected: list[Sample]
    thresholds: tuple[float, float]
    # rejected-sample id -> "boundary" | "hard" | "excluded"
    bands: dict[str, str] = field(default_factory=dict)

    @property
    def excluded(self) -> list[Sample]:
        return [s for s in self.rejected if self.bands.get(s.sample_id) == "excluded"]


def partition_refinement(samples: Sequence[Sample], low: float = 0.3, high: float = 0.8) -> Partition:
    """rate >= high is accepted; everything else is rejected and banded:
    low <= rate < high "boundary", 0 < rate < low "hard", rate == 0
    "excluded" (held out of early training)."""
    if not (0.0 <= low <= high <= 1.0):
        raise ThresholdError(f"need 0 <= low <= high <= 1, got low={low}, high={high}")
    acc, rej, bands = [], [], {}
    for s in samples:
        r = s.label.rate
        if r >= high:
            acc.append(s)
            continue
        rej.append(s)
        if r == 0:
            bands[s.sample_id] = "excluded"
        elif r < low:
            bands[s.sample_id] = "hard"
        else:
            bands[s.sample_id] = "boundary"
    return Partition(acc, rej, (low, high), bands)


STAGES = ("midtrain", "coldstart", "rlvr")
ROUTES = {
    "accepted": ("midtrain", "coldstart"),
    "rejected": ("coldstart",),
    "generated": ("coldstart", "rlvr"),
}


@dataclass
class StagePlan:
    stages: dict[str, list[str]]
    metadata: dict[str, dict]

    def counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.stages.items()}

    def to_json(self, manifest_dir: str | None = None) -> dict:
        out = {"stages": {}, "metadata": self.metadata}
        for stage in STAGES:
            entry = {"count": len(self.stages[stage]), "items": self.stages[stage]}
            if manifest_dir is not None:
                entry["file"] = str(Path(manifest_dir) / f"{stage}.jsonl")
            out["stages"][stage] = entry
        return out


def record_id(rec: ExtractionRecord) -> str:
    step = "" if rec.step_index is None else f":{rec.step_index}"
    return f"{rec.trajectory_id}:{int(rec.category)}{step}"


def route(partition: Partition, records: Iterable[ExtractionRecord] = ()) -> StagePlan:
    """Accepted samples go to mid-train and cold-start, rejected ones to
    cold-start only, generation-flow records to cold-start and RLVR. Within
    each stage samples are ordered by curriculum tag."""
    order = {"simple": 0, "functional": 1, "intent": 2}
    stages: dict[str, list[str]] = {s: [] for s in STAGES}
    meta: dict[str, dict] = {}
    for bucket, samples in (("accepted", partition.accepted), ("rejected", partition.rejected)):
        for s in sorted(samples, key=lambda s: order.get(s.tag, 3)):
            for stage in ROUTES[bucket]:
                stages[stage].append(s.sample_id)
            meta[s.sample_id] = {
                "set": bucket, "rate": s.label.rate, "tag": s.tag,
                "band": partition.bands.get(s.sample_id, "stable"),
            }
    for rec in records:
        rid = record_id(rec)
        for stage in ROUTES["generated"]:
            stages[stage].append(rid)
        meta[rid] = {"set": "generated", "category": rec.category.name}
    return StagePlan(stages, meta)


def write_records(path: str | Path, records: Iterable[ExtractionRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_records(path: str | Path) -> list[ExtractionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(ExtractionRecord(Category(d["category"]), d["trajectory_id"], d.get("step_index"), d["prompt"], d["target"]))
    return out


def write_stage_plan(plan: StagePlan, out_dir: str | Path, payloads: dict[str, dict] | None = None) -> Path:
    """Write plan.json plus one JSONL manifest per stage."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payloads = payloads or {}
    for stage in STAGES:
        with open(out / f"{stage}.jsonl", "w", encoding="utf-8") as fh:
            for item in plan.stages[stage]:
                fh.write(json.dumps({"id": item, **payloads.get(item, {})}, ensure_ascii=False) + "\n")
    path = out / "plan.json"
    path.write_text(json.dumps(plan.to_json(str(out)), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    return path
