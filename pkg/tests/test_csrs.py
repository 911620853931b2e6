import json
import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from guirl.actions import Action, Outcome, Step, Trajectory
from guirl.csrs import (
    KNOWLEDGE_CATEGORIES,
    ROUTES,
    STAGES,
    Category,
    CsrsError,
    ExtractionRecord,
    PassRateLabel,
    Sample,
    TemplateExtractor,
    ThresholdError,
    TrajectoryLabel,
    VerifierError,
    calibrate,
    complexity_tag,
    extract,
    partition_refinement,
    pass_rate_label,
    read_records,
    route,
    trajectory_id,
    write_records,
    write_stage_plan,
)
from guirl.sim_env import EnvVerifier, PlanPolicy, SimEnv
from oracles import oracle_eval


@pytest.fixture(scope="module")
def env():
    return SimEnv()


def random_trajectory(rng: random.Random, n_steps: int | None = None) -> Trajectory:
    acts = [Action.wait(), Action.click(rng.uniform(0, 1080), rng.uniform(0, 2400)), Action.type("hi"), Action.awake("mail")]
    n = n_steps or rng.randint(1, 8)
    steps = tuple(Step(f"screen{rng.randrange(5)}#0", rng.choice(acts)) for _ in range(n - 1))
    steps += (Step("end#0", Action.complete()),)
    return Trajectory(f"task {rng.randrange(1000)}", steps)


def test_seven_categories():
    assert [int(c) for c in Category] == list(range(1, 8))
    assert Category.ActionPrediction not in KNOWLEDGE_CATEGORIES and len(KNOWLEDGE_CATEGORIES) == 6


def test_calibrate_examples(env):
    task = env.generate_task(1, "atomic")
    ok = env.rollout(PlanPolicy(task.gt_plan), task, 0)
    bad = env.rollout(PlanPolicy([]), task, 0)
    v = EnvVerifier(env, task)
    assert calibrate(ok, v) == TrajectoryLabel(Outcome.SUCCESS, "verifier")
    assert calibrate(bad, v).verdict is Outcome.FAILURE


def test_calibrate_matches_independent_checker(env):
    rng = random.Random(0)
    agree = 0
    for i in range(100):
        task = env.generate_task(i, rng.choice(["atomic", "composite", "conditional"]))
        plan = list(task.gt_plan)
        if rng.random() < 0.5 and len(plan) > 1:
            plan = plan[: rng.randrange(len(plan))]
        traj = env.rollout(PlanPolicy(plan), task, i)
        state = env.replay(task, [s.action for s in traj.steps])
        want = oracle_eval(task.verifier, state)
        assert (calibrate(traj, EnvVerifier(env, task)).verdict is Outcome.SUCCESS) == want
        agree += 1
    assert agree == 100


def test_calibrate_requirements(env):
    task = env.generate_task(1, "atomic")
    unlabeled = Trajectory("t", (Step("o", Action.wait()),))
    with pytest.raises(VerifierError):
        calibrate(unlabeled, None)
    assert calibrate(unlabeled.with_outcome("failure"), None) == TrajectoryLabel(Outcome.FAILURE, "human")
    with pytest.raises(VerifierError):
        calibrate(unlabeled, EnvVerifier(env, task))  # neither terminated nor capped

    class Broken:
        def __call__(self, traj):
            from guirl.errors import GuiRLError

            raise GuiRLError("bad program")

    with pytest.raises(VerifierError):
        calibrate(unlabeled, Broken())


def test_trajectory_id_is_content_hash():
    rng = random.Random(1)
    t = random_trajectory(rng)
    assert trajectory_id(t) == trajectory_id(Trajectory(t.task, t.steps))
    assert len(trajectory_id(t)) == 16


def expected_counts(traj: Trajectory, success: bool) -> Counter:
    """Closed-form yields: per-step categories once per step, the others once."""
    per_step = {Category.ProgressTracking, Category.StateSummary, Category.EffectPrediction, Category.IntentExecution, Category.ActionPrediction}
    out = Counter()
    for c in Category:
        if c is Category.ActionPrediction and not success:
            continue
        out[c] = len(traj.steps) if c in per_step else 1
    return out


def test_extract_counts_and_selective_learning():
    rng = random.Random(2)
    gen = TemplateExtractor()
    for _ in range(200):
        t = random_trajectory(rng)
        success = rng.random() < 0.5
        label = TrajectoryLabel(Outcome.SUCCESS if success else Outcome.FAILURE, "human")
        recs = extract(t, label, gen)
        assert Counter(r.category for r in recs) == expected_counts(t, success)
        if success:
            assert {r.category for r in recs} == set(Category)
            ap = [r for r in recs if r.category is Category.ActionPrediction]
            assert [r.step_index for r in ap] == list(range(len(t.steps)))
        else:
            assert Category.ActionPrediction not in {r.category for r in recs}


def test_extractor_leak_is_caught():
    class Leaky(TemplateExtractor):
        def generate(self, traj, label, category):
            return [ExtractionRecord(Category.ActionPrediction, "x", 0, "p", "t")]

    t = random_trajectory(random.Random(3))
    with pytest.raises(CsrsError):
        extract(t, TrajectoryLabel(Outcome.FAILURE, "human"), Leaky())


def test_records_round_trip(tmp_path):
    t = random_trajectory(random.Random(4))
    recs = extract(t, TrajectoryLabel(Outcome.SUCCESS, "verifier"), TemplateExtractor())
    path = tmp_path / "r.jsonl"
    assert write_records(path, recs) == len(recs)
    assert read_records(path) == recs


# ---------------------------------------------------------------- pass rates

class CoinPolicy:
    """Follows the plan on heads, completes immediately on tails."""

    def __init__(self, plan):
        self.plan = plan
        self.follow = True

    def act(self, obs, rng):
        i = len(obs.history)
        if i == 0:
            self.follow = rng.random() < 0.5
        if self.follow and i < len(self.plan):
            return self.plan[i], [0.0]
        return Action.complete(), [0.0]


def test_pass_rate_examples(env):
    task = env.generate_task(1, "atomic")
    v = EnvVerifier(env, task)
    assert pass_rate_label(task, PlanPolicy(task.gt_plan), 5, env, v).rate == 1.0
    assert pass_rate_label(task, PlanPolicy([]), 5, env, v).rate == 0.0
    with pytest.raises(CsrsError):
        pass_rate_label(task, PlanPolicy([]), 0, env, v)


def test_pass_rate_binomial_bound(env):
    # P(|X/1000 - 0.5| > 0.05) < 0.0017 for X ~ Bin(1000, 0.5)
    task = env.generate_task(1, "atomic")
    lab = pass_rate_label(task, CoinPolicy(task.gt_plan), 1000, env, EnvVerifier(env, task))
    assert 0.45 <= lab.rate <= 0.55


def test_pass_rate_label_is_exchangeable(env):
    task = env.generate_task(4, "atomic")
    v = EnvVerifier(env, task)
    pol = CoinPolicy(task.gt_plan)
    fwd = [env.rollout(pol, task, s).succeeded for s in range(20)]
    rev = [env.rollout(pol, task, s).succeeded for s in reversed(range(20))]
    assert sum(fwd) == sum(rev) == pass_rate_label(task, pol, 20, env, v).n_pass


def test_pass_rate_label_validation():
    with pytest.raises(CsrsError):
        PassRateLabel("t", 3, 4)
    assert complexity_tag("atomic") == "simple" and complexity_tag("composite") == "functional"


# ---------------------------------------------------------------- partition and routing

def samples_from(rates, tags=None):
    out = []
    for i, (n_pass, n) in enumerate(rates):
        out.append(Sample(f"s{i}", PassRateLabel(f"t{i}", n, n_pass), (tags or ["simple"] * len(rates))[i]))
    return out


def test_partition_examples():
    p = partition_refinement(samples_from([(10, 10), (9, 10)]), 0.3, 0.8)
    assert len(p.accepted) == 2 and not p.rejected
    p = partition_refinement(samples_from([(0, 4)]))
    assert [s.sample_id for s in p.excluded] == ["s0"] and p.bands["s0"] == "excluded"
    p = partition_refinement(samples_from([(1, 10), (5, 10)]))
    assert p.bands == {"s0": "hard", "s1": "boundary"}
    with pytest.raises(ThresholdError):
        partition_refinement([], 0.9, 0.5)


rate_lists = st.lists(st.tuples(st.integers(1, 12), st.integers(0, 12)).map(lambda t: (min(t[1], t[0]), t[0])), max_size=40)


@given(rate_lists, st.floats(0, 1), st.floats(0, 1))
def test_partition_is_disjoint_cover(rates, a, b):
    low, high = sorted((a, b))
    samples = samples_from(rates)
    p = partition_refinement(samples, low, high)
    acc = {s.sample_id for s in p.accepted}
    rej = {s.sample_id for s in p.rejected}
    assert not acc & rej and acc | rej == {s.sample_id for s in samples}
    assert acc == {s.sample_id for s in samples if s.label.rate >= high}
    assert set(p.bands) == rej


@given(rate_lists, st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_raising_high_never_grows_accepted(rates, low, h1, h2):
    h1, h2 = sorted((max(low, h1), max(low, h2)))
    samples = samples_from(rates)
    a1 = {s.sample_id for s in partition_refinement(samples, low, h1).accepted}
    a2 = {s.sample_id for s in partition_refinement(samples, low, h2).accepted}
    assert a2 <= a1


def test_route_examples():
    plan = route(partition_refinement(samples_from([(10, 10)])))
    assert plan.stages == {"midtrain": ["s0"], "coldstart": ["s0"], "rlvr": []}
    plan = route(partition_refinement(samples_from([(1, 10)])))
    assert plan.stages == {"midtrain": [], "coldstart": ["s0"], "rlvr": []}


@given(rate_lists, st.integers(0, 5))
def test_route_conserves_inputs(rates, n_traj):
    rng = random.Random(len(rates) * 7 + n_traj)
    samples = samples_from(rates, [rng.choice(["simple", "functional", "intent"]) for _ in rates])
    p = partition_refinement(samples)
    recs = []
    for _ in range(n_traj):
        recs += extract(random_trajectory(rng), TrajectoryLabel(Outcome.SUCCESS, "human"), TemplateExtractor())
    plan = route(p, recs)
    total = sum(plan.counts().values())
    assert total == 2 * len(p.accepted) + len(p.rejected) + 2 * len(recs)
    seen = set().union(*plan.stages.values())
    assert {s.sample_id for s in samples} <= seen and len(seen) == len(samples) + len(recs)
    for stage, ids in plan.stages.items():
        tags = [plan.metadata[i]["tag"] for i in ids if plan.metadata[i]["set"] == "accepted"]
        order = {"simple": 0, "functional": 1, "intent": 2}
        assert tags == sorted(tags, key=order.get)


def test_routes_table():
    assert ROUTES["accepted"] == ("midtrain", "coldstart") and ROUTES["rejected"] == ("coldstart",)
    assert ROUTES["generated"] == ("coldstart", "rlvr") and STAGES == ("midtrain", "coldstart", "rlvr")


def test_write_stage_plan(tmp_path):
    plan = route(partition_refinement(samples_from([(10, 10), (0, 3)])))
    path = write_stage_plan(plan, tmp_path / "out")
    data = json.loads(path.read_text())
    assert data["stages"]["coldstart"]["count"] == 2
    lines = (tmp_path / "out" / "midtrain.jsonl").read_text().splitlines()
    assert [json.loads(x)["id"] for x in lines] == ["s0"]
