"""Group Relative Policy Optimization with gradient preservation.

The objective for one group of G trajectories sampled from the rollout
policy is

    J = 1/G sum_i 1/|o_i| sum_k min(r_ik A_i, clip(r_ik, 1-eps_low, 1+eps_high) A_i)
        - beta_kl * KL

and its gradient replaces the zero gradient of clipped tokens with a scaled
one (``gp_gradient_factor``):

    f(r, A) = A r                       inside the band
            = beta1 A (1 + eps_high)    above it
            = beta2 A (1 - eps_low)     below it

The update itself is written against ``ToyPolicy``, a tabular softmax
policy, but only touches it through per-token log-probabilities and the
softmax score function, so any policy exposing those two fits.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .actions import Trajectory
from .errors import DomainError, GuiRLError

LOG_RATIO_CLAMP = 30.0


class DivergenceError(GuiRLError):
    origin = "grpo_core"


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    eps_low: float = 0.2
    eps_high: float = 0.28
    beta_kl: float = 0.0
    beta1: float = 0.1
    beta2: float = 0.1
    inner_epochs: int = 2
    learning_rate: float = 1.0
    advantage_eps: float = 1e-6

    def __post_init__(self):
        if not (isinstance(self.group_size, int) and self.group_size >= 1):
            raise DomainError("group_size must be a positive integer")
        if not self.eps_low > 0:
            raise DomainError("eps_low must be positive")
        if not self.eps_low < 1:
            raise DomainError("eps_low must be below 1 so the lower clip edge stays positive")
        if not self.eps_high >= self.eps_low:
            raise DomainError("eps_high must be >= eps_low")
        for name in ("beta_kl", "beta1", "beta2"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be non-negative")
        if not (isinstance(self.inner_epochs, int) and self.inner_epochs >= 1):
            raise DomainError("inner_epochs must be a positive integer")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if not self.advantage_eps > 0:
            raise DomainError("advantage_eps must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> GrpoConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise DomainError(f"unknown grpo config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- scalar pieces

def group_advantages(rewards: Sequence[float], advantage_eps: float = 1e-6) -> list[float]:
    """(r - mean) / (std + eps) within one group; population std."""
    if len(rewards) < 2:
        raise DomainError("a group needs at least two rewards")
    r = np.asarray(rewards, dtype=float)
    centered = r - r.mean()
    std = math.sqrt(float(np.mean(centered**2)))
    if std == 0.0:
        return [0.0] * len(r)
    adv = centered / (std + advantage_eps)
    # remove the O(ulp) residual mean left by floating-point summation
    adv -= adv.mean()
    return adv.tolist()


def importance_ratio(logp_new: float, logp_old: float, events: list | None = None) -> float:
    """exp(logp_new - logp_old), log-difference clamped to +-30.

    Clamps are appended to ``events`` when a list is supplied.
    """
    d = logp_new - logp_old
    if not math.isfinite(d):
        raise DomainError("non-finite log-probabilities")
    if abs(d) > LOG_RATIO_CLAMP:
        if events is not None:
            events.append(d)
        d = math.copysign(LOG_RATIO_CLAMP, d)
    return math.exp(d)


def surrogate_term(r: float, A: float, cfg: GrpoConfig) -> float:
    clipped = min(max(r, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high)
    return min(r * A, clipped * A)


def gp_gradient_factor(r: float, A: float, cfg: GrpoConfig) -> float:
    if r > 1.0 + cfg.eps_high:
        return cfg.beta1 * A * (1.0 + cfg.eps_high)
    if r < 1.0 - cfg.eps_low:
        return cfg.beta2 * A * (1.0 - cfg.eps_low)
    return A * r


def k3(d):
    """e^d - d - 1, elementwise, without the cancellation of expm1(d) - d
    near zero (a short Taylor series takes over for |d| < 1e-2)."""
    d = np.asarray(d, dtype=float)
    with np.errstate(over="ignore"):
        direct = np.expm1(d) - d
    series = d * d * (1 / 2 + d * (1 / 6 + d * (1 / 24 + d * (1 / 120 + d / 720))))
    return np.where(np.abs(d) < 1e-2, series, direct)


def kl_term(logp_new: float, logp_ref: float) -> float:
    """Per-token k3 estimate e^d - d - 1 with d = logp_ref - logp_new."""
    return float(k3(logp_ref - logp_new))


# ---------------------------------------------------------------- policy

def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class ToyPolicy:
    """Tabular softmax policy: one row of logits per state key.

    Rows are created on first use. A new row's logits are drawn from
    N(0, init_scale^2) with a generator seeded by (seed, key), so the table
    does not depend on the order in which states are visited.
    """

    def __init__(self, n_tokens: int, seed: int = 0, init_scale: float = 0.0):
        if n_tokens < 1:
            raise DomainError("n_tokens must be positive")
        self.n_tokens = n_tokens
        self.seed = int(seed)
        self.init_scale = float(init_scale)
        self._theta = np.zeros((16, n_tokens))
        self._n = 0
        self.keys: dict[str, int] = {}

    @classmethod
    def from_table(cls, theta: np.ndarray, keys: Sequence[str] | None = None) -> ToyPolicy:
        theta = np.asarray(theta, dtype=float)
        pol = cls(theta.shape[1])
        keys = list(keys) if keys is not None else [f"s{i}" for i in range(theta.shape[0])]
        pol._theta = theta.copy()
        pol._n = theta.shape[0]
        pol.keys = {k: i for i, k in enumerate(keys)}
        return pol

    @property
    def theta(self) -> np.ndarray:
        return self._theta[: self._n]

    @property
    def n_states(self) -> int:
        return self._n

    def copy(self) -> ToyPolicy:
        new = ToyPolicy(self.n_tokens, self.seed, self.init_scale)
        new._theta = self._theta[: max(self._n, 1)].copy()
        new._n = self._n
        new.keys = dict(self.keys)
        return new

    def _init_row(self, key: str) -> np.ndarray:
        if self.init_scale == 0.0:
            return np.zeros(self.n_tokens)
        h = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")
        return np.random.default_rng([self.seed, h]).normal(0.0, self.init_scale, self.n_tokens)

    def index(self, key: str) -> int:
        i = self.keys.get(key)
        if i is None:
            if self._n == self._theta.shape[0]:
                self._theta = np.vstack([self._theta, np.zeros_like(self._theta)])
            i = self._n
            self._theta[i] = self._init_row(key)
            self._n += 1
            self.keys[key] = i
        return i

    def log_probs(self, key: str) -> np.ndarray:
        i = self.index(key)  # may reallocate the table
        return _log_softmax(self._theta[i])

    def probs(self, key: str) -> np.ndarray:
        return np.exp(self.log_probs(key))

    def entropy(self, key: str) -> float:
        lp = self.log_probs(key)
        return float(-(np.exp(lp) * lp).sum())


def policy_entropy(policy: ToyPolicy, states: Iterable[str]) -> float:
    """Mean Shannon entropy (nats) over the listed states, duplicates counted."""
    keys = list(states)
    if not keys:
        raise DomainError("policy_entropy needs at least one state")
    rows = np.array([policy.index(k) for k in keys])
    lp = _log_softmax(policy.theta[rows])
    return float(np.mean(-(np.exp(lp) * lp).sum(axis=1)))


# ---------------------------------------------------------------- groups and batches

@dataclass(frozen=True)
class RolloutGroup:
    task_id: str
    trajectories: tuple[Trajectory, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...] | None = None
    hinted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        if len(self.trajectories) != len(self.rewards):
            raise DomainError("one reward per trajectory")
        if self.advantages is not None and len(self.advantages) != len(self.rewards):
            raise DomainError("one advantage per trajectory")

    @property
    def size(self) -> int:
        return len(self.trajectories)

    def with_advantages(self, advantage_eps: float = 1e-6) -> RolloutGroup:
        return replace(self, advantages=tuple(group_advantages(self.rewards, advantage_eps)))

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards))


# maps (trajectory, step index) to one (state key, token id) pair per logged token
Encoder = Callable[[Trajectory, int], Sequence[tuple[str, int]]]


@dataclass
class TokenBatch:
    rows: np.ndarray
    tokens: np.ndarray
    old_logp: np.ndarray
    adv: np.ndarray
    weight: np.ndarray
    seq: np.ndarray
    keys: list[str]

    def __len__(self) -> int:
        return len(self.rows)


def build_batch(policy: ToyPolicy, groups: Sequence[RolloutGroup], encode: Encoder) -> TokenBatch:
    rows, tokens, old, adv, weight, seq, keys = [], [], [], [], [], [], []
    n_groups = len(groups)
    seq_id = 0
    for g in groups:
        if g.advantages is None:
            raise DomainError(f"group {g.task_id} has no advantages; call with_advantages first")
        for traj, a in zip(g.trajectories, g.advantages):
            lps: list[float] = []
            pairs: list[tuple[str, int]] = []
            for i, step in enumerate(traj.steps):
                if step.token_logprobs is None:
                    raise DomainError("trajectory step lacks rollout log-probabilities")
                enc = list(encode(traj, i))
                if len(enc) != len(step.token_logprobs):
                    raise DomainError("encoder and logged log-probabilities disagree on token count")
                pairs.extend(enc)
                lps.extend(step.token_logprobs)
            w = 1.0 / (n_groups * g.size * len(lps))
            for (key, tok), lp in zip(pairs, lps):
                rows.append(policy.index(key))
                tokens.append(tok)
                old.append(lp)
                adv.append(a)
                weight.append(w)
                seq.append(seq_id)
                keys.append(key)
            seq_id += 1
    return TokenBatch(
        np.array(rows, dtype=int), np.array(tokens, dtype=int), np.array(old, dtype=float),
        np.array(adv, dtype=float), np.array(weight, dtype=float), np.array(seq, dtype=int), keys,
    )


@dataclass
class EpochInfo:
    objective: float
    grad: np.ndarray
    logp: np.ndarray
    ratio: np.ndarray
    clip_fraction: float
    kl: float
    clamp_events: int


def objective_and_grad(theta: np.ndarray, batch: TokenBatch, cfg: GrpoConfig) -> EpochInfo:
    """J and its gradient-preserving ascent direction with respect to ``theta``."""
    lp_all = _log_softmax(theta[batch.rows])
    p_all = np.exp(lp_all)
    idx = np.arange(len(batch))
    logp = lp_all[idx, batch.tokens]
    log_ratio = logp - batch.old_logp
    clamped = np.abs(log_ratio) > LOG_RATIO_CLAMP
    log_ratio = np.clip(log_ratio, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
    r = np.exp(log_ratio)
    A = batch.adv
    lo, hi = 1.0 - cfg.eps_low, 1.0 + cfg.eps_high
    surr = np.minimum(r * A, np.clip(r, lo, hi) * A)
    above, below = r > hi, r < lo
    f = np.where(above, cfg.beta1 * A * hi, np.where(below, cfg.beta2 * A * lo, A * r))
    # k3 against the rollout policy: d = old - new = -log_ratio
    kl_tok = k3(-log_ratio)
    w = batch.weight
    J = float(np.dot(w, surr) - cfg.beta_kl * np.dot(w, kl_tok))
    # d k3 / d logp = 1 - e^d
    coef = w * (f - cfg.beta_kl * (-np.expm1(-log_ratio)))
    grad = np.zeros_like(theta)
    np.add.at(grad, batch.rows, -coef[:, None] * p_all)
    np.add.at(grad, (batch.rows, batch.tokens), coef)
    n = max(len(batch), 1)
    return EpochInfo(
        objective=J,
        grad=grad,
        logp=logp,
        ratio=r,
        clip_fraction=float(np.count_nonzero(above | below)) / n,
        kl=float(np.mean(kl_tok)) if len(batch) else 0.0,
        clamp_events=int(np.count_nonzero(clamped)),
    )


@dataclass
class UpdateStats:
    objective: list[float] = field(default_factory=list)
    mean_ratio: list[float] = field(default_factory=list)
    clip_fraction: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    clamp_events: int = 0
    n_tokens: int = 0
    # logprobs under the policy of the last epoch, aligned with ``batch``
    last_logp: np.ndarray | None = field(default=None, repr=False)
    batch: TokenBatch | None = field(default=None, repr=False)

    def merge(self, other: UpdateStats) -> UpdateStats:
        """Concatenate epoch series and add counters (associative)."""
        return UpdateStats(
            self.objective + other.objective,
            self.mean_ratio + other.mean_ratio,
            self.clip_fraction + other.clip_fraction,
            self.kl + other.kl,
            self.grad_norm + other.grad_norm,
            self.clamp_events + other.clamp_events,
            self.n_tokens + other.n_tokens,
        )


def grpo_update(
    policy: ToyPolicy,
    groups: Sequence[RolloutGroup],
    cfg: GrpoConfig,
    encode: Encoder,
) -> tuple[ToyPolicy, UpdateStats]:
    """K epochs of gradient ascent on the same rollout batch.

    Every epoch measures ratios against the rollout log-probabilities stored
    in the trajectories, so the first epoch reproduces a single-epoch update
    exactly. Returns a new policy; the input is left untouched.
    """
    new = policy.copy()
    batch = build_batch(new, groups, encode)
    stats = UpdateStats(n_tokens=len(batch), batch=batch)
    if len(batch) == 0:
        return new, stats
    theta = new.theta
    for _ in range(cfg.inner_epochs):
        info = objective_and_grad(theta, batch, cfg)
        if not math.isfinite(info.objective) or not np.all(np.isfinite(info.grad)):
            raise DivergenceError("GRPO objective became non-finite")
        stats.objective.append(info.objective)
        stats.mean_ratio.append(float(np.mean(info.ratio)))
        stats.clip_fraction.append(info.clip_fraction)
        stats.kl.append(info.kl)
        stats.grad_norm.append(float(np.linalg.norm(info.grad)))
        stats.clamp_events += info.clamp_events
        stats.last_logp = info.logp
        theta += cfg.learning_rate * info.grad
    return new, stats


# ---------------------------------------------------------------- hindsight

def hindsight_pass(
    failed_group: RolloutGroup,
    env,
    policy,
    task,
    seeds: Sequence[int],
    max_steps: int | None = None,
    reward_fn: Callable[[Trajectory], float] | None = None,
) -> RolloutGroup:
    """Re-roll a group that never completed its task with the ground-truth
    plan appended to the instruction.

    ``policy`` must react to the hint block (``ToyAgent`` does); the returned
    trajectories carry the log-probabilities of that hinted rollout.
    """
    from .sim_env import hint_augment

    if any(r != 0 for r in failed_group.rewards):
        raise DomainError("hindsight applies only to groups where every reward is 0")
    if len(seeds) != failed_group.size:
        raise DomainError("one seed per re-rolled trajectory")
    reward_fn = reward_fn or (lambda t: 1.0 if t.succeeded else 0.0)
    hinted_task = hint_augment(task)
    trajs = []
    for s in seeds:
        t = env.rollout(policy, hinted_task, int(s), max_steps)
        t.meta["hinted"] = True
        trajs.append(t)
    return RolloutGroup(failed_group.task_id, tuple(trajs), tuple(reward_fn(t) for t in trajs), None, True)
