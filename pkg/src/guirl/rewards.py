"""Hybrid reward: dense spatial scores, type-gated action-value scores and
an optional judge blend.

All functions are pure; only ``semantic_reward`` (and ``joint_reward`` for
TYPE/INFO or with ``judge_weight > 0``) calls out to a judge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .actions import Action, ActionKind, BBox, Point, Tolerance, normalized_deviation, serialize_action
from .errors import DomainError
from .judge import Judge, JudgeRequest, MockJudge

LAMBDA_DIM = 0.5
ALPHA_FUSE = 0.8


@dataclass(frozen=True)
class RewardConfig:
    tol: Tolerance = field(default_factory=Tolerance.for_screen)
    lambda_dim: float = LAMBDA_DIM
    alpha_fuse: float = ALPHA_FUSE
    judge_weight: float = 0.0
    value_weight: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.lambda_dim <= 1.0):
            raise DomainError(f"lambda_dim must lie in (0, 1], got {self.lambda_dim}")
        for name in ("alpha_fuse", "judge_weight", "value_weight"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise DomainError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def from_dict(cls, d: dict) -> RewardConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown reward config keys: {sorted(unknown)}")
        d = dict(d)
        if "tol" in d:
            tol = d["tol"]
            d["tol"] = Tolerance(**tol) if isinstance(tol, dict) else Tolerance.for_screen(*tol)
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "tol": {f.name: getattr(self.tol, f.name) for f in fields(self.tol)},
            "lambda_dim": self.lambda_dim,
            "alpha_fuse": self.alpha_fuse,
            "judge_weight": self.judge_weight,
            "value_weight": self.value_weight,
        }


@dataclass(frozen=True)
class RewardBreakdown:
    type_score: int
    value_score: float
    judge_score: float | None
    total: float


def point_reward(pred: Point, gt: Point, tol: Tolerance) -> float:
    """exp(-(dx^4 + dy^4)) on tolerance-normalized deviations."""
    dx = normalized_deviation(pred.x, gt.x, tol.tau_x)
    dy = normalized_deviation(pred.y, gt.y, tol.tau_y)
    return math.exp(-(dx**4 + dy**4))


def iou(a: BBox, b: BBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return min(1.0, inter / union)


def geom_energy(pred: BBox, gt: BBox, tol: Tolerance, lambda_dim: float = LAMBDA_DIM) -> float:
    if not (0.0 < lambda_dim <= 1.0):
        raise DomainError(f"lambda_dim must lie in (0, 1], got {lambda_dim}")
    dcx = normalized_deviation(pred.cx, gt.cx, tol.tau_x)
    dcy = normalized_deviation(pred.cy, gt.cy, tol.tau_y)
    dw = normalized_deviation(pred.w, gt.w, tol.tau_w)
    dh = normalized_deviation(pred.h, gt.h, tol.tau_h)
    return dcx**4 + dcy**4 + lambda_dim * dw**4 + lambda_dim * dh**4


def bbox_reward(pred: BBox, gt: BBox, cfg: RewardConfig) -> float:
    """alpha * exp(-E_geom) + (1 - alpha) * IoU."""
    a = cfg.alpha_fuse
    return a * math.exp(-geom_energy(pred, gt, cfg.tol, cfg.lambda_dim)) + (1.0 - a) * iou(pred, gt)


def action_type_reward(pred_kind: ActionKind | str, gt_kind: ActionKind | str) -> int:
    return int(ActionKind(pred_kind) is ActionKind(gt_kind))


def slide_reward(v_pred: tuple[float, float], v_gt: tuple[float, float]) -> float:
    """Cosine similarity mapped affinely onto [0, 1]; a zero swipe scores 0."""
    gx, gy = v_gt
    ng = math.hypot(gx, gy)
    if ng == 0.0:
        raise DomainError("ground-truth slide vector is zero")
    px, py = v_pred
    npred = math.hypot(px, py)
    if npred == 0.0:
        return 0.0
    cos = (px * gx + py * gy) / (npred * ng)
    cos = max(-1.0, min(1.0, cos))
    return (cos + 1.0) / 2.0


def semantic_reward(pred_text: str, gt_spec: str, judge: Judge) -> float:
    return judge.score(JudgeRequest("content_verify", pred_text, gt_spec)).score


def _value_score(pred: Action, gt: Action, cfg: RewardConfig, judge: Judge) -> float:
    kind = gt.kind
    if kind in (ActionKind.CLICK, ActionKind.LONGPRESS):
        return point_reward(pred.point, gt.point, cfg.tol)
    if kind is ActionKind.SLIDE:
        return slide_reward(pred.vector, gt.vector)
    if kind in (ActionKind.TYPE, ActionKind.INFO):
        return semantic_reward(pred.text, gt.text, judge)
    if kind is ActionKind.AWAKE:
        return float(pred.text == gt.text)
    return 1.0


def joint_reward(pred: Action, gt: Action, cfg: RewardConfig | None = None, judge: Judge | None = None) -> RewardBreakdown:
    """Type-gated composite reward.

    ``total = type * ((1 - wv) + wv * value)``, then blended with the judge's
    trajectory-quality score by ``judge_weight``. A kind mismatch scores 0
    no matter what the payload is.
    """
    cfg = cfg or RewardConfig()
    judge = judge or MockJudge()
    t = action_type_reward(pred.kind, gt.kind)
    if not t:
        return RewardBreakdown(0, 0.0, None, 0.0)
    value = _value_score(pred, gt, cfg, judge)
    total = (1.0 - cfg.value_weight) + cfg.value_weight * value
    judge_score = None
    if cfg.judge_weight > 0:
        text = serialize_action(pred)
        judge_score = judge.score(
            JudgeRequest("trajectory_quality", text, serialize_action(gt), (text,))
        ).score
        total = (1.0 - cfg.judge_weight) * total + cfg.judge_weight * judge_score
    return RewardBreakdown(t, value, judge_score, min(1.0, max(0.0, total)))
