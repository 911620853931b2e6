"""Single-step static benchmark: annotated ground-truth steps, possibly
with several valid target regions, scored by action type and action value.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .actions import POINTER_KINDS, TEXT_KINDS, Action, ActionKind, BBox, Point, SchemaError, parse_action
from .errors import GuiRLError
from .judge import Judge, JudgeRequest
from .rewards import slide_reward

SLIDE_HIT = 0.75  # (cos + 1) / 2 >= 0.75 means at most 60 degrees off
JUDGE_HIT = 0.8

COLUMNS = (
    ActionKind.CLICK, ActionKind.TYPE, ActionKind.SLIDE, ActionKind.AWAKE,
    ActionKind.INFO, ActionKind.COMPLETE, ActionKind.WAIT, ActionKind.LONGPRESS,
)


def column_name(kind: ActionKind) -> str:
    return "LONG_PRESS" if kind is ActionKind.LONGPRESS else kind.value


class UnknownStepId(GuiRLError, KeyError):
    origin = "static_bench"

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown step id"


class BenchSchemaError(SchemaError):
    origin = "static_bench"


@dataclass(frozen=True)
class Annotation:
    step_id: str
    task: str
    gt_kind: ActionKind
    regions: tuple[BBox, ...] = ()
    vector: tuple[float, float] | None = None
    refs: tuple[str, ...] = ()

    def __post_init__(self):
        where = f"step {self.step_id}"
        if self.gt_kind in POINTER_KINDS and not self.regions:
            raise BenchSchemaError(f"{where}: regions must hold at least one box")
        if self.gt_kind is ActionKind.SLIDE:
            if self.vector is None or self.vector == (0.0, 0.0):
                raise BenchSchemaError(f"{where}: vector must be a non-zero [dx, dy]")
        if self.gt_kind in TEXT_KINDS and not any(r.strip() for r in self.refs):
            raise BenchSchemaError(f"{where}: refs must hold a non-empty reference")

    def to_dict(self) -> dict:
        d: dict = {"step_id": self.step_id, "task": self.task, "gt_kind": self.gt_kind.value}
        if self.regions:
            d["regions"] = [{"cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h} for b in self.regions]
        if self.vector is not None:
            d["vector"] = list(self.vector)
        if self.refs:
            d["refs"] = list(self.refs)
        return d

    def ground_truth(self) -> Action:
        """A canonical action that reproduces this annotation."""
        k = self.gt_kind
        if k in POINTER_KINDS:
            b = self.regions[0]
            return Action(k, point=Point(b.cx, b.cy))
        if k is ActionKind.SLIDE:
            return Action.slide(540.0, 1200.0, *self.vector)
        if k in TEXT_KINDS:
            return Action(k, text=self.refs[0])
        return Action(k)


def _field(d: dict, name: str, sid: str, kind: type | tuple):
    if name not in d:
        raise BenchSchemaError(f"step {sid}: missing field {name}")
    v = d[name]
    if not isinstance(v, kind) or isinstance(v, bool):
        raise BenchSchemaError(f"step {sid}: field {name} has the wrong type")
    return v


def annotation_from_dict(d: dict, index: int = 0) -> Annotation:
    if not isinstance(d, dict):
        raise BenchSchemaError(f"entry {index}: expected an object")
    sid = d.get("step_id", f"#{index}")
    sid = _field(d, "step_id", str(sid), (str, int))
    sid = str(sid)
    task = _field(d, "task", sid, str)
    try:
        kind = ActionKind(_field(d, "gt_kind", sid, str))
    except ValueError:
        raise BenchSchemaError(f"step {sid}: field gt_kind has unknown value {d['gt_kind']!r}") from None
    regions = []
    for i, r in enumerate(d.get("regions", [])):
        try:
            regions.append(BBox(float(r["cx"]), float(r["cy"]), float(r["w"]), float(r["h"])))
        except (KeyError, TypeError, ValueError) as e:
            raise BenchSchemaError(f"step {sid}: field regions[{i}] is invalid ({e})") from None
    vector = d.get("vector")
    if vector is not None:
        if not (isinstance(vector, list) and len(vector) == 2 and all(isinstance(v, (int, float)) and math.isfinite(v) for v in vector)):
            raise BenchSchemaError(f"step {sid}: field vector must be [dx, dy]")
        vector = (float(vector[0]), float(vector[1]))
    refs = d.get("refs", [])
    if not (isinstance(refs, list) and all(isinstance(r, str) for r in refs)):
        raise BenchSchemaError(f"step {sid}: field refs must be a list of strings")
    unknown = set(d) - {"step_id", "task", "gt_kind", "regions", "vector", "refs"}
    if unknown:
        raise BenchSchemaError(f"step {sid}: unknown fields {sorted(unknown)}")
    return Annotation(sid, task, kind, tuple(regions), vector, tuple(refs))


def parse_annotations(data: list) -> list[Annotation]:
    if not isinstance(data, list):
        raise BenchSchemaError("annotation file must hold a JSON array")
    out, seen = [], set()
    for i, d in enumerate(data):
        ann = annotation_from_dict(d, i)
        if ann.step_id in seen:
            raise BenchSchemaError(f"step {ann.step_id}: duplicate step_id")
        seen.add(ann.step_id)
        out.append(ann)
    return out


def load_annotations(path: str | Path | None = None) -> list[Annotation]:
    """Read an annotation array; ``None`` loads the bundled fixture."""
    if path is None:
        text = resources.files("guirl").joinpath("data/static_fixture.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise BenchSchemaError(f"annotation file is not valid JSON: {e}") from None
    return parse_annotations(data)


def dump_annotations(anns: Iterable[Annotation]) -> str:
    return json.dumps([a.to_dict() for a in anns], ensure_ascii=False, indent=1)


def load_predictions(path: str | Path) -> dict[str, Action]:
    preds = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                sid, act = str(d["step_id"]), d["action"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise BenchSchemaError(f"predictions line {n}: {e}") from None
            if sid in preds:
                raise BenchSchemaError(f"predictions line {n}: second prediction for step {sid}")
            preds[sid] = parse_action(act)
    return preds


def normalize_text(s: str) -> str:
    return " ".join(s.split()).casefold()


# ---------------------------------------------------------------- scoring

@dataclass(frozen=True)
class StepScore:
    type_hit: int
    value_hit: int


def _text_hit(pred: str, refs: Sequence[str], judge: Judge | None) -> bool:
    p = normalize_text(pred)
    if any(p == normalize_text(r) for r in refs):
        return True
    if judge is None:
        return False
    return any(judge.score(JudgeRequest("content_verify", pred, r)).score >= JUDGE_HIT for r in refs)


def score_step(pred: Action | None, ann: Annotation, judge: Judge | None = None) -> StepScore:
    """Pointer kinds hit when the point lies in any region (closed edges);
    SLIDE when its direction is within 60 degrees; text kinds by normalized
    exact match, falling back to the judge when one is given."""
    if pred is None or pred.kind is not ann.gt_kind:
        return StepScore(0, 0)
    k = ann.gt_kind
    if k in POINTER_KINDS:
        hit = any(b.contains(pred.point) for b in ann.regions)
    elif k is ActionKind.SLIDE:
        hit = slide_reward(pred.vector, ann.vector) >= SLIDE_HIT
    elif k in TEXT_KINDS:
        hit = _text_hit(pred.text, ann.refs, judge)
    else:
        hit = True
    return StepScore(1, int(hit))


@dataclass
class KindTally:
    n: int = 0
    type_hits: int = 0
    value_hits: int = 0

    def add(self, s: StepScore) -> None:
        self.n += 1
        self.type_hits += s.type_hit
        self.value_hits += s.value_hit

    def type_acc(self) -> float:
        return 100.0 * self.type_hits / self.n if self.n else float("nan")

    def value_acc(self) -> float:
        return 100.0 * self.value_hits / self.n if self.n else float("nan")


@dataclass
class ScoreReport:
    per_kind: dict[ActionKind, KindTally] = field(default_factory=lambda: {k: KindTally() for k in COLUMNS})
    macro: bool = False

    @property
    def n(self) -> int:
        return sum(t.n for t in self.per_kind.values())

    @property
    def avg(self) -> float:
        """Micro average of value hits over all steps (macro over the
        non-empty kinds when ``macro`` is set)."""
        if self.macro:
            accs = [t.value_acc() for t in self.per_kind.values() if t.n]
            return sum(accs) / len(accs) if accs else float("nan")
        n = self.n
        return 100.0 * sum(t.value_hits for t in self.per_kind.values()) / n if n else float("nan")

    @property
    def avg_type(self) -> float:
        if self.macro:
            accs = [t.type_acc() for t in self.per_kind.values() if t.n]
            return sum(accs) / len(accs) if accs else float("nan")
        n = self.n
        return 100.0 * sum(t.type_hits for t in self.per_kind.values()) / n if n else float("nan")

    def rows(self) -> list[tuple[str, list[float]]]:
        kinds = COLUMNS
        return [
            ("type_acc", [self.per_kind[k].type_acc() for k in kinds] + [self.avg_type]),
            ("value_acc", [self.per_kind[k].value_acc() for k in kinds] + [self.avg]),
            ("n", [float(self.per_kind[k].n) for k in kinds] + [float(self.n)]),
        ]

    def header(self) -> list[str]:
        return [column_name(k) for k in COLUMNS] + ["AVG"]

    def to_text(self) -> str:
        head = self.header()
        lines = [f"{'':<10}" + "".join(f"{h:>11}" for h in head)]
        for name, vals in self.rows():
            if name == "n":
                cells = "".join(f"{int(v):>11d}" for v in vals)
            else:
                cells = "".join(f"{'-':>11}" if math.isnan(v) else f"{v:>11.1f}" for v in vals)
            lines.append(f"{name:<10}" + cells)
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric"] + self.header())
        for name, vals in self.rows():
            if name == "n":
                w.writerow([name] + [str(int(v)) for v in vals])
            else:
                w.writerow([name] + ["" if math.isnan(v) else f"{v:.1f}" for v in vals])
        return buf.getvalue()


def score_benchmark(
    preds: Mapping[str, Action],
    anns: Sequence[Annotation],
    judge: Judge | None = None,
    macro: bool = False,
) -> ScoreReport:
    """Aggregate per-kind accuracies. Missing predictions score (0, 0);
    predictions for unknown steps are an error."""
    ids = {a.step_id for a in anns}
    extra = sorted(set(preds) - ids)
    if extra:
        raise UnknownStepId(f"predictions for unannotated steps: {extra[:5]}")
    report = ScoreReport(macro=macro)
    for ann in anns:
        report.per_kind[ann.gt_kind].add(score_step(preds.get(ann.step_id), ann, judge))
    return report
