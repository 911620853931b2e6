"""Canonical data model for GUI actions, steps and trajectories.

Actions have a one-line text form ``KIND(key=value,...)`` with a fixed key
order per kind and coordinates printed with two decimals::

    CLICK(x=100.00,y=240.00)
    SLIDE(x=540.00,y=1600.00,dx=0.00,dy=-1000.00)
    TYPE(text="hello")
    WAIT()

Trajectories are exchanged as JSON Lines, one trajectory per line.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DomainError, GuiRLError, ParseError


class SchemaError(GuiRLError, ValueError):
    origin = "action_schema"


class ActionKind(str, enum.Enum):
    AWAKE = "AWAKE"
    CLICK = "CLICK"
    COMPLETE = "COMPLETE"
    INFO = "INFO"
    LONGPRESS = "LONGPRESS"
    SLIDE = "SLIDE"
    TYPE = "TYPE"
    WAIT = "WAIT"


POINTER_KINDS = frozenset({ActionKind.CLICK, ActionKind.LONGPRESS})
TEXT_KINDS = frozenset({ActionKind.TYPE, ActionKind.AWAKE, ActionKind.INFO})
EMPTY_KINDS = frozenset({ActionKind.COMPLETE, ActionKind.WAIT})

# key order is part of the wire format
_KEYS: dict[ActionKind, tuple[str, ...]] = {
    ActionKind.AWAKE: ("app",),
    ActionKind.CLICK: ("x", "y"),
    ActionKind.COMPLETE: (),
    ActionKind.INFO: ("answer",),
    ActionKind.LONGPRESS: ("x", "y"),
    ActionKind.SLIDE: ("x", "y", "dx", "dy"),
    ActionKind.TYPE: ("text",),
    ActionKind.WAIT: (),
}
_NUMERIC_KEYS = frozenset({"x", "y", "dx", "dy"})


def _finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise DomainError(f"non-finite coordinate {v!r}")


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        _finite(self.x, self.y)
        if self.x < 0 or self.y < 0:
            raise DomainError(f"point ({self.x}, {self.y}) has a negative coordinate")

    def within(self, width: float, height: float) -> bool:
        return self.x <= width and self.y <= height


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box given by its center and size (pixels)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        _finite(self.cx, self.cy, self.w, self.h)
        if self.w <= 0 or self.h <= 0:
            raise DomainError(f"box size must be positive, got w={self.w}, h={self.h}")

    @property
    def corners(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1)."""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    def contains(self, p: Point) -> bool:
        x0, y0, x1, y1 = self.corners
        return x0 <= p.x <= x1 and y0 <= p.y <= y1

    def within(self, width: float, height: float) -> bool:
        x0, y0, x1, y1 = self.corners
        return x0 >= 0 and y0 >= 0 and x1 <= width and y1 <= height


@dataclass(frozen=True)
class Tolerance:
    tau_x: float
    tau_y: float
    tau_w: float
    tau_h: float

    def __post_init__(self):
        for name in ("tau_x", "tau_y", "tau_w", "tau_h"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be a positive finite number, got {v!r}")

    @classmethod
    def for_screen(cls, width: float = 1080, height: float = 2400, base: float = 50.0) -> Tolerance:
        """``base`` pixels at a 1080x2400 reference screen, scaled per axis."""
        sx = base * width / 1080
        sy = base * height / 2400
        return cls(sx, sy, sx, sy)


def _quantize(v: float) -> float:
    # identical to what serialization prints, so parse(serialize(a)) == a
    return float(f"{v:.2f}") + 0.0


@dataclass(frozen=True)
class Action:
    """One GUI action. Use the classmethod constructors.

    CLICK/LONGPRESS carry ``point``; SLIDE carries ``point`` (start) and
    ``vector`` (dx, dy); TYPE/AWAKE/INFO carry ``text``.
    """

    kind: ActionKind
    point: Point | None = None
    vector: tuple[float, float] | None = None
    text: str | None = None

    def __post_init__(self):
        kind = ActionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        wants_point = kind in POINTER_KINDS or kind is ActionKind.SLIDE
        if wants_point != (self.point is not None):
            raise SchemaError(f"{kind.value} {'requires' if wants_point else 'takes no'} point")
        if (kind is ActionKind.SLIDE) != (self.vector is not None):
            raise SchemaError(f"{kind.value} {'requires' if kind is ActionKind.SLIDE else 'takes no'} vector")
        if (kind in TEXT_KINDS) != (self.text is not None):
            raise SchemaError(f"{kind.value} {'requires' if kind in TEXT_KINDS else 'takes no'} text")
        if self.text is not None and not isinstance(self.text, str):
            raise SchemaError("text payload must be a string")
        if self.point is not None:
            object.__setattr__(self, "point", Point(_quantize(self.point.x), _quantize(self.point.y)))
        if self.vector is not None:
            dx, dy = self.vector
            _finite(dx, dy)
            object.__setattr__(self, "vector", (_quantize(dx), _quantize(dy)))

    @classmethod
    def click(cls, x: float, y: float) -> Action:
        return cls(ActionKind.CLICK, point=Point(x, y))

    @classmethod
    def longpress(cls, x: float, y: float) -> Action:
        return cls(ActionKind.LONGPRESS, point=Point(x, y))

    @classmethod
    def slide(cls, x: float, y: float, dx: float, dy: float) -> Action:
        return cls(ActionKind.SLIDE, point=Point(x, y), vector=(dx, dy))

    @classmethod
    def type(cls, text: str) -> Action:
        return cls(ActionKind.TYPE, text=text)

    @classmethod
    def awake(cls, app: str) -> Action:
        return cls(ActionKind.AWAKE, text=app)

    @classmethod
    def info(cls, answer: str) -> Action:
        return cls(ActionKind.INFO, text=answer)

    @classmethod
    def complete(cls) -> Action:
        return cls(ActionKind.COMPLETE)

    @classmethod
    def wait(cls) -> Action:
        return cls(ActionKind.WAIT)

    def within(self, width: float, height: float) -> bool:
        """Lazy screen-bounds check; SLIDE also checks its end point."""
        if self.point is None:
            return True
        if not self.point.within(width, height):
            return False
        if self.vector is not None:
            ex, ey = self.point.x + self.vector[0], self.point.y + self.vector[1]
            return 0 <= ex <= width and 0 <= ey <= height
        return True

    def __str__(self) -> str:
        return serialize_action(self)


def serialize_action(a: Action) -> str:
    values: dict[str, object] = {}
    if a.point is not None:
        values["x"], values["y"] = a.point.x, a.point.y
    if a.vector is not None:
        values["dx"], values["dy"] = a.vector
    if a.text is not None:
        values[_KEYS[a.kind][0]] = a.text
    parts = []
    for key in _KEYS[a.kind]:
        v = values[key]
        if key in _NUMERIC_KEYS:
            parts.append(f"{key}={v:.2f}")
        else:
            parts.append(f"{key}={json.dumps(v, ensure_ascii=False)}")
    return f"{a.kind.value}({','.join(parts)})"


_NUMBER = re.compile(r"-?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_KIND = re.compile(r"[A-Z]+")
_KEY = re.compile(r"[a-z]+")
_json = json.JSONDecoder()


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, message: str, pos: int | None = None) -> ParseError:
        pos = self.pos if pos is None else pos
        return ParseError(message, len(self.text[:pos].encode("utf-8")))

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def expect(self, ch: str) -> None:
        self.skip_ws()
        if not self.text.startswith(ch, self.pos):
            raise self.fail(f"expected {ch!r}")
        self.pos += 1

    def match(self, pattern: re.Pattern[str], what: str) -> str:
        self.skip_ws()
        m = pattern.match(self.text, self.pos)
        if not m:
            raise self.fail(f"expected {what}")
        self.pos = m.end()
        return m.group()


def parse_action(text: str) -> Action:
    if "\n" in text or "\r" in text:
        raise ParseError("action text must be a single line", text.find("\n") if "\n" in text else text.find("\r"))
    sc = _Scanner(text)
    start = sc.pos
    word = sc.match(_KIND, "action kind")
    try:
        kind = ActionKind(word)
    except ValueError:
        raise sc.fail(f"unknown action kind {word!r}", start) from None
    sc.expect("(")
    values: dict[str, object] = {}
    positions: dict[str, int] = {}
    for i, key in enumerate(_KEYS[kind]):
        if i:
            sc.expect(",")
        key_pos = sc.pos
        got = sc.match(_KEY, f"key {key!r}")
        if got != key:
            raise sc.fail(f"expected key {key!r} for {kind.value}, got {got!r}", key_pos)
        sc.expect("=")
        sc.skip_ws()
        positions[key] = sc.pos
        if key in _NUMERIC_KEYS:
            num_pos = sc.pos
            m = _NUMBER.match(text, sc.pos)
            if not m:
                raise sc.fail(f"non-numeric value for {key!r}", num_pos)
            sc.pos = m.end()
            values[key] = float(m.group())
        else:
            str_pos = sc.pos
            if not text.startswith('"', sc.pos):
                raise sc.fail(f"expected quoted string for {key!r}", str_pos)
            try:
                s, end = _json.raw_decode(text, sc.pos)
            except json.JSONDecodeError:
                raise sc.fail(f"malformed string for {key!r}", str_pos) from None
            if not isinstance(s, str):
                raise sc.fail(f"expected string for {key!r}", str_pos)
            sc.pos = end
            values[key] = s
    sc.expect(")")
    sc.skip_ws()
    if sc.pos != len(text):
        raise sc.fail("trailing characters after action")
    try:
        if kind in POINTER_KINDS:
            return Action(kind, point=Point(values["x"], values["y"]))
        if kind is ActionKind.SLIDE:
            return Action.slide(values["x"], values["y"], values["dx"], values["dy"])
        if kind in TEXT_KINDS:
            return Action(kind, text=values[_KEYS[kind][0]])
        return Action(kind)
    except DomainError as e:
        bad = next((k for k in ("x", "y") if k in values and values[k] < 0), None)
        raise sc.fail(str(e), positions.get(bad, start)) from None


def normalized_deviation(pred: float, gt: float, tau: float) -> float:
    """|pred - gt| / tau."""
    if not (math.isfinite(tau) and tau > 0):
        raise DomainError(f"tolerance must be positive, got {tau!r}")
    if not (math.isfinite(pred) and math.isfinite(gt)):
        raise DomainError("non-finite coordinate")
    return abs(pred - gt) / tau


class Outcome(str, enum.Enum):
    UNLABELED = "unlabeled"
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class Step:
    observation_id: str
    action: Action
    token_logprobs: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.token_logprobs is not None:
            lps = tuple(float(v) for v in self.token_logprobs)
            for v in lps:
                if not math.isfinite(v) or v > 0:
                    raise SchemaError(f"token log-probability {v!r} is not a finite value <= 0")
            object.__setattr__(self, "token_logprobs", lps)


@dataclass(frozen=True)
class Trajectory:
    task: str
    steps: tuple[Step, ...]
    outcome: Outcome = Outcome.UNLABELED
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "outcome", Outcome(self.outcome))
        if not self.steps:
            raise SchemaError("trajectory must contain at least one step")

    def with_outcome(self, outcome: Outcome | str) -> Trajectory:
        outcome = Outcome(outcome)
        if outcome is Outcome.UNLABELED:
            raise SchemaError("cannot reset a trajectory to unlabeled")
        if self.outcome is not Outcome.UNLABELED and self.outcome is not outcome:
            raise SchemaError(f"trajectory already labeled {self.outcome.value}")
        return Trajectory(self.task, self.steps, outcome, dict(self.meta))

    @property
    def succeeded(self) -> bool:
        return self.outcome is Outcome.SUCCESS


def trajectory_to_dict(t: Trajectory) -> dict:
    steps = []
    for s in t.steps:
        d: dict = {"obs": s.observation_id, "action": serialize_action(s.action)}
        if s.token_logprobs is not None:
            d["logprobs"] = list(s.token_logprobs)
        steps.append(d)
    return {"task": t.task, "steps": steps, "outcome": t.outcome.value}


def trajectory_from_dict(d: dict) -> Trajectory:
    try:
        steps = [
            Step(s["obs"], parse_action(s["action"]), s.get("logprobs"))
            for s in d["steps"]
        ]
        return Trajectory(d["task"], tuple(steps), Outcome(d.get("outcome", "unlabeled")))
    except (KeyError, TypeError) as e:
        raise SchemaError(f"malformed trajectory record: {e}") from None


def dumps_trajectory(t: Trajectory) -> str:
    return json.dumps(trajectory_to_dict(t), ensure_ascii=False, separators=(",", ":"))


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(dumps_trajectory(t) + "\n")
            n += 1
    return n


def iter_trajectories(path: str | Path) -> Iterator[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield trajectory_from_dict(json.loads(line))
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({e})") from None


def read_trajectories(path: str | Path) -> list[Trajectory]:
    return list(iter_trajectories(path))
