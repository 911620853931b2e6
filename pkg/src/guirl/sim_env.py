"""Deterministic synthetic GUI environment.

Screens are widget tables loaded from ``apps.json``: a launcher screen plus
three apps. Observations are symbolic renderings, not pixels. Tasks come
with a verifier program in a tiny conjunctive DSL::

    clicked(mail/compose/send) & typed(mail/compose/to, "bob") & on_screen(mail/sent)

and a ground-truth plan that is checked to satisfy the verifier when the
task is generated.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .actions import Action, ActionKind, BBox, Outcome, Point, Step, Trajectory, parse_action, serialize_action
from .errors import GuiRLError, ParseError

DEFAULT_STEP_CAP = 20
DIFFICULTIES = ("atomic", "composite", "conditional")

# canonical swipes; up reveals the next page of a list screen
SWIPE_START = (540.0, 1800.0)
SWIPE_DISTANCE = 1200.0

HINT_OPEN = " <hint> "
HINT_SEP = " ; "
HINT_CLOSE = " </hint>"

TYPE_TEXTS = (
    "bob@example.com", "weekly report", "coffee beans", "221B Baker Street",
    "see you at noon", "SAVE10", "river walk", "alice",
)


class EnvError(GuiRLError):
    origin = "sim_env"


class StepCapExceeded(EnvError):
    pass


class GenerationError(EnvError):
    pass


class VerifierError(EnvError):
    pass


@dataclass(frozen=True)
class Widget:
    id: str
    kind: str
    text: str
    bbox: BBox
    target: str | None = None
    page: int = 0

    @property
    def center(self) -> Point:
        return Point(self.bbox.cx, self.bbox.cy)


@dataclass(frozen=True)
class Screen:
    id: str
    app: str | None
    title: str
    pages: int
    widgets: tuple[Widget, ...]

    def visible(self, page: int) -> tuple[Widget, ...]:
        """Widgets shown on ``page``; list items live on a single page."""
        return tuple(w for w in self.widgets if w.kind != "list_item" or w.page == page)


class AppGraph:
    """Read-only app graph shared by every episode."""

    def __init__(self, data: dict):
        self.data = data
        self.width = float(data["screen"]["width"])
        self.height = float(data["screen"]["height"])
        self.home = data["home"]
        self.apps = {a["id"]: a for a in data["apps"]}
        self.screens: dict[str, Screen] = {}
        self.widgets: dict[str, tuple[Screen, Widget]] = {}
        for s in data["screens"]:
            widgets = tuple(
                Widget(w["id"], w["kind"], w["text"], BBox(*w["bbox"]), w.get("target"), w.get("page", 0))
                for w in s["widgets"]
            )
            screen = Screen(s["id"], s.get("app"), s["title"], int(s.get("pages", 1)), widgets)
            if screen.id in self.screens:
                raise EnvError(f"duplicate screen id {screen.id}")
            self.screens[screen.id] = screen
            for w in widgets:
                if w.id in self.widgets:
                    raise EnvError(f"duplicate widget id {w.id}")
                if not w.bbox.within(self.width, self.height):
                    raise EnvError(f"widget {w.id} lies outside the screen")
                self.widgets[w.id] = (screen, w)
        for sid, screen in self.screens.items():
            for w in screen.widgets:
                if w.target is not None and w.target not in self.screens:
                    raise EnvError(f"widget {w.id} targets unknown screen {w.target}")
            _check_no_overlap(screen)

    @classmethod
    def load(cls, path: str | Path | None = None) -> AppGraph:
        if path is None:
            text = resources.files("guirl").joinpath("data/apps.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls(json.loads(text))

    def app_root(self, app: str) -> str | None:
        a = self.apps.get(app)
        return a["root"] if a else None


def _check_no_overlap(screen: Screen) -> None:
    ws = screen.widgets
    for i, a in enumerate(ws):
        ax0, ay0, ax1, ay1 = a.bbox.corners
        for b in ws[i + 1:]:
            bx0, by0, bx1, by1 = b.bbox.corners
            if ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1:
                raise EnvError(f"widgets {a.id} and {b.id} overlap")


@dataclass(frozen=True)
class EnvState:
    screen: str
    page: int = 0
    field_contents: tuple[tuple[str, str], ...] = ()
    focused: str | None = None
    clicked_log: tuple[str, ...] = ()
    history: tuple[str, ...] = ()
    step_count: int = 0
    rng_seed: int = 0
    done: bool = False

    @property
    def fields(self) -> dict[str, str]:
        return dict(self.field_contents)


@dataclass(frozen=True)
class Observation:
    screen: str
    page: int
    pages: int
    title: str
    widgets: tuple[Widget, ...]
    instruction: str
    history: tuple[str, ...]

    @property
    def observation_id(self) -> str:
        return f"{self.screen}#{self.page}"

    def render(self) -> str:
        lines = [
            f"screen: {self.screen} ({self.title}) page {self.page + 1}/{self.pages}",
            f"instruction: {self.instruction}",
            f"history: {' | '.join(self.history) if self.history else '-'}",
            "widgets:",
        ]
        for slot, w in enumerate(self.widgets):
            b = w.bbox
            lines.append(
                f"  [{slot}] {w.kind:<9} {w.id} box=({b.cx:.2f},{b.cy:.2f},{b.w:.2f},{b.h:.2f}) {json.dumps(w.text)}"
            )
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.render().encode("utf-8")).hexdigest()


# ---------------------------------------------------------------- verifier DSL

@dataclass(frozen=True)
class Predicate:
    name: str
    args: tuple[str, ...]


_PRED_ARITY = {"clicked": 1, "typed": 2, "on_screen": 1}
_IDENT = r"[A-Za-z0-9_./-]+"
_PRED_RE = re.compile(rf"\s*(\w+)\(\s*({_IDENT})\s*(?:,\s*(\"(?:[^\"\\]|\\.)*\")\s*)?\)\s*")


def parse_program(program: str) -> tuple[Predicate, ...]:
    if not isinstance(program, str) or not program.strip():
        raise VerifierError("empty verifier program")
    preds = []
    for part in program.split("&"):
        m = _PRED_RE.fullmatch(part)
        if not m:
            raise VerifierError(f"malformed predicate {part.strip()!r}")
        name, ident, quoted = m.groups()
        if name not in _PRED_ARITY:
            raise VerifierError(f"unknown predicate {name!r}")
        args = (ident,) if quoted is None else (ident, json.loads(quoted))
        if len(args) != _PRED_ARITY[name]:
            raise VerifierError(f"{name} takes {_PRED_ARITY[name]} argument(s)")
        preds.append(Predicate(name, args))
    return tuple(preds)


def format_program(preds: Sequence[Predicate]) -> str:
    parts = []
    for p in preds:
        if p.name == "typed":
            parts.append(f"typed({p.args[0]}, {json.dumps(p.args[1], ensure_ascii=False)})")
        else:
            parts.append(f"{p.name}({p.args[0]})")
    return " & ".join(parts)


def evaluate_program(program: str, state: EnvState) -> bool:
    fields_ = state.fields
    for p in parse_program(program):
        if p.name == "clicked":
            ok = p.args[0] in state.clicked_log
        elif p.name == "typed":
            ok = fields_.get(p.args[0]) == p.args[1]
        else:
            ok = state.screen == p.args[0]
        if not ok:
            return False
    return True


# ---------------------------------------------------------------- tasks

@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    instruction: str
    verifier: str
    gt_plan: tuple[Action, ...]
    difficulty: str
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "instruction": self.instruction,
            "verifier": self.verifier,
            "gt_plan": [serialize_action(a) for a in self.gt_plan],
            "difficulty": self.difficulty,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TaskSpec:
        parse_program(d["verifier"])
        return cls(
            d["task_id"], d["instruction"], d["verifier"],
            tuple(parse_action(a) for a in d["gt_plan"]), d["difficulty"], int(d.get("seed", 0)),
        )


def hint_augment(task: TaskSpec) -> TaskSpec:
    """Append the serialized ground-truth plan to the instruction."""
    block = HINT_SEP.join(serialize_action(a) for a in task.gt_plan)
    return replace(task, instruction=f"{task.instruction}{HINT_OPEN}{block}{HINT_CLOSE}")


def split_hint(instruction: str) -> tuple[str, tuple[Action, ...] | None]:
    """Return (base instruction, hinted actions or None)."""
    i = instruction.find(HINT_OPEN)
    if i < 0 or not instruction.endswith(HINT_CLOSE):
        return instruction, None
    body = instruction[i + len(HINT_OPEN):-len(HINT_CLOSE)]
    actions: list[Action] = []
    pending = ""
    for piece in body.split(HINT_SEP) if body else []:
        # a TYPE payload may itself contain the separator
        pending = f"{pending}{HINT_SEP}{piece}" if pending else piece
        try:
            actions.append(parse_action(pending))
            pending = ""
        except ParseError:
            continue
    if pending:
        return instruction, None
    return instruction[:i], tuple(actions)


class Policy(Protocol):
    def act(self, obs: Observation, rng: np.random.Generator) -> tuple[Action, list[float]]: ...


def click_at(w: Widget) -> Action:
    return Action.click(w.bbox.cx, w.bbox.cy)


def swipe(direction: int) -> Action:
    """direction +1 reveals the next page, -1 the previous one."""
    return Action.slide(*SWIPE_START, 0.0, -direction * SWIPE_DISTANCE)


class SimEnv:
    def __init__(self, graph: AppGraph | None = None, step_cap: int = DEFAULT_STEP_CAP):
        if step_cap < 1:
            raise EnvError("step cap must be positive")
        self.graph = graph or AppGraph.load()
        self.step_cap = step_cap

    # -- episode ---------------------------------------------------------

    def reset(self, task: TaskSpec, seed: int = 0) -> tuple[EnvState, Observation]:
        state = EnvState(screen=self.graph.home, rng_seed=int(seed))
        return state, self.observe(state, task.instruction)

    def observe(self, state: EnvState, instruction: str) -> Observation:
        screen = self.graph.screens[state.screen]
        return Observation(
            screen.id, state.page, screen.pages, screen.title,
            screen.visible(state.page), instruction, state.history,
        )

    def widget_at(self, state: EnvState, p: Point) -> Widget | None:
        for w in self.graph.screens[state.screen].visible(state.page):
            if w.bbox.contains(p):
                return w
        return None

    def transition(self, state: EnvState, action: Action) -> EnvState:
        if state.done:
            raise EnvError("episode already finished")
        if state.step_count >= self.step_cap:
            raise StepCapExceeded(f"step cap {self.step_cap} reached")
        s = replace(state, step_count=state.step_count + 1, history=state.history + (serialize_action(action),))
        kind = action.kind
        if kind is ActionKind.CLICK:
            w = self.widget_at(s, action.point)
            if w is not None:
                s = replace(s, clicked_log=s.clicked_log + (w.id,))
                if w.kind == "textfield":
                    s = replace(s, focused=w.id)
                elif w.target is not None:
                    s = replace(s, screen=w.target, page=0, focused=None)
        elif kind is ActionKind.TYPE:
            if s.focused is not None:
                contents = dict(s.field_contents)
                contents[s.focused] = action.text
                s = replace(s, field_contents=tuple(sorted(contents.items())))
        elif kind is ActionKind.SLIDE:
            pages = self.graph.screens[s.screen].pages
            dy = action.vector[1]
            if dy < 0 and s.page + 1 < pages:
                s = replace(s, page=s.page + 1)
            elif dy > 0 and s.page > 0:
                s = replace(s, page=s.page - 1)
        elif kind is ActionKind.AWAKE:
            root = self.graph.app_root(action.text)
            if root is not None:
                s = replace(s, screen=root, page=0, focused=None)
        elif kind is ActionKind.COMPLETE:
            s = replace(s, done=True)
        # WAIT, LONGPRESS and INFO leave the screen untouched
        return s

    def step(self, state: EnvState, action: Action, instruction: str = "") -> tuple[EnvState, Observation, bool]:
        s = self.transition(state, action)
        return s, self.observe(s, instruction), s.done

    def verify(self, state: EnvState, task: TaskSpec) -> Outcome:
        return Outcome.SUCCESS if evaluate_program(task.verifier, state) else Outcome.FAILURE

    def replay(self, task: TaskSpec, actions: Sequence[Action], seed: int = 0) -> EnvState:
        state, _ = self.reset(task, seed)
        for a in actions:
            state = self.transition(state, a)
            if state.done:
                break
        return state

    def rollout(self, policy: Policy, task: TaskSpec, seed: int, max_steps: int | None = None) -> Trajectory:
        max_steps = self.step_cap if max_steps is None else min(max_steps, self.step_cap)
        rng = np.random.default_rng(seed)
        state, obs = self.reset(task, seed)
        steps = []
        while True:
            action, logprobs = policy.act(obs, rng)
            steps.append(Step(obs.observation_id, action, tuple(logprobs) if logprobs is not None else None))
            state, obs, done = self.step(state, action, task.instruction)
            if done or len(steps) >= max_steps:
                break
        outcome = self.verify(state, task)
        return Trajectory(task.instruction, tuple(steps), outcome, {"task_id": task.task_id, "seed": int(seed)})

    # -- task generation -------------------------------------------------

    def _moves(self, screen: str, page: int) -> list[tuple[Action, tuple[str, int]]]:
        out = []
        sc = self.graph.screens[screen]
        for w in sc.visible(page):
            if w.target is not None and w.kind != "textfield":
                out.append((click_at(w), (w.target, 0)))
        for app in sorted(self.graph.apps):
            out.append((Action.awake(app), (self.graph.app_root(app), 0)))
        if page + 1 < sc.pages:
            out.append((swipe(+1), (screen, page + 1)))
        if page > 0:
            out.append((swipe(-1), (screen, page - 1)))
        return out

    @cached_property
    def _paths(self) -> dict[tuple[str, int], tuple[Action, ...]]:
        """Shortest action sequence from the launcher to every (screen, page)."""
        start = (self.graph.home, 0)
        paths = {start: ()}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for action, nxt in self._moves(*node):
                if nxt not in paths:
                    paths[nxt] = paths[node] + (action,)
                    queue.append(nxt)
        return paths

    def _candidates(self, difficulty: str) -> list[tuple]:
        g = self.graph
        out = []
        for wid in sorted(g.widgets):
            screen, w = g.widgets[wid]
            path = self._paths.get((screen.id, w.page if w.kind == "list_item" else 0))
            if path is None:
                continue
            plan = path + (click_at(w),)
            if difficulty == "atomic" and len(plan) + 1 <= 3:
                out.append(("click", screen, w, plan))
            elif difficulty == "composite" and w.kind == "textfield" and screen.app is not None:
                for b in screen.visible(0):
                    if b.kind == "button":
                        out.append(("type", screen, w, path, b))
            elif difficulty == "conditional" and w.kind == "list_item" and w.page > 0 and w.target is not None:
                out.append(("scroll", screen, w, plan))
        return out

    def generate_task(self, seed: int, difficulty: str = "atomic") -> TaskSpec:
        if difficulty not in DIFFICULTIES:
            raise GenerationError(f"unknown difficulty {difficulty!r}")
        cands = self._candidates(difficulty)
        if not cands:
            raise GenerationError(f"no solvable {difficulty} task in this app graph")
        rng = np.random.default_rng(seed)
        c = cands[int(rng.integers(len(cands)))]
        kind, screen, w = c[0], c[1], c[2]
        where = self._where(screen)
        if kind == "click":
            plan = c[3]
            preds = [Predicate("clicked", (w.id,))]
            instruction = f'{where}, tap "{w.text}".'
        elif kind == "type":
            path, button = c[3], c[4]
            text = TYPE_TEXTS[int(rng.integers(len(TYPE_TEXTS)))]
            plan = path + (click_at(w), Action.type(text), click_at(button))
            preds = [Predicate("typed", (w.id, text)), Predicate("clicked", (button.id,))]
            instruction = f'{where}, type "{text}" into the "{w.text}" field, then tap "{button.text}".'
        else:
            plan = c[3]
            preds = [Predicate("clicked", (w.id,)), Predicate("on_screen", (w.target,))]
            instruction = f'{where}, scroll down to "{w.text}", open it and stay there.'
        task = TaskSpec(
            task_id=f"{difficulty}-{seed}",
            instruction=instruction,
            verifier=format_program(preds),
            gt_plan=plan + (Action.complete(),),
            difficulty=difficulty,
            seed=int(seed),
        )
        if len(task.gt_plan) > self.step_cap:
            raise GenerationError(f"plan for {task.task_id} exceeds the step cap")
        if self.verify(self.replay(task, task.gt_plan), task) is not Outcome.SUCCESS:
            raise GenerationError(f"ground-truth plan for {task.task_id} fails its verifier")
        return task

    def _where(self, screen: Screen) -> str:
        if screen.app is None:
            return f"On the {screen.title.lower()} screen"
        app = self.graph.apps[screen.app]["title"]
        return f"In {app}, on the {screen.title} screen"


class EnvVerifier:
    """Calibration verifier: replays a trajectory and checks the task's
    verifier program on the final state."""

    def __init__(self, env: SimEnv, task: TaskSpec, step_cap: int | None = None):
        parse_program(task.verifier)
        self.env = env
        self.task = task
        self.step_cap = step_cap or env.step_cap

    def complete(self, traj: Trajectory) -> bool:
        return traj.steps[-1].action.kind is ActionKind.COMPLETE or len(traj.steps) >= self.step_cap

    def __call__(self, traj: Trajectory) -> bool:
        state = self.env.replay(self.task, [s.action for s in traj.steps])
        return self.env.verify(state, self.task) is Outcome.SUCCESS


class PlanPolicy:
    """Scripted policy that replays a fixed action list, then completes."""

    def __init__(self, plan: Sequence[Action]):
        self.plan = tuple(plan)

    def act(self, obs: Observation, rng: np.random.Generator) -> tuple[Action, list[float]]:
        i = len(obs.history)
        return (self.plan[i] if i < len(self.plan) else Action.complete()), [0.0]


def load_tasks(path: str | Path) -> list[TaskSpec]:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                tasks.append(TaskSpec.from_dict(json.loads(line)))
    return tasks
