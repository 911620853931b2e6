"""Tabular agent for the synthetic environment.

Every step emits one token from a fixed vocabulary:

    0-9    click widget slot i (slots past the last widget hit blank margin)
    10-12  AWAKE one of the apps
    13/14  swipe to the next / previous page
    15     TYPE the quoted text from the instruction
    16     WAIT
    17     COMPLETE

The state key is the instruction without any hint block plus the screen
and page, so hinted and unhinted rollouts train the same table rows.
"""

from __future__ import annotations

import math
import re

import numpy as np

from .actions import Action, ActionKind, Point, Trajectory
from .errors import GuiRLError
from .grpo import ToyPolicy
from .sim_env import AppGraph, Observation, click_at, split_hint, swipe

N_SLOTS = 10
_BLANK_X = 60.0
_TYPE_RE = re.compile(r'type "([^"]*)"')


class EncodeError(GuiRLError):
    origin = "agent"


def blank_point(slot: int) -> Point:
    return Point(_BLANK_X, 260.0 + 210.0 * slot)


def state_key(instruction: str, observation_id: str) -> str:
    base, _ = split_hint(instruction)
    return f"{base}|{observation_id}"


class Vocabulary:
    def __init__(self, graph: AppGraph):
        self.graph = graph
        self.apps = sorted(graph.apps)
        self.awake0 = N_SLOTS
        self.next_page = self.awake0 + len(self.apps)
        self.prev_page = self.next_page + 1
        self.type_tok = self.prev_page + 1
        self.wait_tok = self.type_tok + 1
        self.complete_tok = self.wait_tok + 1
        self.size = self.complete_tok + 1

    def decode(self, tok: int, widgets, instruction: str) -> Action:
        if tok < N_SLOTS:
            if tok < len(widgets):
                return click_at(widgets[tok])
            p = blank_point(tok)
            return Action.click(p.x, p.y)
        if tok < self.next_page:
            return Action.awake(self.apps[tok - self.awake0])
        if tok == self.next_page:
            return swipe(+1)
        if tok == self.prev_page:
            return swipe(-1)
        if tok == self.type_tok:
            base, _ = split_hint(instruction)
            m = _TYPE_RE.search(base)
            return Action.type(m.group(1) if m else "")
        if tok == self.wait_tok:
            return Action.wait()
        if tok == self.complete_tok:
            return Action.complete()
        raise EncodeError(f"token {tok} outside the vocabulary")

    def encode(self, action: Action, widgets) -> int:
        kind = action.kind
        if kind is ActionKind.CLICK:
            for slot, w in enumerate(widgets):
                if action.point == click_at(w).point:
                    return slot
            for slot in range(len(widgets), N_SLOTS):
                if action.point == Action.click(*_xy(blank_point(slot))).point:
                    return slot
            raise EncodeError(f"click at {action.point} matches no vocabulary slot")
        if kind is ActionKind.AWAKE:
            if action.text not in self.apps:
                raise EncodeError(f"unknown app {action.text!r}")
            return self.awake0 + self.apps.index(action.text)
        if kind is ActionKind.SLIDE:
            dy = action.vector[1]
            if dy < 0:
                return self.next_page
            if dy > 0:
                return self.prev_page
            raise EncodeError("vertical swipe expected")
        if kind is ActionKind.TYPE:
            return self.type_tok
        if kind is ActionKind.WAIT:
            return self.wait_tok
        if kind is ActionKind.COMPLETE:
            return self.complete_tok
        raise EncodeError(f"{kind.value} is not in the agent vocabulary")


def _xy(p: Point) -> tuple[float, float]:
    return p.x, p.y


def _parse_obs_id(observation_id: str) -> tuple[str, int]:
    screen, _, page = observation_id.rpartition("#")
    return screen, int(page)


class ToyAgent:
    """Samples actions from a ``ToyPolicy``.

    With a hint block in the instruction the agent follows the next hinted
    action with probability ``hint_follow_prob`` and samples from the
    policy otherwise; logged log-probabilities are those of this mixture.
    """

    def __init__(self, policy: ToyPolicy, graph: AppGraph, hint_follow_prob: float = 0.9, greedy: bool = False):
        if not 0.0 <= hint_follow_prob <= 1.0:
            raise ValueError("hint_follow_prob must lie in [0, 1]")
        self.vocab = Vocabulary(graph)
        if policy.n_tokens != self.vocab.size:
            raise ValueError(f"policy has {policy.n_tokens} tokens, vocabulary needs {self.vocab.size}")
        self.policy = policy
        self.graph = graph
        self.hint_follow_prob = hint_follow_prob
        self.greedy = greedy

    @classmethod
    def fresh(cls, graph: AppGraph, seed: int = 0, init_scale: float = 0.0, **kwargs) -> ToyAgent:
        return cls(ToyPolicy(Vocabulary(graph).size, seed, init_scale), graph, **kwargs)

    def _hint_token(self, instruction: str, t: int, widgets) -> int | None:
        _, hint = split_hint(instruction)
        if hint is None or t >= len(hint) or self.hint_follow_prob == 0:
            return None
        try:
            return self.vocab.encode(hint[t], widgets)
        except EncodeError:
            return None

    def context_probs(self, instruction: str, observation_id: str, t: int, widgets=None) -> np.ndarray:
        """Sampling distribution at step ``t`` of an episode with this
        instruction, hint mixture included."""
        if widgets is None:
            screen, page = _parse_obs_id(observation_id)
            widgets = self.graph.screens[screen].visible(page)
        p = self.policy.probs(state_key(instruction, observation_id))
        ht = self._hint_token(instruction, t, widgets)
        if ht is not None:
            p = (1.0 - self.hint_follow_prob) * p
            p[ht] += self.hint_follow_prob
        return p

    def act(self, obs: Observation, rng: np.random.Generator) -> tuple[Action, list[float]]:
        key = state_key(obs.instruction, obs.observation_id)
        lp = self.policy.log_probs(key)
        if self.greedy:
            tok = int(np.argmax(lp))
            return self.vocab.decode(tok, obs.widgets, obs.instruction), [float(lp[tok])]
        p = np.exp(lp)
        ht = self._hint_token(obs.instruction, len(obs.history), obs.widgets)
        if ht is not None:
            p = (1.0 - self.hint_follow_prob) * p
            p[ht] += self.hint_follow_prob
        c = np.cumsum(p)
        tok = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
        tok = min(tok, len(p) - 1)
        # unmixed steps log exactly what the trainer recomputes
        logp = math.log(p[tok]) if ht is not None else float(lp[tok])
        return self.vocab.decode(tok, obs.widgets, obs.instruction), [logp]

    def batch_entropy(self, trajectories) -> float:
        """Mean entropy (nats) of the sampling distribution over every step
        of the given trajectories, in the context each step was taken."""
        hs = []
        for traj in trajectories:
            for t, step in enumerate(traj.steps):
                p = self.context_probs(traj.task, step.observation_id, t)
                nz = p[p > 0]
                hs.append(float(-(nz * np.log(nz)).sum()))
        if not hs:
            raise ValueError("batch_entropy needs at least one step")
        return float(np.mean(hs))

    def encode_step(self, traj: Trajectory, i: int) -> list[tuple[str, int]]:
        step = traj.steps[i]
        screen, page = _parse_obs_id(step.observation_id)
        widgets = self.graph.screens[screen].visible(page)
        return [(state_key(traj.task, step.observation_id), self.vocab.encode(step.action, widgets))]
