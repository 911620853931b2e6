"""LLM-as-a-judge scoring behind a small interface.

``MockJudge`` is deterministic and offline; ``RemoteJudge`` posts JSON to an
HTTP endpoint::

    request:  {"rubric": ..., "prediction": ..., "reference": ..., "context": [...]}
    response: {"score": 0.83, "rationale": "..."}

Scores outside [0, 1] are rejected, never clamped.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx

from .errors import GuiRLError

RUBRICS = ("content_verify", "trajectory_quality")


class JudgeError(GuiRLError):
    origin = "judge_client"


class JudgeUnavailable(JudgeError):
    pass


class JudgeMalformed(JudgeError):
    pass


class JudgeTimeout(JudgeUnavailable):
    pass


@dataclass(frozen=True)
class JudgeRequest:
    rubric: str
    prediction: str
    reference: str = ""
    context: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.rubric not in RUBRICS:
            raise JudgeMalformed(f"unknown rubric {self.rubric!r}")
        if self.prediction is None or self.reference is None:
            raise JudgeMalformed("prediction and reference must be strings")
        if self.rubric == "trajectory_quality" and self.context is None:
            raise JudgeMalformed("trajectory_quality needs the step list in context")
        if self.context is not None:
            object.__setattr__(self, "context", tuple(self.context))

    def to_json(self) -> dict:
        d = {"rubric": self.rubric, "prediction": self.prediction, "reference": self.reference}
        if self.context is not None:
            d["context"] = list(self.context)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class JudgeResponse:
    score: float
    rationale: str = ""

    def __post_init__(self):
        if isinstance(self.score, bool) or not isinstance(self.score, (int, float)):
            raise JudgeMalformed(f"score must be a number, got {self.score!r}")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise JudgeMalformed(f"score {self.score!r} outside [0, 1]")


class Judge(Protocol):
    def score(self, req: JudgeRequest) -> JudgeResponse: ...


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str) -> float:
    """1 - edit_distance / max_len; two empty strings are identical."""
    n = max(len(a), len(b))
    if n == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / n


class MockJudge:
    """Deterministic offline stand-in.

    content_verify scores normalized edit similarity; trajectory_quality is
    the fraction of steps in ``context`` that parse as canonical actions.
    Stateless, so safe under any concurrency.
    """

    def score(self, req: JudgeRequest) -> JudgeResponse:
        if req.rubric == "content_verify":
            return JudgeResponse(similarity(req.prediction, req.reference))
        from .actions import parse_action
        from .errors import ParseError

        steps = req.context or ()
        if not steps:
            return JudgeResponse(0.0, "empty trajectory")
        ok = 0
        for s in steps:
            try:
                parse_action(s)
                ok += 1
            except ParseError:
                pass
        return JudgeResponse(ok / len(steps), f"{ok}/{len(steps)} steps well-formed")


@dataclass
class RemoteJudge:
    """HTTP judge. Retries transport failures ``retries`` times with
    exponential backoff and caps concurrent requests at ``max_in_flight``."""

    endpoint: str
    api_key: str | None = None
    timeout: float = 30.0
    retries: int = 1
    backoff: float = 0.5
    max_in_flight: int = 4
    cache: bool = False
    client: httpx.Client | None = None
    sleep: Callable[[float], None] = time.sleep
    _sem: threading.BoundedSemaphore = field(init=False, repr=False)
    _memo: dict[str, JudgeResponse] = field(init=False, repr=False, default_factory=dict)
    _lock: threading.Lock = field(init=False, repr=False, default_factory=threading.Lock)

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self._sem = threading.BoundedSemaphore(self.max_in_flight)
        if self.client is None:
            self.client = httpx.Client(timeout=self.timeout)

    @classmethod
    def from_env(cls, **kwargs) -> RemoteJudge:
        endpoint = os.environ.get("JUDGE_ENDPOINT")
        if not endpoint:
            raise JudgeUnavailable("JUDGE_ENDPOINT is not set")
        return cls(endpoint, os.environ.get("JUDGE_API_KEY"), **kwargs)

    def score(self, req: JudgeRequest) -> JudgeResponse:
        key = req.digest() if self.cache else None
        if key is not None:
            with self._lock:
                hit = self._memo.get(key)
            if hit is not None:
                return hit
        with self._sem:
            resp = self._post(req)
        if key is not None:
            with self._lock:
                self._memo[key] = resp
        return resp

    def _post(self, req: JudgeRequest) -> JudgeResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                r = self.client.post(self.endpoint, json=req.to_json(), headers=headers, timeout=self.timeout)
            except httpx.TimeoutException as e:
                last = JudgeTimeout(f"judge timed out after {self.timeout}s: {e}")
                continue
            except httpx.TransportError as e:
                last = JudgeUnavailable(f"judge transport failure: {e}")
                continue
            if r.status_code >= 500 or r.status_code == 429:
                last = JudgeUnavailable(f"judge returned HTTP {r.status_code}")
                continue
            if r.status_code >= 400:
                raise JudgeUnavailable(f"judge rejected request: HTTP {r.status_code}")
            return _decode(r.content)
        assert last is not None
        raise last


def _decode(body: bytes) -> JudgeResponse:
    try:
        data = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise JudgeMalformed("judge response is not JSON") from None
    if not isinstance(data, dict) or "score" not in data:
        raise JudgeMalformed("judge response lacks a score")
    rationale = data.get("rationale") or ""
    return JudgeResponse(data["score"], str(rationale))


def make_judge(kind: str = "mock") -> Judge:
    if kind == "mock":
        return MockJudge()
    if kind == "remote":
        return RemoteJudge.from_env()
    raise ValueError(f"unknown judge backend {kind!r}")
