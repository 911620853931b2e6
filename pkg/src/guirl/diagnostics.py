"""Off-policy stability metrics and their CSV stream.

All metrics take token log-probabilities (or ratios) of rollout samples:
``logp_rollout`` from the policy that generated them and ``logp_train``
from the policy being optimized.
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import DomainError, GuiRLError
from .grpo import k3

DEFAULT_SEQ_TRUNC = 5.0


class DiagnosticsError(GuiRLError):
    origin = "diagnostics"


class LengthMismatch(DiagnosticsError, ValueError):
    pass


class MissingBounds(DiagnosticsError, ValueError):
    pass


class RecordRejected(DiagnosticsError, ValueError):
    pass


@dataclass(frozen=True)
class DiagRecord:
    step: int
    rollout_log_ppl: float
    ppl_ratio: float
    k3_kl: float
    chi2_token: float
    chi2_seq: float
    entropy: float
    clip_fraction: float


COLUMNS = tuple(f.name for f in fields(DiagRecord))


def _nonempty(x: Sequence[float], what: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        raise DomainError(f"{what} must be non-empty")
    return a


def rollout_log_ppl(logprobs: Sequence[float]) -> float:
    """Mean negative log-likelihood per token."""
    return float(-np.mean(_nonempty(logprobs, "logprobs")))


def ppl_ratio(logp_train: Sequence[float], logp_rollout: Sequence[float]) -> float:
    """exp(mean(logp_rollout - logp_train)); above 1 when the trainer finds
    the rollout tokens less likely than the sampler did."""
    a = np.asarray(logp_train, dtype=float)
    b = np.asarray(logp_rollout, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.size} train vs {b.size} rollout log-probabilities")
    if a.size == 0:
        raise DomainError("log-probabilities must be non-empty")
    return float(math.exp(np.mean(b - a)))


def k3_kl(deltas: Sequence[float]) -> float:
    """mean(e^d - d - 1) with d = log(p_train / p_rollout) on rollout samples;
    estimates KL(rollout || train)."""
    d = _nonempty(deltas, "deltas")
    return float(np.mean(k3(d)))


def chi2(
    ratios: Sequence[float],
    granularity: str = "token",
    seq_bounds: Sequence[tuple[int, int]] | None = None,
    trunc: float = DEFAULT_SEQ_TRUNC,
) -> float:
    """Spread of importance weights around 1.

    token:    mean((r - 1)^2) over tokens
    sequence: mean((min(prod r, trunc) - 1)^2) over the [start, end) ranges
    """
    r = _nonempty(ratios, "ratios")
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise DomainError("importance ratios must be positive and finite")
    if granularity == "token":
        return float(np.mean((r - 1.0) ** 2))
    if granularity != "sequence":
        raise DomainError(f"unknown granularity {granularity!r}")
    if not seq_bounds:
        raise MissingBounds("sequence granularity needs seq_bounds")
    if not trunc > 0:
        raise DomainError("trunc must be positive")
    log_r = np.log(r)
    vals = []
    for start, end in seq_bounds:
        if not 0 <= start < end <= r.size:
            raise MissingBounds(f"bad sequence range [{start}, {end})")
        w = min(math.exp(min(float(log_r[start:end].sum()), 700.0)), trunc)
        vals.append((w - 1.0) ** 2)
    return float(np.mean(vals))


def seq_bounds_from_ids(seq_ids: Sequence[int]) -> list[tuple[int, int]]:
    """Contiguous [start, end) ranges of equal ids."""
    bounds = []
    start = 0
    for i in range(1, len(seq_ids) + 1):
        if i == len(seq_ids) or seq_ids[i] != seq_ids[start]:
            bounds.append((start, i))
            start = i
    return bounds


def _check(rec: DiagRecord) -> None:
    for name, v in zip(COLUMNS, astuple(rec)):
        if name == "step":
            if not isinstance(v, (int, np.integer)):
                raise RecordRejected(f"step must be an integer, got {v!r}")
            continue
        if not (isinstance(v, (int, float, np.floating)) and math.isfinite(v)):
            raise RecordRejected(f"{name}={v!r} at step {rec.step} is not finite")
    if rec.k3_kl < 0 or rec.chi2_token < 0 or rec.chi2_seq < 0:
        raise RecordRejected(f"negative divergence at step {rec.step}")
    if rec.ppl_ratio <= 0:
        raise RecordRejected(f"ppl_ratio must be positive at step {rec.step}")
    if not 0.0 <= rec.clip_fraction <= 1.0:
        raise RecordRejected(f"clip_fraction outside [0, 1] at step {rec.step}")


def _row(rec: DiagRecord) -> list[str]:
    return [str(int(rec.step))] + [repr(float(v)) for v in astuple(rec)[1:]]


def emit(records: Iterable[DiagRecord], sink: str | Path | TextIO) -> int:
    """Append records as CSV rows; the header is written only to an empty
    sink. All records are validated before anything is written."""
    records = list(records)
    for rec in records:
        _check(rec)
    if isinstance(sink, (str, Path)):
        path = Path(sink)
        try:
            with open(path, "a", newline="", encoding="utf-8") as fh:
                return _write(records, fh, fresh=fh.tell() == 0)
        except OSError as e:
            raise DiagnosticsError(f"cannot write {path}: {e}") from None
    fresh = sink.tell() == 0 if sink.seekable() else False
    return _write(records, sink, fresh)


def _write(records: list[DiagRecord], fh: TextIO, fresh: bool) -> int:
    w = csv.writer(fh, lineterminator="\n")
    if fresh:
        w.writerow(COLUMNS)
    for rec in records:
        w.writerow(_row(rec))
    return len(records)


def read_csv(path: str | Path) -> list[DiagRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(header) != COLUMNS:
            raise DiagnosticsError(f"unexpected diagnostics header {header}")
        return [DiagRecord(int(row[0]), *(float(v) for v in row[1:])) for row in reader if row]


def summarize(records: Sequence[DiagRecord]) -> dict[str, dict[str, float]]:
    """first/last/mean/min/max per metric column."""
    out = {}
    for name in COLUMNS[1:]:
        vals = np.array([getattr(r, name) for r in records], dtype=float)
        if vals.size == 0:
            continue
        out[name] = {
            "first": float(vals[0]),
            "last": float(vals[-1]),
            "mean": float(vals.mean()),
            "min": float(vals.min()),
            "max": float(vals.max()),
        }
    return out


def format_summary(summary: dict[str, dict[str, float]], n_rows: int) -> str:
    cols = ("first", "last", "mean", "min", "max")
    lines = [f"{n_rows} rows", f"{'metric':<16}" + "".join(f"{c:>12}" for c in cols)]
    for name, stats in summary.items():
        lines.append(f"{name:<16}" + "".join(f"{stats[c]:>12.6g}" for c in cols))
    return "\n".join(lines)
