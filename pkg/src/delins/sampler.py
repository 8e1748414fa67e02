"""Reverse-process generation by tau-leaping.

Starting from [bos] at t = 1 (or from a prompt), each step walks the time
grid downward and lets every gap of the current sequence independently
insert at most one token: gap i fires token v with probability
w(t) * s[i, v] * dt, where s is the model's insertion-score matrix and
w(t) = sigma(t) * survival / (1 - survival).  Because all gaps fire
simultaneously and each inserts at most once, applying the insertions is
order-free.

Guards on top of the raw leap:

* when a gap's total insertion mass w * dt * sum_v s[i, v] exceeds 1, the
  over-vocabulary part is renormalized to a proper categorical with no
  no-op mass (counted and reported as a clamp event);
* nucleus filtering (top_p) reshapes only the conditional token choice at
  a gap, never the odds of inserting at all;
* the bos column of any score matrix is ignored: the begin marker is not
  insertable, and the exact scores are genuinely zero there anyway;
* prompted generation masks every gap strictly inside the prompt, so the
  prompt stays a verbatim prefix;
* fixed-length mode caps the number of accepted insertions at the
  remaining capacity, keeping the proposals with the largest sampled-token
  mass (ties to the lower gap index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidSteps, InvalidTimes, ShapeMismatch
from .objective import loss_weight
from .process import LogLinearSchedule
from .seqcore import Sequence

GRID_KINDS = ("uniform", "cosine")
MODES = ("variable", "fixed")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int
    grid: str = "uniform"
    top_p: float = 1.0
    mode: str = "variable"
    k: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidSteps(f"steps must be >= 1, got {self.steps}")
        if self.grid not in GRID_KINDS:
            raise ConfigError(f"unknown grid {self.grid!r}")
        if not (0.0 < self.top_p <= 1.0):
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown sampler mode {self.mode!r}")
        if self.mode == "fixed" and (self.k is None or self.k < 0):
            raise ConfigError("fixed mode needs a target content length k")
        if self.mode == "variable" and self.k is not None:
            raise ConfigError("k only applies to fixed mode")


@dataclass
class StepStats:
    gap_steps: int = 0       # gaps seen across all steps
    clamp_events: int = 0    # gaps whose insertion mass hit the cap
    cancelled: int = 0       # proposals dropped by fixed-length capacity


@dataclass
class GenerationTrace:
    snapshots: list[tuple[float, Sequence]]
    final: Sequence
    stats: StepStats = field(default_factory=StepStats)


def timestep_grid(n: int, kind: str = "uniform") -> np.ndarray:
    """Descending times t_N = 1 > ... > t_0 = 0, n steps, n + 1 points."""
    if n < 1:
        raise InvalidSteps(f"need at least one step, got {n}")
    if kind == "uniform":
        return np.linspace(1.0, 0.0, n + 1)
    if kind == "cosine":
        ts = np.cos(0.5 * math.pi * np.arange(n + 1) / n)
        ts[0] = 1.0   # cos(0) is exact anyway
        ts[-1] = 0.0  # cos(pi/2) is only ~6e-17
        return ts
    raise ConfigError(f"unknown grid {kind!r}")


def _nucleus_rows(cond: np.ndarray, top_p: float) -> np.ndarray:
    """Per-row nucleus filter on conditional distributions (rows sum to 1).

    Keeps the smallest probability-ordered prefix reaching top_p (at least
    one cell), renormalized; stable sort makes tie handling deterministic.
    """
    out = np.zeros_like(cond)
    for i in range(cond.shape[0]):
        row = cond[i]
        total = row.sum()
        if total <= 0.0:
            continue
        order = np.argsort(-row, kind="stable")
        cum = np.cumsum(row[order])
        keep = int(np.searchsorted(cum, top_p * total)) + 1
        chosen = order[:keep]
        out[i, chosen] = row[chosen] / row[chosen].sum()
    return out


def gap_insertion_probabilities(
    scores, t: float, dt: float, schedule, top_p: float = 1.0, gap_mask=None
) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-gap insertion probability and conditional token distribution.

    Returns (p_insert, conditional, clamp_count): gap i inserts with
    probability p_insert[i], and inserts token v with conditional
    probability conditional[i, v].  gap_mask, when given, marks the gaps
    allowed to insert.
    """
    s = np.array(getattr(scores, "values", scores), dtype=np.float64)
    if s.ndim != 2:
        raise ShapeMismatch(f"score matrix must be 2-d, got shape {s.shape}")
    s[:, 0] = 0.0  # the begin marker is never inserted
    if gap_mask is not None:
        s[~np.asarray(gap_mask, dtype=bool)] = 0.0
    w = loss_weight(t, schedule)
    row = s.sum(axis=1)
    raw = w * dt * row
    clamp_count = int(np.count_nonzero(raw > 1.0))
    p_insert = np.minimum(raw, 1.0)
    cond = np.zeros_like(s)
    live = row > 0.0
    cond[live] = s[live] / row[live, None]
    if top_p < 1.0:
        cond = _nucleus_rows(cond, top_p)
    return p_insert, cond, clamp_count


def _propose(p_insert: np.ndarray, cond: np.ndarray, rng) -> list[tuple[int, int, float]]:
    """Draw per-gap insertions: (gap, token, sampled-cell mass) triples.

    Two uniforms per gap, indexed by gap, are always drawn, so the stream
    position after a step never depends on the outcomes.
    """
    n = len(p_insert)
    u_gate = rng.random(n)
    u_token = rng.random(n)
    out = []
    for i in range(n):
        if u_gate[i] < p_insert[i]:
            cum = np.cumsum(cond[i])
            v = int(np.searchsorted(cum, u_token[i] * cum[-1], side="right"))
            v = min(v, cond.shape[1] - 1)
            out.append((i, v, float(p_insert[i] * cond[i, v])))
    return out


def _apply_insertions(x: Sequence, proposals) -> Sequence:
    ins = {i: v for i, v, _ in proposals}
    ids: list[int] = []
    for i, tok in enumerate(x.ids):
        ids.append(tok)
        if i in ins:
            ids.append(ins[i])
    return Sequence(tuple(ids), x.bos_id)


def reverse_step(
    x_t: Sequence,
    t: float,
    dt: float,
    scores,
    schedule,
    top_p: float,
    rng,
    *,
    gap_mask=None,
    capacity: int | None = None,
    stats: StepStats | None = None,
) -> Sequence:
    """One tau-leap: all gaps of x_t independently insert at most one token."""
    if not (0.0 < dt <= t):
        raise InvalidTimes(f"need 0 < dt <= t, got dt={dt}, t={t}")
    s = np.asarray(getattr(scores, "values", scores), dtype=np.float64)
    if s.shape[0] != len(x_t):
        raise ShapeMismatch(f"{s.shape[0]} score rows for {len(x_t)} gaps")
    p_insert, cond, clamped = gap_insertion_probabilities(
        s, t, dt, schedule, top_p, gap_mask
    )
    proposals = _propose(p_insert, cond, rng)
    if capacity is not None and len(proposals) > capacity:
        proposals.sort(key=lambda p: (-p[2], p[0]))
        dropped = len(proposals) - capacity
        proposals = proposals[:capacity]
        if stats is not None:
            stats.cancelled += dropped
    if stats is not None:
        stats.gap_steps += len(x_t)
        stats.clamp_events += clamped
    return _apply_insertions(x_t, proposals)


def generate(score_fn, params, config: SamplerConfig, prompt: Sequence | None = None, rng=None):
    """Walk the grid from t = 1 to 0, scoring and leaping at each step.

    score_fn(params, x_t, t) must return an insertion-score matrix for the
    current state.  Returns the full GenerationTrace.
    """
    schedule = LogLinearSchedule()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    x = prompt if prompt is not None else Sequence((0,))
    prompt_len = len(x) if prompt is not None else None
    times = timestep_grid(config.steps, config.grid)
    stats = StepStats()
    snapshots = [(1.0, x)]
    for k in range(config.steps):
        t, t_next = float(times[k]), float(times[k + 1])
        scores = score_fn(params, x, t)
        mask = None
        if prompt_len is not None and prompt_len > 1:
            mask = np.arange(len(x)) >= prompt_len - 1
        capacity = None
        if config.mode == "fixed":
            capacity = max(config.k - x.content_len, 0)
        x = reverse_step(
            x, t, t - t_next, scores, schedule, config.top_p, rng,
            gap_mask=mask, capacity=capacity, stats=stats,
        )
        snapshots.append((t_next, x))
    return GenerationTrace(snapshots, x, stats)


def batch_generate(
    score_fn, params, config: SamplerConfig, count: int, prompt: Sequence | None = None
):
    """Independent samples with spawned rng streams, plus a length summary."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    seed_seq = np.random.SeedSequence(config.seed)
    traces = [
        generate(score_fn, params, config, prompt, rng=np.random.default_rng(child))
        for child in seed_seq.spawn(count)
    ]
    lengths = sorted(tr.final.content_len for tr in traces)
    uniq: list[int] = []
    cdf: list[float] = []
    for i, length in enumerate(lengths):
        if uniq and uniq[-1] == length:
            cdf[-1] = (i + 1) / count
        else:
            uniq.append(length)
            cdf.append((i + 1) / count)
    summary = {
        "count": count,
        "mean_length": float(np.mean(lengths)),
        "length_cdf": [[int(l), c] for l, c in zip(uniq, cdf)],
    }
    return traces, summary
