"""Training objectives over insertion-score matrices.

Two losses share the same weighting and target ratios:

* dise_loss: score entropy for variable-length generation.  Every matrix
  cell is charged s - r log s + r (log r - 1); cells with a zero target
  contribute their raw score.  Nonnegative, zero exactly at s == r.
* dice_loss: cross entropy for fixed-length generation.  Only cells with a
  positive target contribute r (log r - log s), and the score matrix must
  sum to the number of missing tokens.  Equal to dise_loss whenever that
  normalization holds, so the two optimize the same thing on their shared
  domain.

Both return a LossBreakdown whose total is weight * sum(per_position),
with weight = sigma(t) * survival / (1 - survival) = 1/t under log-linear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dp as _dp
from .errors import (
    ConfigError,
    InvalidTimes,
    NonPositiveScore,
    NormalizationViolation,
    ShapeMismatch,
)
from .process import forward_sample
from .seqcore import Sequence

T_MIN = 1e-3  # sampled-time floor; the weight diverges like 1/t at t -> 0

DICE_NORM_TOL = 1e-6


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    per_position: np.ndarray  # per-gap sums, unweighted
    weight: float


def loss_weight(t: float, schedule) -> float:
    """sigma(t) * survival(t) / (1 - survival(t)); 1/t under log-linear."""
    if not (0.0 < t <= 1.0):
        raise InvalidTimes(f"need 0 < t <= 1, got t={t}")
    p = math.exp(-schedule.sigma_bar(t))
    return schedule.sigma(t) * p / (1.0 - p)


def _target_ratios(dp, x_t: Sequence, x_0: Sequence, vocab_size: int) -> np.ndarray:
    return dp.n_ratios_auto(x_t, x_0, vocab_size).ratios


def _check_scores(scores, x_t: Sequence) -> np.ndarray:
    scores = np.asarray(getattr(scores, "values", scores), dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != len(x_t):
        raise ShapeMismatch(
            f"score matrix {scores.shape} does not match {len(x_t)} gaps"
        )
    return scores


def dise_loss(scores, x_t: Sequence, x_0: Sequence, t: float, schedule, dp=None) -> LossBreakdown:
    """Insertion score entropy of one (x_t, x_0) pair.

    Scores must be positive wherever the target ratio is, and never
    negative; zero scores are fine on zero-target cells (the oracle's
    matrices put exact zeros there).
    """
    dp = dp or _dp
    s = _check_scores(scores, x_t)
    w = loss_weight(t, schedule)
    r = _target_ratios(dp, x_t, x_0, s.shape[1])
    if np.any(s < 0.0):
        raise NonPositiveScore("negative score")
    pos = r > 0.0
    if np.any(s[pos] <= 0.0):
        raise NonPositiveScore("zero score at a cell with a positive target")
    terms = s.copy()
    terms[pos] -= r[pos] * np.log(s[pos]) - r[pos] * (np.log(r[pos]) - 1.0)
    per_position = terms.sum(axis=1)
    return LossBreakdown(w * float(per_position.sum()), per_position, w)


def dice_loss(scores, x_t: Sequence, x_0: Sequence, t: float, schedule, dp=None) -> LossBreakdown:
    """Cross entropy of one pair under fixed final length.

    The score matrix must sum to |x_0| - |x_t| (content tokens): that is
    exactly what the target ratios sum to, and the equality with dise_loss
    rests on it.
    """
    dp = dp or _dp
    s = _check_scores(scores, x_t)
    w = loss_weight(t, schedule)
    missing = x_0.content_len - x_t.content_len
    if abs(float(s.sum()) - missing) > DICE_NORM_TOL:
        raise NormalizationViolation(
            f"scores sum to {float(s.sum())}, expected {missing}"
        )
    r = _target_ratios(dp, x_t, x_0, s.shape[1])
    pos = r > 0.0
    if np.any(s[pos] <= 0.0):
        raise NonPositiveScore("zero score at a cell with a positive target")
    terms = np.zeros_like(s)
    terms[pos] = r[pos] * (np.log(r[pos]) - np.log(s[pos]))
    per_position = terms.sum(axis=1)
    return LossBreakdown(w * float(per_position.sum()), per_position, w)


def sample_training_term(x_0: Sequence, schedule, rng, mode: str, scorer) -> LossBreakdown:
    """One Monte-Carlo draw of the training objective for x_0.

    Draws t uniformly on [T_MIN, 1), corrupts x_0 to x_t, and scores the
    result: scorer(x_t, t) must return a (|x_t|, V) matrix.
    """
    if mode not in ("dise", "dice"):
        raise ConfigError(f"unknown objective mode {mode!r}")
    t = T_MIN + (1.0 - T_MIN) * float(rng.random())
    x_t = forward_sample(x_0, 0.0, t, schedule, rng).x_t
    scores = scorer(x_t, t)
    loss = dise_loss if mode == "dise" else dice_loss
    return loss(scores, x_t, x_0, t, schedule)
