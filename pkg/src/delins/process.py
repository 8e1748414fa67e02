"""Forward deletion process.

A continuous-time Markov chain that deletes non-bos tokens independently at
rate sigma(t).  Everything here is closed-form: the chance that one token
survives the window [s, t] is exp(-(sigma_bar(t) - sigma_bar(s))), and the
chance of landing on a particular shorter sequence is that survival
probability per kept token, times the deletion probability per lost token,
times the number of distinct ways the shorter sequence embeds into the longer
one.  Lengths in those formulas exclude the bos marker, which never deletes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import dp as _dp
from .errors import ConfigError, InvalidTimes, NotSingleDeletion, Overflow
from .seqcore import Sequence

# sigma_bar(1) diverges for the log-linear schedule; clamping just below 1
# removes the singularity without visibly changing any probability.
T_MAX = 1.0 - 1e-9


@dataclass(frozen=True)
class LogLinearSchedule:
    """sigma_bar(t) = -ln(1 - t), so survival over [0, t] is exactly 1 - t."""

    kind: str = "log-linear"

    def sigma(self, t: float) -> float:
        t = min(t, T_MAX)
        return 1.0 / (1.0 - t)

    def sigma_bar(self, t: float) -> float:
        t = min(t, T_MAX)
        return -math.log1p(-t)


def make_schedule(name: str, **params) -> LogLinearSchedule:
    """Schedule registry; config files select one by name."""
    if name == "log-linear":
        if params:
            raise ConfigError(f"log-linear schedule takes no parameters, got {params}")
        return LogLinearSchedule()
    raise ConfigError(f"unknown schedule {name!r}")


@dataclass(frozen=True)
class ForwardSampleResult:
    x_t: Sequence
    kept_indices: tuple[int, ...]  # positions within x_0, always starting at 0


def _check_times(s: float, t: float) -> None:
    if not (0.0 <= s < t <= 1.0):
        raise InvalidTimes(f"need 0 <= s < t <= 1, got s={s}, t={t}")


def survival_prob(schedule, s: float, t: float) -> float:
    """Probability that one non-bos token present at time s still exists at t."""
    _check_times(s, t)
    return math.exp(-(schedule.sigma_bar(t) - schedule.sigma_bar(s)))


def forward_sample(x_0: Sequence, s: float, t: float, schedule, rng) -> ForwardSampleResult:
    """Corrupt x_0 from time s to time t by independent token deletion."""
    _check_times(s, t)
    if t >= 1.0:
        # survival is (numerically) zero; only the bos marker remains
        return ForwardSampleResult(Sequence((x_0.ids[0],)), (0,))
    p = survival_prob(schedule, s, t)
    kept = [0]
    for i in range(1, len(x_0)):
        if rng.random() < p:
            kept.append(i)
    ids = tuple(x_0.ids[i] for i in kept)
    return ForwardSampleResult(Sequence(ids), tuple(kept))


def _count_auto(dp, x_t, x_s) -> float:
    """N(x_t, x_s) as a float, via the log domain when uint64 overflows."""
    try:
        return float(dp.subsequence_count(x_t, x_s, "exact"))
    except Overflow:
        log_n = dp.subsequence_count(x_t, x_s, "log")
        return 0.0 if _dp.is_log_zero(log_n) else math.exp(log_n)


def transition_prob(x_t: Sequence, x_s: Sequence, s: float, t: float, schedule, dp=None) -> float:
    """p_{t|s}(x_t | x_s): survival^kept * deletion^lost * N(x_t, x_s).

    Token counts exclude bos on both sides.  Returns 0.0 when x_t does not
    embed into x_s at all.
    """
    _check_times(s, t)
    dp = dp or _dp
    l_s = len(x_s) - 1
    l_t = len(x_t) - 1
    if l_t > l_s:
        return 0.0
    n = _count_auto(dp, x_t, x_s)
    if n == 0.0:
        return 0.0
    p = survival_prob(schedule, s, t)
    q = 1.0 - p
    lost = l_s - l_t
    if lost > 0 and q == 0.0:
        return 0.0
    log_prob = l_t * (-(schedule.sigma_bar(t) - schedule.sigma_bar(s)))
    if lost > 0:
        log_prob += lost * math.log(q)
    return math.exp(log_prob) * n


def forward_rate(y: Sequence, x_t: Sequence, t: float, schedule, dp=None) -> float:
    """Instantaneous rate of the jump y -> x_t (one non-bos token deleted).

    Each of the N(x_t, y) embeddings of x_t marks one deletable position of
    y, and every position deletes at rate sigma(t).
    """
    if not (0.0 <= t < 1.0):
        raise InvalidTimes(f"need 0 <= t < 1, got t={t}")
    dp = dp or _dp
    if len(y) != len(x_t) + 1:
        raise NotSingleDeletion(
            f"lengths {len(y)} and {len(x_t)} do not differ by exactly one token"
        )
    n = dp.subsequence_count(x_t, y)
    if n == 0:
        raise NotSingleDeletion("x_t does not embed into y")
    return schedule.sigma(t) * float(n)
