"""Stop-coin schedules for the conditionally stopped process.

The central schedule weights the zero-run length n by
w_n = r_n R_n = lam^{2n} / ((2n)! cosh(lam)), which makes the expected output
state proportional to cosh(lam*K).  The explicit quotient for r_n has a
catastrophically cancelling denominator (cosh(lam) minus its own partial
sum), so the rates are evaluated through the exact ratio identity

    r_{n+1} (1 - r_n) / r_n = lam^2 / ((2n+1)(2n+2))

run BACKWARD from a deep anchor: with s_n = 1/r_n the identity reads
s_n = 1 + q_n s_{n+1}, an all-positive recurrence that contracts seed error
by the product of the term ratios q_n.  (The forward orientation amplifies
roundoff by 1/(1 - r_n) per step and loses several digits in the deep tail;
the quotient form survives only as a test oracle in its well-conditioned
regime.)  General even-series schedules with r_n R_n = c * a_n are supported
with the same validity checks (single-sign coefficients, r_n in [0, 1]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import log_cosh

DEFAULT_TAIL_TARGET = 1e-12

# 1/cosh(lam) underflows past ~745 and the recursion seed turns to garbage.
MAX_LAMBDA = 700.0


def lambda_param(beta: float, kappa: float, epsilon: float, m: int) -> float:
    """Schedule scale lam = beta*kappa / (eps (1-eps)^(2m-1)); zero iff beta is."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if kappa <= 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return beta * kappa / (epsilon * (1.0 - epsilon) ** (2 * m - 1))


def _log_even_term(lam: float, n: int) -> float:
    """log( lam^{2n} / (2n)! )."""
    if n == 0:
        return 0.0
    return 2 * n * math.log(lam) - math.lgamma(2 * n + 1)


def _log_tail_bound(lam: float, horizon: int) -> float:
    """Certified log upper bound on sum_{n > horizon} lam^{2n}/(2n)!.

    Geometric majorisation from the first neglected term: valid once the term
    ratio lam^2/((2n+2)(2n+1)) has dropped below 1.
    """
    n = horizon + 1
    ratio = lam * lam / ((2 * n + 1) * (2 * n + 2))
    if ratio >= 1.0:
        return math.inf
    return _log_even_term(lam, n) - math.log1p(-ratio)


def suggest_horizon(lam: float, tail_target: float = DEFAULT_TAIL_TARGET) -> int:
    """Smallest horizon whose certified neglected stopping mass is < tail_target."""
    if lam == 0.0:
        return 0
    log_goal = math.log(tail_target) + log_cosh(lam)
    n = max(1, math.ceil(lam / 2.0))
    while _log_tail_bound(lam, n) >= log_goal:
        n += 1
    return n


@dataclass(frozen=True)
class StoppingSchedule:
    """Precomputed stop probabilities r_n, survivals R_n, and weights w_n = r_n R_n."""

    kind: str
    rates: np.ndarray
    survivals: np.ndarray
    weights: np.ndarray
    horizon: int
    tail_bound: float
    lam: float = 0.0
    coeffs: tuple[float, ...] = ()
    c: float = 0.0

    def __post_init__(self):
        for name in ("rates", "survivals", "weights"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.rates.shape != (self.horizon + 1,):
            raise ValueError("rates must cover 0..horizon")
        if np.any(self.rates < 0.0) or np.any(self.rates > 1.0):
            bad = int(np.argmax((self.rates < 0.0) | (self.rates > 1.0)))
            raise ValueError(f"r_{bad} = {self.rates[bad]!r} is outside [0, 1]")
        total = float(self.weights.sum())
        if total > 1.0 + 1e-12:
            raise ValueError(f"stopping mass sums to {total!r} > 1")

    def stop_weight(self, n: int) -> tuple[float, float, float]:
        """(r_n, R_n, w_n); n must not exceed the horizon."""
        if not 0 <= n <= self.horizon:
            raise ValueError(f"n = {n} is beyond the schedule horizon {self.horizon}")
        return float(self.rates[n]), float(self.survivals[n]), float(self.weights[n])


def stop_weight(schedule: StoppingSchedule, n: int) -> tuple[float, float, float]:
    return schedule.stop_weight(n)


def _assemble(rates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    survivals = np.empty_like(rates)
    survivals[0] = 1.0
    for n in range(len(rates) - 1):
        survivals[n + 1] = survivals[n] * (1.0 - rates[n])
    return survivals, rates * survivals


def _term_ratio(lam: float, n: int) -> float:
    """t_{n+1} / t_n = lam^2 / ((2n+1)(2n+2))."""
    return lam * lam / ((2 * n + 1) * (2 * n + 2))


def _cosh_rates(lam: float, horizon: int) -> np.ndarray:
    """r_n = t_n / sum_{j >= n} t_j for n = 0..horizon, at full double precision.

    Runs s_n = 1 + q_n s_{n+1} downward from an anchor deep enough that the
    anchor's influence at the horizon (the product of the intervening q's) is
    below 1e-20; the geometric remainder seeds the anchor.  Every rate then
    carries only a few ulp of error, including r_0 = 1/cosh(lam).
    """
    n = horizon + 1
    damp = 1.0
    while damp >= 1e-20 and n < horizon + 4096:
        q = _term_ratio(lam, n)
        if q >= 1.0:
            raise AssertionError("anchor scan entered the pre-tail region; horizon too small")
        damp *= q
        n += 1
    s = 1.0 / (1.0 - _term_ratio(lam, n))
    rates = np.empty(horizon + 1)
    for j in range(n - 1, -1, -1):
        s = 1.0 + _term_ratio(lam, j) * s
        if j <= horizon:
            rates[j] = 1.0 / s
    return rates


def extend_cosh_rates(lam: float, rates: list[float], upto: int) -> None:
    """Grow a cosh rate list in place to index ``upto`` via the forward recursion.

    Only the engine's trajectory kernels use this, for the rare excursions
    past the horizon: the forward orientation loses relative accuracy as
    r -> 1, which is harmless for coin-flip probabilities.  Once r_n is
    within 1e-12 of 1 the remaining rates are pinned to 1 exactly (they
    converge to 1 from below); this also covers the degenerate lam = 0
    schedule whose only rate is 1.
    """
    while len(rates) <= upto:
        n = len(rates) - 1
        r = rates[-1]
        if r >= 1.0 - 1e-12:
            rates.append(1.0)
            continue
        nxt = lam * lam * r / ((2 * n + 1) * (2 * n + 2) * (1.0 - r))
        rates.append(min(nxt, 1.0))


def cosh_schedule(lam: float, horizon: int | None = None,
                  tail_target: float = DEFAULT_TAIL_TARGET) -> StoppingSchedule:
    """The schedule realising w_n = lam^{2n}/((2n)! cosh lam).

    ``horizon`` defaults to the smallest value whose certified neglected mass
    is below ``tail_target``; an explicitly given horizon that misses the
    target is rejected with the required one named.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if lam > MAX_LAMBDA:
        raise ValueError(
            f"lambda = {lam:.4g} exceeds the double-precision envelope ({MAX_LAMBDA:g}): "
            "1/cosh(lambda) underflows and the rate recursion loses all precision"
        )
    if lam == 0.0:
        return StoppingSchedule(kind="cosh", rates=np.array([1.0]), survivals=np.array([1.0]),
                                weights=np.array([1.0]), horizon=0, tail_bound=0.0, lam=0.0)
    needed = suggest_horizon(lam, tail_target)
    if horizon is None:
        horizon = needed
    elif horizon < needed:
        raise ValueError(
            f"horizon {horizon} leaves a tail above {tail_target:g}; need at least {needed}"
        )
    tail = math.exp(_log_tail_bound(lam, horizon) - log_cosh(lam))
    rates = np.clip(_cosh_rates(lam, horizon), 0.0, 1.0)
    survivals, weights = _assemble(rates)
    return StoppingSchedule(kind="cosh", rates=rates, survivals=survivals, weights=weights,
                            horizon=horizon, tail_bound=tail, lam=lam)


def general_schedule(coeffs, c: float | None = None) -> StoppingSchedule:
    """Schedule with r_n R_n = c * a_n for an even power series f(x) = sum a_n x^{2n}.

    All coefficients must share one sign; with nonnegative coefficients any
    c <= 1/A is valid (A = sum a_n) and c = 1/A, the default, minimises the
    run time because the rates increase pointwise with c.
    """
    a = np.asarray(coeffs, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("coefficients must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(a)):
        raise ValueError("coefficients must be finite")
    if np.any(a > 0) and np.any(a < 0):
        raise ValueError("mixed-sign coefficients are not realisable as stop probabilities")
    total = float(a.sum())
    if total == 0.0:
        raise ValueError("coefficients sum to zero; the schedule would never stop")
    if c is None:
        c = 1.0 / total
    c = float(c)
    mass = c * total
    if not 0.0 < mass <= 1.0 + 1e-12:
        raise ValueError(
            f"c = {c!r} is outside the validity range: c * sum(a) = {mass!r} must lie in (0, 1]"
        )
    weights = c * a
    # denominators 1 - c*sum_{j<n} a_j evaluated as backward partial sums plus
    # the never-stopping residue 1 - c*A: all-positive arithmetic, so the deep
    # tail keeps full precision (a running subtraction loses it)
    back = np.concatenate([np.cumsum(weights[::-1])[::-1], [0.0]])
    residue = 1.0 - float(back[0])
    if abs(residue) <= 64.0 * np.finfo(float).eps:
        # c*A indistinguishable from 1 at double precision: the schedule is
        # exhaustive and the subtraction noise would otherwise contaminate the
        # deep-tail denominators
        residue = 0.0
    residue = max(residue, 0.0)
    rates = np.empty_like(weights)
    for n, w in enumerate(weights):
        denom = back[n] + residue
        if denom <= 1e-300:
            if w > 0.0:
                raise ValueError(f"coefficient a_{n} carries weight beyond an exhausted schedule")
            rates[n] = 0.0
        else:
            rates[n] = w / denom
    rates = np.clip(rates, 0.0, 1.0)
    survivals, w_check = _assemble(rates)
    # r_n R_n must reproduce c * a_n; anything worse than roundoff is a logic error
    dev = float(np.max(np.abs(w_check - weights)))
    if dev > 1e-12 * max(1.0, float(np.max(np.abs(weights)))):
        raise AssertionError(f"schedule weights drifted from c*a_n by {dev!r}")
    horizon = a.size - 1
    return StoppingSchedule(kind="general", rates=rates, survivals=survivals, weights=w_check,
                            horizon=horizon, tail_bound=0.0, coeffs=tuple(float(x) for x in a),
                            c=c)
