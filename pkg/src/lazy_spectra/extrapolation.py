"""Limit and tail extrapolation for slowly converging nonnegative series.

Both tools assume terms of the form ``a_n ~ C r^n n^(-beta) (1 + c1/n + ...)``
along an arithmetic progression of indices, the shape taken by return and
first-return probabilities of the chains in this package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

NEG_INF = -np.inf
RATIO_FLAT_TOL = 1e-14


@dataclass(frozen=True)
class RateEstimate:
    """Exponential growth rate of one residue class of a sequence."""

    log_rate: float
    uncertainty: float  # absolute, on the log scale
    residue: int
    step: int
    levels: int

    @property
    def rate(self) -> float:
        return math.exp(self.log_rate)


def neville_at_zero(h: list[float], values: list[float]) -> list[float]:
    """Polynomial extrapolation to ``h = 0``; returns the diagonal of the tableau."""
    row = list(values)
    diag = [row[0]]
    for m in range(1, len(values)):
        row = [
            (h[i] * row[i + 1] - h[i + m] * row[i]) / (h[i] - h[i + m])
            for i in range(len(row) - 1)
        ]
        diag.append(row[0])
    return diag


def live_residues(log_a: np.ndarray, step: int, *, min_terms: int = 8) -> list[int]:
    """Residues mod ``step`` whose last ``min_terms`` entries are all positive."""
    n_max = len(log_a) - 1
    live = []
    for r in range(step):
        top = n_max - ((n_max - r) % step)
        idx = np.arange(top, max(top - min_terms * step, 0), -step)
        if len(idx) >= min_terms and np.all(np.isfinite(log_a[idx])):
            live.append(r)
    return live


def ratio_limit(log_a: np.ndarray, step: int, residue: int, *, levels: int = 4,
                min_index: int = 8, spacing: str = "halving") -> RateEstimate:
    """Richardson limit of the log-ratio sequence along ``n = residue (mod step)``.

    The one-step ratios ``(log a_n - log a_{n-step}) / step`` are sampled at
    ``levels + 1`` indices and extrapolated in powers of ``1/n`` (taken at the
    midpoint ``n - step/2``).  ``spacing="halving"`` samples ``N, N/2, N/4, ...``;
    ``spacing="linear"`` samples ``N, 0.9 N, ..., 0.5 N``, which copes better
    with sequences whose asymptotic regime sets in late.  The uncertainty is
    the gap between the two highest extrapolation orders.
    """
    if spacing not in ("halving", "linear"):
        raise ValueError(f"unknown spacing {spacing!r}")
    n_max = len(log_a) - 1
    top = n_max - ((n_max - residue) % step)
    if spacing == "halving":
        targets = [top // 2**j for j in range(levels + 1)]
    else:
        targets = [int(top * (1.0 - 0.5 * j / levels)) for j in range(levels + 1)]
    picks = []
    for target in targets:
        n = target - ((target - residue) % step)
        if n - step < max(min_index, 1) or not (np.isfinite(log_a[n]) and np.isfinite(log_a[n - step])):
            break
        if not picks or n < picks[-1]:
            picks.append(n)
    if len(picks) < 2:
        raise ValueError("sequence too short for a ratio limit")
    vals = [(log_a[n] - log_a[n - step]) / step for n in picks]
    spread = max(vals) - min(vals)
    if spread <= RATIO_FLAT_TOL * max(1.0, abs(vals[0])):
        # already constant to rounding: use the long-baseline ratio, extrapolation would amplify noise
        rate = (log_a[picks[0]] - log_a[picks[-1]]) / (picks[0] - picks[-1])
        return RateEstimate(float(rate), float(spread), residue, step, 0)
    h = [1.0 / (n - step / 2.0) for n in picks]
    diag = neville_at_zero(h, vals)
    return RateEstimate(
        log_rate=float(diag[-1]),
        uncertainty=float(abs(diag[-1] - diag[-2])),
        residue=residue,
        step=step,
        levels=len(picks) - 1,
    )


def dominant_rate(log_a: np.ndarray, step: int, **kw) -> RateEstimate:
    """Rate of the residue class holding the largest final term."""
    live = live_residues(log_a, step)
    if not live:
        raise ValueError("no residue class with positive terms to the horizon")
    n_max = len(log_a) - 1
    tops = {r: log_a[n_max - ((n_max - r) % step)] for r in live}
    best = max(live, key=lambda r: tops[r])
    return ratio_limit(log_a, step, best, **kw)


@dataclass(frozen=True)
class TailEstimate:
    value: float  # math.inf when the series diverges
    uncertainty: float
    log_rate: float
    exponent: float
    divergent: bool = False


def _fit(ns: np.ndarray, y: np.ndarray, corrections: int) -> np.ndarray:
    cols = [np.ones_like(ns), -np.log(ns)] + [ns ** -(i + 1) for i in range(corrections)]
    B = np.column_stack(cols)
    scale = np.linalg.norm(B, axis=0)
    coef, *_ = np.linalg.lstsq(B / scale, y, rcond=None)
    return coef / scale


def _model_tail(n0: int, step: int, log_rate: float, coef: np.ndarray, *,
                explicit: int = 200_000) -> float:
    """``sum_{j>=1} exp(model(n0 + j*step))`` for the fitted model."""
    c0, beta, g = coef[0], coef[1], coef[2:]

    def log_term(n):
        out = c0 - beta * np.log(n) + log_rate * n
        for i, gi in enumerate(g):
            out = out + gi * n ** -(i + 1)
        return out

    total = 0.0
    start = n0 + step
    chunk = 20_000
    done = 0
    while done < explicit:
        n = start + step * np.arange(done, done + chunk, dtype=float)
        lt = log_term(n)
        terms = np.exp(lt)
        total += float(terms.sum())
        done += chunk
        if log_rate < 0.0 and terms[-1] <= 1e-18 * max(total, 1e-300):
            return total
    # remainder: exp(g1/n + g2/n^2 + ...) ~ 1 + g1/n + (g1^2/2 + g2)/n^2 this far out
    g1 = g[0] if len(g) > 0 else 0.0
    g2 = g[1] if len(g) > 1 else 0.0
    first = start + step * done  # first index not yet summed
    x = math.exp(log_rate * step)
    a = first / step
    pref = math.exp(c0 + log_rate * first)
    rem = 0.0
    for power, weight in ((0, 1.0), (1, g1), (2, 0.5 * g1 * g1 + g2)):
        if weight == 0.0:
            continue
        s = beta + power
        phi = float(mpmath.lerchphi(x, s, a))
        rem += weight * step ** (-s) * phi
    return total + pref * rem


def tail_sum(log_terms: np.ndarray, step: int, residue: int, log_rate: float, *,
             fit_fraction: float = 0.5, corrections: int = 3) -> TailEstimate:
    """Model the tail of one residue class of a nonnegative series.

    ``log_terms[n]`` are the logs of the series terms and ``log_rate`` is the
    per-index exponential rate to impose (0 at the convergence boundary).
    The remaining shape ``C n^-beta exp(g1/n + g2/n^2 + ...)`` is fitted on the
    last ``fit_fraction`` of the horizon and summed to infinity.  The
    uncertainty is the change when one correction term is dropped.
    """
    n_max = len(log_terms) - 1
    top = n_max - ((n_max - residue) % step)
    lo = max(int(top * (1.0 - fit_fraction)), 1)
    ns = np.arange(top, lo, -step)[::-1]
    if len(ns) < corrections + 4 or not np.all(np.isfinite(log_terms[ns])):
        raise ValueError("not enough positive terms to model the tail")
    if log_rate > 0.0:
        return TailEstimate(math.inf, 0.0, log_rate, math.nan, divergent=True)
    nsf = ns.astype(float)
    y = log_terms[ns] - log_rate * nsf
    fits = [_fit(nsf, y, c) for c in (corrections, corrections - 1)]
    beta = float(fits[0][1])
    if log_rate == 0.0 and beta <= 1.0 + 1e-6:
        return TailEstimate(math.inf, 0.0, log_rate, beta, divergent=True)
    values = [_model_tail(top, step, log_rate, c) for c in fits]
    return TailEstimate(values[0], abs(values[0] - values[1]), log_rate, beta)
