"""Spectral radius estimation, rho-recurrence classification and critical laziness."""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .chains import MarkovKernel, StateId
from .extrapolation import dominant_rate
from .lazy import LazySet, LazySpec, apply_lazy
from .series import (
    CoefficientSeries,
    SeriesKind,
    eval_series,
    excursion_coeffs,
    first_return_probs,
    rate_step,
)

DEFAULT_HORIZON = 2000
DEFAULT_MARGIN = 1e-4
STABILITY_TOL = 1e-4  # relative ratio-limit uncertainty above which estimates degrade


class RhoSource(str, enum.Enum):
    CLOSED_FORM = "closed-form"
    EXTRAPOLATED = "extrapolated"
    FIRST_RETURN = "first-return"


class Verdict(str, enum.Enum):
    RHO_TRANSIENT = "rho-transient"
    CRITICALLY_RECURRENT = "critically-rho-recurrent"
    STRICTLY_RECURRENT = "strictly-rho-recurrent"
    UNDETERMINED = "undetermined"

    @property
    def recurrent(self) -> bool:
        return self in (Verdict.CRITICALLY_RECURRENT, Verdict.STRICTLY_RECURRENT)


@dataclass(frozen=True)
class RhoEstimate:
    """A spectral radius estimate.

    ``fekete_lower`` is a certified lower bound; ``point`` the best estimate
    and ``uncertainty`` its estimated absolute error.
    """

    point: float
    fekete_lower: float
    uncertainty: float
    source: RhoSource
    period: int
    horizon_used: int
    stabilized: bool = True


@dataclass(frozen=True)
class Classification:
    verdict: Verdict
    u_at_inv_rho: float  # clamped to <= 1
    u_raw: float
    u_uncertainty: float
    u_radius_reciprocal: float  # estimate of 1 / r(U | x, x)
    radius_uncertainty: float
    rho: float
    margin: float


class KappaMethod(str, enum.Enum):
    CLOSED_FORM_SINGLETON = "closed-form-singleton"
    BISECTION = "bisection"


@dataclass(frozen=True)
class KappaCritical:
    value: float
    method: KappaMethod
    residual: float
    bracket_width: float
    iterations: int = 0


class PreconditionError(ValueError):
    """Raised when an operation's mathematical precondition fails (e.g. a recurrent base)."""


# ---------------------------------------------------------------------------
# spectral radius

def fekete_lower(p: CoefficientSeries) -> float:
    """``max_n p_n^(1/n)`` over positive ``n``; every such value is <= rho."""
    logs = p.logs()
    n = np.arange(1, len(logs))
    vals = logs[1:] / n
    finite = np.isfinite(vals)
    if not np.any(finite):
        return 0.0
    return float(np.exp(vals[finite].max()))


def estimate_rho(p: CoefficientSeries, exact_rho: float | None = None) -> RhoEstimate:
    """Spectral radius from return probabilities.

    The point value is the Richardson limit of ``(p_{n+s} / p_n)^(1/s)``.
    It degrades to the Fekete bound, flagged ``stabilized=False``, when the
    extrapolation has not settled.
    """
    if p.kind is not SeriesKind.RETURN:
        raise ValueError("estimate_rho needs return probabilities")
    d = p.period or 1
    low = fekete_lower(p)
    if exact_rho is not None:
        return RhoEstimate(exact_rho, low, 0.0, RhoSource.CLOSED_FORM, d, p.horizon)
    if p.horizon < 4 * d:
        raise ValueError("horizon must be at least four periods")
    try:
        rate = dominant_rate(p.logs(), rate_step(d), levels=5, spacing="linear")
    except ValueError:
        return RhoEstimate(low, low, 1.0, RhoSource.EXTRAPOLATED, d, p.horizon, stabilized=False)
    point = math.exp(rate.log_rate)
    unc = point * rate.uncertainty
    if unc > STABILITY_TOL * point:
        return RhoEstimate(low, low, max(unc, 1.0 - low), RhoSource.EXTRAPOLATED, d, p.horizon,
                           stabilized=False)
    point = min(max(point, low), 1.0)
    return RhoEstimate(point, low, unc, RhoSource.EXTRAPOLATED, d, p.horizon)


def _u_derivative(f: CoefficientSeries, z: float) -> float:
    n = np.arange(f.horizon + 1)
    with np.errstate(over="ignore"):
        return float(np.sum(n[1:] * np.exp(f.logs()[1:] + (n[1:] - 1) * math.log(z))))


def rho_from_first_returns(f: CoefficientSeries) -> RhoEstimate:
    """Spectral radius as ``1 / max{z : U(x, x | z) <= 1}``.

    First the radius ``1/R`` of U is estimated from the growth rate ``R`` of
    the first-return probabilities.  If U stays <= 1 up to the radius the
    answer is ``R``; otherwise it is the reciprocal of the root of
    ``U(z) = 1`` inside the disc.  The lower bound combines
    ``max f_n^(1/n)`` with the root of the partial sum, both certified.
    """
    logs = f.logs()
    d = f.period or 1
    N = f.horizon
    n = np.arange(1, N + 1)
    fin = np.isfinite(logs[1:])
    low = float(np.exp((logs[1:][fin] / n[fin]).max())) if np.any(fin) else 0.0

    def partial(z):
        return float(np.exp(logs[1:][fin] + n[fin] * math.log(z)).sum())

    try:
        rate = dominant_rate(logs, rate_step(d))
    except ValueError:
        # finite support of f (e.g. a finite chain with short cycles only)
        z_star = brentq(lambda z: partial(z) - 1.0, 1e-12, 1e6) if np.any(fin) else math.inf
        rho = min(1.0 / z_star, 1.0)
        return RhoEstimate(rho, rho, 0.0, RhoSource.FIRST_RETURN, d, N)

    R = math.exp(rate.log_rate)
    dR = R * rate.uncertainty
    z_b = 1.0 / R
    at_b = eval_series(f, z_b, extrapolate=True)
    z_partial = None
    if partial(z_b) >= 1.0:
        z_partial = brentq(lambda z: partial(z) - 1.0, 0.0 + 1e-300, z_b, xtol=1e-15, rtol=1e-15)
        low = max(low, 1.0 / z_partial)

    # inside the error bar the root sits on the boundary anyway
    if not at_b.divergent and at_b.total <= 1.0 + at_b.tail_uncertainty + 1e-10:
        rho, unc = R, dR
    else:
        hi = z_partial if z_partial is not None else z_b * (1.0 - 1e-9)

        def g(z):
            e = eval_series(f, z, extrapolate=True)
            return e.total - 1.0

        if g(hi) <= 0.0:  # tail below rounding: the partial-sum root is the root
            z_star = hi
        else:
            z_star = brentq(g, 1e-12, hi, xtol=1e-15, rtol=1e-15)
        e = eval_series(f, z_star, extrapolate=True)
        slope = _u_derivative(f, z_star)
        rho = 1.0 / z_star
        unc = rho * rho * (e.tail_uncertainty / slope if slope > 0 else 0.0) + 2e-15
    stable = unc <= STABILITY_TOL * max(rho, 1e-300)
    rho = min(max(rho, low), 1.0)
    return RhoEstimate(rho, min(low, rho), unc, RhoSource.FIRST_RETURN, d, N, stabilized=stable)


def spectral_radius(k: MarkovKernel, x: StateId | None = None, N: int = DEFAULT_HORIZON, *,
                    use_exact: bool = True) -> RhoEstimate:
    """Spectral radius of ``k`` by the first-return route (closed form when known)."""
    x = k.origin if x is None else x
    f = first_return_probs(k, x, N)
    if use_exact and k.exact_rho is not None:
        est = rho_from_first_returns(f)
        return RhoEstimate(k.exact_rho, min(est.fekete_lower, k.exact_rho), 0.0,
                           RhoSource.CLOSED_FORM, est.period, N)
    return rho_from_first_returns(f)


# ---------------------------------------------------------------------------
# classification

def classify_series(f: CoefficientSeries, rho: float, margin: float = DEFAULT_MARGIN) -> Classification:
    """Decide the rho-recurrence type from first-return coefficients and ``rho``.

    Transient when ``U(1/rho) < 1 - margin``; recurrent when ``U(1/rho)`` is
    within ``margin`` of 1, then strict when ``1/r(U)`` is below
    ``rho (1 - margin)`` and critical when it is not.  Estimates whose error
    bars straddle a threshold give ``UNDETERMINED``.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if margin <= 0.0:
        raise ValueError("margin must be positive")
    logs = f.logs()
    try:
        rate = dominant_rate(logs, rate_step(f.period or 1))
        R, dR = math.exp(rate.log_rate), math.exp(rate.log_rate) * rate.uncertainty
    except ValueError:
        R, dR = 0.0, 0.0  # finitely many returns: U is entire
    ev = eval_series(f, 1.0 / rho, extrapolate=True)
    u = ev.total
    du = ev.tail_uncertainty + 1e-12
    if ev.divergent:
        verdict = Verdict.UNDETERMINED
    elif u + du < 1.0 - margin:
        verdict = Verdict.RHO_TRANSIENT
    elif abs(u - 1.0) + du <= margin:
        threshold = rho * (1.0 - margin)
        if R + dR < threshold:
            verdict = Verdict.STRICTLY_RECURRENT
        elif R - dR >= threshold:
            verdict = Verdict.CRITICALLY_RECURRENT
        else:
            verdict = Verdict.UNDETERMINED
    else:
        verdict = Verdict.UNDETERMINED
    return Classification(
        verdict=verdict, u_at_inv_rho=min(u, 1.0), u_raw=u, u_uncertainty=du,
        u_radius_reciprocal=R, radius_uncertainty=dR, rho=rho, margin=margin,
    )


def classify(k: MarkovKernel, x: StateId, rho: float, N: int = DEFAULT_HORIZON,
             margin: float = DEFAULT_MARGIN) -> Classification:
    return classify_series(first_return_probs(k, x, N), rho, margin)


@dataclass(frozen=True)
class SpectralReport:
    label: str
    state: StateId
    rho: RhoEstimate
    classification: Classification
    rho_from_returns: RhoEstimate | None = None
    rho_is_exact: bool = False


def analyze(k: MarkovKernel, x: StateId | None = None, N: int = DEFAULT_HORIZON, *,
            margin: float = DEFAULT_MARGIN, use_exact: bool = True,
            with_returns: bool = True) -> SpectralReport:
    """Spectral radius by both routes plus the classification at the chosen ``rho``."""
    from .series import return_probs

    x = k.origin if x is None else x
    f = first_return_probs(k, x, N)
    est = rho_from_first_returns(f)
    exact = use_exact and k.exact_rho is not None
    if exact:
        est = RhoEstimate(k.exact_rho, min(est.fekete_lower, k.exact_rho), 0.0,
                          RhoSource.CLOSED_FORM, est.period, N)
    by_returns = estimate_rho(return_probs(k, x, N)) if with_returns else None
    cls = classify_series(f, est.point, margin)
    return SpectralReport(k.label, x, est, cls, by_returns, exact)


# ---------------------------------------------------------------------------
# critical laziness

def kappa_critical_singleton(u_at_inv_rho: float, rho: float) -> KappaCritical:
    """Solve ``kappa / rho + (1 - kappa) u = 1`` for the laziness at a single state."""
    u = u_at_inv_rho
    if not 0.0 < rho < 1.0:
        raise PreconditionError("critical laziness needs rho < 1")
    if u >= 1.0:
        raise PreconditionError(
            "U(x, x | 1/rho) >= 1: the base chain is rho-recurrent and has no flat region"
        )
    if 1.0 / rho <= u:
        raise PreconditionError("1/rho must exceed U(x, x | 1/rho)")
    kappa = (1.0 - u) / (1.0 / rho - u)
    residual = abs(kappa / rho + (1.0 - kappa) * u - 1.0)
    return KappaCritical(kappa, KappaMethod.CLOSED_FORM_SINGLETON, residual, 0.0)


def lazy_u_at(k: MarkovKernel, L: LazySet, kappa: float, x: StateId, z: float,
              N: int = DEFAULT_HORIZON):
    """Extrapolated ``U^L_kappa(x, x | z)`` via the excursion expansion (inf if divergent)."""
    if kappa * z >= 1.0:
        return math.inf, 0.0
    s = excursion_coeffs(k, L, kappa, x, z, N)
    ev = eval_series(s, z, extrapolate=True)
    return ev.total, ev.tail_uncertainty


def kappa_critical_bisect(k: MarkovKernel, L: LazySet, x: StateId, rho: float,
                          tol: float = 1e-9, N: int = DEFAULT_HORIZON, *,
                          upper: float = 1.0 - 1e-6) -> KappaCritical:
    """Bisection on ``g(kappa) = U^L_kappa(x, x | 1/rho) - 1``.

    ``g`` is nondecreasing in ``kappa`` for ``x`` outside ``L``; the returned
    value is a secant refinement inside the final bracket.
    """
    if L.kind != "finite" or L.is_empty:
        raise ValueError("bisection needs a finite, non-empty L")
    if x in L:
        raise ValueError("the base state must lie outside L")
    if tol <= 0:
        raise ValueError("tol must be positive")
    z = 1.0 / rho

    def g(kappa):
        return lazy_u_at(k, L, kappa, x, z, N)[0] - 1.0

    lo, hi = 0.0, upper
    g_lo, g_hi = g(lo), g(hi)
    if g_lo >= 0.0:
        raise PreconditionError(
            f"g(0) = {g_lo:.3g} >= 0: the base chain is not rho-transient at this rho"
        )
    if g_hi <= 0.0:
        raise PreconditionError(
            f"g({hi}) = {g_hi:.3g} <= 0: no crossing found; increase the horizon"
        )
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        it += 1
        if g_mid > 0.0:
            hi, g_hi = mid, g_mid
        else:
            lo, g_lo = mid, g_mid
        if g_mid == 0.0:
            lo = hi = mid
            break
    if hi > lo and math.isfinite(g_hi):
        value = lo - g_lo * (hi - lo) / (g_hi - g_lo)
    else:
        value = 0.5 * (lo + hi)
    residual = abs(g(value))
    return KappaCritical(float(value), KappaMethod.BISECTION, float(residual), hi - lo, it)


# ---------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True)
class SweepPoint:
    kappa: float
    rho: RhoEstimate
    classification: Classification


@dataclass
class SweepResult:
    points: list[SweepPoint]
    segments: list[tuple[float, float, str]] = field(default_factory=list)


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("LAZY_SPECTRA_THREADS")
    n = requested or min(4, os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, max(int(cap), 1))
        except ValueError:
            pass
    return max(n, 1)


def segment(points: list[SweepPoint], factor: float = 10.0) -> list[tuple[float, float, str]]:
    """Label each grid step flat or increasing against ``factor`` x the uncertainty."""
    steps = []
    for a, b in zip(points, points[1:]):
        thresh = factor * max(a.rho.uncertainty, b.rho.uncertainty, 1e-15)
        label = "increasing" if b.rho.point - a.rho.point > thresh else "flat"
        steps.append((a.kappa, b.kappa, label))
    merged: list[tuple[float, float, str]] = []
    for s in steps:
        if merged and merged[-1][2] == s[2]:
            merged[-1] = (merged[-1][0], s[1], s[2])
        else:
            merged.append(s)
    return merged


def sweep_point(k: MarkovKernel, L: LazySet, kappa: float, x: StateId, N: int,
                margin: float, use_exact: bool = True) -> SweepPoint:
    kk = apply_lazy(k, LazySpec(L, kappa))
    f = first_return_probs(kk, x, N)
    est = rho_from_first_returns(f)
    if use_exact and kk.exact_rho is not None:
        est = RhoEstimate(kk.exact_rho, min(est.fekete_lower, kk.exact_rho), 0.0,
                          RhoSource.CLOSED_FORM, est.period, N)
    return SweepPoint(kappa, est, classify_series(f, est.point, margin))


def rho_sweep(k: MarkovKernel, L: LazySet, kappas, N: int = DEFAULT_HORIZON, *,
              x: StateId | None = None, margin: float = DEFAULT_MARGIN,
              use_exact: bool = True, workers: int | None = None) -> SweepResult:
    """Spectral radius and classification of ``apply_lazy(k, (L, kappa))`` over a grid."""
    grid = [float(kappa) for kappa in kappas]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("kappa grid must be sorted ascending")
    x = k.origin if x is None else x
    n = worker_count(workers)
    if n == 1 or len(grid) <= 1:
        points = [sweep_point(k, L, kappa, x, N, margin, use_exact) for kappa in grid]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            points = list(pool.map(lambda kappa: sweep_point(k, L, kappa, x, N, margin, use_exact), grid))
    return SweepResult(points, segment(points))
