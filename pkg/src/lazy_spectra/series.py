"""Return and first-return coefficients, and evaluation of their power series.

All dynamic programs run on the finite ball of states reachable from the base
state within the horizon, so the coefficients are exact up to rounding: a
path of length ``n <= N`` from ``x`` never leaves ``ball(x, N)``.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache, reduce

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln, logsumexp

from .chains import HorizonBudgetError, MarkovKernel, StateId, ball_layers
from .extrapolation import live_residues, ratio_limit, tail_sum
from .lazy import LazySet, LazySpec

MAX_DP_WORK = 4_000_000_000  # ball states x horizon
INCREMENT_TOL = 1e-12


class SeriesKind(str, enum.Enum):
    RETURN = "return"
    FIRST_RETURN = "first_return"


@dataclass(frozen=True, eq=False)
class CoefficientSeries:
    """Coefficients ``c_0..c_N`` of a Green or U power series at ``base_state``.

    ``log_coeffs`` is filled by log-space computations, where ``coeffs`` may
    underflow to zero while the logs remain finite.  ``samples`` is set for
    Monte Carlo estimates.
    """

    kind: SeriesKind
    base_state: StateId
    coeffs: np.ndarray = field(repr=False)
    log_coeffs: np.ndarray | None = field(default=None, repr=False)
    samples: int | None = None

    @property
    def horizon(self) -> int:
        return len(self.coeffs) - 1

    @property
    def period(self) -> int:
        """gcd of the positive indices carrying positive coefficients (0 if none)."""
        support = np.nonzero(self.logs()[1:] > -np.inf)[0] + 1
        return int(reduce(math.gcd, support.tolist(), 0))

    def logs(self) -> np.ndarray:
        if self.log_coeffs is not None:
            return self.log_coeffs
        with np.errstate(divide="ignore"):
            return np.log(self.coeffs)

    def stderr(self) -> np.ndarray:
        """Binomial standard errors of a Monte Carlo estimate."""
        if self.samples is None:
            raise ValueError("standard errors exist only for sampled series")
        c = self.coeffs
        return np.sqrt(c * (1.0 - c) / self.samples)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self.kind.value} coefficients at state {self.base_state}, schema v1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "coeff"])
        for n, c in enumerate(self.coeffs):
            w.writerow([n, repr(float(c))])
        return buf.getvalue()


@dataclass(frozen=True)
class SeriesEval:
    """Partial sum of a series at ``z`` plus whatever is known about its tail.

    ``tail_bound`` is a geometric bound from a supplied ratio bound.
    ``tail_estimate`` comes from the asymptotic tail model and is present
    only for extrapolated evaluations.
    """

    value: float
    z: float
    tail_bound: float | None = None
    converged: bool = False
    tail_estimate: float = 0.0
    tail_uncertainty: float = 0.0
    divergent: bool = False
    extrapolated: bool = False

    @property
    def total(self) -> float:
        if self.divergent:
            return math.inf
        return self.value + self.tail_estimate


# ---------------------------------------------------------------------------
# local operators

@dataclass(frozen=True, eq=False)
class LocalOperator:
    states: list[StateId]
    index: dict[StateId, int]
    PT: sp.csr_matrix  # transpose: row j collects mass arriving at states[j]

    def __len__(self) -> int:
        return len(self.states)

    def indicator(self, group) -> np.ndarray:
        return np.fromiter((y in group for y in self.states), dtype=bool, count=len(self.states))


@lru_cache(maxsize=32)
def local_operator(k: MarkovKernel, x: StateId, radius: int) -> LocalOperator:
    states, _ = ball_layers(k, x, radius)
    if len(states) * max(radius, 1) > MAX_DP_WORK:
        raise HorizonBudgetError(
            f"DP over {len(states)} states for {radius} steps exceeds the work budget"
        )
    index = {y: i for i, y in enumerate(states)}
    rows, cols, vals = [], [], []
    for i, y in enumerate(states):
        for w, pr in k.row(y):
            j = index.get(w)
            if j is not None:  # edges leaving the ball cannot come back in time
                rows.append(j)
                cols.append(i)
                vals.append(pr)
    n = len(states)
    PT = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    PT.sum_duplicates()
    return LocalOperator(states, index, PT)


def _check_horizon(N: int, least: int) -> None:
    if int(N) != N or N < least:
        raise ValueError(f"horizon must be an integer >= {least}, got {N}")


def _log_matvec(logPT: sp.csr_matrix, nonempty: np.ndarray, starts: np.ndarray,
                v: np.ndarray) -> np.ndarray:
    out = np.full(logPT.shape[0], -np.inf)
    if len(starts):
        contrib = logPT.data + v[logPT.indices]
        out[nonempty] = np.logaddexp.reduceat(contrib, starts)
    return out


def _log_operator(op: LocalOperator):
    logPT = op.PT.copy()
    logPT.data = np.log(logPT.data)
    counts = np.diff(logPT.indptr)
    nonempty = counts > 0
    return logPT, nonempty, logPT.indptr[:-1][nonempty]


def return_probs(k: MarkovKernel, x: StateId, N: int, *, log_space: bool = False) -> CoefficientSeries:
    """``p_n = P^x(X_n = x)`` for ``n = 0..N`` by forward DP on the horizon ball."""
    _check_horizon(N, 0)
    op = local_operator(k, x, N)
    i0 = op.index[x]
    if log_space:
        logPT, nonempty, starts = _log_operator(op)
        v = np.full(len(op), -np.inf)
        v[i0] = 0.0
        logs = np.full(N + 1, -np.inf)
        logs[0] = 0.0
        for n in range(1, N + 1):
            v = _log_matvec(logPT, nonempty, starts, v)
            logs[n] = v[i0]
        return CoefficientSeries(SeriesKind.RETURN, x, np.exp(logs), log_coeffs=logs)
    v = np.zeros(len(op))
    v[i0] = 1.0
    p = np.zeros(N + 1)
    p[0] = 1.0
    PT = op.PT
    for n in range(1, N + 1):
        v = PT @ v
        p[n] = v[i0]
    return CoefficientSeries(SeriesKind.RETURN, x, p)


def _taboo_dp(op: LocalOperator, x: StateId, N: int, weights: np.ndarray | None) -> np.ndarray:
    i0 = op.index[x]
    q = np.zeros(len(op))
    q[i0] = 1.0
    f = np.zeros(N + 1)
    PT = op.PT
    for n in range(1, N + 1):
        q = PT @ q
        f[n] = q[i0]
        q[i0] = 0.0
        if weights is not None:
            q *= weights
    return f


def first_return_probs(k: MarkovKernel, x: StateId, N: int, *, log_space: bool = False) -> CoefficientSeries:
    """``f_n = P^x(tau^x = n)`` by taboo DP: mass that reaches ``x`` is removed."""
    _check_horizon(N, 1)
    op = local_operator(k, x, N)
    if not log_space:
        return CoefficientSeries(SeriesKind.FIRST_RETURN, x, _taboo_dp(op, x, N, None))
    i0 = op.index[x]
    logPT, nonempty, starts = _log_operator(op)
    q = np.full(len(op), -np.inf)
    q[i0] = 0.0
    logs = np.full(N + 1, -np.inf)
    for n in range(1, N + 1):
        q = _log_matvec(logPT, nonempty, starts, q)
        logs[n] = q[i0]
        q[i0] = -np.inf
    return CoefficientSeries(SeriesKind.FIRST_RETURN, x, np.exp(logs), log_coeffs=logs)


def renewal_check(p: CoefficientSeries, f: CoefficientSeries) -> float:
    """``max_n |p_n - sum_{m=1}^n f_m p_{n-m}|`` over ``1 <= n <= N``."""
    if p.kind is not SeriesKind.RETURN or f.kind is not SeriesKind.FIRST_RETURN:
        raise ValueError("renewal_check needs a return series and a first-return series")
    if p.base_state != f.base_state or p.horizon != f.horizon:
        raise ValueError("series differ in base state or horizon")
    N = p.horizon
    if N < 1:
        return 0.0
    conv = np.convolve(f.coeffs, p.coeffs)[: N + 1]
    return float(np.max(np.abs(p.coeffs[1:] - conv[1:])))


# ---------------------------------------------------------------------------
# evaluation

def rate_step(period: int) -> int:
    """Index step used for ratio and tail estimates: a multiple of 2 and of the period."""
    d = max(int(period), 1)
    return d * 2 // math.gcd(d, 2)


def snap_rate(log_rate: float, uncertainty: float) -> float:
    """Treat a rate indistinguishable from 0 as exactly 0."""
    if abs(log_rate) <= 10.0 * uncertainty + 1e-11:
        return 0.0
    return log_rate


def _extrapolated_tail(logs: np.ndarray, z: float, step: int):
    """Sum of the modelled tails of every live residue class at ``z``."""
    total, unc = 0.0, 0.0
    log_z = math.log(z)
    terms = logs + log_z * np.arange(len(logs))
    for r in live_residues(logs, step):
        rate = ratio_limit(logs, step, r)
        lr = snap_rate(rate.log_rate + log_z, rate.uncertainty)
        t = tail_sum(terms, step, r, lr)
        if t.divergent:
            return math.inf, 0.0, True
        total += t.value
        unc += t.uncertainty
    return total, unc, False


def eval_series(s: CoefficientSeries, z: float, *, ratio_bound: float | None = None,
                extrapolate: bool = False) -> SeriesEval:
    """Evaluate ``sum_n c_n z^n`` from the stored coefficients.

    Parameters
    ----------
    s : CoefficientSeries
    z : float
        Evaluation point, ``z >= 0``.
    ratio_bound : float, optional
        A per-index bound ``r`` with ``c_{n+d} <= r^d c_n`` for large ``n``.
        When ``r z < 1`` a geometric tail bound is attached.
    extrapolate : bool
        Also estimate the tail from the fitted asymptotic shape of the
        coefficients.  This is what makes evaluation on the boundary of the
        disc of convergence usable.

    Returns
    -------
    SeriesEval
    """
    if z < 0:
        raise ValueError("z must be non-negative")
    c = s.coeffs
    N = s.horizon
    if z == 0:
        return SeriesEval(float(c[0]), 0.0, tail_bound=0.0, converged=True)
    logs = s.logs()
    with np.errstate(over="ignore"):
        terms = np.exp(logs + math.log(z) * np.arange(N + 1))
    value = float(math.fsum(terms))
    step = rate_step(s.period or 1)

    tail_bound = None
    if ratio_bound is not None and ratio_bound * z < 1.0:
        g = (ratio_bound * z) ** step
        # each residue class contributes its last term times g / (1 - g)
        last_block = float(terms[max(N - step + 1, 0):].sum())
        tail_bound = last_block * g / (1.0 - g)
    if tail_bound is not None:
        converged = tail_bound <= INCREMENT_TOL * max(value, 1e-300)
    else:
        block = float(terms[max(N - step + 1, 0):].sum())
        converged = block <= INCREMENT_TOL * max(value, 1e-300)

    if not extrapolate:
        return SeriesEval(value, z, tail_bound=tail_bound, converged=converged)
    tail, unc, divergent = _extrapolated_tail(logs, z, step)
    return SeriesEval(
        value, z, tail_bound=tail_bound, converged=converged, tail_estimate=float(tail),
        tail_uncertainty=float(unc), divergent=divergent, extrapolated=True,
    )


# ---------------------------------------------------------------------------
# lazy first returns from base coefficients

def _singleton_or_all(spec: LazySpec, x: StateId) -> str:
    L = spec.L
    if L.is_all:
        return "all"
    if L.kind == "finite" and L.states == frozenset((x,)):
        return "singleton"
    raise ValueError("the binomial route handles L = {base state} or L = S only")


def lazy_first_return_binomial(f: CoefficientSeries, spec: LazySpec, n: int) -> float:
    """First-return probability at time ``n`` of the lazy chain, from base ``f``.

    For ``L = {x}`` the transform is ``kappa + (1-kappa) f_1`` at ``n = 1`` and
    ``(1-kappa) f_n`` afterwards.  For ``L = S`` each base first-return path of
    length ``k`` is padded with ``n - k`` lazy steps, placed anywhere except
    after the final arrival:
    ``f^S_n = sum_{k=2}^n f_k kappa^(n-k) (1-kappa)^k C(n-2, n-k)``.
    """
    if f.kind is not SeriesKind.FIRST_RETURN:
        raise ValueError("expected a first-return series")
    if not 0 <= n <= f.horizon:
        raise ValueError(f"n must lie in [0, {f.horizon}]")
    mode = _singleton_or_all(spec, f.base_state)
    kappa = spec.kappa
    c = f.coeffs
    if n == 0:
        return 0.0
    if n == 1:
        return kappa + (1.0 - kappa) * float(c[1])
    if mode == "singleton":
        return (1.0 - kappa) * float(c[n])
    if kappa == 0.0:
        return float(c[n])
    k = np.arange(2, n + 1)
    fk = c[2 : n + 1]
    live = fk > 0
    if not np.any(live):
        return 0.0
    k = k[live]
    log_terms = (
        np.log(fk[live]) + (n - k) * math.log(kappa) + k * math.log1p(-kappa)
        + gammaln(n - 1) - gammaln(n - k + 1) - gammaln(k - 1)
    )
    return float(np.exp(logsumexp(log_terms)))


def lazy_first_return_series(f: CoefficientSeries, spec: LazySpec) -> CoefficientSeries:
    """All coefficients of :func:`lazy_first_return_binomial` up to the horizon."""
    out = np.array([lazy_first_return_binomial(f, spec, n) for n in range(f.horizon + 1)])
    return CoefficientSeries(SeriesKind.FIRST_RETURN, f.base_state, out)


# ---------------------------------------------------------------------------
# excursion expansion

def excursion_coeffs(k: MarkovKernel, L: LazySet, kappa: float, x: StateId, z: float,
                     N: int) -> CoefficientSeries:
    """Base-chain first-return coefficients with weight ``w`` per interior visit to ``L``.

    ``w = (1 - kappa) / (1 - kappa z)`` resums the lazy self-loops taken at a
    visit, so ``sum_n c_n z^n`` is the lazy chain's U-function at ``z``.  The
    index counts base (non-lazy) steps only.
    """
    _check_horizon(N, 1)
    if x in L:
        raise ValueError("the excursion expansion needs a base state outside L")
    if L.is_empty:
        raise ValueError("L must be non-empty")
    if not 0.0 <= kappa < 1.0:
        raise ValueError("kappa must lie in [0, 1)")
    if kappa * z >= 1.0:
        raise ValueError("kappa * z >= 1: the lazy U-function diverges")
    w = (1.0 - kappa) / (1.0 - kappa * z)
    op = local_operator(k, x, N)
    weights = np.where(op.indicator(L), w, 1.0)
    return CoefficientSeries(SeriesKind.FIRST_RETURN, x, _taboo_dp(op, x, N, weights))


def weighted_excursion_sum(k: MarkovKernel, L: LazySet, kappa: float, x: StateId, z: float,
                           N: int, *, extrapolate: bool = False) -> SeriesEval:
    """``U^L_kappa(x, x | z)`` from the excursion expansion, up to ``N`` base steps.

    Returns a divergent :class:`SeriesEval` (``total == inf``) when
    ``kappa z >= 1``, where the lazy U-function is infinite.
    """
    if kappa * z >= 1.0 and kappa > 0.0:
        if x in L or L.is_empty:
            raise ValueError("the excursion expansion needs a base state outside a non-empty L")
        return SeriesEval(math.inf, z, divergent=True)
    s = excursion_coeffs(k, L, kappa, x, z, N)
    return eval_series(s, z, extrapolate=extrapolate)


# ---------------------------------------------------------------------------
# Monte Carlo

def monte_carlo_return_probs(k: MarkovKernel, x: StateId, N: int, samples: int,
                             seed: int) -> CoefficientSeries:
    """Empirical ``P^x(X_n = x)`` from ``samples`` independent trajectories."""
    _check_horizon(N, 0)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    states, _ = ball_layers(k, x, N)
    index = {y: i for i, y in enumerate(states)}
    # one global cumulative table; row i occupies the interval (i, i + 1]
    cum, targets = [], []
    for i, y in enumerate(states):
        row = [(index.get(w, -1), pr) for w, pr in k.row(y)]
        acc = np.cumsum([pr for _, pr in row])
        acc[-1] = 1.0
        cum.extend(i + acc)
        targets.extend(j for j, _ in row)
    C = np.asarray(cum)
    T = np.asarray(targets)
    pos = np.full(samples, index[x], dtype=np.int64)
    hits = np.zeros(N + 1)
    hits[0] = samples
    i0 = index[x]
    for n in range(1, N + 1):
        u = rng.random(samples)
        j = np.searchsorted(C, pos + u, side="right")
        pos = T[j]
        hits[n] = np.count_nonzero(pos == i0)
    return CoefficientSeries(SeriesKind.RETURN, x, hits / samples, samples=samples)
