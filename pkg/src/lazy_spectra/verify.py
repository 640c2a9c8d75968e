"""Numerical verification suites for lazy-chain spectral behaviour.

Each suite returns a :class:`VerificationReport` whose cases carry the
measured residual next to the tolerance.  A case whose classification lands
in the undetermined band is skipped, never passed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .chains import MarkovKernel, StateId, biased_walk, radial_tree, tree_quotient
from .lazy import LazySet, LazySpec, apply_lazy
from .series import eval_series, first_return_probs, return_probs
from .spectral import (
    DEFAULT_HORIZON,
    DEFAULT_MARGIN,
    PreconditionError,
    Verdict,
    classify_series,
    kappa_critical_bisect,
    kappa_critical_singleton,
    rho_from_first_returns,
    rho_sweep,
    spectral_radius,
)

PASS, FAIL, SKIP, FLAG = "pass", "fail", "skip", "flag"

MONOTONE_SLACK = 2e-5
FLAT_TOL = 2e-5
DELTA_KAPPA = 0.02
EQUALITY_TOL = 3e-5
IDENTITY_TOL = 1e-8
ONE_TOL = 2e-4


@dataclass
class Case:
    description: str
    status: str
    value: float | bool | None = None
    tolerance: float | None = None
    detail: str = ""


@dataclass
class VerificationReport:
    suite: str
    cases: list[Case] = field(default_factory=list)

    def add(self, description, passed, value=None, tolerance=None, detail="") -> Case:
        status = PASS if passed else FAIL
        case = Case(description, status, _plain(value), tolerance, detail)
        self.cases.append(case)
        return case

    def skip(self, description, reason) -> Case:
        case = Case(description, SKIP, None, None, reason)
        self.cases.append(case)
        return case

    def flag(self, description, value, tolerance, detail="") -> Case:
        case = Case(description, FLAG, _plain(value), tolerance, detail)
        self.cases.append(case)
        return case

    def extend(self, other: "VerificationReport") -> None:
        for c in other.cases:
            self.cases.append(Case(f"[{other.suite}] {c.description}", c.status, c.value,
                                   c.tolerance, c.detail))

    @property
    def summary(self) -> dict[str, int]:
        counts = {PASS: 0, FAIL: 0, SKIP: 0, FLAG: 0}
        for c in self.cases:
            counts[c.status] += 1
        return counts

    @property
    def ok(self) -> bool:
        return self.summary[FAIL] == 0

    def to_text(self) -> str:
        lines = [f"suite {self.suite}"]
        for c in self.cases:
            val = "" if c.value is None else f" value={_fmt(c.value)}"
            tol = "" if c.tolerance is None else f" tol={_fmt(c.tolerance)}"
            extra = f" ({c.detail})" if c.detail else ""
            lines.append(f"  {c.status.upper():4s} {c.description}{val}{tol}{extra}")
        s = self.summary
        lines.append(f"  {s[PASS]} passed, {s[FAIL]} failed, {s[SKIP]} skipped, {s[FLAG]} flagged")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"schema": "v1", "suite": self.suite, "summary": self.summary,
                "cases": [asdict(c) for c in self.cases]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# ---------------------------------------------------------------------------
# monotonicity, continuity and endpoints

def verify_gen(k: MarkovKernel, L: LazySet, grid: Sequence[float], *, N: int = DEFAULT_HORIZON,
               x: StateId | None = None, endpoint: float | None = 0.99) -> VerificationReport:
    """Monotonicity, the continuity modulus and the behaviour near ``kappa = 1``.

    The continuity check uses the squeeze ``rho_{k'} <= k1 + (1 - k1) rho_k`` with
    ``k1 = (k' - k) / (1 - k)``, i.e. a jump of at most
    ``(k' - k) (1 - rho_k) / (1 - k)``.  Jumps above that bound but within 2x
    are flagged rather than failed.
    """
    rep = VerificationReport("gen")
    grid = sorted(float(kappa) for kappa in grid)
    if endpoint is not None and (not grid or grid[-1] < endpoint):
        grid = grid + [endpoint]
    sweep = rho_sweep(k, L, grid, N, x=x, use_exact=False)
    pts = sweep.points
    base = spectral_radius(k, x, N, use_exact=False)
    name = L.describe()

    for a, b in zip(pts, pts[1:]):
        drop = a.rho.point - b.rho.point
        rep.add(f"L={name}: rho nondecreasing on [{a.kappa:g}, {b.kappa:g}]",
                drop <= MONOTONE_SLACK, drop, MONOTONE_SLACK)
        jump = b.rho.point - a.rho.point
        bound = (b.kappa - a.kappa) * (1.0 - a.rho.point) / (1.0 - a.kappa)
        bound += 3.0 * (a.rho.uncertainty + b.rho.uncertainty) + 1e-12
        desc = f"L={name}: jump on [{a.kappa:g}, {b.kappa:g}] within squeeze bound"
        if jump <= bound:
            rep.add(desc, True, jump, bound)
        elif jump <= 2.0 * bound:
            rep.flag(desc, jump, bound, "exceeds the bound by less than 2x")
        else:
            rep.add(desc, False, jump, bound)

    if L.is_empty:
        for p in pts:
            diff = abs(p.rho.point - base.point)
            rep.add(f"L=empty: rho at kappa={p.kappa:g} equals base", diff <= FLAT_TOL, diff, FLAT_TOL)
    if L.is_all:
        for p in pts:
            line = p.kappa + (1.0 - p.kappa) * base.point
            diff = abs(p.rho.point - line)
            rep.add(f"L=S: rho at kappa={p.kappa:g} on kappa + (1-kappa) rho", diff <= FLAT_TOL,
                    diff, FLAT_TOL)

    if base.point >= 1.0 - ONE_TOL:
        for p in pts:
            gap = 1.0 - p.rho.point
            rep.add(f"L={name}: rho = 1 kept at kappa={p.kappa:g}", gap <= ONE_TOL, gap, ONE_TOL)
    elif endpoint is not None and not L.is_empty:
        end = pts[-1]
        floor = end.rho.fekete_lower
        ok = end.rho.point >= floor - 1e-12 and end.rho.point > base.point + 10 * end.rho.uncertainty
        rep.add(f"L={name}: rho at kappa={end.kappa:g} above its certified floor and the base value",
                ok, end.rho.point, floor)
        tail = [p for p in pts if p.kappa >= 0.5]
        gaps = [1.0 - p.rho.point for p in tail]
        if len(gaps) > 1:
            shrinking = all(b <= a + MONOTONE_SLACK for a, b in zip(gaps, gaps[1:])) and gaps[-1] < gaps[0]
            rep.add(f"L={name}: 1 - rho decreases toward kappa={end.kappa:g}", shrinking, gaps[-1])
    return rep


# ---------------------------------------------------------------------------
# phase transition for finite L

def critical_laziness(k: MarkovKernel, L: LazySet, rho: float, N: int = DEFAULT_HORIZON, *,
                      x: StateId | None = None, outside: StateId | None = None,
                      tol: float = 1e-9):
    """Closed form for ``L = {x}`` (when ``x`` is given) and bisection from ``outside``."""
    closed = bisect = None
    if x is not None and L.kind == "finite" and L.states == frozenset((x,)):
        u = classify_series(first_return_probs(k, x, N), rho).u_raw
        closed = kappa_critical_singleton(u, rho)
    if outside is not None:
        bisect = kappa_critical_bisect(k, L, outside, rho, tol, N)
    return closed, bisect


def verify_phase_transition(k: MarkovKernel, L: LazySet, grid: Sequence[float], *,
                            N: int = DEFAULT_HORIZON, x: StateId | None = None,
                            outside: StateId | None = None,
                            margin: float = DEFAULT_MARGIN) -> VerificationReport:
    """Flat rho below the critical laziness, strict increase above it.

    ``x`` is where rho and the classification are computed; ``outside`` is a
    state not in ``L`` used for the bisection.  A rho-recurrent base is
    skipped, and the strict increase from ``kappa = 0`` is checked instead.
    """
    rep = VerificationReport("phase")
    x = k.origin if x is None else x
    if k.exact_rho is None:
        rep.skip("base chain", "needs a closed-form rho")
        return rep
    rho = k.exact_rho
    base = classify_series(first_return_probs(k, x, N), rho, margin)
    grid = sorted(float(kappa) for kappa in grid)
    if base.verdict is not Verdict.RHO_TRANSIENT:
        rep.skip("flat region", f"base chain is {base.verdict.value}, no critical laziness")
        sweep = rho_sweep(k, L, [0.0] + [g for g in grid if g > 0.0], N, x=x, use_exact=False)
        for a, b in zip(sweep.points, sweep.points[1:]):
            inc = b.rho.point - a.rho.point
            need = 10.0 * max(a.rho.uncertainty, b.rho.uncertainty, 1e-15)
            rep.add(f"rho strictly increasing on [{a.kappa:g}, {b.kappa:g}]", inc > need, inc, need)
        return rep

    try:
        closed, bisect = critical_laziness(k, L, rho, N, x=x, outside=outside)
    except PreconditionError as exc:
        rep.add("critical laziness computable", False, detail=str(exc))
        return rep
    kc = closed.value if closed is not None else bisect.value
    if closed is not None:
        rep.add("closed-form kappa_c in (0, 1)", 0.0 < closed.value < 1.0, closed.value,
                detail=f"residual {closed.residual:.2e}")
    if bisect is not None:
        rep.add("bisection back-substitution residual", bisect.residual <= 1e-9, bisect.residual, 1e-9,
                detail=f"kappa_c={bisect.value:.10f}")
    if closed is not None and bisect is not None:
        diff = abs(closed.value - bisect.value)
        rep.add("closed form and bisection agree", diff <= 1e-6, diff, 1e-6)

    pts = rho_sweep(k, L, sorted(set(grid) | {kc}), N, x=x, use_exact=False).points
    for p in pts:
        if p.kappa <= kc - DELTA_KAPPA:
            dev = abs(p.rho.point - rho)
            rep.add(f"flat at kappa={p.kappa:g}", dev <= FLAT_TOL, dev, FLAT_TOL)
            _expect_verdict(rep, p, {Verdict.RHO_TRANSIENT})
        elif p.kappa == kc:
            dev = abs(p.rho.point - rho)
            rep.add(f"rho at kappa_c={kc:.6f} equals base", dev <= FLAT_TOL, dev, FLAT_TOL)
        elif p.kappa >= kc + DELTA_KAPPA:
            _expect_verdict(rep, p, {Verdict.CRITICALLY_RECURRENT, Verdict.STRICTLY_RECURRENT})
    above = [p for p in pts if p.kappa >= kc + DELTA_KAPPA]
    for a, b in zip(above, above[1:]):
        inc = b.rho.point - a.rho.point
        need = 10.0 * max(a.rho.uncertainty, b.rho.uncertainty, 1e-15)
        rep.add(f"strict increase on [{a.kappa:g}, {b.kappa:g}]", inc > need, inc, need)
    return rep


def _expect_verdict(rep: VerificationReport, p, allowed: set[Verdict]) -> None:
    v = p.classification.verdict
    desc = f"classification at kappa={p.kappa:g}"
    if v is Verdict.UNDETERMINED:
        rep.skip(desc, "undetermined within the margin")
    else:
        rep.add(desc, v in allowed, v.value)


# ---------------------------------------------------------------------------
# recurrence types

@dataclass(frozen=True)
class TypeCase:
    label: str
    kernel: MarkovKernel
    x: StateId
    expected: Verdict
    rho: float | None = None  # None: estimate numerically
    undetermined_ok: bool = False


def default_type_cases(N: int = DEFAULT_HORIZON) -> list[TypeCase]:
    tree = radial_tree(3)
    walk = biased_walk(2 / 3)
    rho = tree.exact_rho
    u = classify_series(first_return_probs(tree, 0, N), rho).u_raw
    kc = kappa_critical_singleton(u, rho).value
    root = LazySet.finite([0])
    return [
        TypeCase("tree d=3", tree, 0, Verdict.RHO_TRANSIENT, rho),
        TypeCase("tree d=3, root lazy at kappa_c", apply_lazy(tree, LazySpec(root, kc)), 0,
                 Verdict.CRITICALLY_RECURRENT, rho, undetermined_ok=True),
        TypeCase("tree d=3, root lazy at kappa_c + 0.1", apply_lazy(tree, LazySpec(root, kc + 0.1)), 0,
                 Verdict.STRICTLY_RECURRENT),
        TypeCase("biased walk p=2/3", walk, 0, Verdict.CRITICALLY_RECURRENT, walk.exact_rho),
        TypeCase("biased walk p=2/3, 0 lazy at 0.4", apply_lazy(walk, LazySpec(root, 0.4)), 0,
                 Verdict.STRICTLY_RECURRENT),
    ]


def verify_recurrence_types(cases: Sequence[TypeCase] | None = None, *, N: int = DEFAULT_HORIZON,
                            margin: float = DEFAULT_MARGIN,
                            radius_kappas: Sequence[float] = (0.2, 0.4, 0.6)) -> VerificationReport:
    """Classify each case and compare with the expected verdict.

    Also checks that laziness at the base state leaves the radius of U
    unchanged, which is visible because ``f^L_n = (1 - kappa) f_n`` for ``n >= 2``.
    """
    rep = VerificationReport("types")
    cases = default_type_cases(N) if cases is None else cases
    for c in cases:
        f = first_return_probs(c.kernel, c.x, N)
        rho = c.rho if c.rho is not None else rho_from_first_returns(f).point
        cls = classify_series(f, rho, margin)
        desc = f"{c.label}: {c.expected.value}"
        if cls.verdict is Verdict.UNDETERMINED:
            if c.undetermined_ok:
                rep.skip(desc, f"undetermined (u={cls.u_raw:.12f}, 1/r(U)={cls.u_radius_reciprocal:.12f})")
            else:
                rep.add(desc, False, cls.verdict.value, detail="undetermined where a verdict is required")
            continue
        rep.add(desc, cls.verdict is c.expected, cls.verdict.value,
                detail=f"u={cls.u_raw:.12f}, 1/r(U)={cls.u_radius_reciprocal:.12f}, rho={rho:.12f}")

    for base in (biased_walk(2 / 3), radial_tree(3)):
        r0 = classify_series(first_return_probs(base, 0, N), base.exact_rho).u_radius_reciprocal
        for kappa in radius_kappas:
            kk = apply_lazy(base, LazySpec(LazySet.finite([0]), kappa))
            r = classify_series(first_return_probs(kk, 0, N), base.exact_rho).u_radius_reciprocal
            diff = abs(r - r0)
            rep.add(f"{base.label}: radius of U unchanged by laziness {kappa:g} at the base state",
                    diff <= 1e-8, diff, 1e-8)
    return rep


# ---------------------------------------------------------------------------
# reachability of the all-states value

def verify_reach(k: MarkovKernel, L: LazySet, kappas: Sequence[float], *, N: int = DEFAULT_HORIZON,
                 x: StateId | None = None, expect: str | None = None,
                 margin: float = DEFAULT_MARGIN) -> VerificationReport:
    """Compare ``rho^L_kappa`` with ``rho^S_kappa``, both computed numerically.

    ``expect`` is ``"gap"`` or ``"equal"``.  By default finite ``L`` expects a
    gap; cofinite ``L`` expects equality unless the base is strictly
    rho-recurrent.
    """
    rep = VerificationReport("reach")
    x = k.origin if x is None else x
    if expect is None:
        if L.kind == "finite":
            expect = "gap"
        else:
            f = first_return_probs(k, x, N)
            est = rho_from_first_returns(f)
            v = classify_series(f, est.point, margin).verdict
            if v is Verdict.UNDETERMINED:
                rep.skip(f"L={L.describe()}", "base classification undetermined")
                return rep
            expect = "gap" if v is Verdict.STRICTLY_RECURRENT else "equal"
    everything = LazySet.everything()
    for kappa in kappas:
        if not 0.0 < kappa < 1.0:
            rep.skip(f"kappa={kappa:g}", "kappa must lie in (0, 1)")
            continue
        a = spectral_radius(apply_lazy(k, LazySpec(L, kappa)), x, N, use_exact=False)
        b = spectral_radius(apply_lazy(k, LazySpec(everything, kappa)), x, N, use_exact=False)
        unc = a.uncertainty + b.uncertainty
        diff = b.point - a.point
        if expect == "gap":
            need = max(3.0 * unc, 1e-12)
            rep.add(f"{k.label}, L={L.describe()}, kappa={kappa:g}: rho^L < rho^S", diff > need,
                    diff, need, detail=f"rho^L={a.point:.12f} rho^S={b.point:.12f}")
        else:
            rep.add(f"{k.label}, L={L.describe()}, kappa={kappa:g}: rho^L = rho^S",
                    abs(diff) <= EQUALITY_TOL, abs(diff), EQUALITY_TOL,
                    detail=f"rho^L={a.point:.12f} rho^S={b.point:.12f}")
    return rep


# ---------------------------------------------------------------------------
# global-lazy identities

def verify_global_identities(k: MarkovKernel, x: StateId | None = None, *,
                            kappas: Sequence[float] = (0.0, 0.2, 0.4, 0.6, 0.8),
                            z_fractions: Sequence[float] = (0.0, 0.3, 0.6, 0.8, 0.95),
                            N: int = DEFAULT_HORIZON, rho: float | None = None,
                            tol: float = IDENTITY_TOL) -> VerificationReport:
    """Check three generating-function identities on a (kappa, z) grid.

    With ``w = (1 - kappa) z / (1 - kappa z)``:

    * ``G^S(z) = G(w) / (1 - kappa z)``
    * ``U^S(z) = (1 - kappa z) U(w) + kappa z``
    * ``G^S(z) (1 - U^S(z)) = 1``

    The lazy side comes from DP on the lazy kernel, the other from the base
    kernel, so the two are independent.  ``z`` runs over fractions of
    ``1 / rho^S_kappa``; points outside the domain are skipped.
    """
    rep = VerificationReport("identities")
    x = k.origin if x is None else x
    if rho is None:
        rho = k.exact_rho if k.exact_rho is not None else spectral_radius(k, x, N).point
    p = return_probs(k, x, N)
    f = first_return_probs(k, x, N)
    everything = LazySet.everything()
    for kappa in kappas:
        kk = apply_lazy(k, LazySpec(everything, kappa))
        pS = return_probs(kk, x, N)
        fS = first_return_probs(kk, x, N)
        rho_S = kappa + (1.0 - kappa) * rho
        for frac in z_fractions:
            z = frac / rho_S
            tag = f"kappa={kappa:g}, z={z:.6g}"
            if frac >= 1.0 or kappa * z >= 1.0:
                rep.skip(tag, "outside the domain of convergence")
                continue
            w = (1.0 - kappa) * z / (1.0 - kappa * z)
            G = eval_series(p, w, ratio_bound=rho)
            U = eval_series(f, w, ratio_bound=rho)
            GS = eval_series(pS, z, ratio_bound=rho_S)
            US = eval_series(fS, z, ratio_bound=rho_S)
            t = sum(e.tail_bound or 0.0 for e in (G, U, GS, US))
            gg = abs(GS.value - G.value / (1.0 - kappa * z))
            uu = abs(US.value - ((1.0 - kappa * z) * U.value + kappa * z))
            gu = abs(GS.value * (1.0 - US.value) - 1.0)
            scale = max(GS.value, 1.0)
            rep.add(f"{k.label} G^S identity at {tag}", gg <= tol * scale + t * scale, gg, tol * scale + t * scale)
            rep.add(f"{k.label} U^S identity at {tag}", uu <= tol + t, uu, tol + t)
            rep.add(f"{k.label} G(1-U)=1 at {tag}", gu <= tol * scale + t * scale, gu, tol * scale + t * scale)
    return rep


# ---------------------------------------------------------------------------
# default suites

SUITES = ("gen", "phase", "types", "reach", "identities", "all")
DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(20))


def run_suite(name: str, N: int = DEFAULT_HORIZON, *, chain: MarkovKernel | None = None,
              L: LazySet | None = None, grid: Sequence[float] | None = None,
              margin: float = DEFAULT_MARGIN) -> VerificationReport:
    """Run a named suite on its default configurations (or on ``chain``/``L``)."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    grid = DEFAULT_GRID if grid is None else tuple(grid)
    tree, walk, sym = radial_tree(3), biased_walk(2 / 3), biased_walk(0.5)
    root = LazySet.finite([0])
    if name == "all":
        rep = VerificationReport("all")
        for sub in SUITES[:-1]:
            rep.extend(run_suite(sub, N, chain=chain, L=L, grid=grid, margin=margin))
        return rep
    if name == "gen":
        if chain is not None:
            return verify_gen(chain, L or root, grid, N=N)
        rep = VerificationReport("gen")
        for k, lazy in ((tree, root), (walk, root), (walk, LazySet.cofinite([0])), (sym, root),
                        (sym, LazySet.cofinite([0])), (tree, LazySet.everything())):
            rep.extend(verify_gen(k, lazy, grid, N=N))
        return rep
    if name == "phase":
        if chain is not None:
            return verify_phase_transition(chain, L or root, grid, N=N, margin=margin)
        rep = VerificationReport("phase")
        q = tree_quotient(3, [0, 1])
        rep.extend(verify_phase_transition(q, root, grid, N=N, x=0, outside=q.state(1), margin=margin))
        rep.extend(verify_phase_transition(walk, root, (0.1, 0.3, 0.5, 0.7), N=N, margin=margin))
        return rep
    if name == "types":
        return verify_recurrence_types(N=N, margin=margin)
    if name == "reach":
        if chain is not None:
            return verify_reach(chain, L or root, (0.5,), N=N, margin=margin)
        rep = VerificationReport("reach")
        strict_base = apply_lazy(walk, LazySpec(root, 0.4))
        rep.extend(verify_reach(tree, root, (0.5,), N=N))
        rep.extend(verify_reach(walk, root, (0.5,), N=N))
        rep.extend(verify_reach(walk, LazySet.cofinite([0]), (0.3, 0.5), N=N, margin=margin))
        rep.extend(verify_reach(tree, LazySet.cofinite([0]), (0.3, 0.5), N=N, margin=margin))
        rep.extend(verify_reach(strict_base, LazySet.cofinite([1]), (0.5,), N=N, margin=margin))
        return rep
    # identities
    if chain is not None:
        return verify_global_identities(chain, N=N)
    rep = VerificationReport("identities")
    rep.extend(verify_global_identities(walk, N=N))
    rep.extend(verify_global_identities(tree, N=N))
    return rep
