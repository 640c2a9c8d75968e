"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
from __future__ import annotations

import math

import numpy as np
import pytest

from lazy_spectra.chains import biased_walk, explicit_kernel, radial_tree, tree_quotient
from lazy_spectra.lazy import LazySet, LazySpec, apply_lazy
from lazy_spectra.series import (
    eval_series,
    first_return_probs,
    lazy_first_return_series,
    monte_carlo_return_probs,
    renewal_check,
    return_probs,
    weighted_excursion_sum,
)
from lazy_spectra.spectral import (
    Verdict,
    classify_series,
    estimate_rho,
    kappa_critical_bisect,
    kappa_critical_singleton,
    rho_from_first_returns,
    rho_sweep,
)
from lazy_spectra.verify import default_type_cases, run_suite, verify_global_identities

RHO = 2 * math.sqrt(2) / 3
N = 2000

FIXTURES = {
    "triangle": {0: [(1, 0.5), (2, 0.5)], 1: [(0, 0.3), (1, 0.2), (2, 0.5)], 2: [(0, 1.0)]},
    "cycle4": {0: [(1, 1.0)], 1: [(2, 0.6), (0, 0.4)], 2: [(3, 0.6), (1, 0.4)], 3: [(0, 1.0)]},
    "hub": {0: [(1, 0.25), (2, 0.25), (3, 0.25), (4, 0.25)],
            1: [(0, 0.9), (2, 0.1)], 2: [(0, 0.5), (3, 0.5)], 3: [(3, 0.7), (0, 0.3)], 4: [(1, 1.0)]},
}


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion outside pytest's capture, then assert."""

    def record(number: int, passed: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if passed else 'FAIL'}: {detail}")
        assert passed, detail

    return record


def test_criterion_01_renewal_identity(verdict):
    kernels = [biased_walk(2 / 3), radial_tree(3)] + [explicit_kernel(r, label=name) for name, r in FIXTURES.items()]
    worst = 0.0
    for k in kernels:
        worst = max(worst, renewal_check(return_probs(k, k.origin, N), first_return_probs(k, k.origin, N)))
    verdict(1, worst <= 1e-12, f"max renewal residual {worst:.3e} over {len(kernels)} chains, n <= {N} (tol 1e-12)")


def test_criterion_02_affine_law(verdict):
    worst = 0.0
    for base in (biased_walk(2 / 3), radial_tree(3)):
        for kappa in np.round(np.arange(0.1, 1.0, 0.1), 1):
            k = apply_lazy(base, LazySpec(LazySet.everything(), float(kappa)))
            est = estimate_rho(return_probs(k, 0, N))
            worst = max(worst, abs(est.point - (kappa + (1 - kappa) * base.exact_rho)))
    verdict(2, worst <= 2e-5, f"max |estimate_rho - (kappa + (1-kappa) rho)| = {worst:.3e} (tol 2e-5)")


def test_criterion_03_singleton_lazy_coefficients(verdict):
    worst = 0.0
    for base in (biased_walk(2 / 3), radial_tree(3)):
        f = first_return_probs(base, 0, N)
        for kappa in (0.1, 0.4, 0.7, 0.95):
            spec = LazySpec(LazySet.finite([0]), kappa)
            direct = first_return_probs(apply_lazy(base, spec), 0, N).coeffs
            worst = max(worst, float(np.max(np.abs(direct - lazy_first_return_series(f, spec).coeffs))))
    verdict(3, worst <= 1e-14, f"max coefficient difference {worst:.3e}, N={N} (tol 1e-14)")


EXCURSION_CASES = [
    ("walk", [1], 0.3, 1.02), ("walk", [1], 0.7, 1.0), ("walk", [1, -1], 0.5, 0.95),
    ("walk", [2, -3], 0.8, 1.04), ("walk", [5], 0.2, 1.04), ("walk", [1, 2, 3], 0.6, 0.9),
    ("tree", [1], 0.3, 1.05), ("tree", [1], 0.7, 1.0), ("tree", [2, 3], 0.5, 1.02),
    ("tree", [1, 4], 0.8, 0.8), ("tree", [3], 0.2, 1.04), ("tree", [1, 2, 3, 4], 0.6, 0.95),
]


def test_criterion_04_excursion_expansion(verdict):
    bases = {"walk": biased_walk(2 / 3), "tree": radial_tree(3)}
    worst, ok = 0.0, True
    for name, states, kappa, z in EXCURSION_CASES:
        base, L = bases[name], LazySet.finite(states)
        assert kappa * z < 1
        expanded = weighted_excursion_sum(base, L, kappa, 0, z, N, extrapolate=True)
        direct = eval_series(first_return_probs(apply_lazy(base, LazySpec(L, kappa)), 0, N), z,
                             extrapolate=True)
        diff = abs(expanded.total - direct.total)
        worst = max(worst, diff)
        ok &= diff <= 1e-9 and not expanded.divergent
    marker = weighted_excursion_sum(bases["walk"], LazySet.finite([1]), 0.8, 0, 1.25, N)
    marker_tree = weighted_excursion_sum(bases["tree"], LazySet.finite([1]), 0.5, 0, 2.5, N)
    ok &= marker.divergent and marker_tree.divergent and math.isinf(marker.total)
    verdict(4, ok, f"max |excursion - direct| = {worst:.3e} on {len(EXCURSION_CASES)} cases (tol 1e-9); "
                   f"divergence marker at kappa z >= 1: {marker.divergent and marker_tree.divergent}")


def test_criterion_05_global_lazy_identities(verdict):
    worst, ok, n = 0.0, True, 0
    for base in (biased_walk(2 / 3), radial_tree(3)):
        rep = verify_global_identities(base, tol=1e-8)
        ok &= rep.ok
        cases = [c for c in rep.cases if c.status == "pass" or c.status == "fail"]
        n += len(cases)
        worst = max([worst] + [float(c.value) for c in cases])
    verdict(5, ok and n == 2 * 25 * 3, f"max identity residual {worst:.3e} over {n} checks on a 5x5 grid (tol 1e-8)")


def test_criterion_06_spectral_radius_oracles(verdict):
    errs = {}
    for name, k, target in (("walk 2/3", biased_walk(2 / 3), RHO), ("tree d=3", radial_tree(3), RHO),
                            ("walk 1/2", biased_walk(0.5), 1.0)):
        errs[name] = abs(estimate_rho(return_probs(k, 0, N)).point - target)
    ok = errs["walk 2/3"] <= 1e-5 and errs["tree d=3"] <= 1e-5 and errs["walk 1/2"] <= 2e-4
    verdict(6, ok, ", ".join(f"{k}: {v:.2e}" for k, v in errs.items()) + " (tol 1e-5, 1e-5, 2e-4)")


def test_criterion_07_phase_transition(verdict):
    tree = radial_tree(3)
    root = LazySet.finite([0])
    u = classify_series(first_return_probs(tree, 0, N), RHO).u_raw
    closed = kappa_critical_singleton(u, RHO)
    q = tree_quotient(3, [0, 1])
    bisect = kappa_critical_bisect(q, LazySet.finite([q.state(0)]), q.state(1), RHO, tol=1e-9)
    kc = closed.value
    below = [round(0.1 * i, 2) for i in range(8)] + [round(kc - 0.02, 6)]
    above = [round(kc + 0.02, 6), 0.85, 0.875, 0.9, 0.95]
    res = rho_sweep(tree, root, below + above)
    flat = [p for p in res.points if p.kappa <= kc - 0.02]
    rising = [p for p in res.points if p.kappa >= kc + 0.02]
    flat_dev = max(abs(p.rho.point - RHO) for p in flat)
    steps = [(b.rho.point - a.rho.point, 10 * max(a.rho.uncertainty, b.rho.uncertainty))
             for a, b in zip(rising, rising[1:])]
    increasing = all(d > need for d, need in steps) and rising[0].rho.point - RHO > 10 * rising[0].rho.uncertainty
    flips = all(p.classification.verdict is Verdict.RHO_TRANSIENT for p in flat) and \
        all(p.classification.verdict.recurrent for p in rising)
    ok = (abs(closed.value - 0.804738) <= 1e-4 and abs(bisect.value - 0.804738) <= 1e-4
          and bisect.residual <= 1e-9 and flat_dev <= 2e-5 and increasing and flips)
    verdict(7, ok, f"kappa_c closed {closed.value:.9f}, bisection {bisect.value:.9f} "
                   f"(residual {bisect.residual:.1e}); flat dev {flat_dev:.1e}; "
                   f"increasing {increasing}; verdict flip {flips}")


def test_criterion_08_recurrence_types(verdict):
    outcomes, ok = [], True
    for case in default_type_cases(N):
        f = first_return_probs(case.kernel, case.x, N)
        rho = case.rho if case.rho is not None else rho_from_first_returns(f).point
        v = classify_series(f, rho).verdict
        good = v is case.expected or (case.undetermined_ok and v is Verdict.UNDETERMINED)
        ok &= good
        outcomes.append(f"{case.label} -> {v.value}")
    verdict(8, ok, "; ".join(outcomes))


def test_criterion_09_reachability(verdict):
    rep = run_suite("reach", N)
    fails = [c.description for c in rep.cases if c.status == "fail"]
    verdict(9, rep.ok, f"{rep.summary['pass']} reach checks passed" + (f"; failed: {fails}" if fails else ""))


def test_criterion_10_monotone_and_endpoints(verdict):
    rep = run_suite("gen", N)
    tree = radial_tree(3)
    ends = {}
    for name, L in (("{0}", LazySet.finite([0])), ("{0,1,2}", LazySet.finite([0, 1, 2])),
                    ("S", LazySet.everything())):
        ends[name] = rho_sweep(tree, L, [0.99]).points[0].rho.point
    endpoint_ok = all(v >= 0.995 for v in ends.values())
    fails = [c.description for c in rep.cases if c.status == "fail"]
    verdict(10, rep.ok and endpoint_ok,
            f"gen suite {rep.summary}; tree rho(0.99): " + ", ".join(f"L={k} {v:.6f}" for k, v in ends.items())
            + (f"; failed: {fails}" if fails else ""))


def test_criterion_11_monte_carlo(verdict):
    samples, horizon = 1_000_000, 20
    worst, ok = 0.0, True
    for k in (biased_walk(2 / 3), radial_tree(3)):
        mc = monte_carlo_return_probs(k, 0, horizon, samples, seed=20261014)
        exact = return_probs(k, 0, horizon).coeffs
        se = np.sqrt(exact * (1 - exact) / samples)
        live = se > 0
        z = np.abs(mc.coeffs[live] - exact[live]) / se[live]
        worst = max(worst, float(z.max()))
        ok &= bool(np.all(z <= 4.0)) and bool(np.all(mc.coeffs[~live] == exact[~live]))
    verdict(11, ok, f"max |z| = {worst:.2f} over n <= {horizon}, {samples} samples (tol 4)")
