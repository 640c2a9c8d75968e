"""Small worked examples with hand-derivable answers, one per operation."""
from __future__ import annotations

import json
import math

import numpy as np
import pytest

from lazy_spectra.chains import (
    biased_walk,
    explicit_kernel,
    radial_tree,
    reachable_ball,
    tree_quotient,
    validate_kernel,
)
from lazy_spectra.cli import main
from lazy_spectra.lazy import LazySet, LazySpec, apply_lazy, compose_lazy
from lazy_spectra.series import (
    CoefficientSeries,
    SeriesKind,
    eval_series,
    first_return_probs,
    lazy_first_return_binomial,
    monte_carlo_return_probs,
    return_probs,
    weighted_excursion_sum,
)
from lazy_spectra.spectral import (
    estimate_rho,
    kappa_critical_bisect,
    kappa_critical_singleton,
    rho_sweep,
)
from lazy_spectra.verify import verify_gen, verify_global_identities, verify_phase_transition

RHO = 2 * math.sqrt(2) / 3
CYCLE = {0: [(1, 1.0)], 1: [(2, 1.0)], 2: [(0, 1.0)]}


def _rows_equal(a, b, tol=0.0):
    da, db = dict(a), dict(b)
    return all(abs(da.get(s, 0.0) - db.get(s, 0.0)) <= tol for s in da.keys() | db.keys())


# chains

def test_closed_form_radii():
    assert biased_walk(0.5).exact_rho == 1.0
    assert biased_walk(2 / 3).exact_rho == pytest.approx(0.942809, abs=1e-6)
    assert radial_tree(3).exact_rho == pytest.approx(0.942809, abs=1e-6)


def test_closed_form_radius_agrees_with_fekete_bound():
    from lazy_spectra.spectral import fekete_lower
    for k in (biased_walk(2 / 3), radial_tree(3)):
        low = fekete_lower(return_probs(k, 0, 2000))
        assert low <= k.exact_rho < low + 5e-3


@pytest.mark.parametrize("kernel", [biased_walk(2 / 3), radial_tree(3)], ids=["walk", "tree"])
def test_validation_radius_10_period_2(kernel):
    rep = validate_kernel(kernel, 10)
    assert rep.valid and rep.period == 2


def test_validation_reports_short_row():
    k = explicit_kernel({0: [(1, 0.9)], 1: [(0, 1.0)]}, check=False)
    rep = validate_kernel(k, 2)
    assert not rep.valid and rep.normalization_failures == [0]
    assert rep.max_row_error == pytest.approx(0.1)


def test_balls():
    assert reachable_ball(biased_walk(2 / 3), 0, 2) == {-2, -1, 0, 1, 2}
    assert reachable_ball(radial_tree(3), 5, 0) == {5}
    assert reachable_ball(radial_tree(3), 0, 3) == {0, 1, 2, 3}


# lazy transform

def test_lazy_self_loop_substitution():
    k = explicit_kernel({0: [(0, 0.2), (1, 0.8)], 1: [(0, 1.0)]})
    lazy = apply_lazy(k, LazySpec(LazySet.finite([0]), 0.5))
    assert dict(lazy.row(0))[0] == pytest.approx(0.6, abs=1e-15)


def test_zero_laziness_is_identity():
    k = biased_walk(2 / 3)
    for L in (LazySet.finite([0]), LazySet.cofinite([3]), LazySet.everything()):
        assert apply_lazy(k, LazySpec(L, 0.0)) is k


def test_all_states_lazy_walk_radius():
    k = apply_lazy(biased_walk(2 / 3), LazySpec(LazySet.everything(), 0.25))
    assert k.exact_rho == pytest.approx(0.957107, abs=1e-6)


def test_lazy_on_set_then_complement_is_all_states():
    k = biased_walk(2 / 3)
    L = LazySet.finite([0, 2])
    two = compose_lazy(k, LazySpec(L, 0.3), LazySpec(L.complement(), 0.3))
    one = apply_lazy(k, LazySpec(LazySet.everything(), 0.3))
    for x in range(-4, 5):
        assert _rows_equal(two.row(x), one.row(x))


def test_repeated_laziness_at_one_state():
    k = biased_walk(2 / 3)
    k1, k2 = 0.3, 0.45
    two = compose_lazy(k, LazySpec(LazySet.finite([0]), k1), LazySpec(LazySet.finite([0]), k2))
    one = apply_lazy(k, LazySpec(LazySet.finite([0]), k1 + k2 - k1 * k2))
    assert _rows_equal(two.row(0), one.row(0), 1e-15)


def test_second_zero_laziness_changes_nothing():
    k = biased_walk(2 / 3)
    first = LazySpec(LazySet.finite([0]), 0.4)
    two = compose_lazy(k, first, LazySpec(LazySet.finite([1]), 0.0))
    assert two.row(0) == apply_lazy(k, first).row(0)


# series

def test_walk_two_step_returns():
    p = return_probs(biased_walk(2 / 3), 0, 2).coeffs
    assert list(p[:2]) == [1.0, 0.0]
    assert p[2] == pytest.approx(4 / 9, abs=1e-16)


def test_absorbing_loop_returns():
    k = explicit_kernel({0: [(0, 1.0)]})
    assert np.all(return_probs(k, 0, 10).coeffs == 1.0)


def test_three_cycle_returns():
    p = return_probs(explicit_kernel(CYCLE), 0, 6).coeffs
    assert list(p) == [1.0 if n % 3 == 0 else 0.0 for n in range(7)]


def test_renewal_against_matrix_powers():
    rows = {0: [(1, 0.6), (2, 0.4)], 1: [(0, 0.5), (2, 0.5)], 2: [(0, 0.2), (1, 0.3), (2, 0.5)]}
    P = np.zeros((3, 3))
    for x, entries in rows.items():
        for y, pr in entries:
            P[x, y] = pr
    Pn = np.eye(3)
    p = [1.0]
    for _ in range(200):
        Pn = Pn @ P
        p.append(Pn[0, 0])
    p = np.array(p)
    f = first_return_probs(explicit_kernel(rows), 0, 200).coeffs
    conv = np.convolve(f, p)[1:201]
    assert np.max(np.abs(p[1:] - conv)) <= 1e-12


def test_renewal_with_no_returns():
    from lazy_spectra.series import renewal_check
    k = explicit_kernel({0: [(1, 1.0)], 1: [(1, 1.0)]})
    assert renewal_check(return_probs(k, 0, 20), first_return_probs(k, 0, 20)) == 0.0


def test_geometric_partial_sum_and_tail_bound():
    s = CoefficientSeries(SeriesKind.RETURN, 0, 0.9 ** np.arange(201))
    ev = eval_series(s, 1.0, ratio_bound=0.9)
    assert ev.value == pytest.approx(10 - 0.9 ** 200 * 9, abs=1e-12)
    assert ev.tail_bound == pytest.approx(0.9 ** 201 / 0.1, rel=1e-12)


def test_symmetric_walk_returns_surely():
    f = first_return_probs(biased_walk(0.5), 0, 10_000)
    assert abs(eval_series(f, 1.0).value - 1.0) <= 0.02


def test_series_at_zero():
    f = first_return_probs(radial_tree(3), 0, 10)
    assert eval_series(f, 0.0).value == f.coeffs[0]


def test_binomial_transform_small_cases():
    f = first_return_probs(biased_walk(2 / 3), 0, 6)
    spec = LazySpec(LazySet.finite([0]), 0.5)
    assert lazy_first_return_binomial(f, spec, 1) == 0.5
    assert lazy_first_return_binomial(f, spec, 2) == pytest.approx(2 / 9, abs=1e-16)
    all_spec = LazySpec(LazySet.everything(), 0.5)
    direct = first_return_probs(apply_lazy(biased_walk(2 / 3), all_spec), 0, 3).coeffs[3]
    assert lazy_first_return_binomial(f, all_spec, 3) == pytest.approx(direct, abs=1e-16)


def test_excursion_sum_without_laziness_is_base_u():
    k = biased_walk(2 / 3)
    base = eval_series(first_return_probs(k, 0, 300), 1.02).value
    assert weighted_excursion_sum(k, LazySet.finite([1]), 0.0, 0, 1.02, 300).value == base


def test_excursion_sum_against_lazy_kernel():
    k = biased_walk(2 / 3)
    L = LazySet.finite([1])
    expanded = weighted_excursion_sum(k, L, 0.3, 0, 1.02, 400)
    direct = eval_series(first_return_probs(apply_lazy(k, LazySpec(L, 0.3)), 0, 1200), 1.02)
    assert expanded.value == pytest.approx(direct.value, abs=1e-9)


def test_excursion_sum_diverges_past_one_over_kappa():
    ev = weighted_excursion_sum(biased_walk(2 / 3), LazySet.finite([1]), 0.5, 0, 2.0, 400)
    assert ev.divergent


def test_monte_carlo_small_cases():
    mc = monte_carlo_return_probs(explicit_kernel(CYCLE), 0, 6, 500, seed=1)
    assert mc.coeffs[3] == 1.0
    walk = monte_carlo_return_probs(biased_walk(2 / 3), 0, 2, 1_000_000, seed=5)
    se = math.sqrt((4 / 9) * (5 / 9) / 1_000_000)
    assert abs(walk.coeffs[2] - 4 / 9) <= 3 * se
    assert monte_carlo_return_probs(radial_tree(3), 0, 0, 1, seed=0).coeffs.tolist() == [1.0]


# spectral analysis

def test_walk_and_tree_radius_estimates():
    assert estimate_rho(return_probs(biased_walk(2 / 3), 0, 2000)).point == pytest.approx(0.942809, abs=1e-6)
    assert estimate_rho(return_probs(radial_tree(3), 0, 2000)).point == pytest.approx(0.942809, abs=1e-5)


def test_geometric_radius_is_exact():
    s = CoefficientSeries(SeriesKind.RETURN, 0, 0.9 ** np.arange(201))
    est = estimate_rho(s)
    assert est.point == pytest.approx(0.9, abs=1e-15)
    assert est.fekete_lower == pytest.approx(0.9, abs=1e-15)


def test_critical_laziness_formula_cases():
    assert kappa_critical_singleton(0.75, RHO).value == pytest.approx(0.804738, abs=1e-6)
    assert kappa_critical_singleton(1 - 1e-9, RHO).value < 1e-7
    assert kappa_critical_singleton(0.0, 0.5).value == 0.5


def test_bisection_from_a_neighbour_of_the_root():
    q = tree_quotient(3, [0, 1])
    kc = kappa_critical_bisect(q, LazySet.finite([0]), q.state(1), RHO, tol=1e-6)
    assert kc.value == pytest.approx(kappa_critical_singleton(0.75, RHO).value, abs=1e-6)


def test_bisection_with_a_distance_two_vertex():
    q = tree_quotient(3, [0, 1, 4])
    kc = kappa_critical_bisect(q, LazySet.finite([q.state(0), q.state(4)]), q.state(1), RHO, tol=1e-6)
    assert 0.0 < kc.value <= 0.804738


def test_bisection_coarse_tolerance():
    q = tree_quotient(3, [0, 1])
    kc = kappa_critical_bisect(q, LazySet.finite([0]), q.state(1), RHO, tol=0.5, N=600)
    assert kc.bracket_width <= 0.5 and kc.iterations == 1


def test_all_states_sweep_on_affine_line():
    res = rho_sweep(biased_walk(2 / 3), LazySet.everything(), [0.0, 0.3, 0.6, 0.9])
    for p in res.points:
        assert p.rho.point == pytest.approx(p.kappa + (1 - p.kappa) * RHO, abs=1e-15)


def test_root_sweep_kink():
    grid = [round(0.05 * i, 2) for i in range(20)]
    res = rho_sweep(radial_tree(3), LazySet.finite([0]), grid)
    for p in res.points:
        if p.kappa <= 0.80:
            assert p.rho.point == pytest.approx(RHO, abs=2e-5)
    rising = [p.rho.point for p in res.points if p.kappa > 0.80]
    assert rising[0] > RHO and all(b > a for a, b in zip(rising, rising[1:]))
    assert res.segments[-1][2] == "increasing" and res.segments[-1][0] == pytest.approx(0.8)


def test_empty_sweep():
    assert rho_sweep(radial_tree(3), LazySet.finite([0]), []).points == []


# verification harness

def test_gen_full_root_grid():
    grid = [round(0.05 * i, 2) for i in range(20)]
    assert verify_gen(radial_tree(3), LazySet.finite([0]), grid).ok


def test_gen_empty_and_all_sets():
    grid = [0.0, 0.3, 0.6]
    empty = verify_gen(radial_tree(3), LazySet.finite(()), grid, endpoint=None)
    assert empty.ok and any("equal" in c.description for c in empty.cases)
    assert verify_gen(radial_tree(3), LazySet.everything(), grid).ok


def test_phase_grid_below_critical_laziness_is_flat():
    q = tree_quotient(3, [0, 1])
    rep = verify_phase_transition(q, LazySet.finite([0]), [0.2, 0.4, 0.6], x=0)
    assert rep.ok
    assert not any("increas" in c.description and c.status == "pass" for c in rep.cases)


def test_identities_at_z_one():
    rep = verify_global_identities(biased_walk(2 / 3), kappas=(0.25,), z_fractions=(1.0 / (0.25 + 0.75 * RHO),))
    assert rep.ok


def test_identities_at_z_zero():
    rep = verify_global_identities(radial_tree(3), kappas=(0.0, 0.5), z_fractions=(0.0,))
    assert rep.ok and all(c.value <= 1e-15 for c in rep.cases if c.status == "pass")


# command line

def test_cli_symmetric_walk_radius(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"chain": {"family": "biased_walk", "p": 0.5}}))
    assert main(["rho", "--config", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["rho_point"] == pytest.approx(1.0, abs=1e-6)


def test_cli_bisection_tolerance(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"chain": {"family": "regular_tree", "d": 3, "radialized": False},
                               "lazy": {"set": {"finite": [0, 4]}}, "horizon": 600,
                               "tolerances": {"kappa_tol": 1e-2}}))
    assert main(["kappa-c", "--config", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["bracket_width"] <= 1e-2


def test_cli_all_states_sweep_rows(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"chain": {"family": "regular_tree", "d": 3}, "lazy": {"set": "all"},
                               "kappas": [0.2, 0.7]}))
    assert main(["sweep", "--config", str(cfg)]) == 0
    for row in json.loads(capsys.readouterr().out)["points"]:
        assert row["rho_point"] == pytest.approx(row["kappa"] + (1 - row["kappa"]) * RHO, abs=1e-15)


def test_cli_verify_all_aggregates(capsys):
    assert main(["verify", "--suite", "all", "--format", "json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["suite"] == "all" and len(data["cases"]) > 400
