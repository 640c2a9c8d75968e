"""Spectral radii, rho-recurrence and critical laziness of (L, kappa)-lazy Markov chains."""
from __future__ import annotations

__version__ = "0.1.0"

from .chains import (
    BiasedWalkZ,
    BirthDeath,
    ExplicitSparse,
    HorizonBudgetError,
    KernelError,
    MarkovKernel,
    RegularTree,
    ValidationReport,
    build_family,
    reachable_ball,
    validate_kernel,
)
from .lazy import LazySet, LazySpec, apply_lazy, compose_lazy
from .series import (
    CoefficientSeries,
    SeriesEval,
    eval_series,
    first_return_probs,
    lazy_first_return_binomial,
    monte_carlo_return_probs,
    renewal_check,
    return_probs,
    weighted_excursion_sum,
)
from .spectral import (
    Classification,
    KappaCritical,
    RhoEstimate,
    SpectralReport,
    Verdict,
    analyze,
    classify,
    estimate_rho,
    kappa_critical_bisect,
    kappa_critical_singleton,
    rho_sweep,
    spectral_radius,
)
from .verify import VerificationReport, run_suite

__all__ = [name for name in dir() if not name.startswith("_")]
