"""The (L, kappa)-lazy transform of a kernel.

At each state of ``L`` the transformed chain stays put with extra
probability ``kappa`` and otherwise moves according to the original row.
Lazy kernels are views: rows are rewritten on access, so cofinite and
all-state sets cost nothing to represent.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal

from .chains import KernelError, MarkovKernel, Row, StateId

SetKind = Literal["finite", "cofinite", "all"]


@dataclass(frozen=True)
class LazySet:
    kind: SetKind
    states: frozenset[StateId] = frozenset()

    def __post_init__(self):
        if self.kind not in ("finite", "cofinite", "all"):
            raise ValueError(f"unknown lazy-set kind {self.kind!r}")
        if self.kind == "all" and self.states:
            raise ValueError("the all-states set carries no state list")

    @classmethod
    def finite(cls, states: Iterable[StateId]) -> "LazySet":
        return cls("finite", frozenset(states))

    @classmethod
    def cofinite(cls, complement: Iterable[StateId]) -> "LazySet":
        return cls("cofinite", frozenset(complement))

    @classmethod
    def everything(cls) -> "LazySet":
        return cls("all")

    def __contains__(self, x: StateId) -> bool:
        if self.kind == "all":
            return True
        if self.kind == "finite":
            return x in self.states
        return x not in self.states

    @property
    def is_empty(self) -> bool:
        return self.kind == "finite" and not self.states

    @property
    def is_all(self) -> bool:
        return self.kind == "all" or (self.kind == "cofinite" and not self.states)

    def complement(self) -> "LazySet":
        if self.kind == "all":
            return LazySet.finite(())
        if self.kind == "finite":
            return LazySet.cofinite(self.states)
        return LazySet.finite(self.states)

    def map(self, translate) -> "LazySet":
        """Relabel the listed states (e.g. family ids to quotient states)."""
        return LazySet(self.kind, frozenset(translate(x) for x in self.states))

    def describe(self) -> str:
        if self.kind == "all":
            return "S"
        listed = ",".join(str(x) for x in sorted(self.states))
        return "{" + listed + "}" if self.kind == "finite" else "S\\{" + listed + "}"


@dataclass(frozen=True)
class LazySpec:
    L: LazySet
    kappa: float

    def __post_init__(self):
        if not 0.0 <= self.kappa < 1.0:
            raise KernelError(f"kappa must lie in [0, 1), got {self.kappa}")


def lazy_row(row: Row, x: StateId, kappa: float) -> Row:
    hold = kappa
    moves = []
    for y, pr in row:
        if y == x:
            hold = kappa + (1.0 - kappa) * pr
        else:
            moves.append((y, (1.0 - kappa) * pr))
    return ((x, hold),) + tuple(moves)


def apply_lazy(k: MarkovKernel, spec: LazySpec) -> MarkovKernel:
    """Return the (L, kappa)-lazy version of ``k``.

    The closed-form spectral radius survives only for ``L = S``, where it maps
    to ``kappa + (1 - kappa) * rho``; any other set needs numerical estimation.
    """
    kappa, L = spec.kappa, spec.L
    if kappa == 0.0 or L.is_empty:
        return k

    base = k.row

    def row(x: StateId) -> Row:
        r = base(x)
        if x in L:
            return lazy_row(r, x, kappa)
        return r

    exact = None
    if L.is_all and k.exact_rho is not None:
        exact = kappa + (1.0 - kappa) * k.exact_rho
    return k.evolve(
        row_fn=row,
        label=f"({k.label})^{L.describe()}_{kappa:g}",
        period_hint=None,
        exact_rho=exact,
    )


def compose_lazy(k: MarkovKernel, first: LazySpec, second: LazySpec) -> MarkovKernel:
    """``((P^L_kappa)^L'_kappa')``: apply ``first`` then ``second``."""
    return apply_lazy(apply_lazy(k, first), second)
