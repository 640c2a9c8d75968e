"""Transition kernels on countable state spaces and the built-in chain families.

A kernel is only ever inspected through ``row(x)``: the finite list of
``(target, probability)`` pairs leaving ``x``.  Infinite chains are therefore
never truncated; every horizon-``N`` computation touches exactly the states
reachable from the base state in at most ``N`` steps.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Callable, Iterable, Mapping, Sequence, Union

Row = tuple[tuple[int, float], ...]
StateId = int

ROW_SUM_TOL = 1e-12
MAX_BALL_STATES = 5_000_000


class KernelError(ValueError):
    """Raised for malformed kernels or family parameters."""


class HorizonBudgetError(RuntimeError):
    """Raised when a ball or a DP would exceed the configured work budget."""


@dataclass(frozen=True, eq=False)
class MarkovKernel:
    """Sparse row-access view of a transition probability.

    ``encode`` maps family-level state labels to kernel states when the
    kernel is a quotient (see :func:`tree_quotient`); it is ``None`` when the
    two coincide.
    """

    row_fn: Callable[[StateId], Row] = field(repr=False)
    origin: StateId = 0
    label: str = ""
    period_hint: int | None = None
    exact_rho: float | None = None
    encode: Mapping[int, StateId] | None = field(default=None, repr=False)

    def row(self, x: StateId) -> Row:
        return self.row_fn(x)

    def state(self, label: int) -> StateId:
        """Translate a family-level state label into a kernel state."""
        if self.encode is None:
            return label
        try:
            return self.encode[label]
        except KeyError:
            raise KernelError(f"state {label} is not represented in {self.label}") from None

    def evolve(self, **changes) -> "MarkovKernel":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# family specifications

SeqOrFn = Union[Sequence[float], Callable[[int], float]]


def _at(seq: SeqOrFn, k: int) -> float:
    if callable(seq):
        return float(seq(k))
    if len(seq) == 0:
        return 0.0
    return float(seq[min(k, len(seq) - 1)])


@dataclass(frozen=True)
class BiasedWalkZ:
    """Nearest-neighbour walk on the integers stepping +1 with probability ``p``."""

    p: float


@dataclass(frozen=True)
class BirthDeath:
    """Birth-death chain on {0, 1, 2, ...}.

    ``up``, ``down`` and ``hold`` are either callables ``k -> prob`` or
    sequences whose last entry is repeated for all larger ``k``.
    """

    up: SeqOrFn
    down: SeqOrFn
    hold: SeqOrFn = (0.0,)
    check_levels: int = 64


@dataclass(frozen=True)
class RegularTree:
    """Simple random walk on the ``d``-regular tree.

    ``radialized`` selects the distance-from-root projection.  With
    ``radialized=False`` and a non-empty ``marked`` tuple of vertex ids, the
    exact quotient that keeps the subtree spanned by the root and the marked
    vertices is built instead (see :func:`tree_quotient`); with no marks the
    full tree with its breadth-first vertex numbering is returned.
    """

    d: int
    radialized: bool = True
    marked: tuple[int, ...] = ()


@dataclass(frozen=True)
class ExplicitSparse:
    rows: Mapping[int, Sequence[tuple[int, float]]]
    origin: int | None = None


ChainFamilySpec = Union[BiasedWalkZ, BirthDeath, RegularTree, ExplicitSparse]


def build_family(spec: ChainFamilySpec) -> MarkovKernel:
    """Build the kernel of a built-in family, validating its parameters."""
    if isinstance(spec, BiasedWalkZ):
        return biased_walk(spec.p)
    if isinstance(spec, BirthDeath):
        return birth_death(spec.up, spec.down, spec.hold, check_levels=spec.check_levels)
    if isinstance(spec, RegularTree):
        if spec.radialized:
            if spec.marked:
                raise KernelError("marked vertices need radialized=False")
            return radial_tree(spec.d)
        if spec.marked:
            return tree_quotient(spec.d, spec.marked)
        return full_tree(spec.d)
    if isinstance(spec, ExplicitSparse):
        return explicit_kernel(spec.rows, spec.origin)
    raise KernelError(f"unknown chain family {spec!r}")


def biased_walk(p: float) -> MarkovKernel:
    if not 0.0 < p < 1.0:
        raise KernelError(f"BiasedWalkZ needs 0 < p < 1, got {p}")
    q = 1.0 - p

    def row(z: int) -> Row:
        return ((z + 1, p), (z - 1, q))

    return MarkovKernel(
        row, origin=0, label=f"BiasedWalkZ(p={p:g})", period_hint=2,
        exact_rho=2.0 * math.sqrt(p * q),
    )


def birth_death(up: SeqOrFn, down: SeqOrFn, hold: SeqOrFn = (0.0,), *,
                check_levels: int = 64, label: str | None = None,
                exact_rho: float | None = None) -> MarkovKernel:
    if _at(down, 0) != 0.0:
        raise KernelError("BirthDeath: down probability at 0 must be 0")
    levels = check_levels
    if not callable(up) and not callable(down) and not callable(hold):
        levels = max(len(up), len(down), len(hold)) + 1
    aperiodic = False
    for k in range(levels):
        u, dn, h = _at(up, k), _at(down, k), _at(hold, k)
        if min(u, dn, h) < 0.0:
            raise KernelError(f"BirthDeath: negative probability at level {k}")
        if abs(u + dn + h - 1.0) > ROW_SUM_TOL:
            raise KernelError(f"BirthDeath: row {k} sums to {u + dn + h!r}")
        if u <= 0.0 or (k > 0 and dn <= 0.0):
            raise KernelError(f"BirthDeath: level {k} breaks irreducibility")
        aperiodic = aperiodic or h > 0.0

    def row(k: int) -> Row:
        entries = []
        u, dn, h = _at(up, k), _at(down, k), _at(hold, k)
        if u > 0.0:
            entries.append((k + 1, u))
        if k > 0 and dn > 0.0:
            entries.append((k - 1, dn))
        if h > 0.0:
            entries.append((k, h))
        return tuple(entries)

    return MarkovKernel(
        row, origin=0, label=label or "BirthDeath",
        period_hint=None if aperiodic else 2, exact_rho=exact_rho,
    )


def _check_degree(d: int) -> None:
    if int(d) != d or d < 3:
        raise KernelError(f"RegularTree needs an integer d >= 3, got {d}")


def tree_rho(d: int) -> float:
    return 2.0 * math.sqrt(d - 1) / d


def radial_tree(d: int) -> MarkovKernel:
    _check_degree(d)
    up = (d - 1) / d

    def row(k: int) -> Row:
        if k == 0:
            return ((1, 1.0),)
        return ((k + 1, up), (k - 1, 1.0 / d))

    return MarkovKernel(
        row, origin=0, label=f"RegularTree(d={d}, radialized)", period_hint=2,
        exact_rho=tree_rho(d),
    )


# Full d-regular tree.  Vertices are numbered breadth-first: the root is 0,
# then level m (d*(d-1)**(m-1) vertices) in lexicographic order of the
# non-backtracking word that leads to it from the root.

def _level_offset(d: int, m: int) -> int:
    if m == 0:
        return 0
    return 1 + d * ((d - 1) ** (m - 1) - 1) // (d - 2)


def tree_level(d: int, v: int) -> int:
    m = 0
    while _level_offset(d, m + 1) <= v:
        m += 1
    return m


def tree_word(d: int, v: int) -> tuple[int, ...]:
    """Non-backtracking letter sequence of vertex ``v`` (first letter in 0..d-1, rest in 0..d-2)."""
    if v < 0:
        raise KernelError(f"tree vertex ids are non-negative, got {v}")
    m = tree_level(d, v)
    idx = v - _level_offset(d, m)
    letters = []
    for _ in range(m - 1):
        idx, a = divmod(idx, d - 1)
        letters.append(a)
    if m:
        letters.append(idx)
    return tuple(reversed(letters))


def tree_vertex(d: int, word: Sequence[int]) -> int:
    m = len(word)
    if m == 0:
        return 0
    idx = word[0]
    for a in word[1:]:
        idx = idx * (d - 1) + a
    return _level_offset(d, m) + idx


def tree_neighbours(d: int, v: int) -> tuple[int, ...]:
    word = tree_word(d, v)
    branching = d if not word else d - 1
    children = tuple(tree_vertex(d, word + (a,)) for a in range(branching))
    if not word:
        return children
    return (tree_vertex(d, word[:-1]),) + children


def full_tree(d: int) -> MarkovKernel:
    _check_degree(d)
    p = 1.0 / d

    def row(v: int) -> Row:
        return tuple((w, p) for w in tree_neighbours(d, v))

    return MarkovKernel(
        row, origin=0, label=f"RegularTree(d={d})", period_hint=2,
        exact_rho=tree_rho(d),
    )


def tree_quotient(d: int, marked: Iterable[int]) -> MarkovKernel:
    """Exact lumped walk for a finite set of tree vertices.

    Keeps the subtree ``T`` spanned by the root and ``marked``; every other
    vertex is lumped with the vertices at the same distance inside the same
    hanging forest of some ``u`` in ``T``.  The walk is strongly lumpable for
    this partition and any lazy set contained in ``T`` respects it, so return
    probabilities to vertices of ``T`` are exact.  Kernel states: ``0..t-1``
    are the vertices of ``T`` (root first), then ``t + (j-1)*m + slot(u)`` is
    the lump at depth ``j >= 1`` below ``u``.
    """
    _check_degree(d)
    spine: dict[int, None] = {0: None}
    for v in marked:
        word = tree_word(d, int(v))
        for i in range(len(word) + 1):
            spine.setdefault(tree_vertex(d, word[:i]), None)
    vertices = sorted(spine)
    index = {v: i for i, v in enumerate(vertices)}
    t = len(vertices)
    inner = {i: [index[w] for w in tree_neighbours(d, v) if w in index] for i, v in enumerate(vertices)}
    slots = [i for i in range(t) if len(inner[i]) < d]
    slot = {i: s for s, i in enumerate(slots)}
    m = len(slots)
    p = 1.0 / d
    up = (d - 1) / d

    def row(s: int) -> Row:
        if s < t:
            entries = tuple((w, p) for w in inner[s])
            ext = d - len(inner[s])
            if ext:
                entries += ((t + slot[s], ext * p),)
            return entries
        j, k = divmod(s - t, m)
        j += 1
        below = slots[k] if j == 1 else s - m
        return ((s + m, up), (below, p))

    marked_str = ",".join(str(v) for v in vertices)
    return MarkovKernel(
        row, origin=0, label=f"RegularTree(d={d}, quotient over {{{marked_str}}})",
        period_hint=2, exact_rho=tree_rho(d), encode=dict(index),
    )


def explicit_kernel(rows: Mapping[int, Sequence[tuple[int, float]]], origin: int | None = None,
                    *, check: bool = True, label: str = "ExplicitSparse") -> MarkovKernel:
    """Finite kernel from explicit rows.  ``check=False`` skips validation (test doubles)."""
    table: dict[int, Row] = {
        int(x): tuple((int(y), float(pr)) for y, pr in entries) for x, entries in rows.items()
    }
    if not table:
        raise KernelError("ExplicitSparse needs at least one row")
    if check:
        for x, entries in table.items():
            for y, pr in entries:
                if y not in table:
                    raise KernelError(f"row {x} points to {y}, which has no row")
                if not 0.0 < pr <= 1.0:
                    raise KernelError(f"row {x}: probability {pr} outside (0, 1]")
            total = math.fsum(pr for _, pr in entries)
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise KernelError(f"row {x} sums to {total!r}")
    start = min(table) if origin is None else int(origin)
    if start not in table:
        raise KernelError(f"origin {start} has no row")

    def row(x: int) -> Row:
        try:
            return table[x]
        except KeyError:
            raise KernelError(f"state {x} has no row") from None

    return MarkovKernel(row, origin=start, label=label, exact_rho=None)


# ---------------------------------------------------------------------------
# exploration

def ball_layers(k: MarkovKernel, x: StateId, n: int, *, max_states: int = MAX_BALL_STATES):
    """Breadth-first enumeration of the states reachable from ``x`` in <= ``n`` steps.

    Returns ``(states, distance)`` where ``states`` is ordered by distance.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    distance = {x: 0}
    states = [x]
    frontier = deque([x])
    while frontier:
        y = frontier.popleft()
        dy = distance[y]
        if dy == n:
            continue
        for w, _ in k.row(y):
            if w not in distance:
                distance[w] = dy + 1
                states.append(w)
                frontier.append(w)
                if len(states) > max_states:
                    raise HorizonBudgetError(
                        f"ball of radius {n} around {x} exceeds {max_states} states"
                    )
    return states, distance


def reachable_ball(k: MarkovKernel, x: StateId, n: int) -> set[StateId]:
    """States reachable from ``x`` in at most ``n`` steps."""
    return set(ball_layers(k, x, n)[0])


@dataclass
class ValidationReport:
    valid: bool
    radius: int
    n_states: int
    max_row_error: float
    normalization_failures: list[StateId]
    irreducible: bool
    unreturned: list[StateId]
    period: int | None

    def describe(self) -> str:
        lines = [f"valid={self.valid} radius={self.radius} states={self.n_states} period={self.period}"]
        if self.normalization_failures:
            lines.append(f"rows not summing to 1: {self.normalization_failures[:10]}")
        if not self.irreducible:
            lines.append(f"states that cannot reach the origin: {self.unreturned[:10]}")
        return "\n".join(lines)


def validate_kernel(k: MarkovKernel, radius: int) -> ValidationReport:
    """Check normalization and irreducibility on a finite ball around the origin.

    A state in the ball of ``radius`` counts as connected when it can reach
    the origin along transitions inside the ball of ``2 * radius``.  The
    period is the gcd of the return times observed within ``2 * radius`` steps.
    Irreducibility of an infinite kernel is not decidable from finite
    inspection; this only certifies the explored ball.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    x = k.origin
    inner, dist = ball_layers(k, x, radius)
    outer, _ = ball_layers(k, x, 2 * radius)
    outer_set = set(outer)

    failures, worst = [], 0.0
    for y in inner:
        err = abs(math.fsum(pr for _, pr in k.row(y)) - 1.0)
        worst = max(worst, err)
        if err > ROW_SUM_TOL:
            failures.append(y)

    reverse: dict[StateId, list[StateId]] = {}
    for y in outer:
        for w, pr in k.row(y):
            if pr > 0.0 and w in outer_set:
                reverse.setdefault(w, []).append(y)
    back = {x}
    frontier = deque([x])
    while frontier:
        w = frontier.popleft()
        for y in reverse.get(w, ()):
            if y not in back:
                back.add(y)
                frontier.append(y)
    unreturned = [y for y in inner if y not in back]

    # return-time support, by boolean propagation
    horizon = 2 * radius
    current = {x}
    times = []
    for t in range(1, horizon + 1):
        nxt = set()
        for y in current:
            for w, pr in k.row(y):
                if pr > 0.0:
                    nxt.add(w)
        current = nxt
        if x in current:
            times.append(t)
    period = reduce(math.gcd, times) if times else None

    return ValidationReport(
        valid=not failures and not unreturned,
        radius=radius,
        n_states=len(inner),
        max_row_error=worst,
        normalization_failures=failures,
        irreducible=not unreturned,
        unreturned=unreturned,
        period=period,
    )
