"""JSON run configuration: chain family, lazy set, horizon and tolerances."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .chains import (
    BiasedWalkZ,
    BirthDeath,
    ChainFamilySpec,
    ExplicitSparse,
    KernelError,
    MarkovKernel,
    RegularTree,
    ball_layers,
    build_family,
    full_tree,
    tree_neighbours,
)
from .lazy import LazySet, LazySpec

SCHEMA = "v1"
DEFAULT_TOLERANCES = {"kappa_tol": 1e-9, "margin": 1e-4, "residual_tol": 1e-9}


class ConfigError(ValueError):
    """A malformed configuration; the message names the offending field."""


def _need(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    if key not in obj:
        raise ConfigError(f"{where}.{key}: missing")
    return obj[key]


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _integer(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    return v


def _prob_list(v, where: str) -> tuple[float, ...]:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a non-empty list of numbers")
    return tuple(_number(x, f"{where}[{i}]") for i, x in enumerate(v))


def parse_chain(obj: Any) -> ChainFamilySpec:
    fam = _need(obj, "family", "chain")
    if fam == "biased_walk":
        return BiasedWalkZ(_number(_need(obj, "p", "chain"), "chain.p"))
    if fam == "regular_tree":
        d = _integer(_need(obj, "d", "chain"), "chain.d")
        radial = obj.get("radialized", True)
        if not isinstance(radial, bool):
            raise ConfigError("chain.radialized: expected true or false")
        return RegularTree(d, radial)
    if fam == "birth_death":
        return BirthDeath(
            _prob_list(_need(obj, "up", "chain"), "chain.up"),
            _prob_list(_need(obj, "down", "chain"), "chain.down"),
            _prob_list(obj.get("hold", [0.0]), "chain.hold"),
        )
    if fam == "explicit":
        rows_in = _need(obj, "rows", "chain")
        if not isinstance(rows_in, dict) or not rows_in:
            raise ConfigError("chain.rows: expected a non-empty object of state -> [[target, prob], ...]")
        rows = {}
        for key, entries in rows_in.items():
            try:
                state = int(key)
            except ValueError:
                raise ConfigError(f"chain.rows.{key}: state ids are integers") from None
            if not isinstance(entries, list):
                raise ConfigError(f"chain.rows.{key}: expected a list of [target, prob] pairs")
            pairs = []
            for i, e in enumerate(entries):
                if not (isinstance(e, list) and len(e) == 2):
                    raise ConfigError(f"chain.rows.{key}[{i}]: expected [target, prob]")
                pairs.append((_integer(e[0], f"chain.rows.{key}[{i}][0]"),
                              _number(e[1], f"chain.rows.{key}[{i}][1]")))
            rows[state] = tuple(pairs)
        origin = obj.get("origin")
        if origin is not None:
            origin = _integer(origin, "chain.origin")
        return ExplicitSparse(rows, origin)
    raise ConfigError(
        f"chain.family: unknown family {fam!r} (biased_walk, regular_tree, birth_death, explicit)"
    )


def chain_to_dict(spec: ChainFamilySpec) -> dict:
    if isinstance(spec, BiasedWalkZ):
        return {"family": "biased_walk", "p": spec.p}
    if isinstance(spec, RegularTree):
        return {"family": "regular_tree", "d": spec.d, "radialized": spec.radialized}
    if isinstance(spec, BirthDeath):
        return {"family": "birth_death", "up": list(spec.up), "down": list(spec.down),
                "hold": list(spec.hold)}
    out = {"family": "explicit",
           "rows": {str(s): [[t, p] for t, p in e] for s, e in spec.rows.items()}}
    if spec.origin is not None:
        out["origin"] = spec.origin
    return out


def parse_lazy_set(v: Any, where: str = "lazy.set") -> LazySet:
    if v == "all":
        return LazySet.everything()
    if isinstance(v, dict) and len(v) == 1:
        (kind, states), = v.items()
        if kind not in ("finite", "cofinite"):
            raise ConfigError(f"{where}: expected 'finite' or 'cofinite', got {kind!r}")
        if not isinstance(states, list):
            raise ConfigError(f"{where}.{kind}: expected a list of state ids")
        ids = [_integer(s, f"{where}.{kind}[{i}]") for i, s in enumerate(states)]
        return LazySet.finite(ids) if kind == "finite" else LazySet.cofinite(ids)
    raise ConfigError(f'{where}: expected "all", {{"finite": [...]}} or {{"cofinite": [...]}}')


def lazy_set_to_json(L: LazySet):
    if L.kind == "all":
        return "all"
    return {L.kind: sorted(L.states)}


@dataclass
class RunConfig:
    chain: ChainFamilySpec
    L: LazySet = field(default_factory=lambda: LazySet.finite(()))
    kappa: float = 0.0
    state: int | None = None
    horizon: int = 2000
    tolerances: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    seed: int = 0
    kappas: list[float] = field(default_factory=list)
    suite: str | None = None

    @classmethod
    def from_dict(cls, obj: Any) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config: expected a JSON object")
        version = obj.get("v", SCHEMA)
        if version != SCHEMA:
            raise ConfigError(f"v: unsupported schema version {version!r}")
        chain = parse_chain(_need(obj, "chain", "config"))
        L, kappa = LazySet.finite(()), 0.0
        if "lazy" in obj:
            lz = obj["lazy"]
            L = parse_lazy_set(_need(lz, "set", "lazy"))
            kappa = _number(lz.get("kappa", 0.0), "lazy.kappa")
            if not 0.0 <= kappa < 1.0:
                raise ConfigError(f"lazy.kappa: must lie in [0, 1), got {kappa}")
        state = obj.get("state")
        if state is not None:
            state = _integer(state, "state")
        horizon = _integer(obj.get("horizon", 2000), "horizon")
        if horizon < 8:
            raise ConfigError("horizon: must be >= 8")
        tol = dict(DEFAULT_TOLERANCES)
        for key, val in (obj.get("tolerances") or {}).items():
            if key not in DEFAULT_TOLERANCES:
                raise ConfigError(f"tolerances.{key}: unknown tolerance")
            tol[key] = _number(val, f"tolerances.{key}")
            if tol[key] <= 0:
                raise ConfigError(f"tolerances.{key}: must be positive")
        seed = _integer(obj.get("seed", 0), "seed")
        kappas_in = obj.get("kappas", [])
        if not isinstance(kappas_in, list):
            raise ConfigError("kappas: expected a list of numbers")
        kappas = [_number(x, f"kappas[{i}]") for i, x in enumerate(kappas_in)]
        for i, x in enumerate(kappas):
            if not 0.0 <= x < 1.0:
                raise ConfigError(f"kappas[{i}]: must lie in [0, 1), got {x}")
        if any(b < a for a, b in zip(kappas, kappas[1:])):
            raise ConfigError("kappas: grid must be sorted ascending")
        suite = obj.get("suite")
        if suite is not None and not isinstance(suite, str):
            raise ConfigError("suite: expected a suite name")
        return cls(chain, L, kappa, state, horizon, tol, seed, kappas, suite)

    def to_dict(self) -> dict:
        out = {
            "v": SCHEMA,
            "chain": chain_to_dict(self.chain),
            "lazy": {"set": lazy_set_to_json(self.L), "kappa": self.kappa},
            "horizon": self.horizon,
            "tolerances": dict(self.tolerances),
            "seed": self.seed,
            "kappas": list(self.kappas),
        }
        if self.state is not None:
            out["state"] = self.state
        if self.suite is not None:
            out["suite"] = self.suite
        return out

    @property
    def lazy(self) -> LazySpec:
        return LazySpec(self.L, self.kappa)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return RunConfig.from_dict(obj)


@dataclass(frozen=True)
class Realized:
    """Kernel built from a config, with the lazy set and base state in kernel ids."""

    kernel: MarkovKernel
    L: LazySet
    x: int
    outside: int | None  # a kernel state outside L, when one was needed


def _first_vertex_outside(d: int, L: LazySet) -> int:
    seen, frontier = {0}, [0]
    while frontier:
        for v in frontier:
            if v not in L:
                return v
        nxt = []
        for v in frontier:
            for w in tree_neighbours(d, v):
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
    raise ConfigError("lazy.set: covers every explored vertex")


def _first_state_outside(k: MarkovKernel, L: LazySet, radius: int = 64) -> int:
    states, _ = ball_layers(k, k.origin, radius)
    for s in states:
        if s not in L:
            return s
    raise ConfigError("lazy.set: no state outside L near the origin")


def realize(cfg: RunConfig, *, need_outside: bool = False) -> Realized:
    """Build the base kernel for ``cfg`` and translate ``L`` and the state.

    A non-radial tree becomes the exact quotient keeping the root, the listed
    lazy vertices and the base state; cofinite sets keep their complement.
    """
    spec = cfg.chain
    L = cfg.L
    if isinstance(spec, RegularTree) and not spec.radialized:
        full_tree(spec.d)  # validates d
        marks = set(L.states) | {0}
        if cfg.state is not None:
            marks.add(cfg.state)
        outside_full = None
        if need_outside and L.kind == "finite":
            outside_full = cfg.state if cfg.state is not None and cfg.state not in L else \
                _first_vertex_outside(spec.d, L)
            marks.add(outside_full)
        try:
            k = build_family(RegularTree(spec.d, False, tuple(sorted(marks))))
        except KernelError as exc:
            raise ConfigError(f"chain: {exc}") from None
        Lk = L.map(k.state)
        x = k.state(cfg.state if cfg.state is not None else 0)
        outside = k.state(outside_full) if outside_full is not None else None
        return Realized(k, Lk, x, outside)
    k = build_family(spec)
    x = k.origin if cfg.state is None else cfg.state
    outside = None
    if need_outside and L.kind == "finite":
        outside = cfg.state if cfg.state is not None and cfg.state not in L else _first_state_outside(k, L)
    return Realized(k, L, x, outside)
