"""Tunable parameter space: index types, their private knobs and shared system knobs.

A :class:`ConfigSpace` is immutable once built. Every configuration carries a
value for *every* parameter in the space; parameters private to an index type
other than the active one are pinned to their defaults so that a single
surrogate can be trained over all index types at once.

Encoding layout (deterministic, in declaration order)::

    [param_0 features | param_1 features | ... | index-type one-hot]

Numeric parameters take one min-max scaled feature, categorical parameters a
one-hot block.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"
SHARED = "shared"

_KINDS = (CONTINUOUS, INTEGER, CATEGORICAL)


class SpaceError(ValueError):
    """Raised for malformed space definitions or configurations."""


@dataclass(frozen=True)
class ParameterDef:
    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None
    choices: tuple | None = None
    default: Any = None
    scope: str = SHARED  # "shared" or the owning index type's name

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SpaceError(f"parameter {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.choices:
                raise SpaceError(f"parameter {self.name!r}: empty choice list")
            if len(set(self.choices)) != len(self.choices):
                raise SpaceError(f"parameter {self.name!r}: duplicate choices")
            object.__setattr__(self, "choices", tuple(self.choices))
        else:
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise SpaceError(f"parameter {self.name!r}: need lo < hi")
        if not self.contains(self.default):
            raise SpaceError(f"parameter {self.name!r}: default {self.default!r} out of range")

    @property
    def is_numeric(self) -> bool:
        return self.kind != CATEGORICAL

    @property
    def width(self) -> int:
        """Number of encoded features."""
        return len(self.choices) if self.kind == CATEGORICAL else 1

    def contains(self, value) -> bool:
        if self.kind == CATEGORICAL:
            return value in self.choices
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            return False
        if not math.isfinite(value):
            return False
        if self.kind == INTEGER and float(value) != round(float(value)):
            return False
        return self.lo <= value <= self.hi


@dataclass(frozen=True)
class IndexTypeDef:
    name: str
    private_params: tuple[str, ...] = ()


@dataclass(frozen=True)
class Configuration:
    index_type: str
    values: Mapping[str, Any]

    def to_dict(self) -> dict:
        return {"index_type": self.index_type, "values": dict(self.values)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Configuration":
        return cls(index_type=d["index_type"], values=dict(d["values"]))


@dataclass(frozen=True)
class ConfigSpace:
    index_types: tuple[IndexTypeDef, ...]
    params: tuple[ParameterDef, ...]
    _offsets: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index_types", tuple(self.index_types))
        object.__setattr__(self, "params", tuple(self.params))
        if not self.index_types:
            raise SpaceError("space needs at least one index type")
        type_names = [t.name for t in self.index_types]
        if len(set(type_names)) != len(type_names):
            raise SpaceError("duplicate index type names")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise SpaceError("duplicate parameter names")
        by_name = {p.name: p for p in self.params}
        owner: dict[str, str] = {}
        for t in self.index_types:
            for pname in t.private_params:
                if pname not in by_name:
                    raise SpaceError(f"index type {t.name!r} references unknown parameter {pname!r}")
                if pname in owner:
                    raise SpaceError(f"parameter {pname!r} is private to both {owner[pname]!r} and {t.name!r}")
                if by_name[pname].scope != t.name:
                    raise SpaceError(f"parameter {pname!r} has scope {by_name[pname].scope!r}, expected {t.name!r}")
                owner[pname] = t.name
        for p in self.params:
            if p.scope != SHARED and owner.get(p.name) != p.scope:
                raise SpaceError(f"parameter {p.name!r} scoped to {p.scope!r} but not listed as its private parameter")
        offsets, pos = {}, 0
        for p in self.params:
            offsets[p.name] = pos
            pos += p.width
        object.__setattr__(self, "_offsets", offsets)

    # -- lookups -------------------------------------------------------------

    @property
    def type_names(self) -> list[str]:
        return [t.name for t in self.index_types]

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def n_param_features(self) -> int:
        return sum(p.width for p in self.params)

    @property
    def encoding_dim(self) -> int:
        return self.n_param_features + len(self.index_types)

    def param(self, name: str) -> ParameterDef:
        for p in self.params:
            if p.name == name:
                return p
        raise SpaceError(f"unknown parameter {name!r}")

    def index_type(self, name: str) -> IndexTypeDef:
        for t in self.index_types:
            if t.name == name:
                return t
        raise SpaceError(f"unknown index type {name!r}")

    def type_position(self, name: str) -> int:
        return self.type_names.index(self.index_type(name).name)

    def offset(self, name: str) -> int:
        return self._offsets[name]

    def active_params(self, index_type: str) -> list[ParameterDef]:
        """Shared parameters plus those private to ``index_type``, in declaration order."""
        self.index_type(index_type)
        return [p for p in self.params if p.scope in (SHARED, index_type)]

    def signature(self) -> dict:
        """Names-only fingerprint used to guard history files against space mismatch."""
        return {"index_types": self.type_names, "params": self.param_names}

    # -- (de)serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        params = []
        for p in self.params:
            d = {"name": p.name, "kind": p.kind, "default": p.default, "scope": p.scope}
            if p.kind == CATEGORICAL:
                d["choices"] = list(p.choices)
            else:
                d["lo"], d["hi"] = p.lo, p.hi
            params.append(d)
        return {
            "params": params,
            "index_types": [{"name": t.name, "private_params": list(t.private_params)} for t in self.index_types],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConfigSpace":
        try:
            params = []
            for raw in d["params"]:
                kind = raw["kind"]
                params.append(ParameterDef(
                    name=raw["name"],
                    kind=kind,
                    lo=raw.get("lo"),
                    hi=raw.get("hi"),
                    choices=tuple(raw["choices"]) if kind == CATEGORICAL else None,
                    default=raw["default"],
                    scope=raw.get("scope", SHARED),
                ))
            types = [IndexTypeDef(t["name"], tuple(t.get("private_params", ()))) for t in d["index_types"]]
        except (KeyError, TypeError) as exc:
            raise SpaceError(f"malformed space definition: {exc}") from exc
        return cls(index_types=tuple(types), params=tuple(params))


def load_space(path: str | Path) -> ConfigSpace:
    with open(path) as fh:
        return ConfigSpace.from_dict(json.load(fh))


def demo_space() -> ConfigSpace:
    """Three index types (IVF, HNSW, IVF_PQ) plus two segment system knobs."""
    return load_space(Path(__file__).parent / "data" / "demo_space.json")


# -- operations -----------------------------------------------------------------


def default_config(space: ConfigSpace, index_type: str) -> Configuration:
    space.index_type(index_type)
    return Configuration(index_type, {p.name: p.default for p in space.params})


def validate(space: ConfigSpace, config: Configuration) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    if config.index_type not in space.type_names:
        return [f"unknown index type {config.index_type!r}"]
    out = []
    extra = set(config.values) - set(space.param_names)
    for name in sorted(extra):
        out.append(f"{name} is not a parameter of this space")
    for p in space.params:
        if p.name not in config.values:
            out.append(f"{p.name} missing")
            continue
        v = config.values[p.name]
        if not p.contains(v):
            out.append(f"{p.name} out of range")
        elif p.scope not in (SHARED, config.index_type) and v != p.default:
            out.append(f"{p.name}: inactive parameter not at default")
    return out


def encode(space: ConfigSpace, config: Configuration) -> np.ndarray:
    problems = validate(space, config)
    if problems:
        raise SpaceError("invalid configuration: " + "; ".join(problems))
    x = np.zeros(space.encoding_dim)
    for p in space.params:
        off = space.offset(p.name)
        v = config.values[p.name]
        if p.kind == CATEGORICAL:
            x[off + p.choices.index(v)] = 1.0
        else:
            x[off] = (float(v) - p.lo) / (p.hi - p.lo)
    x[space.n_param_features + space.type_position(config.index_type)] = 1.0
    return x


def decode(space: ConfigSpace, x: Sequence[float]) -> Configuration:
    """Inverse of :func:`encode`; integers snap to nearest, one-hot blocks take argmax."""
    x = np.asarray(x, dtype=float)
    if x.shape != (space.encoding_dim,):
        raise SpaceError(f"expected vector of length {space.encoding_dim}, got shape {x.shape}")
    values = {}
    for p in space.params:
        off = space.offset(p.name)
        if p.kind == CATEGORICAL:
            values[p.name] = p.choices[int(np.argmax(x[off:off + p.width]))]
            continue
        u = min(max(float(x[off]), 0.0), 1.0)
        v = p.lo + u * (p.hi - p.lo)
        if p.kind == INTEGER:
            values[p.name] = int(min(max(round(v), p.lo), p.hi))
        else:
            values[p.name] = min(max(v, p.lo), p.hi)
    onehot = x[space.n_param_features:]
    return Configuration(space.type_names[int(np.argmax(onehot))], values)


def random_candidate_matrix(space: ConfigSpace, index_type: str, n: int, seed: int) -> np.ndarray:
    """Encoded candidates of one index type, shape ``(n, encoding_dim)``.

    Shared and active private parameters are drawn uniformly (integers uniformly
    over their integer values); inactive private parameters sit at defaults.
    Every row decodes to a valid configuration that re-encodes to the same row
    (continuous features up to float rounding).
    """
    if n < 1:
        raise SpaceError("n must be >= 1")
    base = encode(space, default_config(space, index_type))
    X = np.tile(base, (n, 1))
    rng = np.random.default_rng(seed)
    for p in space.active_params(index_type):
        off = space.offset(p.name)
        if p.kind == CATEGORICAL:
            k = rng.integers(0, p.width, size=n)
            X[:, off:off + p.width] = np.eye(p.width)[k]
        elif p.kind == INTEGER:
            lo, hi = int(p.lo), int(p.hi)
            X[:, off] = (rng.integers(lo, hi + 1, size=n) - p.lo) / (p.hi - p.lo)
        else:
            X[:, off] = rng.random(n)
    return X


def random_candidates(space: ConfigSpace, index_type: str, n: int, seed: int) -> list[Configuration]:
    return [decode(space, row) for row in random_candidate_matrix(space, index_type, n, seed)]
