"""Model spaces, b-maps given by boundary matrices, and index-family transport.

A b-map f: X -> Y is recorded by its boundary matrix e(G, H) (rows are target
faces G, columns are source faces H) together with the set of source faces
that f sends into the interior of Y.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .index_algebra import (
    INF,
    NAT,
    IndexSet,
    divide,
    extended_union,
    index_sum,
    inf_re,
    multiple,
    re_greater_than,
)


class IntegrabilityViolation(ValueError):
    def __init__(self, face: str, infre):
        super().__init__(f"push-forward not integrable at face {face}: Re = {infre} <= 0")
        self.face = face
        self.infre = infre


@dataclass(frozen=True)
class ModelSpace:
    name: str
    faces: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.faces)) != len(self.faces):
            raise ValueError(f"duplicate face names in {self.name}")


@dataclass(frozen=True)
class BMap:
    name: str
    source: ModelSpace
    target: ModelSpace
    e: tuple[tuple[int, ...], ...]
    interior_faces: frozenset = frozenset()

    def __post_init__(self) -> None:
        if len(self.e) != len(self.target.faces):
            raise ValueError("one matrix row per target face expected")
        for row in self.e:
            if len(row) != len(self.source.faces):
                raise ValueError("one matrix column per source face expected")
            if any(v < 0 for v in row):
                raise ValueError("boundary exponents are nonnegative")
        for j, H in enumerate(self.source.faces):
            hit = any(row[j] > 0 for row in self.e)
            if not hit and H not in self.interior_faces:
                raise ValueError(f"face {H} has an empty column but is not marked interior")

    def exponent(self, G: str, H: str) -> int:
        return self.e[self.target.faces.index(G)][self.source.faces.index(H)]

    def row(self, G: str) -> dict[str, int]:
        return dict(zip(self.source.faces, self.e[self.target.faces.index(G)]))


@dataclass(frozen=True)
class IndexFamily:
    space: ModelSpace
    sets: tuple[IndexSet, ...]

    def __post_init__(self) -> None:
        if len(self.sets) != len(self.space.faces):
            raise ValueError(f"family on {self.space.name} needs {len(self.space.faces)} sets")

    @classmethod
    def from_map(cls, space: ModelSpace, assignment: Mapping[str, IndexSet],
                 default: IndexSet | None = None) -> "IndexFamily":
        missing = [f for f in space.faces if f not in assignment]
        if missing and default is None:
            raise ValueError(f"no index set given for faces {missing}")
        extra = [f for f in assignment if f not in space.faces]
        if extra:
            raise ValueError(f"unknown faces {extra} on {space.name}")
        return cls(space, tuple(assignment.get(f, default) for f in space.faces))

    def __getitem__(self, face: str) -> IndexSet:
        return self.sets[self.space.faces.index(face)]

    def as_dict(self) -> dict[str, IndexSet]:
        return dict(zip(self.space.faces, self.sets))

    def shifted(self, shifts: Mapping[str, int]) -> "IndexFamily":
        from .index_algebra import shift
        return IndexFamily(self.space, tuple(
            shift(E, shifts.get(f, 0)) for f, E in zip(self.space.faces, self.sets)))

    def __add__(self, other: "IndexFamily") -> "IndexFamily":
        if other.space != self.space:
            raise ValueError("families live on different spaces")
        return IndexFamily(self.space, tuple(index_sum(a, b) for a, b in zip(self.sets, other.sets)))

    def __str__(self) -> str:
        return " ".join(f"{f}={E}" for f, E in zip(self.space.faces, self.sets))


def pullback_family(f: BMap, F: IndexFamily) -> IndexFamily:
    """Index family of f^*u on the source when u has index family F."""
    if F.space != f.target:
        raise ValueError(f"family lives on {F.space.name}, map targets {f.target.name}")
    out = []
    for j in range(len(f.source.faces)):
        E = NAT
        for i, G in enumerate(f.target.faces):
            if f.e[i][j]:
                E = index_sum(E, multiple(F[G], f.e[i][j]))
        out.append(E)
    return IndexFamily(f.source, tuple(out))


@dataclass(frozen=True)
class PushforwardResult:
    family: IndexFamily
    violations: tuple[tuple[str, object], ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def integrability_violations(f: BMap, E: IndexFamily) -> tuple[tuple[str, object], ...]:
    bad = []
    for H in f.source.faces:
        if H in f.interior_faces and not re_greater_than(E[H], 0):
            bad.append((H, inf_re(E[H])))
    return tuple(bad)


def pushforward_family(f: BMap, E: IndexFamily, strict: bool = True) -> PushforwardResult:
    """Index family of f_*u on the target when u (a b-density coefficient) has family E."""
    if E.space != f.source:
        raise ValueError(f"family lives on {E.space.name}, map starts at {f.source.name}")
    bad = integrability_violations(f, E)
    if bad and strict:
        raise IntegrabilityViolation(*bad[0])
    out = []
    for i in range(len(f.target.faces)):
        parts = [divide(E[H], f.e[i][j]) for j, H in enumerate(f.source.faces) if f.e[i][j]]
        out.append(extended_union(parts) if parts else INF)
    return PushforwardResult(IndexFamily(f.target, tuple(out)), bad)


# registry -----------------------------------------------------------------

X2B = ModelSpace("X_b^2", ("lf", "rf", "ffb"))
X2_0B = ModelSpace("X_0b^2", ("lf", "rf", "ffb", "ff0"))
X2_0 = ModelSpace("X_0^2", ("lf", "rf", "ff0"))
TRIPLE = ModelSpace("Z", ("H100", "H010", "H001", "ff_T", "ff_LC0", "ff_LCb", "ff_CRb", "ff_LRb"))
ZB = ModelSpace("Z_b", ("lf", "rf", "ffb", "ff0", "ef_x", "ef_xt", "if_eta", "if_x", "if_xt"))
Z0 = ModelSpace("Z_0", ("lf", "rf", "ff0", "ef_x", "ef_xt", "if_eta", "if_x", "if_xt"))
POISSON_SPACE = ModelSpace("P_0^2", ("of", "ff", "if_eta", "if_x"))
TRACE_SPACE = ModelSpace("T_0^2", ("of", "ff", "if_eta", "if_xt"))
FIBER = ModelSpace("R^n", ("inf",))

SPACES = {s.name: s for s in (X2B, X2_0B, X2_0, TRIPLE, ZB, Z0, POISSON_SPACE, TRACE_SPACE, FIBER)}


def _bmap(name, source, target, rows: Mapping[str, Sequence[int]], interior=()) -> BMap:
    e = tuple(tuple(rows[G]) for G in target.faces)
    return BMap(name, source, target, e, frozenset(interior))


def _rows_from_images(source, target, images: Mapping[str, Sequence[str]]):
    rows = {G: [0] * len(source.faces) for G in target.faces}
    for G, Hs in images.items():
        for H in Hs:
            rows[G][source.faces.index(H)] = 1
    return rows


REGISTRY: dict[str, BMap] = {}


def _register(m: BMap) -> None:
    REGISTRY[m.name] = m


_register(_bmap("gamma_CR", TRIPLE, X2B, {
    "lf": (0, 1, 0, 0, 1, 1, 0, 0),
    "rf": (0, 0, 1, 0, 0, 0, 0, 1),
    "ffb": (0, 0, 0, 1, 0, 0, 1, 0),
}, interior=("H100",)))
_register(_bmap("gamma_LR", TRIPLE, X2B, {
    "lf": (1, 0, 0, 0, 1, 1, 0, 0),
    "rf": (0, 0, 1, 0, 0, 0, 1, 0),
    "ffb": (0, 0, 0, 1, 0, 0, 0, 1),
}, interior=("H010",)))
_register(_bmap("gamma_LC", TRIPLE, X2_0B, {
    "lf": (1, 0, 0, 0, 0, 0, 0, 1),
    "rf": (0, 1, 0, 0, 0, 0, 1, 0),
    "ffb": (0, 0, 0, 1, 0, 1, 0, 0),
    "ff0": (0, 0, 0, 0, 1, 0, 0, 0),
}, interior=("H001",)))

_register(_bmap("gamma_L_Zb", ZB, POISSON_SPACE, _rows_from_images(ZB, POISSON_SPACE, {
    "of": ("lf", "ffb"), "ff": ("ff0", "ef_x"), "if_eta": ("if_eta", "ef_xt"), "if_x": ("if_x",),
}), interior=("rf", "if_xt")))
_register(_bmap("gamma_R_Zb", ZB, TRACE_SPACE, _rows_from_images(ZB, TRACE_SPACE, {
    "of": ("rf", "ffb"), "ff": ("ff0", "ef_xt"), "if_eta": ("if_eta", "ef_x"), "if_xt": ("if_xt",),
}), interior=("lf", "if_x")))
_register(_bmap("gamma_L_Z0", Z0, POISSON_SPACE, _rows_from_images(Z0, POISSON_SPACE, {
    "of": ("lf",), "ff": ("ff0", "ef_x"), "if_eta": ("if_eta", "ef_xt"), "if_x": ("if_x",),
}), interior=("rf", "if_xt")))
_register(_bmap("gamma_R_Z0", Z0, TRACE_SPACE, _rows_from_images(Z0, TRACE_SPACE, {
    "of": ("rf",), "ff": ("ff0", "ef_xt"), "if_eta": ("if_eta", "ef_x"), "if_xt": ("if_xt",),
}), interior=("lf", "if_x")))
_register(_bmap("beta_trR", TRACE_SPACE, FIBER, {"inf": (0, 1, 1, 0)}, interior=("of", "if_xt")))


def registry_bmap(name: str) -> BMap:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown b-map {name!r}; known: {', '.join(sorted(REGISTRY))}") from None


# density re-bundling exponents ----------------------------------------------

@dataclass(frozen=True)
class DensityShift:
    """Face shifts applied before (source) and after (target) a push-forward."""

    bmap: str
    source: Mapping[str, int] = field(default_factory=dict)
    target: Mapping[str, int] = field(default_factory=dict)


DENSITY_SHIFTS: dict[str, DensityShift] = {
    # b-density on T_0^2 times r_of r_ff^2, then back to a b-density on R^n
    "trace-poisson": DensityShift("beta_trR", {"of": 1, "ff": 2}, {"inf": -1}),
    # product of the lifted kernels on Z against the lifted b-density
    "0b-0b": DensityShift("gamma_LR", {"H010": 1, "ff_LRb": 1}, {}),
    # interior 0b symbol times a Poisson symbol, integrated along gamma_L
    "interior-mapping": DensityShift("gamma_L_Zb", {"rf": 1, "ffb": 1}, {}),
}


def density_shift(theorem_id: str) -> DensityShift:
    try:
        return DENSITY_SHIFTS[theorem_id]
    except KeyError:
        raise KeyError(f"no density table for {theorem_id!r}") from None


def density_shift_check(f: BMap, declared: Mapping[str, int], theorem_id: str) -> bool:
    """True when the stored table for theorem_id is attached to f and equals declared."""
    d = density_shift(theorem_id)
    if d.bmap != f.name:
        return False
    clean = {k: v for k, v in declared.items() if v}
    return clean == {k: v for k, v in d.source.items() if v}


def transport(theorem_id: str, product: IndexFamily, strict: bool = True) -> PushforwardResult:
    """Apply the stored density shifts around a push-forward."""
    d = density_shift(theorem_id)
    f = registry_bmap(d.bmap)
    res = pushforward_family(f, product.shifted(d.source), strict=strict)
    return PushforwardResult(res.family.shifted(d.target), res.violations)
