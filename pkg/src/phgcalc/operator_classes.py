"""Operator-class descriptors and the rule tables acting on them.

Every rule (inclusion, Fourier conversion, adjoint, composition) is a record
whose index-set formulas are short strings such as ``EU(E_lf, F_lf+E_ffb)``.
They are evaluated by a tiny formula interpreter against the operands' faces,
so the tables can be read side by side with the theorems they encode.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Mapping, Optional, Sequence, Union

from .index_algebra import (
    INF,
    NAT,
    ComplexExact,
    Generator,
    IndexSet,
    conjugate,
    extended_union,
    index_sum,
    inf_re,
    is_single_point,
    leading_index_set,
    leading_set,
    re_at_least,
    re_greater_than,
    remove_leading,
    shift,
    simple_set_from_roots,
    union,
)


class RuleError(ValueError):
    """Raised when a rule cannot be applied to the given data."""


class LeadingOnlyError(RuleError):
    pass


# leading sets ---------------------------------------------------------------

@dataclass(frozen=True)
class LeadingSet:
    """A face on which only the leading set [E] is recorded."""

    base: IndexSet

    def __post_init__(self) -> None:
        object.__setattr__(self, "base", leading_index_set(self.base))

    @property
    def is_inf(self) -> bool:
        return self.base.is_inf

    @property
    def gens(self) -> tuple[Generator, ...]:
        return self.base.gens

    def __str__(self) -> str:
        return f"[{self.base}]"


FaceValue = Union[IndexSet, LeadingSet]


def _underlying(v: FaceValue) -> IndexSet:
    return v.base if isinstance(v, LeadingSet) else v


def face_sum(a: FaceValue, b: FaceValue) -> FaceValue:
    s = index_sum(_underlying(a), _underlying(b))
    if isinstance(a, LeadingSet) or isinstance(b, LeadingSet):
        return LeadingSet(s)
    return s


def face_shift(a: FaceValue, c: ComplexExact) -> FaceValue:
    if isinstance(a, LeadingSet):
        return LeadingSet(shift(a.base, c))
    return shift(a, c)


def face_conj(a: FaceValue) -> FaceValue:
    if isinstance(a, LeadingSet):
        return LeadingSet(conjugate(a.base))
    return conjugate(a)


def face_eu(parts: Sequence[FaceValue]) -> IndexSet:
    if any(isinstance(p, LeadingSet) for p in parts):
        raise LeadingOnlyError("extended union needs full index sets, got a leading set")
    return extended_union(list(parts))


def face_lead(a: FaceValue) -> Sequence[Generator]:
    return leading_set(_underlying(a))


# twists ---------------------------------------------------------------------

@dataclass(frozen=True)
class TwistBlock:
    """mu*I + sign*N on C^size, N the superdiagonal (1, ..., size-1); N^T if transposed."""

    mu: ComplexExact
    size: int = 1
    sign: int = 1
    transposed: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", ComplexExact.of(self.mu))
        if self.size < 1:
            raise ValueError("twist block size must be at least 1")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.size == 1:
            object.__setattr__(self, "sign", 1)
            object.__setattr__(self, "transposed", False)

    def negated(self) -> "TwistBlock":
        return TwistBlock(-self.mu, self.size, -self.sign, self.transposed)

    def neg_adjoint(self) -> "TwistBlock":
        return TwistBlock(-self.mu.conj(), self.size, -self.sign, not self.transposed)

    def matrix(self) -> list[list[ComplexExact]]:
        zero = ComplexExact(0)
        m = [[zero] * self.size for _ in range(self.size)]
        for i in range(self.size):
            m[i][i] = self.mu
        for i in range(self.size - 1):
            v = ComplexExact(self.sign * (i + 1))
            if self.transposed:
                m[i + 1][i] = v
            else:
                m[i][i + 1] = v
        return m

    def __str__(self) -> str:
        tag = "" if (self.sign, self.transposed) == (1, False) else \
            "," + ("+" if self.sign > 0 else "-") + ("T" if self.transposed else "")
        return f"({self.mu},{self.size}{tag})"


@dataclass(frozen=True)
class Twist:
    blocks: tuple[TwistBlock, ...]

    def __post_init__(self) -> None:
        if not self.blocks:
            raise ValueError("a twist needs at least one block")

    @classmethod
    def of(cls, *blocks) -> "Twist":
        out = []
        for b in blocks:
            out.append(b if isinstance(b, TwistBlock) else TwistBlock(*b))
        return cls(tuple(out))

    @classmethod
    def zero(cls, rank: int = 1) -> "Twist":
        return cls(tuple(TwistBlock(ComplexExact(0), 1) for _ in range(rank)))

    def negated(self) -> "Twist":
        return Twist(tuple(b.negated() for b in self.blocks))

    def neg_adjoint(self) -> "Twist":
        return Twist(tuple(b.neg_adjoint() for b in self.blocks))

    @property
    def rank(self) -> int:
        return sum(b.size for b in self.blocks)

    def __str__(self) -> str:
        return "[" + ",".join(str(b) for b in self.blocks) + "]"


# kinds ------------------------------------------------------------------------

@dataclass(frozen=True)
class KindInfo:
    faces: tuple[str, ...]
    leading: frozenset = frozenset()
    twists: tuple[str, ...] = ()
    has_order: bool = False


KINDS: dict[str, KindInfo] = {
    "VeryResidual": KindInfo(("lf", "rf")),
    "ResidualTrace": KindInfo(("of",)),
    "ResidualPoisson": KindInfo(("of",)),
    "BCalc": KindInfo(("lf", "rf", "ffb")),
    "ZeroCalc": KindInfo(("lf", "rf", "ff0"), has_order=True),
    "ExtZeroCalc": KindInfo(("lf", "rf", "ffb", "ff0")),
    "ZeroInterior": KindInfo(("lf", "rf", "ff0")),
    "ZeroBInterior": KindInfo(("lf", "rf", "ffb", "ff0")),
    "ZeroTrace": KindInfo(("of", "ff")),
    "ZeroPoisson": KindInfo(("of", "ff")),
    "PhysZeroTrace": KindInfo(("of", "ff")),
    "PhysZeroPoisson": KindInfo(("of", "ff")),
    "Boundary": KindInfo(("sym",)),
    "TwistedZeroTrace": KindInfo(("of", "ff"), frozenset({"ff"}), ("s",)),
    "TwistedZeroPoisson": KindInfo(("of", "ff"), frozenset({"ff"}), ("s",)),
    "TwistedBoundary": KindInfo(("sym",), frozenset({"sym"}), ("s", "t")),
}


@dataclass(frozen=True)
class OperatorClass:
    kind: str
    sets: tuple[FaceValue, ...]
    n: int = 1
    order: Optional[Fraction] = None
    s: Optional[Twist] = None
    t: Optional[Twist] = None

    def __post_init__(self) -> None:
        info = KINDS.get(self.kind)
        if info is None:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if len(self.sets) != len(info.faces):
            raise ValueError(f"{self.kind} needs faces {info.faces}")
        fixed = tuple(
            LeadingSet(v) if f in info.leading and isinstance(v, IndexSet) else v
            for f, v in zip(info.faces, self.sets))
        object.__setattr__(self, "sets", fixed)
        for name in ("s", "t"):
            present = getattr(self, name) is not None
            if present != (name in info.twists):
                raise ValueError(f"{self.kind}: twist {name!r} {'missing' if not present else 'not allowed'}")
        if self.order is not None:
            if not info.has_order:
                raise ValueError(f"{self.kind} carries no interior order")
            object.__setattr__(self, "order", Fraction(self.order))

    @classmethod
    def make(cls, kind: str, n: int = 1, order=None, s=None, t=None, **faces) -> "OperatorClass":
        info = KINDS[kind]
        missing = [f for f in info.faces if f not in faces]
        if missing:
            raise ValueError(f"{kind} missing faces {missing}")
        extra = [f for f in faces if f not in info.faces]
        if extra:
            raise ValueError(f"{kind} has no faces {extra}")
        return cls(kind, tuple(faces[f] for f in info.faces), n, order, s, t)

    @property
    def faces(self) -> tuple[str, ...]:
        return KINDS[self.kind].faces

    def __getitem__(self, face: str) -> FaceValue:
        return self.sets[self.faces.index(face)]

    def family(self) -> dict[str, FaceValue]:
        return dict(zip(self.faces, self.sets))

    def with_sets(self, **faces) -> "OperatorClass":
        fam = self.family()
        fam.update(faces)
        return replace(self, sets=tuple(fam[f] for f in self.faces))

    def __str__(self) -> str:
        parts = [self.kind] + [f"{f}={v}" for f, v in zip(self.faces, self.sets)]
        if KINDS[self.kind].has_order:
            parts.append(f"order={'-inf' if self.order is None else self.order}")
        if self.s is not None:
            parts.append(f"s={self.s}")
        if self.t is not None:
            parts.append(f"t={self.t}")
        parts.append(f"n={self.n}")
        return " ".join(parts)


# formula interpreter ----------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_]*)|(.))")


@lru_cache(maxsize=None)
def _parse_formula(text: str):
    toks = []
    for num, name, sym in _TOKEN.findall(text):
        if num:
            toks.append(("int", int(num)))
        elif name:
            toks.append(("name", name))
        elif sym.strip():
            toks.append(("sym", sym))
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else ("end", None)

    def take(kind=None, val=None):
        nonlocal pos
        tok = peek()
        if (kind and tok[0] != kind) or (val is not None and tok[1] != val):
            raise RuleError(f"bad formula {text!r} near token {pos}")
        pos += 1
        return tok

    def expr():
        node = term()
        while peek() in (("sym", "+"), ("sym", "-")):
            op = take()[1]
            node = ("add" if op == "+" else "sub", node, term())
        return node

    def term():
        kind, val = peek()
        if kind == "sym" and val == "(":
            take()
            node = expr()
            take("sym", ")")
            return node
        if kind == "int":
            take()
            if peek() == ("sym", "*"):
                take()
                return ("scale", val, take("name")[1])
            return ("const", val)
        if kind == "name":
            take()
            if val in ("EU", "conj") and peek() == ("sym", "("):
                take()
                args = [expr()]
                while peek() == ("sym", ","):
                    take()
                    args.append(expr())
                take("sym", ")")
                return (val, *args)
            if val == "INF":
                return ("inf",)
            return ("var", val)
        raise RuleError(f"bad formula {text!r}")

    tree = expr()
    if pos != len(toks):
        raise RuleError(f"trailing tokens in formula {text!r}")
    return tree


def evaluate(text: str, env: Mapping[str, FaceValue], n: int = 0, delta: Fraction = Fraction(0)):
    scalars = {"n": ComplexExact(n), "d": ComplexExact(Fraction(delta))}

    def ev(node):
        tag = node[0]
        if tag == "const":
            return ComplexExact(node[1])
        if tag == "scale":
            return ComplexExact(node[1]) * scalars[node[2]]
        if tag == "inf":
            return INF
        if tag == "var":
            if node[1] in scalars:
                return scalars[node[1]]
            if node[1] not in env:
                raise RuleError(f"formula {text!r} refers to unknown face {node[1]}")
            return env[node[1]]
        if tag == "conj":
            v = ev(node[1])
            return v.conj() if isinstance(v, ComplexExact) else face_conj(v)
        if tag == "EU":
            return face_eu([ev(a) for a in node[1:]])
        a, b = ev(node[1]), ev(node[2])
        if tag == "sub":
            if not isinstance(b, ComplexExact):
                raise RuleError(f"cannot subtract an index set in {text!r}")
            b = -b
        if isinstance(a, ComplexExact) and isinstance(b, ComplexExact):
            return a + b
        if isinstance(a, ComplexExact):
            return face_shift(b, a)
        if isinstance(b, ComplexExact):
            return face_shift(a, b)
        return face_sum(a, b)

    return ev(_parse_formula(text))


def class_env(name: str, c: OperatorClass) -> dict[str, FaceValue]:
    env = {f"{name}_{f}": v for f, v in c.family().items()}
    if c.faces == ("sym",):
        env[name] = c["sym"]
    return env


# conditions and verdicts --------------------------------------------------------

@dataclass(frozen=True)
class Condition:
    """Re(expr) > bound, or >= bound when strict is False."""

    expr: str
    bound: int = -1
    strict: bool = True

    def describe(self) -> str:
        return f"Re({self.expr}) {'>' if self.strict else '>='} {self.bound}"

    def check(self, env, n=0, delta=Fraction(0)) -> tuple[bool, str]:
        v = _underlying(evaluate(self.expr, env, n, delta))
        if v.is_inf:
            return True, f"Re({self.expr})=INF"
        r = inf_re(v)
        ok = r > self.bound if self.strict else r >= self.bound
        rel = (">" if self.strict else ">=") if ok else ("<=" if self.strict else "<")
        return ok, f"Re({self.expr.replace(' ', '')})={r} {rel} {self.bound}"


@dataclass(frozen=True)
class Verdict:
    status: str
    result: Optional[OperatorClass] = None
    citations: tuple[str, ...] = ()
    message: str = ""
    checks: tuple[str, ...] = ()
    detail: str = ""

    def __post_init__(self) -> None:
        if self.status not in ("ok", "fail", "no-rule"):
            raise ValueError(f"bad verdict status {self.status!r}")

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _no_rule(what: str) -> Verdict:
    return Verdict("no-rule", message=f"no rule for {what}")


# compositions -----------------------------------------------------------------

@dataclass(frozen=True)
class CompositionRule:
    rule_id: str
    left: str
    right: str
    names: tuple[str, str]
    result: str
    faces: tuple[tuple[str, str], ...]
    conditions: tuple[Condition, ...] = ()
    scope: str = "both"
    twist_match: tuple[tuple[str, str], ...] = ()
    result_twist: tuple[tuple[str, str], ...] = ()
    note: str = ""


def _R(rule_id, left, right, names, result, faces, cond=None, scope="both",
       match=(), twist=(), note=""):
    conds = () if cond is None else (Condition(cond, -1),)
    return CompositionRule(rule_id, left, right, names, result, tuple(faces.items()),
                           conds, scope, tuple(match), tuple(twist), note)


GTILDE_LF = "EU(E_lf, F_lf+E_ffb, F_lf+EU(E_ff0, E_ffb+n))"
GTILDE_RF = "EU(F_rf, E_rf+F_ffb, E_rf+EU(F_ff0, F_ffb+n))"
G_FFB = "EU(E_ffb+F_ffb, E_lf+F_rf+1)"

COMPOSITION_RULES: tuple[CompositionRule, ...] = (
    # boundary-involving, untwisted
    _R("compositions-involving-boundary", "ZeroPoisson", "Boundary", ("E", "G"), "ZeroPoisson",
       {"of": "E_of", "ff": "E_ff+G"}),
    _R("compositions-involving-boundary", "Boundary", "ZeroTrace", ("G", "F"), "ZeroTrace",
       {"of": "F_of", "ff": "F_ff+G"}),
    _R("compositions-involving-boundary", "ZeroPoisson", "ZeroTrace", ("E", "F"), "ZeroInterior",
       {"lf": "E_of", "rf": "F_of", "ff0": "E_ff+F_ff"}),
    _R("compositions-involving-boundary", "ZeroTrace", "ZeroPoisson", ("F", "E"), "Boundary",
       {"sym": "E_ff+F_ff"}, "F_of+E_of"),
    # mixed
    _R("compositions-mixed", "ZeroInterior", "ZeroPoisson", ("E", "F"), "ZeroPoisson",
       {"of": "E_lf", "ff": "F_ff+E_ff0"}, "E_rf+F_of"),
    _R("compositions-mixed", "ZeroTrace", "ZeroInterior", ("F", "E"), "ZeroTrace",
       {"of": "E_rf", "ff": "F_ff+E_ff0"}, "F_of+E_lf"),
    _R("compositions-mixed", "ZeroBInterior", "ZeroPoisson", ("E", "F"), "ZeroPoisson",
       {"of": "EU(E_lf, F_of+E_ffb)", "ff": "F_ff+E_ff0"}, "E_rf+F_of", scope="local"),
    _R("compositions-mixed", "ZeroTrace", "ZeroBInterior", ("F", "E"), "ZeroTrace",
       {"of": "EU(E_rf, F_of+E_ffb)", "ff": "F_ff+E_ff0"}, "F_of+E_lf", scope="local"),
    # interior
    _R("compositions-involving-interior", "ZeroInterior", "ZeroInterior", ("E", "F"), "ZeroInterior",
       {"lf": "E_lf", "rf": "F_rf", "ff0": "E_ff0+F_ff0"}, "E_rf+F_lf"),
    _R("global-composition-0b-0b", "ZeroBInterior", "ZeroBInterior", ("E", "F"), "ZeroBInterior",
       {"lf": GTILDE_LF, "rf": GTILDE_RF, "ffb": G_FFB, "ff0": "E_ff0+F_ff0"},
       "E_rf+F_lf", scope="global"),
    _R("compositions-involving-interior", "ZeroBInterior", "ZeroBInterior", ("E", "F"), "ZeroBInterior",
       {"lf": "EU(E_lf, F_lf+E_ffb)", "rf": "EU(F_rf, E_rf+F_ffb)", "ffb": G_FFB,
        "ff0": "E_ff0+F_ff0"}, "E_rf+F_lf", scope="local"),
    _R("compositions-involving-interior", "ZeroBInterior", "ZeroInterior", ("E", "F"), "ZeroInterior",
       {"lf": "EU(E_lf, F_lf+E_ffb)", "rf": "F_rf", "ff0": "E_ff0+F_ff0"}, "E_rf+F_lf", scope="local"),
    _R("compositions-involving-interior", "ZeroInterior", "ZeroBInterior", ("E", "F"), "ZeroInterior",
       {"lf": "E_lf", "rf": "EU(F_rf, E_rf+F_ffb)", "ff0": "E_ff0+F_ff0"}, "E_rf+F_lf", scope="local"),
    # twisted, boundary-involving
    _R("twisted-compositions-involving-boundary", "TwistedBoundary", "TwistedBoundary", ("H", "G"),
       "TwistedBoundary", {"sym": "G+H"}, match=(("L.s", "R.t"),), twist=(("s", "R.s"), ("t", "L.t"))),
    _R("twisted-compositions-involving-boundary", "TwistedZeroPoisson", "TwistedBoundary", ("E", "G"),
       "TwistedZeroPoisson", {"of": "E_of", "ff": "E_ff+G"},
       match=(("L.s", "R.t"),), twist=(("s", "R.s"),)),
    _R("twisted-compositions-involving-boundary", "TwistedBoundary", "TwistedZeroTrace", ("G", "F"),
       "TwistedZeroTrace", {"of": "F_of", "ff": "F_ff+G"},
       match=(("L.s", "R.s"),), twist=(("s", "L.t"),)),
    _R("twisted-compositions-involving-boundary", "TwistedZeroPoisson", "TwistedZeroTrace", ("E", "F"),
       "ZeroInterior", {"lf": "E_of", "rf": "F_of", "ff0": "E_ff+F_ff"}, match=(("L.s", "R.s"),)),
    _R("twisted-compositions-involving-boundary", "TwistedZeroTrace", "TwistedZeroPoisson", ("F", "E"),
       "TwistedBoundary", {"sym": "E_ff+F_ff"}, "F_of+E_of", twist=(("s", "R.s"), ("t", "L.s"))),
    # twisted, mixed
    _R("twisted-compositions-mixed", "ZeroInterior", "TwistedZeroPoisson", ("E", "F"),
       "TwistedZeroPoisson", {"of": "E_lf", "ff": "F_ff+E_ff0"}, "E_rf+F_of", twist=(("s", "R.s"),)),
    _R("twisted-compositions-mixed", "TwistedZeroTrace", "ZeroInterior", ("F", "E"),
       "TwistedZeroTrace", {"of": "E_rf", "ff": "F_ff+E_ff0"}, "F_of+E_lf", twist=(("s", "L.s"),)),
    _R("twisted-compositions-mixed", "ZeroBInterior", "TwistedZeroPoisson", ("E", "F"),
       "TwistedZeroPoisson", {"of": "EU(E_lf, F_of+E_ffb)", "ff": "F_ff+E_ff0"}, "E_rf+F_of",
       scope="local", twist=(("s", "R.s"),)),
    _R("twisted-compositions-mixed", "TwistedZeroTrace", "ZeroBInterior", ("F", "E"),
       "TwistedZeroTrace", {"of": "EU(E_rf, F_of+E_ffb)", "ff": "F_ff+E_ff0"}, "F_of+E_lf",
       scope="local", twist=(("s", "L.s"),)),
)


def find_composition_rule(left: str, right: str, scope: str = "global") -> Optional[CompositionRule]:
    for r in COMPOSITION_RULES:
        if r.left == left and r.right == right and r.scope in ("both", scope):
            return r
    return None


def _twist_ref(ref: str, A: OperatorClass, B: OperatorClass) -> Twist:
    side, name = ref.split(".")
    return getattr(A if side == "L" else B, name)


def compose_classes(A: OperatorClass, B: OperatorClass, scope: str = "global") -> Verdict:
    """Class of A∘B (B applied first)."""
    if scope not in ("global", "local"):
        raise ValueError("scope is 'global' or 'local'")
    rule = find_composition_rule(A.kind, B.kind, scope)
    if rule is None:
        return _no_rule(f"{A.kind} o {B.kind} ({scope})")
    if A.n != B.n:
        return Verdict("fail", citations=(rule.rule_id,), message=f"boundary dimensions differ: {A.n} vs {B.n}")
    for lref, rref in rule.twist_match:
        if _twist_ref(lref, A, B) != _twist_ref(rref, A, B):
            return Verdict("fail", citations=(rule.rule_id,),
                           message=f"twist mismatch: {lref}={_twist_ref(lref, A, B)} vs {rref}={_twist_ref(rref, A, B)}")
    env = {**class_env(rule.names[0], A), **class_env(rule.names[1], B)}
    checks = []
    for cond in rule.conditions:
        ok, text = cond.check(env, A.n)
        if not ok:
            return Verdict("fail", citations=(rule.rule_id,), message=text)
        checks.append(text)
    try:
        faces = {f: evaluate(expr, env, A.n) for f, expr in rule.faces}
    except LeadingOnlyError as exc:
        return Verdict("fail", citations=(rule.rule_id,), message=str(exc))
    twists = {k: _twist_ref(ref, A, B) for k, ref in rule.result_twist}
    result = OperatorClass.make(rule.result, n=A.n, **twists, **faces)
    return Verdict("ok", result, (rule.rule_id,), checks=tuple(checks))


# inclusions and Fourier conversions ---------------------------------------------------

@dataclass(frozen=True)
class InclusionRule:
    rule_id: str
    source: str
    target: str
    faces: tuple[tuple[str, str], ...]
    requires_inf: tuple[str, ...] = ()
    requires_residual: bool = False
    fourier: str = ""


def _I(rule_id, source, target, faces, requires_inf=(), requires_residual=False, fourier=""):
    return InclusionRule(rule_id, source, target, tuple(faces.items()), tuple(requires_inf),
                         requires_residual, fourier)


INCLUSION_RULES: tuple[InclusionRule, ...] = (
    _I("inclusions-residual", "VeryResidual", "ZeroCalc", {"lf": "E_lf", "rf": "E_rf", "ff0": "E_lf+E_rf+n+1"}),
    _I("inclusions-residual", "VeryResidual", "BCalc", {"lf": "E_lf", "rf": "E_rf", "ffb": "E_lf+E_rf+1"}),
    _I("inclusions-residual", "ZeroCalc", "ExtZeroCalc",
       {"lf": "E_lf", "rf": "E_rf", "ffb": "E_lf+E_rf+1", "ff0": "E_ff0"}, requires_residual=True),
    _I("inclusions-residual", "BCalc", "ExtZeroCalc", {"lf": "E_lf", "rf": "E_rf", "ffb": "E_ffb", "ff0": "E_ffb+n"}),
    _I("inclusions-trace-poisson", "ResidualTrace", "PhysZeroTrace", {"of": "E_of", "ff": "E_of+n+1"}),
    _I("inclusions-trace-poisson", "ResidualPoisson", "PhysZeroPoisson", {"of": "E_of", "ff": "E_of+n"}),
    _I("symbolic-residual-trace-poisson", "ResidualTrace", "ZeroTrace", {"of": "E_of", "ff": "INF"}),
    _I("symbolic-residual-trace-poisson", "ResidualPoisson", "ZeroPoisson", {"of": "E_of", "ff": "INF"}),
    _I("symbolic-residual-trace-poisson", "ZeroTrace", "ResidualTrace", {"of": "E_of"}, requires_inf=("ff",)),
    _I("symbolic-residual-trace-poisson", "ZeroPoisson", "ResidualPoisson", {"of": "E_of"}, requires_inf=("ff",)),
    _I("symbolic-vs-physical", "VeryResidual", "ZeroInterior", {"lf": "E_lf", "rf": "E_rf", "ff0": "INF"}),
    _I("symbolic-vs-physical", "ZeroInterior", "VeryResidual", {"lf": "E_lf", "rf": "E_rf"}, requires_inf=("ff0",)),
    _I("symbolic-vs-physical", "BCalc", "ZeroBInterior", {"lf": "E_lf", "rf": "E_rf", "ffb": "E_ffb", "ff0": "INF"}),
    _I("symbolic-vs-physical", "ZeroBInterior", "BCalc", {"lf": "E_lf", "rf": "E_rf", "ffb": "E_ffb"},
       requires_inf=("ff0",)),
    _I("symbolic-vs-physical", "ExtZeroCalc", "ZeroBInterior",
       {"lf": "E_lf", "rf": "E_rf", "ffb": "EU(E_ffb, E_ff0)", "ff0": "E_ff0"}, fourier="toSymbolic"),
    _I("symbolic-vs-physical", "ZeroBInterior", "ExtZeroCalc",
       {"lf": "E_lf", "rf": "E_rf", "ffb": "E_ffb", "ff0": "EU(E_ff0, E_ffb+n)"}, fourier="toPhysical"),
    _I("symbolic-vs-physical", "ZeroInterior", "ZeroCalc",
       {"lf": "E_lf", "rf": "E_rf", "ff0": "EU(E_ff0, E_lf+E_rf+n+1)"}, fourier="toPhysical"),
    _I("fourier-poisson", "PhysZeroPoisson", "ZeroPoisson", {"of": "EU(E_of, E_ff)", "ff": "E_ff"},
       fourier="toSymbolic"),
    _I("fourier-poisson", "ZeroPoisson", "PhysZeroPoisson", {"of": "E_of", "ff": "EU(E_ff, E_of+n)"},
       fourier="toPhysical"),
    _I("fourier-trace", "PhysZeroTrace", "ZeroTrace", {"of": "EU(E_of, E_ff-1)", "ff": "E_ff"},
       fourier="toSymbolic"),
    _I("fourier-trace", "ZeroTrace", "PhysZeroTrace", {"of": "E_of", "ff": "EU(E_ff, E_of+n+1)"},
       fourier="toPhysical"),
)

# a symbolic-kind name given to toSymbolic is read as the matching physical class
_PHYSICAL_OF = {"ZeroPoisson": "PhysZeroPoisson", "ZeroTrace": "PhysZeroTrace",
                "ZeroBInterior": "ExtZeroCalc"}


def _apply_inclusion(rule: InclusionRule, c: OperatorClass) -> Verdict:
    for f in rule.requires_inf:
        if not c[f].is_inf:
            return Verdict("fail", citations=(rule.rule_id,), message=f"{f} must be INF, got {c[f]}")
    if rule.requires_residual and c.order is not None:
        return Verdict("fail", citations=(rule.rule_id,), message="only the residual class (order -inf) is included")
    env = class_env("E", c)
    try:
        faces = {f: evaluate(expr, env, c.n) for f, expr in rule.faces}
    except LeadingOnlyError as exc:
        return Verdict("fail", citations=(rule.rule_id,), message=str(exc))
    return Verdict("ok", OperatorClass.make(rule.target, n=c.n, **faces), (rule.rule_id,))


def include_into(c: OperatorClass, target_kind: str) -> Verdict:
    for rule in INCLUSION_RULES:
        if rule.source == c.kind and rule.target == target_kind:
            return _apply_inclusion(rule, c)
    return _no_rule(f"inclusion {c.kind} -> {target_kind}")


def fourier_rule(direction: str, c: OperatorClass) -> Verdict:
    if direction not in ("toPhysical", "toSymbolic"):
        raise ValueError("direction is 'toPhysical' or 'toSymbolic'")
    src = c
    if direction == "toSymbolic" and c.kind in _PHYSICAL_OF:
        src = OperatorClass.make(_PHYSICAL_OF[c.kind], n=c.n, **c.family())
    for rule in INCLUSION_RULES:
        if rule.fourier == direction and rule.source == src.kind:
            return _apply_inclusion(rule, src)
    return _no_rule(f"{direction} of {c.kind}")


# adjoints ------------------------------------------------------------------------

ADJOINT_RULES: dict[str, tuple[str, dict[str, str]]] = {
    "ZeroTrace": ("ZeroPoisson", {"of": "conj(E_of)+2*d+1", "ff": "conj(E_ff)+2*d"}),
    "ZeroPoisson": ("ZeroTrace", {"of": "conj(E_of)-2*d-1", "ff": "conj(E_ff)-2*d"}),
    "ZeroInterior": ("ZeroInterior", {"lf": "conj(E_rf)+2*d+1", "rf": "conj(E_lf)-2*d-1", "ff0": "conj(E_ff0)"}),
    "ZeroBInterior": ("ZeroBInterior", {"lf": "conj(E_rf)+2*d+1", "rf": "conj(E_lf)-2*d-1",
                                        "ffb": "conj(E_ffb)", "ff0": "conj(E_ff0)"}),
    "VeryResidual": ("VeryResidual", {"lf": "conj(E_rf)+2*d+1", "rf": "conj(E_lf)-2*d-1"}),
    "BCalc": ("BCalc", {"lf": "conj(E_rf)+2*d+1", "rf": "conj(E_lf)-2*d-1", "ffb": "conj(E_ffb)"}),
    "Boundary": ("Boundary", {"sym": "conj(E)"}),
    "TwistedZeroTrace": ("TwistedZeroPoisson", {"of": "conj(E_of)+2*d+1", "ff": "conj(E_ff)+2*d"}),
    "TwistedZeroPoisson": ("TwistedZeroTrace", {"of": "conj(E_of)-2*d-1", "ff": "conj(E_ff)-2*d"}),
    "TwistedBoundary": ("TwistedBoundary", {"sym": "conj(E)"}),
}


def adjoint_rule_id(kind: str) -> str:
    return "twisted-adjoint" if kind.startswith("Twisted") else "formal-adjoints"


def adjoint_class(c: OperatorClass, delta) -> OperatorClass:
    """Class of the formal adjoint with respect to the x^delta L_b^2 pairing."""
    if c.kind not in ADJOINT_RULES:
        raise RuleError(f"no adjoint rule for {c.kind}")
    target, formulas = ADJOINT_RULES[c.kind]
    env = class_env("E", c)
    faces = {f: evaluate(expr, env, c.n, Fraction(delta)) for f, expr in formulas.items()}
    twists = {}
    if c.kind == "TwistedBoundary":
        twists = {"s": c.t.neg_adjoint(), "t": c.s.neg_adjoint()}
    elif c.s is not None:
        twists = {"s": c.s.neg_adjoint()}
    return OperatorClass.make(target, n=c.n, **twists, **faces)


# untwisting ---------------------------------------------------------------------

def untwist(c: OperatorClass) -> list[OperatorClass]:
    """One untwisted class per eigenblock, with the leading set at ff spread by the block."""
    if c.kind not in ("TwistedZeroTrace", "TwistedZeroPoisson"):
        raise RuleError(f"untwist applies to twisted trace/Poisson classes, not {c.kind}")
    sign = 1 if c.kind == "TwistedZeroTrace" else -1
    target = "ZeroTrace" if sign == 1 else "ZeroPoisson"
    out = []
    for b in c.s.blocks:
        pairs = [Generator(g.alpha + b.mu * sign, g.l + l) for g in c["ff"].gens for l in range(b.size)]
        out.append(OperatorClass.make(target, n=c.n, of=c["of"], ff=LeadingSet(IndexSet(tuple(pairs)))))
    return out


# homogeneity ----------------------------------------------------------------------

@dataclass(frozen=True)
class Homogeneity:
    """N_{t eta} = t^degree [left twist] [dilation] N_eta [dilation] [right twist]."""

    kind: str
    degree: ComplexExact
    dilate_left: bool
    dilate_right: bool
    left_twist: Optional[tuple[Twist, int]] = None
    right_twist: Optional[tuple[Twist, int]] = None

    def law(self) -> str:
        parts = [f"t^({self.degree})"]
        if self.left_twist:
            tw, sg = self.left_twist
            parts.append(f"t^({'-' if sg < 0 else ''}{tw})")
        if self.dilate_left:
            parts.append("dil(t)")
        parts.append("N(eta)")
        if self.dilate_right:
            parts.append("dil(1/t)")
        if self.right_twist:
            tw, sg = self.right_twist
            parts.append(f"t^({'-' if sg < 0 else ''}{tw})")
        return "N(t eta) = " + " . ".join(parts)


_LEAD_FACE = {"ZeroTrace": "ff", "ZeroPoisson": "ff", "TwistedZeroTrace": "ff", "TwistedZeroPoisson": "ff",
              "ZeroInterior": "ff0", "ZeroBInterior": "ff0", "ZeroCalc": "ff0", "ExtZeroCalc": "ff0",
              "Boundary": "sym", "TwistedBoundary": "sym"}


def bessel_degree(c: OperatorClass) -> Homogeneity:
    face = _LEAD_FACE.get(c.kind)
    if face is None:
        raise RuleError(f"{c.kind} has no Bessel family")
    v = c[face]
    if v.is_inf:
        raise RuleError(f"{face} is INF; the Bessel family vanishes")
    lead = face_lead(v)
    if not is_single_point(lead):
        raise RuleError(f"leading set at {face} is {[str(g) for g in lead]}, not a single log-free point")
    deg = -lead[0].alpha
    k = c.kind
    if k in ("ZeroPoisson",):
        return Homogeneity(k, deg, True, False)
    if k in ("ZeroTrace",):
        return Homogeneity(k, deg, False, True)
    if k in ("ZeroInterior", "ZeroBInterior", "ZeroCalc", "ExtZeroCalc"):
        return Homogeneity(k, deg, True, True)
    if k == "Boundary":
        return Homogeneity(k, deg, False, False)
    if k == "TwistedZeroPoisson":
        return Homogeneity(k, deg, True, False, right_twist=(c.s, 1))
    if k == "TwistedZeroTrace":
        return Homogeneity(k, deg, False, True, left_twist=(c.s, -1))
    return Homogeneity(k, deg, False, False, left_twist=(c.t, -1), right_twist=(c.s, 1))


# mapping verdicts -------------------------------------------------------------------

def _as_interior(c: OperatorClass) -> OperatorClass:
    if c.kind == "VeryResidual":
        return OperatorClass.make("ZeroInterior", n=c.n, lf=c["lf"], rf=c["rf"], ff0=INF)
    if c.kind == "BCalc":
        return OperatorClass.make("ZeroBInterior", n=c.n, lf=c["lf"], rf=c["rf"], ffb=c["ffb"], ff0=INF)
    return c


def _cond_list(c: OperatorClass, conds, delta) -> tuple[bool, list[str]]:
    env = class_env("E", c)
    notes = []
    for cond in conds:
        ok, text = cond.check(env, c.n, delta)
        notes.append(text)
        if not ok:
            return False, notes
    return True, notes


def _leading_is_zero(v: FaceValue) -> bool:
    return not v.is_inf and tuple(face_lead(v)) == (Generator(ComplexExact(0), 0),)


def mapping_verdict(c: OperatorClass, delta=0, question: str = "sobolevBounded",
                    input_set: IndexSet = NAT, normal_vanishes: bool = False) -> Verdict:
    """Mapping/compactness verdict from the index data alone."""
    delta = Fraction(delta)
    c = _as_interior(c)
    k = c.kind
    if question == "phg":
        return _phg_verdict(c, input_set)
    if question not in ("sobolevBounded", "sobolevCompact"):
        raise ValueError(f"unknown question {question!r}")
    compact = question == "sobolevCompact"
    d = Fraction(delta)
    if k in ("ZeroCalc", "ZeroInterior", "ExtZeroCalc", "ZeroBInterior"):
        rid = "mapping-0-calculus" if k in ("ZeroCalc", "ExtZeroCalc") else "mapping-symbolic-0b-0-sobolev"
        conds = [Condition("E_lf-d", 0), Condition("E_rf+d+1", 0)]
        if k in ("ExtZeroCalc", "ZeroBInterior"):
            conds.append(Condition("E_ffb", 0))
        conds.append(Condition("E_ff0", 0, strict=compact))
        ok, notes = _cond_list(c, conds, d)
        if not ok:
            return Verdict("fail", citations=(rid,), message=notes[-1], checks=tuple(notes[:-1]))
        if k == "ZeroCalc" and compact and c.order is not None:
            return Verdict("fail", citations=(rid,), message="compactness needs the residual class (order -inf)")
        shift_txt = "" if k != "ZeroCalc" or c.order is None else f" (loses {c.order} derivatives)"
        return Verdict("ok", citations=(rid,), checks=tuple(notes),
                       detail=f"x^{d} H_0 -> x^{d} H_0{shift_txt}" + (" compact" if compact else " bounded"))
    if k in ("ZeroTrace", "TwistedZeroTrace", "ZeroPoisson", "TwistedZeroPoisson"):
        rid = "mapping-twisted-trace-interior-sobolev"
        trace = k.endswith("Trace")
        cond = Condition("E_of+d+1", 0) if trace else Condition("E_of-d", 0)
        ok, notes = _cond_list(c, [cond], d)
        if not ok:
            return Verdict("fail", citations=(rid,), message=notes[-1])
        ff = c["ff"]
        vanishing = normal_vanishes
        if not _leading_is_zero(ff):
            # a front-face set inside N+1 sits in the [0] class with vanishing Bessel family
            if ff.is_inf or (not isinstance(ff, LeadingSet) and re_at_least(ff, 1)
                             and all(g.alpha.im == 0 and g.alpha.re.denominator == 1 and g.l == 0 for g in ff.gens)):
                vanishing = True
            else:
                return Verdict("fail", citations=(rid,), message=f"[E_ff]={list(map(str, face_lead(ff)))} is not [0]",
                               checks=tuple(notes))
        if compact and not vanishing:
            return Verdict("fail", citations=(rid,), message="compactness needs a vanishing Bessel family",
                           checks=tuple(notes))
        tw = f"H^{c.s}" if c.s is not None else "L^2"
        dom, cod = (f"x^{d} L_b^2", tw) if trace else (tw, f"x^{d} L_b^2")
        return Verdict("ok", citations=(rid,), checks=tuple(notes),
                       detail=f"{dom} -> {cod}" + (" compact" if compact else " bounded"))
    if k in ("Boundary", "TwistedBoundary"):
        rid = "mapping-twisted-boundary-sobolev"
        if not _leading_is_zero(c["sym"]):
            return Verdict("fail", citations=(rid,), message=f"order {c['sym']} is not [0]")
        if compact and not normal_vanishes:
            return Verdict("fail", citations=(rid,), message="compactness needs a vanishing principal symbol")
        a = c.s if c.s is not None else "0"
        b = c.t if c.t is not None else "0"
        return Verdict("ok", citations=(rid,), detail=f"H^{a} -> H^{b}" + (" compact" if compact else " bounded"))
    return _no_rule(f"Sobolev mapping of {k}")


def _phg_verdict(c: OperatorClass, F: IndexSet) -> Verdict:
    k = c.kind
    env = {**class_env("E", c), "F": F}
    rid = "mapping-properties-phg-twisted" if k.startswith("Twisted") else "mapping-properties-on-phg-untwisted"

    def check(cond):
        return cond.check(env, c.n)

    if k in ("ZeroTrace", "TwistedZeroTrace"):
        ok, text = check(Condition("E_of+F", 0))
        if not ok:
            return Verdict("fail", citations=(rid,), message=text)
        return Verdict("ok", citations=(rid,), checks=(text,), detail=f"A_phg^{F} -> C^inf(boundary)")
    if k in ("ZeroPoisson", "TwistedZeroPoisson"):
        return Verdict("ok", citations=(rid,), detail=f"C^inf(boundary) -> A_phg^{c['of']}")
    if k in ("Boundary", "TwistedBoundary"):
        return Verdict("ok", citations=("mapping-properties-phg-twisted",),
                       detail="C^inf(boundary) -> C^inf(boundary)")
    if k in ("ZeroInterior", "ZeroBInterior"):
        ok, text = check(Condition("E_rf+F", -1))
        if not ok:
            return Verdict("fail", citations=(rid,), message=text)
        try:
            target = evaluate("E_lf" if k == "ZeroInterior" else "EU(E_lf, F+E_ffb)", env, c.n)
        except LeadingOnlyError as exc:
            return Verdict("fail", citations=(rid,), message=str(exc))
        return Verdict("ok", citations=(rid,), checks=(text,), detail=f"A_phg^{F} -> A_phg^{target}")
    return _no_rule(f"polyhomogeneous mapping of {k}")


# parametrix ledger -----------------------------------------------------------------

@dataclass(frozen=True)
class OperatorData:
    """Declared data of an elliptic 0-differential operator L."""

    m: int
    roots: tuple[tuple[ComplexExact, int], ...]
    delta: Fraction
    delta_bar: Fraction
    n: int

    @classmethod
    def make(cls, m, roots, delta, delta_bar, n) -> "OperatorData":
        return cls(int(m), tuple((ComplexExact.of(mu), int(M)) for mu, M in roots),
                   Fraction(delta), Fraction(delta_bar), int(n))


@dataclass(frozen=True)
class LedgerStep:
    name: str
    cls: Optional[OperatorClass]
    rule: str
    checks: tuple[str, ...] = ()
    note: str = ""


@dataclass(frozen=True)
class Ledger:
    E_lf: IndexSet
    E_rf: IndexSet
    log_orders: tuple[tuple[ComplexExact, int], ...]
    s_L: Twist
    steps: tuple[LedgerStep, ...]

    def step(self, name: str) -> LedgerStep:
        for s in self.steps:
            if s.name == name:
                return s
        raise KeyError(name)


class LedgerError(RuleError):
    def __init__(self, step: str, message: str):
        super().__init__(f"{step}: {message}")
        self.step = step


def _must(step: str, v: Verdict) -> OperatorClass:
    if not v.ok:
        raise LedgerError(step, v.message)
    return v.result


def critical_blocks(L: OperatorData, orders: Mapping[ComplexExact, int]) -> Twist:
    crit = sorted({mu for mu, _ in L.roots if L.delta < mu.re <= L.delta_bar}, key=ComplexExact.key)
    if not crit:
        raise LedgerError("s_L", "no indicial root in the critical strip")
    return Twist(tuple(TwistBlock(mu, orders[mu] + 1) for mu in crit))


def standing_conditions(c: OperatorClass, delta: Fraction, with_ff0: bool = True) -> tuple[bool, list[str]]:
    """Re(lf) > delta, Re(rf) > -delta-1 and, when asked, [ff0] = 0."""
    notes = []
    ok1, t1 = Condition("E_lf-d", 0).check(class_env("E", c), c.n, delta)
    ok2, t2 = Condition("E_rf+d+1", 0).check(class_env("E", c), c.n, delta)
    notes += [t1, t2]
    ok = ok1 and ok2
    if with_ff0:
        z = _leading_is_zero(c["ff0"])
        notes.append(f"[ff0]={'[{(0,0)}]' if z else c['ff0']}")
        ok = ok and z
    return ok, notes


def parametrix_ledger(L: OperatorData, Q: OperatorClass, H: Optional[Mapping[str, IndexSet]] = None,
                      P2: Optional[tuple[IndexSet, IndexSet]] = None, P1_ff0: IndexSet = NAT,
                      power_cap: int = 8) -> Ledger:
    """Index bookkeeping of the left/right parametrix construction for (L, Q A_L)."""
    d, n = L.delta, L.n
    if d >= L.delta_bar:
        raise LedgerError("strip", f"delta={d} must be below delta_bar={L.delta_bar}")
    if Q.kind != "TwistedBoundary":
        raise LedgerError("Q", f"boundary condition must be a TwistedBoundary class, got {Q.kind}")
    above = [(mu, M) for mu, M in L.roots if mu.re > d]
    if not above:
        raise LedgerError("E_lf", "no indicial root above the weight")
    E_lf, orders = simple_set_from_roots(above)
    E_rf = shift(conjugate(E_lf), -2 * d - 1)
    s_L = critical_blocks(L, orders)
    minus_s = s_L.negated()
    zero = LeadingSet(NAT)
    steps: list[LedgerStep] = []

    def add(name, cls, rule, checks=(), note=""):
        steps.append(LedgerStep(name, cls, rule, tuple(checks), note))
        return cls

    if Q.s != minus_s:
        raise LedgerError("Q", f"domain twist {Q.s} must equal -s_L = {minus_s}")
    if not _leading_is_zero(Q["sym"]):
        raise LedgerError("Q", f"order {Q['sym']} must be [0]")
    t = Q.t

    A = add("A_L", OperatorClass.make("TwistedZeroTrace", n=n, of=E_rf, ff=zero, s=minus_s),
            "trace-map-class", note="trace map of L")
    add("Q", Q, "declared")
    K0 = add("K0", OperatorClass.make("TwistedBoundary", n=n, sym=zero, s=t, t=minus_s), "declared",
             note="symbol inverts Q on the Calderon bundle")
    P1 = add("P1", OperatorClass.make("ZeroInterior", n=n, lf=E_lf, rf=E_rf, ff0=P1_ff0), "declared",
             note="projector onto the kernel of L")
    B0p = add("B0'", OperatorClass.make("TwistedZeroPoisson", n=n, of=E_lf, ff=zero, s=minus_s), "declared",
              note="realizes the Bessel Poisson map")
    v = compose_classes(P1, B0p)
    B0 = add("B0", _must("B0", v), v.citations[0], v.checks, "P1 B0'")
    v = compose_classes(A, B0)
    add("A B0", _must("A B0", v), v.citations[0], v.checks)
    v = compose_classes(B0, A)
    add("B0 A", _must("B0 A", v), v.citations[0], v.checks)
    v = compose_classes(B0, K0)
    C0 = add("C0", _must("C0", v), v.citations[0], v.checks, "B0 K0")
    v = compose_classes(Q, A)
    QA = add("QA", _must("QA", v), v.citations[0], v.checks)
    v = compose_classes(QA, C0)
    QAC0 = _must("QA C0", v)
    add("QA C0", QAC0, v.citations[0], v.checks, "principal symbol is the identity")
    R0 = add("R0", OperatorClass.make("TwistedBoundary", n=n, sym=LeadingSet(IndexSet.of((1, 0))), s=t, t=t),
             "symbol-cancellation", note="I - QA C0, Re >= 1")
    S = add("S", OperatorClass.make("TwistedBoundary", n=n, sym=zero, s=t, t=t), "asymptotic-sum",
            note="sum of powers of R0")
    v = compose_classes(C0, S)
    add("C2", _must("C2", v), v.citations[0], v.checks, "C0 S")
    v = compose_classes(C0, QA)
    C0QA = add("C0 QA", _must("C0 QA", v), v.citations[0], v.checks)
    I_set = remove_leading(P1_ff0, 0)
    if I_set.is_inf or inf_re(I_set) < 1:
        raise LedgerError("T0", f"P1 - C0 QA should vanish to order 1 at ff0, got {I_set}")
    T0 = add("T0", OperatorClass.make("ZeroInterior", n=n, lf=E_lf, rf=E_rf, ff0=I_set), "symbol-cancellation",
             note="P1 - C0 QA")
    power, J, checks = T0, I_set, []
    for k in range(2, power_cap + 1):
        v = compose_classes(power, T0)
        power = _must(f"T0^{k}", v)
        checks.extend(v.checks)
        grown = union(J, power["ff0"])
        if grown == J:
            break
        J = grown
    U = add("U", OperatorClass.make("ZeroInterior", n=n, lf=E_lf, rf=E_rf, ff0=J), "compositions-involving-interior",
            tuple(dict.fromkeys(checks)), note=f"asymptotic sum of T0^k, k <= {power_cap}")
    v = include_into(U, "ZeroCalc")
    Uc = add("U in 0-calculus", _must("U", v), v.citations[0])
    if not re_at_least(Uc["ff0"], 1):
        raise LedgerError("U", f"ff0 set {Uc['ff0']} should have Re >= 1")
    v = compose_classes(U, C0)
    UC0 = _must("U C0", v)
    add("C1", OperatorClass.make("TwistedZeroPoisson", n=n, of=union(C0["of"], UC0["of"]), ff=zero, s=t),
        v.citations[0], v.checks, "C0 + U C0")
    H = dict(H or {"lf": E_lf, "rf": E_rf, "ff0": NAT})
    G = OperatorClass.make("ZeroCalc", n=n, order=-L.m, **H)
    ok, notes = standing_conditions(G, d)
    if not ok:
        raise LedgerError("G", "; ".join(notes))
    add("G", G, "declared", notes, "generalized inverse of L")
    add("G1", G, "external-0-calculus-composition", notes, "(I+U) G; conditions on H carried over")
    add("G2", G, "declared", notes, "G2 = G")
    R = OperatorClass.make("VeryResidual", n=n, lf=E_lf, rf=E_rf)
    add("R", R, "left-remainder", standing_conditions(R, d, with_ff0=False)[1])
    F_lf, F_rf = P2 if P2 is not None else (E_lf, E_rf)
    R2 = OperatorClass.make("VeryResidual", n=n, lf=F_lf, rf=F_rf)
    add("R'", R2, "right-remainder", standing_conditions(R2, d, with_ff0=False)[1],
        "projector onto the complement of the range")
    return Ledger(E_lf, E_rf, tuple(sorted(orders.items(), key=lambda kv: kv[0].key())), s_L, tuple(steps))
