"""Exact arithmetic on index sets.

An index set is a subset of C x N closed under (a, l) -> (a + k, l') for
k in N and l' <= l, finite below every real-part bound.  It is stored as the
minimal antichain of generators.  The empty index set is ``INF`` and stands
for infinite-order vanishing.

Exponents are Gaussian rationals so that every comparison is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

Rational = Union[int, Fraction]


@dataclass(frozen=True, order=False)
class ComplexExact:
    """Gaussian rational re + i*im."""

    re: Fraction
    im: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "re", Fraction(self.re))
        object.__setattr__(self, "im", Fraction(self.im))

    @classmethod
    def of(cls, value: "ComplexLike") -> "ComplexExact":
        if isinstance(value, ComplexExact):
            return value
        if isinstance(value, (int, Fraction)):
            return cls(Fraction(value))
        if isinstance(value, str):
            return parse_complex(value)
        if isinstance(value, tuple) and len(value) == 2:
            return cls(Fraction(value[0]), Fraction(value[1]))
        raise TypeError(f"cannot read {value!r} as an exact complex number")

    def __add__(self, other: "ComplexLike") -> "ComplexExact":
        o = ComplexExact.of(other)
        return ComplexExact(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __neg__(self) -> "ComplexExact":
        return ComplexExact(-self.re, -self.im)

    def __sub__(self, other: "ComplexLike") -> "ComplexExact":
        return self + (-ComplexExact.of(other))

    def __rsub__(self, other: "ComplexLike") -> "ComplexExact":
        return ComplexExact.of(other) - self

    def __mul__(self, other: "ComplexLike") -> "ComplexExact":
        o = ComplexExact.of(other)
        return ComplexExact(self.re * o.re - self.im * o.im,
                            self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def div_int(self, k: int) -> "ComplexExact":
        return ComplexExact(self.re / k, self.im / k)

    def conj(self) -> "ComplexExact":
        return ComplexExact(self.re, -self.im)

    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def nat_offset(self, base: "ComplexExact") -> int | None:
        """Return k in N with self == base + k, else None."""
        if self.im != base.im:
            return None
        d = self.re - base.re
        if d.denominator != 1 or d < 0:
            return None
        return int(d)

    def key(self) -> tuple[Fraction, Fraction]:
        return (self.re, self.im)

    def __complex__(self) -> complex:
        return complex(float(self.re), float(self.im))

    def __str__(self) -> str:
        if self.im == 0:
            return str(self.re)
        sign = "+" if self.im > 0 else "-"
        return f"{self.re}{sign}{abs(self.im)}i"

    def __repr__(self) -> str:
        return f"ComplexExact({self})"


ComplexLike = Union[ComplexExact, int, Fraction, str, tuple]

ZERO = ComplexExact(Fraction(0))


def parse_rational(text: str) -> Fraction:
    text = text.strip()
    if not text:
        raise ValueError("empty rational")
    for ch in text:
        if ch not in "+-0123456789/":
            raise ValueError(f"not an exact rational: {text!r}")
    return Fraction(text)


def parse_complex(text: str) -> ComplexExact:
    """Read 'a', 'a+bi', 'a-bi', 'bi' with rational a, b."""
    s = text.replace(" ", "")
    if not s:
        raise ValueError("empty number")
    if not s.endswith("i"):
        return ComplexExact(parse_rational(s))
    body = s[:-1]
    # split at the last sign that is not the leading one and not after '/'
    cut = -1
    for idx in range(len(body) - 1, 0, -1):
        if body[idx] in "+-" and body[idx - 1] != "/":
            cut = idx
            break
    if cut == -1:
        im = parse_rational(body) if body not in ("", "+", "-") else Fraction(body + "1")
        return ComplexExact(Fraction(0), im)
    re_part, im_part = body[:cut], body[cut:]
    im = Fraction(im_part + "1") if im_part in ("+", "-") else parse_rational(im_part)
    return ComplexExact(parse_rational(re_part), im)


@dataclass(frozen=True)
class Generator:
    """A pair (alpha, l): exponent alpha with log order l."""

    alpha: ComplexExact
    l: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", ComplexExact.of(self.alpha))
        if not isinstance(self.l, int) or self.l < 0:
            raise ValueError(f"log order must be a nonnegative integer, got {self.l!r}")

    def key(self) -> tuple[Fraction, Fraction, int]:
        return (self.alpha.re, self.alpha.im, self.l)

    def implies(self, other: "Generator") -> bool:
        """True when other lies in the closure of self."""
        return other.alpha.nat_offset(self.alpha) is not None and other.l <= self.l

    def __str__(self) -> str:
        return f"({self.alpha},{self.l})"


def _gen(g: Union[Generator, tuple]) -> Generator:
    if isinstance(g, Generator):
        return g
    alpha, l = g
    return Generator(ComplexExact.of(alpha), int(l))


def _minimal(gens: Iterable[Generator]) -> tuple[Generator, ...]:
    uniq = sorted(set(gens), key=Generator.key)
    keep = [g for g in uniq if not any(h != g and h.implies(g) for h in uniq)]
    return tuple(keep)


@dataclass(frozen=True)
class IndexSet:
    """Closed index set given by its minimal generators; no generators is INF."""

    gens: tuple[Generator, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "gens", _minimal(_gen(g) for g in self.gens))

    @classmethod
    def of(cls, *pairs) -> "IndexSet":
        return cls(tuple(_gen(p) for p in pairs))

    @property
    def is_inf(self) -> bool:
        return not self.gens

    def __str__(self) -> str:
        if self.is_inf:
            return "INF"
        return "{" + ",".join(str(g) for g in self.gens) + "}"

    def __repr__(self) -> str:
        return f"IndexSet({self})"

    def __add__(self, other: "IndexSet") -> "IndexSet":
        return index_sum(self, other)


INF = IndexSet(())
NAT = IndexSet.of((0, 0))


def normalize(gens: Iterable[Union[Generator, tuple]]) -> IndexSet:
    return IndexSet(tuple(_gen(g) for g in gens))


def union(*sets: IndexSet) -> IndexSet:
    """Smallest index set containing all operands."""
    return normalize(g for E in sets for g in E.gens)


def contains(E: IndexSet, g: Union[Generator, tuple]) -> bool:
    g = _gen(g)
    return any(h.implies(g) for h in E.gens)


def subset(E: IndexSet, F: IndexSet) -> bool:
    return all(contains(F, g) for g in E.gens)


def index_sum(E: IndexSet, F: IndexSet) -> IndexSet:
    if E.is_inf or F.is_inf:
        return INF
    return normalize(Generator(a.alpha + b.alpha, a.l + b.l) for a in E.gens for b in F.gens)


def multiple(E: IndexSet, e: int) -> IndexSet:
    """e-fold sum of E with itself; e = 0 gives N."""
    out = NAT
    for _ in range(e):
        out = index_sum(out, E)
    return out


def divide(E: IndexSet, e: int) -> IndexSet:
    """Exponents divided by a positive integer, log orders kept."""
    if e <= 0:
        raise ValueError("divisor must be positive")
    return normalize(Generator(g.alpha.div_int(e), g.l) for g in E.gens)


def max_log_at(E: IndexSet, z: ComplexExact) -> int | None:
    """Largest l with (z, l) in E, or None if z is not an exponent of E."""
    best = None
    for g in E.gens:
        if z.nat_offset(g.alpha) is not None:
            best = g.l if best is None else max(best, g.l)
    return best


def extended_union(sets: Sequence[IndexSet]) -> IndexSet:
    """n-ary extended union.

    INF operands are dropped.  With two or more remaining operands the result
    is generated by their union and every (z, p_1 + ... + p_k + 1) with
    (z, p_i) in the i-th operand.  A single remaining operand is returned as is.
    """
    if not sets:
        raise ValueError("extended union needs at least one operand")
    live = [E for E in sets if not E.is_inf]
    if not live:
        return INF
    if len(live) == 1:
        return live[0]
    extra: list[Generator] = []
    for z in {g.alpha for E in live for g in E.gens}:
        orders = [max_log_at(E, z) for E in live]
        if all(p is not None for p in orders):
            extra.append(Generator(z, sum(orders) + 1))
    return normalize([g for E in live for g in E.gens] + extra)


def EU(*sets: IndexSet) -> IndexSet:
    return extended_union(sets)


def shift(E: IndexSet, c: ComplexLike) -> IndexSet:
    c = ComplexExact.of(c)
    return IndexSet(tuple(Generator(g.alpha + c, g.l) for g in E.gens))


def conjugate(E: IndexSet) -> IndexSet:
    return IndexSet(tuple(Generator(g.alpha.conj(), g.l) for g in E.gens))


def truncate_above(E: IndexSet, lam: Rational) -> IndexSet:
    """Closure of the pairs of E with real part strictly above lam."""
    lam = Fraction(lam)
    out = []
    for g in E.gens:
        if g.alpha.re > lam:
            out.append(g)
        else:
            k = int((lam - g.alpha.re) // 1) + 1
            out.append(Generator(g.alpha + k, g.l))
    return normalize(out)


def remove_leading(E: IndexSet, m: ComplexLike) -> IndexSet:
    """Closure of E minus every pair with exponent exactly m."""
    m = ComplexExact.of(m)
    out = [Generator(g.alpha + 1, g.l) if g.alpha == m else g for g in E.gens]
    return normalize(out)


def inf_re(E: IndexSet) -> Fraction:
    if E.is_inf:
        raise ValueError("INF has no smallest real part")
    return min(g.alpha.re for g in E.gens)


def re_greater_than(E: IndexSet, c: Rational) -> bool:
    return E.is_inf or inf_re(E) > Fraction(c)


def re_at_least(E: IndexSet, c: Rational) -> bool:
    return E.is_inf or inf_re(E) >= Fraction(c)


def enumerate_up_to(E: IndexSet, M: Rational) -> list[Generator]:
    """Every element of E with real part at most M, sorted by (Re, Im, l)."""
    M = Fraction(M)
    seen = set()
    for g in E.gens:
        k = 0
        while g.alpha.re + k <= M:
            for l in range(g.l + 1):
                seen.add(Generator(g.alpha + k, l))
            k += 1
    return sorted(seen, key=Generator.key)


def leading_set(E: IndexSet) -> tuple[Generator, ...]:
    """Maximal pairs of E with inf_re <= Re < inf_re + 1, one per exponent."""
    lo = inf_re(E)
    best: dict[ComplexExact, int] = {}
    for g in enumerate_up_to(E, lo + 1):
        if g.alpha.re < lo + 1:
            best[g.alpha] = max(best.get(g.alpha, 0), g.l)
    return tuple(sorted((Generator(a, l) for a, l in best.items()), key=Generator.key))


def leading_index_set(E: IndexSet) -> IndexSet:
    """The index set generated by the leading set (INF stays INF)."""
    if E.is_inf:
        return INF
    return IndexSet(leading_set(E))


def is_single_point(lead: Sequence[Generator]) -> bool:
    return len(lead) == 1 and lead[0].l == 0


def simple_set_from_roots(pairs: Sequence[tuple]) -> tuple[IndexSet, dict[ComplexExact, int]]:
    """Extended union of the sets generated by each (mu, M); also the final log order per root."""
    parts = [IndexSet.of((mu, M)) for mu, M in pairs]
    if not parts:
        return INF, {}
    E = extended_union(parts)
    orders = {ComplexExact.of(mu): max_log_at(E, ComplexExact.of(mu)) for mu, _ in pairs}
    return E, orders


def index_set(text: str) -> IndexSet:
    """Parse '{(a,l),...}' or 'INF'."""
    s = text.strip()
    if s == "INF":
        return INF
    if not (s.startswith("{") and s.endswith("}")):
        raise ValueError(f"not an index set literal: {text!r}")
    body = s[1:-1].strip()
    if not body:
        raise ValueError("empty braces; write INF for the empty index set")
    out = []
    for chunk in body.split(")"):
        chunk = chunk.strip().lstrip(",").strip()
        if not chunk:
            continue
        if not chunk.startswith("("):
            raise ValueError(f"bad pair near {chunk!r}")
        a, l = chunk[1:].rsplit(",", 1)
        out.append(Generator(parse_complex(a), int(l)))
    return normalize(out)
