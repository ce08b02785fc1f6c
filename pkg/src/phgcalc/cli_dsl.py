"""A small batch language for index sets, operator classes and Bessel models.

A script is a sequence of statements, one per line (or separated by ``;``)::

    let E = EU({(0,0)}, {(0,0)})
    let A = ZeroInterior(lf={(1,0)}, rf={(0,0)}, ff0={(0,0)}, n=1)
    compose A A
    let N = op m=2 { (2,0):1, (0,0):-0.25, (0,(2)):1 } eta=[1]
    kernel N delta=-1

Exponents in index sets, twists and weights are exact (``p/q`` and
``a+bi``); floats are accepted only in Bessel coefficients and ``eta``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional, Sequence

from .bmap_calculus import REGISTRY, SPACES, IndexFamily, pullback_family, pushforward_family
from .index_algebra import (
    INF,
    ComplexExact,
    IndexSet,
    conjugate,
    extended_union,
    index_sum,
    leading_index_set,
    shift,
    truncate_above,
)
from .operator_classes import (
    KINDS,
    OperatorClass,
    OperatorData,
    RuleError,
    Twist,
    TwistBlock,
    Verdict,
    adjoint_class,
    adjoint_rule_id,
    bessel_degree,
    compose_classes,
    fourier_rule,
    include_into,
    mapping_verdict,
    parametrix_ledger,
    untwist,
)

MAX_DEPTH = 64
MAX_DIGITS = 40
MAX_TWIST_SIZE = 32


# diagnostics --------------------------------------------------------------------

@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    span: Span
    message: str
    citation: Optional[str] = None

    def __str__(self) -> str:
        tail = f" [{self.citation}]" if self.citation else ""
        return f"{self.span}: {self.severity}: {self.message}{tail}"


class DslError(Exception):
    def __init__(self, span: Span, message: str, citation: Optional[str] = None):
        super().__init__(f"{span}: {message}")
        self.diagnostic = Diagnostic("error", span, message, citation)


# syntax tree ----------------------------------------------------------------------
# spans are excluded from equality so that parse(format(s)) == s can be tested directly

def _span():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class SetLit:
    gens: tuple[tuple[ComplexExact, int], ...]
    span: Span = _span()


@dataclass(frozen=True)
class InfLit:
    span: Span = _span()


@dataclass(frozen=True)
class Name:
    id: str
    span: Span = _span()


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple
    span: Span = _span()


@dataclass(frozen=True)
class Sum:
    terms: tuple
    span: Span = _span()


@dataclass(frozen=True)
class TwistLit:
    blocks: tuple[TwistBlock, ...]
    span: Span = _span()


@dataclass(frozen=True)
class TwistNeg:
    inner: Any
    span: Span = _span()


@dataclass(frozen=True)
class ClassDecl:
    kind: str
    kwargs: tuple[tuple[str, Any], ...]
    span: Span = _span()


@dataclass(frozen=True)
class FamilyDecl:
    space: str
    faces: tuple[tuple[str, Any], ...]
    span: Span = _span()


@dataclass(frozen=True)
class OpDecl:
    m: int
    coeffs: tuple[tuple[tuple[int, Any], complex], ...]
    eta: tuple[float, ...]
    span: Span = _span()


@dataclass(frozen=True)
class DataDecl:
    m: int
    n: int
    roots: tuple[tuple[ComplexExact, int], ...]
    delta: Fraction
    delta_bar: Fraction
    span: Span = _span()


@dataclass(frozen=True)
class Let:
    name: str
    value: Any
    span: Span = _span()


@dataclass(frozen=True)
class Command:
    name: str
    args: tuple
    kwargs: tuple[tuple[str, Any], ...]
    span: Span = _span()


@dataclass(frozen=True)
class Script:
    statements: tuple


# lexer ------------------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str  # num, ident, punct, end, eof
    text: str
    span: Span
    imag: bool = False
    is_float: bool = False


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<num>(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)(?P<imag>i(?![A-Za-z0-9_]))?
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[{}()\[\],=+\-*/:;])
""", re.VERBOSE)


def tokenize(text: str) -> list[Token]:
    out: list[Token] = []
    line, line_start, depth, pos = 1, 0, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        span = Span(line, pos - line_start + 1)
        if m is None:
            raise DslError(span, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup if m.lastgroup != "imag" else "num"
        tok = m.group(0)
        if kind == "nl":
            if depth == 0:
                out.append(Token("end", "\n", span))
            line, line_start = line + 1, m.end()
        elif kind == "num":
            digits = m.group("num")
            is_float = any(c in digits for c in ".eE")
            if not is_float and len(digits.lstrip("0")) > MAX_DIGITS:
                raise DslError(span, f"exact-rational overflow: more than {MAX_DIGITS} digits")
            out.append(Token("num", digits, span, imag=m.group("imag") is not None, is_float=is_float))
        elif kind == "ident":
            out.append(Token("ident", tok, span))
        elif kind == "punct":
            if tok in "([{":
                depth += 1
            elif tok in ")]}":
                depth = max(0, depth - 1)
            out.append(Token("end" if tok == ";" and depth == 0 else "punct", tok, span))
        pos = m.end()
    out.append(Token("eof", "", Span(line, pos - line_start + 1)))
    return out


# parser ---------------------------------------------------------------------------

KIND_ALIASES = {
    "trace": "ZeroTrace",
    "poisson": "ZeroPoisson",
    "interior": "ZeroInterior",
    "boundary": "Boundary",
    "residual": "VeryResidual",
}
SPACE_ALIASES = {
    "X2b": "X_b^2", "X2_0b": "X_0b^2", "X2_0": "X_0^2", "Z": "Z", "Zb": "Z_b", "Z0": "Z_0",
    "P2": "P_0^2", "T2": "T_0^2", "Rn": "R^n",
}
FUNCTIONS = ("EU", "shift", "conj", "trunc", "lead")
RESERVED = frozenset({"let", "op", "data", "family", "twist", "INF", "inf", "m", "eta", *FUNCTIONS})

# command name -> (positional slots, {keyword: (type, required)})
COMMANDS: dict[str, tuple[tuple[str, ...], dict[str, tuple[Any, bool]]]] = {
    "print": (("value",), {}),
    "compose": (("value", "value"), {"scope": (("global", "local"), False)}),
    "adjoint": (("value",), {"delta": ("rational", True)}),
    "include": (("value", "kind"), {}),
    "fourier": (("value", ("toPhysical", "toSymbolic")), {}),
    "verdict": (("value",), {
        "question": (("sobolevBounded", "sobolevCompact", "phg"), False),
        "delta": ("rational", False),
        "input": ("expr", False),
        "vanishing": ("bool", False),
    }),
    "degree": (("value",), {}),
    "untwist": (("value",), {}),
    "ledger": (("value", "value"), {"power": ("int", False)}),
    "pullback": (("bmap", "value"), {}),
    "pushforward": (("bmap", "value"), {"strict": ("bool", False)}),
    "bmap": (("word",), {}),
    "roots": (("value",), {}),
    "kernel": (("value",), {"delta": ("rational", True)}),
    "homogeneity": (("value",), {
        "family": (("L", "G", "trace", "poisson"), True),
        "t": ("rational", True),
        "delta": ("rational", False),
        "roots": ("roots", False),
        "count": ("int", False),
    }),
}


class Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.pos = 0
        self.depth = 0
        self.bound: dict[str, Span] = {}

    # token helpers
    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.peek()
        self.pos += 1
        return t

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.kind in ("punct", "ident") and t.text == text

    def expect(self, text: str) -> Token:
        t = self.peek()
        if not self.at(text):
            raise DslError(t.span, f"expected {text!r}, found {_describe(t)}")
        return self.next()

    def ident(self, what: str = "a name") -> Token:
        t = self.peek()
        if t.kind != "ident":
            raise DslError(t.span, f"expected {what}, found {_describe(t)}")
        return self.next()

    def nest(self, span: Span):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise DslError(span, f"nesting deeper than {MAX_DEPTH}")

    # numbers
    def nat(self) -> int:
        t = self.peek()
        if t.kind != "num" or t.is_float or t.imag:
            raise DslError(t.span, f"expected a natural number, found {_describe(t)}")
        self.next()
        return int(t.text)

    def signed_int(self) -> int:
        neg = self.at("-")
        if neg:
            self.next()
        v = self.nat()
        return -v if neg else v

    def _unsigned_rational(self) -> tuple[Fraction, bool, Span]:
        t = self.peek()
        if t.kind != "num":
            raise DslError(t.span, f"expected a number, found {_describe(t)}")
        if t.is_float:
            raise DslError(t.span, "floats are not allowed in exact positions; write p/q")
        self.next()
        if t.imag:
            return Fraction(int(t.text)), True, t.span
        if self.at("/"):
            self.next()
            d = self.peek()
            if d.kind != "num" or d.is_float:
                raise DslError(d.span, f"expected a denominator, found {_describe(d)}")
            self.next()
            if int(d.text) == 0:
                raise DslError(d.span, "zero denominator")
            return Fraction(int(t.text), int(d.text)), d.imag, t.span
        return Fraction(int(t.text)), False, t.span

    def rational(self) -> Fraction:
        neg = self.at("-")
        if neg:
            self.next()
        v, imag, span = self._unsigned_rational()
        if imag:
            raise DslError(span, "expected a real rational")
        return -v if neg else v

    def scalar(self) -> ComplexExact:
        """a, a+bi, a-bi, bi with rational a, b."""
        neg = self.at("-")
        if neg:
            self.next()
        v, imag, _ = self._unsigned_rational()
        v = -v if neg else v
        if imag:
            return ComplexExact(0, v)
        if (self.at("+") or self.at("-")) and self.peek(1).kind == "num":
            # a+bi only when the imaginary part follows
            save = self.pos
            sign = -1 if self.next().text == "-" else 1
            w, imag2, span = self._unsigned_rational()
            if not imag2:
                self.pos = save
                return ComplexExact(v)
            return ComplexExact(v, sign * w)
        return ComplexExact(v)

    def fnum(self) -> complex:
        """Float or complex float literal for Bessel coefficients."""

        def part():
            t = self.peek()
            if t.kind != "num":
                raise DslError(t.span, f"expected a number, found {_describe(t)}")
            self.next()
            v = float(t.text)
            if v != v or v in (float("inf"), float("-inf")):
                raise DslError(t.span, "number out of range")
            return v, t.imag

        neg = self.at("-")
        if neg:
            self.next()
        v, imag = part()
        v = -v if neg else v
        if imag:
            return complex(0.0, v)
        if (self.at("+") or self.at("-")) and self.peek(1).kind == "num" and self.peek(1).imag:
            sign = -1.0 if self.next().text == "-" else 1.0
            w, _ = part()
            return complex(v, sign * w)
        return complex(v, 0.0)

    # expressions
    def expr(self):
        start = self.peek()
        terms = [self.primary()]
        while self.at("+"):
            self.next()
            terms.append(self.primary())
        return terms[0] if len(terms) == 1 else Sum(tuple(terms), span=start.span)

    def primary(self):
        t = self.peek()
        self.nest(t.span)
        try:
            if self.at("{"):
                return self.set_literal()
            if t.kind == "ident":
                if t.text == "INF":
                    self.next()
                    return InfLit(span=t.span)
                if t.text in FUNCTIONS:
                    return self.call()
                if t.text in RESERVED or t.text in KINDS or t.text in KIND_ALIASES:
                    raise DslError(t.span, f"{t.text!r} cannot start an index-set expression")
                self.next()
                return self.use(t)
            raise DslError(t.span, f"expected an index-set expression, found {_describe(t)}")
        finally:
            self.depth -= 1

    def use(self, t: Token) -> Name:
        if t.text not in self.bound:
            raise DslError(t.span, f"name {t.text!r} is not bound")
        return Name(t.text, span=t.span)

    def set_literal(self) -> SetLit:
        start = self.expect("{")
        gens = [self.pair()]
        while self.at(","):
            self.next()
            gens.append(self.pair())
        self.expect("}")
        return SetLit(tuple(gens), span=start.span)

    def pair(self) -> tuple[ComplexExact, int]:
        self.expect("(")
        a = self.scalar()
        self.expect(",")
        l = self.nat()
        self.expect(")")
        return a, l

    def call(self) -> Call:
        t = self.next()
        self.expect("(")
        fn = t.text
        if fn == "EU":
            args = [self.expr()]
            while self.at(","):
                self.next()
                args.append(self.expr())
            if len(args) < 2:
                raise DslError(t.span, "EU needs at least two operands")
        elif fn in ("conj", "lead"):
            args = [self.expr()]
        else:
            args = [self.expr()]
            self.expect(",")
            args.append(self.scalar() if fn == "shift" else self.rational())
        self.expect(")")
        return Call(fn, tuple(args), span=t.span)

    # values
    def value(self):
        t = self.peek()
        if t.kind == "ident":
            if t.text == "op":
                return self.op_decl()
            if t.text == "data":
                return self.data_decl()
            if t.text == "family":
                return self.family_decl()
            if t.text == "twist":
                return self.twist()
            if (t.text in KINDS or t.text in KIND_ALIASES) and self.peek(1).text == "(":
                return self.class_decl()
        if self.at("-"):
            return self.twist()
        return self.expr()

    def twist(self):
        t = self.peek()
        self.nest(t.span)
        try:
            if self.at("-"):
                self.next()
                return TwistNeg(self.twist(), span=t.span)
            if self.at("twist"):
                self.next()
                self.expect("[")
                blocks = [self.twist_block()]
                while self.at(","):
                    self.next()
                    blocks.append(self.twist_block())
                self.expect("]")
                return TwistLit(tuple(blocks), span=t.span)
            tok = self.ident("a twist")
            if tok.text in RESERVED:
                raise DslError(tok.span, f"{tok.text!r} is not a twist")
            return self.use(tok)
        finally:
            self.depth -= 1

    def twist_block(self) -> TwistBlock:
        start = self.expect("(")
        mu = self.scalar()
        self.expect(",")
        size = self.nat()
        if not 1 <= size <= MAX_TWIST_SIZE:
            raise DslError(start.span, f"twist block size must be in 1..{MAX_TWIST_SIZE}")
        sign, transposed = 1, False
        if self.at(","):
            self.next()
            if self.at("+") or self.at("-"):
                sign = -1 if self.next().text == "-" else 1
                if self.at("T"):
                    self.next()
                    transposed = True
            else:
                self.expect("T")
                transposed = True
        self.expect(")")
        return TwistBlock(mu, size, sign, transposed)

    def kwargs(self, close: str, parse_one) -> tuple[tuple[str, Any], ...]:
        seen: dict[str, Any] = {}
        if self.at(close):
            return ()
        while True:
            key = self.ident("a keyword")
            if key.text in seen:
                raise DslError(key.span, f"keyword {key.text!r} given twice")
            self.expect("=")
            seen[key.text] = parse_one(key)
            if not self.at(","):
                break
            self.next()
        return tuple(seen.items())

    def class_decl(self) -> ClassDecl:
        t = self.next()
        kind = KIND_ALIASES.get(t.text, t.text)
        info = KINDS[kind]
        self.expect("(")

        def one(key: Token):
            k = key.text
            if k in info.faces:
                return self.expr()
            if k == "n":
                return self.nat()
            if k == "order" and info.has_order:
                if self.at("-") and self.peek(1).text == "inf":
                    self.next()
                    self.next()
                    return "-inf"
                return self.rational()
            if k in info.twists:
                return self.twist()
            raise DslError(key.span, f"{kind} has no argument {k!r}")

        kw = dict(self.kwargs(")", one))
        self.expect(")")
        missing = [f for f in info.faces if f not in kw] + [s for s in info.twists if s not in kw]
        if missing:
            raise DslError(t.span, f"{kind} needs {', '.join(missing)}")
        if kw.get("n", 1) < 1:
            raise DslError(t.span, "n must be at least 1")
        order = [f for f in info.faces] + ["order"] + list(info.twists) + ["n"]
        return ClassDecl(kind, tuple((k, kw[k]) for k in order if k in kw), span=t.span)

    def family_decl(self) -> FamilyDecl:
        t = self.next()
        sp = self.ident("a model space")
        if sp.text not in SPACE_ALIASES:
            raise DslError(sp.span, f"unknown model space {sp.text!r}; known: {', '.join(SPACE_ALIASES)}")
        space = SPACES[SPACE_ALIASES[sp.text]]
        self.expect("(")

        def one(key: Token):
            if key.text not in space.faces:
                raise DslError(key.span, f"{sp.text} has no face {key.text!r}")
            return self.expr()

        kw = dict(self.kwargs(")", one))
        self.expect(")")
        missing = [f for f in space.faces if f not in kw]
        if missing:
            raise DslError(t.span, f"family on {sp.text} needs {', '.join(missing)}")
        return FamilyDecl(sp.text, tuple((f, kw[f]) for f in space.faces), span=t.span)

    def op_decl(self) -> OpDecl:
        t = self.next()
        self.expect("m")
        self.expect("=")
        m = self.nat()
        if m < 1:
            raise DslError(t.span, "order m must be at least 1")
        self.expect("{")
        coeffs: dict = {}
        while True:
            start = self.expect("(")
            j = self.nat()
            self.expect(",")
            if self.at("("):
                self.next()
                alpha = [self.nat()]
                while self.at(","):
                    self.next()
                    alpha.append(self.nat())
                self.expect(")")
                alpha = tuple(alpha)
            else:
                alpha = self.nat()
            self.expect(")")
            self.expect(":")
            key = (j, alpha)
            if key in coeffs:
                raise DslError(start.span, f"coefficient {key} given twice")
            coeffs[key] = self.fnum()
            if not self.at(","):
                break
            self.next()
        self.expect("}")
        self.expect("eta")
        self.expect("=")
        self.expect("[")
        eta = [self.fnum()]
        while self.at(","):
            self.next()
            eta.append(self.fnum())
        close = self.expect("]")
        if any(e.imag for e in eta):
            raise DslError(close.span, "eta must be real")
        eta = tuple(e.real for e in eta)
        for (j, alpha), _ in coeffs.items():
            if isinstance(alpha, tuple) and len(alpha) != len(eta):
                raise DslError(t.span, f"multi-index {alpha} does not match eta of dimension {len(eta)}")
            if isinstance(alpha, int) and alpha and len(eta) != 1:
                raise DslError(t.span, f"scalar exponent {alpha} is ambiguous for dimension {len(eta)}")
        return OpDecl(m, tuple(coeffs.items()), eta, span=t.span)

    def roots_list(self) -> tuple[tuple[ComplexExact, int], ...]:
        self.expect("[")
        out = []
        while True:
            self.expect("(")
            mu = self.scalar()
            self.expect(",")
            out.append((mu, self.nat()))
            self.expect(")")
            if not self.at(","):
                break
            self.next()
        self.expect("]")
        return tuple(out)

    def data_decl(self) -> DataDecl:
        t = self.next()
        kw: dict[str, Any] = {}
        types = {"m": self.nat, "n": self.nat, "roots": self.roots_list,
                 "delta": self.rational, "deltabar": self.rational}
        while self.peek().kind == "ident" and self.peek(1).text == "=":
            key = self.next()
            if key.text not in types:
                raise DslError(key.span, f"data has no field {key.text!r}")
            if key.text in kw:
                raise DslError(key.span, f"field {key.text!r} given twice")
            self.expect("=")
            kw[key.text] = types[key.text]()
        missing = [k for k in types if k not in kw]
        if missing:
            raise DslError(t.span, f"data needs {', '.join(missing)}")
        return DataDecl(kw["m"], kw["n"], kw["roots"], kw["delta"], kw["deltabar"], span=t.span)

    # statements
    def statement(self):
        t = self.peek()
        if t.kind != "ident":
            raise DslError(t.span, f"expected a statement, found {_describe(t)}")
        if t.text == "let":
            self.next()
            name = self.ident("a name to bind")
            if name.text in RESERVED or name.text in KINDS or name.text in KIND_ALIASES \
                    or name.text in COMMANDS:
                raise DslError(name.span, f"{name.text!r} is reserved")
            if name.text in self.bound:
                raise DslError(name.span, f"name {name.text!r} already bound at {self.bound[name.text]}")
            self.expect("=")
            value = self.value()
            self.bound[name.text] = name.span
            return Let(name.text, value, span=t.span)
        if t.text in COMMANDS:
            return self.command()
        raise DslError(t.span, f"unknown statement {t.text!r}")

    def command(self) -> Command:
        t = self.next()
        slots, kwspec = COMMANDS[t.text]
        args = []
        for slot in slots:
            if slot == "value":
                args.append(self.value())
            else:
                w = self.ident("a word")
                if slot == "kind" and w.text not in KINDS:
                    raise DslError(w.span, f"unknown operator kind {w.text!r}")
                if slot == "bmap" and w.text not in REGISTRY:
                    raise DslError(w.span, f"unknown b-map {w.text!r}; known: {', '.join(sorted(REGISTRY))}")
                if isinstance(slot, tuple) and w.text not in slot:
                    raise DslError(w.span, f"expected one of {', '.join(slot)}")
                args.append(w.text)
        kw: dict[str, Any] = {}
        while self.peek().kind == "ident":
            key = self.next()
            if key.text not in kwspec:
                raise DslError(key.span, f"{t.text} takes no option {key.text!r}")
            if key.text in kw:
                raise DslError(key.span, f"option {key.text!r} given twice")
            self.expect("=")
            kw[key.text] = self._option(kwspec[key.text][0])
        for k, (_, required) in kwspec.items():
            if required and k not in kw:
                raise DslError(t.span, f"{t.text} needs {k}=")
        return Command(t.text, tuple(args), tuple(sorted(kw.items())), span=t.span)

    def _option(self, typ):
        if typ == "rational":
            return self.rational()
        if typ == "int":
            return self.nat()
        if typ == "expr":
            return self.expr()
        if typ == "roots":
            return self.roots_list()
        w = self.ident("a word")
        choices = ("true", "false") if typ == "bool" else typ
        if w.text not in choices:
            raise DslError(w.span, f"expected one of {', '.join(choices)}")
        return w.text == "true" if typ == "bool" else w.text

    def script(self) -> Script:
        stmts = []
        while True:
            while self.peek().kind == "end":
                self.next()
            if self.peek().kind == "eof":
                return Script(tuple(stmts))
            stmts.append(self.statement())
            t = self.peek()
            if t.kind not in ("end", "eof"):
                raise DslError(t.span, f"expected end of statement, found {_describe(t)}")


def _describe(t: Token) -> str:
    if t.kind == "eof":
        return "end of input"
    if t.kind == "end":
        return "end of statement"
    return repr(t.text + ("i" if t.imag else ""))


def parse(text: str) -> Script:
    """Parse a script; raises DslError carrying a spanned Diagnostic."""
    return Parser(text).script()


# formatting ---------------------------------------------------------------------

def format_scalar(c: ComplexExact) -> str:
    if c.im == 0:
        return str(c.re)
    if c.re == 0:
        return f"{c.im}i"
    return f"{c.re}{'+' if c.im > 0 else '-'}{abs(c.im)}i"


def _fnum(z: complex) -> str:
    if z.imag == 0:
        return repr(z.real)
    return f"{z.real!r}{'+' if z.imag >= 0 else '-'}{abs(z.imag)!r}i"


def format_index_set(E: IndexSet) -> str:
    if E.is_inf:
        return "INF"
    return "{" + ",".join(f"({format_scalar(g.alpha)},{g.l})" for g in E.gens) + "}"


def format_family(F) -> str:
    """Faces in space order, e.g. ``of={(0,0)} ff={(1,0)} if_eta=INF if_x=INF``."""
    items = F.as_dict().items() if isinstance(F, IndexFamily) else F.family().items()
    return " ".join(f"{f}={_face(v)}" for f, v in items)


def _face(v) -> str:
    return f"[{format_index_set(v.base)}]" if hasattr(v, "base") else format_index_set(v)


def format_class(c: OperatorClass) -> str:
    parts = [c.kind, format_family(c)]
    if KINDS[c.kind].has_order:
        parts.append(f"order={'-inf' if c.order is None else c.order}")
    if c.s is not None:
        parts.append(f"s={c.s}")
    if c.t is not None:
        parts.append(f"t={c.t}")
    parts.append(f"n={c.n}")
    return " ".join(parts)


def _block(b: TwistBlock) -> str:
    tag = "" if (b.sign, b.transposed) == (1, False) else \
        "," + ("+" if b.sign > 0 else "-") + ("T" if b.transposed else "")
    return f"({format_scalar(b.mu)},{b.size}{tag})"


def format_node(node) -> str:
    if isinstance(node, SetLit):
        return "{" + ", ".join(f"({format_scalar(a)},{l})" for a, l in node.gens) + "}"
    if isinstance(node, InfLit):
        return "INF"
    if isinstance(node, Name):
        return node.id
    if isinstance(node, Sum):
        return " + ".join(format_node(t) for t in node.terms)
    if isinstance(node, Call):
        args = []
        for a in node.args:
            if isinstance(a, ComplexExact):
                args.append(format_scalar(a))
            elif isinstance(a, Fraction):
                args.append(str(a))
            else:
                args.append(format_node(a))
        return f"{node.fn}({', '.join(args)})"
    if isinstance(node, TwistLit):
        return "twist[" + ", ".join(_block(b) for b in node.blocks) + "]"
    if isinstance(node, TwistNeg):
        return "-" + format_node(node.inner)
    if isinstance(node, ClassDecl):
        return f"{node.kind}({', '.join(f'{k}={_kwval(v)}' for k, v in node.kwargs)})"
    if isinstance(node, FamilyDecl):
        return f"family {node.space}({', '.join(f'{k}={format_node(v)}' for k, v in node.faces)})"
    if isinstance(node, OpDecl):
        body = ", ".join(f"({j},{_alpha(a)}):{_fnum(c)}" for (j, a), c in node.coeffs)
        return f"op m={node.m} {{ {body} }} eta=[{', '.join(repr(e) for e in node.eta)}]"
    if isinstance(node, DataDecl):
        return (f"data m={node.m} n={node.n} roots={_roots(node.roots)} "
                f"delta={node.delta} deltabar={node.delta_bar}")
    if isinstance(node, Let):
        return f"let {node.name} = {format_node(node.value)}"
    if isinstance(node, Command):
        parts = [node.name] + [a if isinstance(a, str) else format_node(a) for a in node.args]
        parts += [f"{k}={_kwval(v)}" for k, v in node.kwargs]
        return " ".join(parts)
    raise TypeError(f"cannot format {type(node).__name__}")


def _alpha(a) -> str:
    return str(a) if isinstance(a, int) else "(" + ",".join(map(str, a)) + ")"


def _roots(roots) -> str:
    return "[" + ", ".join(f"({format_scalar(mu)},{M})" for mu, M in roots) + "]"


def _kwval(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, Fraction, str)):
        return str(v)
    if isinstance(v, tuple):
        return _roots(v)
    return format_node(v)


def format_script(script: Script) -> str:
    return "".join(format_node(s) + "\n" for s in script.statements)


def format_verdict(v: Verdict, as_json: bool = False, command: str = "") -> str:
    if as_json:
        return json.dumps(_record(command, v.status, v.result, v.citations, v.message or v.detail))
    cite = f"Thm {v.citations[0]}" if v.citations else ""
    if v.status == "ok":
        lines = [f"OK {cite}".rstrip()]
        if v.result is not None:
            lines.append("  " + format_class(v.result))
        if v.detail:
            lines.append("  " + v.detail)
        return "\n".join(lines)
    if v.status == "fail":
        return f"FAIL {v.message} {cite}".rstrip()
    return f"NORULE {v.message}"


def _record(command, status, value, citations, message="", data=None) -> dict:
    """JSON record with a fixed key order."""
    kind, family = None, None
    if isinstance(value, OperatorClass):
        kind, family = value.kind, {f: _face(x) for f, x in value.family().items()}
    elif isinstance(value, IndexFamily):
        kind, family = value.space.name, {f: format_index_set(x) for f, x in value.as_dict().items()}
    elif isinstance(value, IndexSet):
        kind, family = "IndexSet", {"set": format_index_set(value)}
    elif isinstance(value, str):
        kind = value
    return {"command": command, "status": status, "kind": kind, "family": family,
            "citations": list(citations), "message": message, "data": data}


# runner -----------------------------------------------------------------------------

@dataclass
class Options:
    json: bool = False
    tol_asym: float = 1e-6
    tol_solve: float = 1e-6
    grid: Optional[tuple[float, float, int]] = None
    seed: int = 0
    csv_dir: Optional[str] = None


def _g(x: float) -> str:
    return f"{x:.12g}"


def _gc(z: complex) -> str:
    z = complex(z)
    if z.imag == 0:
        return _g(z.real)
    return f"{_g(z.real)}{'+' if z.imag >= 0 else '-'}{_g(abs(z.imag))}i"


class Runner:
    def __init__(self, options: Optional[Options] = None):
        self.opt = options or Options()
        self.env: dict[str, Any] = {}
        self.out: list[str] = []

    # evaluation
    def eval(self, node):
        if isinstance(node, SetLit):
            return IndexSet.of(*node.gens)
        if isinstance(node, InfLit):
            return INF
        if isinstance(node, Name):
            return self.env[node.id]
        if isinstance(node, Sum):
            total = self.eval_set(node.terms[0])
            for t in node.terms[1:]:
                total = index_sum(total, self.eval_set(t))
            return total
        if isinstance(node, Call):
            sets = [self.eval_set(a) for a in node.args if not isinstance(a, (ComplexExact, Fraction))]
            if node.fn == "EU":
                return extended_union(sets)
            if node.fn == "conj":
                return conjugate(sets[0])
            if node.fn == "lead":
                return leading_index_set(sets[0])
            if node.fn == "shift":
                return shift(sets[0], node.args[1])
            return truncate_above(sets[0], node.args[1])
        if isinstance(node, (TwistLit, TwistNeg)):
            return self.eval_twist(node)
        if isinstance(node, ClassDecl):
            info = KINDS[node.kind]
            kw = dict(node.kwargs)
            faces = {f: self.eval_set(kw[f]) for f in info.faces}
            twists = {s: self.eval_twist(kw[s]) for s in info.twists}
            order = kw.get("order")
            try:
                return OperatorClass.make(node.kind, n=kw.get("n", 1),
                                          order=None if order in (None, "-inf") else order, **twists, **faces)
            except ValueError as exc:
                raise DslError(node.span, str(exc)) from None
        if isinstance(node, FamilyDecl):
            space = SPACES[SPACE_ALIASES[node.space]]
            return IndexFamily.from_map(space, {f: self.eval_set(v) for f, v in node.faces})
        if isinstance(node, OpDecl):
            from .bessel_model import BesselSpec, ModelError
            n = len(node.eta)
            coeffs = {}
            for (j, a), c in node.coeffs:
                coeffs[(j, a if isinstance(a, tuple) else ((a,) if n == 1 else (0,) * n))] = c
            try:
                return BesselSpec(node.m, coeffs, node.eta)
            except ModelError as exc:
                raise DslError(node.span, str(exc)) from None
        if isinstance(node, DataDecl):
            return OperatorData.make(node.m, node.roots, node.delta, node.delta_bar, node.n)
        raise DslError(getattr(node, "span", Span(0, 0)), f"cannot evaluate {type(node).__name__}")

    def eval_set(self, node) -> IndexSet:
        v = self.eval(node)
        if not isinstance(v, IndexSet):
            raise DslError(node.span, f"expected an index set, got {_typename(v)}")
        return v

    def eval_twist(self, node) -> Twist:
        if isinstance(node, TwistLit):
            return Twist(node.blocks)
        if isinstance(node, TwistNeg):
            return self.eval_twist(node.inner).negated()
        v = self.eval(node)
        if not isinstance(v, Twist):
            raise DslError(node.span, f"expected a twist, got {_typename(v)}")
        return v

    def eval_as(self, node, typ, what: str):
        v = self.eval(node)
        if not isinstance(v, typ):
            raise DslError(node.span, f"expected {what}, got {_typename(v)}")
        return v

    # output
    def emit(self, text: str) -> None:
        self.out.append(text)

    def emit_record(self, cmd: str, status: str, value, citations=(), message="", data=None, text=""):
        if self.opt.json:
            self.emit(json.dumps(_record(cmd, status, value, citations, message, data)))
        else:
            self.emit(text)

    def verdict(self, cmd: Command, v: Verdict) -> None:
        self.emit(format_verdict(v, self.opt.json, cmd.name))

    def context(self, spec, delta: float):
        from .bessel_model import ModelContext
        kw = dict(n=spec.n, delta=float(delta), tol_asym=self.opt.tol_asym, tol_solve=self.opt.tol_solve)
        if self.opt.grid is not None:
            return ModelContext.from_range(*self.opt.grid, **kw)
        return ModelContext(**kw)

    # commands
    def run_command(self, cmd: Command) -> None:
        getattr(self, "cmd_" + cmd.name)(cmd, dict(cmd.kwargs))

    def cmd_print(self, cmd, kw):
        node = cmd.args[0]
        v = self.eval(node)
        label = format_node(node)
        if isinstance(v, IndexSet):
            text = format_index_set(v)
        elif isinstance(v, OperatorClass):
            text = format_class(v)
        elif isinstance(v, IndexFamily):
            text = format_family(v)
        else:
            text = _describe_value(v)
        self.emit_record("print", "ok", v if isinstance(v, (IndexSet, OperatorClass, IndexFamily)) else _typename(v),
                         message=text, text=f"{label} = {text}")

    def cmd_compose(self, cmd, kw):
        A = self.eval_as(cmd.args[0], OperatorClass, "an operator class")
        B = self.eval_as(cmd.args[1], OperatorClass, "an operator class")
        self.verdict(cmd, compose_classes(A, B, kw.get("scope", "global")))

    def cmd_adjoint(self, cmd, kw):
        c = self.eval_as(cmd.args[0], OperatorClass, "an operator class")
        res = adjoint_class(c, kw["delta"])
        self.verdict(cmd, Verdict("ok", res, (adjoint_rule_id(c.kind),)))

    def cmd_include(self, cmd, kw):
        c = self.eval_as(cmd.args[0], OperatorClass, "an operator class")
        self.verdict(cmd, include_into(c, cmd.args[1]))

    def cmd_fourier(self, cmd, kw):
        c = self.eval_as(cmd.args[0], OperatorClass, "an operator class")
        self.verdict(cmd, fourier_rule(cmd.args[1], c))

    def cmd_verdict(self, cmd, kw):
        c = self.eval_as(cmd.args[0], OperatorClass, "an operator class")
        F = self.eval_set(kw["input"]) if "input" in kw else IndexSet.of((0, 0))
        self.verdict(cmd, mapping_verdict(c, kw.get("delta", 0), kw.get("question", "sobolevBounded"),
                                          F, kw.get("vanishing", False)))

    def cmd_degree(self, cmd, kw):
        c = self.eval_as(cmd.args[0], OperatorClass, "an operator class")
        h = bessel_degree(c)
        self.emit_record("degree", "ok", c, ("bessel-family-homogeneity",), h.law(),
                         {"degree": format_scalar(h.degree)},
                         f"OK Thm bessel-family-homogeneity\n  degree={format_scalar(h.degree)}  {h.law()}")

    def cmd_untwist(self, cmd, kw):
        c = self.eval_as(cmd.args[0], OperatorClass, "an operator class")
        parts = untwist(c)
        if self.opt.json:
            for p in parts:
                self.emit(json.dumps(_record("untwist", "ok", p, ("generalized-eigenbundles",))))
        else:
            self.emit("OK Thm generalized-eigenbundles")
            self.out.extend("  " + format_class(p) for p in parts)

    def cmd_ledger(self, cmd, kw):
        L = self.eval_as(cmd.args[0], OperatorData, "operator data (data ...)")
        Q = self.eval_as(cmd.args[1], OperatorClass, "a boundary-condition class")
        led = parametrix_ledger(L, Q, power_cap=kw.get("power", 8))
        if self.opt.json:
            data = {"E_lf": format_index_set(led.E_lf), "E_rf": format_index_set(led.E_rf), "s_L": str(led.s_L),
                    "steps": [{"step": s.name, "class": format_class(s.cls) if s.cls else None,
                               "rule": s.rule, "checks": list(s.checks), "note": s.note} for s in led.steps]}
            self.emit(json.dumps(_record("ledger", "ok", "Ledger", ("main-theorem",), "", data)))
            return
        self.emit(f"ledger E_lf={format_index_set(led.E_lf)} E_rf={format_index_set(led.E_rf)} s_L={led.s_L}")
        width = max(len(s.name) for s in led.steps)
        for s in led.steps:
            body = format_class(s.cls) if s.cls is not None else "-"
            self.emit(f"  {s.name.ljust(width)}  {body}  Thm {s.rule}")
        self.emit("OK Thm main-theorem")

    def cmd_pullback(self, cmd, kw):
        f = REGISTRY[cmd.args[0]]
        F = self.eval_as(cmd.args[1], IndexFamily, "an index family")
        if F.space != f.target:
            raise DslError(cmd.args[1].span, f"family lives on {F.space.name}, {f.name} targets {f.target.name}")
        res = pullback_family(f, F)
        self.emit_record("pullback", "ok", res, ("pull-back",),
                         text=f"OK Thm pull-back\n  {format_family(res)}")

    def cmd_pushforward(self, cmd, kw):
        f = REGISTRY[cmd.args[0]]
        E = self.eval_as(cmd.args[1], IndexFamily, "an index family")
        if E.space != f.source:
            raise DslError(cmd.args[1].span, f"family lives on {E.space.name}, {f.name} starts at {f.source.name}")
        res = pushforward_family(f, E, strict=False)
        if res.violations and kw.get("strict", True):
            face, r = res.violations[0]
            msg = f"Re({face})={r} <= 0"
            self.emit_record("pushforward", "fail", None, ("push-forward",), msg, text=f"FAIL {msg} Thm push-forward")
            return
        self.emit_record("pushforward", "ok", res.family, ("push-forward",),
                         text=f"OK Thm push-forward\n  {format_family(res.family)}")

    def cmd_bmap(self, cmd, kw):
        which = cmd.args[0]
        if which == "list":
            names = sorted(REGISTRY)
            self.emit_record("bmap", "ok", "BMapList", data=names, text="\n".join(
                f"{n}: {REGISTRY[n].source.name} -> {REGISTRY[n].target.name}" for n in names))
            return
        if which not in REGISTRY:
            raise DslError(cmd.span, f"unknown b-map {which!r}")
        f = REGISTRY[which]
        rows = {G: list(f.e[i]) for i, G in enumerate(f.target.faces)}
        w = max(len(G) for G in f.target.faces)
        lines = [f"{f.name}: {f.source.name} -> {f.target.name}",
                 " " * (w + 2) + " ".join(f.source.faces)]
        for G in f.target.faces:
            lines.append(f"  {G.ljust(w)}" + "".join(
                " " + str(v).rjust(len(H)) for v, H in zip(rows[G], f.source.faces)))
        lines.append(f"  interior: {', '.join(sorted(f.interior_faces)) or '-'}")
        self.emit_record("bmap", "ok", "BMap", data={"rows": rows, "interior": sorted(f.interior_faces)},
                         text="\n".join(lines))

    def _spec(self, node):
        from .bessel_model import BesselSpec
        return self.eval_as(node, BesselSpec, "a Bessel operator (op ...)")

    def cmd_roots(self, cmd, kw):
        from .bessel_model import indicial_polynomial, indicial_roots
        spec = self._spec(cmd.args[0])
        roots = indicial_roots(indicial_polynomial(spec))
        data = [{"root": _gc(z), "multiplicity": M} for z, M in roots]
        self.emit_record("roots", "ok", "IndicialRoots", data=data,
                         text="\n".join(["root  multiplicity"] + [f"{_gc(z)}  {M}" for z, M in roots]))

    def cmd_kernel(self, cmd, kw):
        from .bessel_model import solve_bessel_kernel
        spec = self._spec(cmd.args[0])
        ctx = self.context(spec, kw["delta"])
        res = solve_bessel_kernel(spec, ctx)
        x = ctx.grid
        data = {"dimension": res.dimension, "delta": str(kw["delta"]),
                "singular_values": [_g(s) for s in res.singular_values],
                "residuals": [_g(r) for r in res.residuals]}
        if self.opt.csv_dir:
            os.makedirs(self.opt.csv_dir, exist_ok=True)
            path = os.path.join(self.opt.csv_dir, f"kernel_line{cmd.span.line}.csv")
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["x"] + [f"{p}_{k}" for k in range(res.dimension) for p in ("re", "im")])
                for i, xi in enumerate(x):
                    row = [_g(xi)]
                    for b in res.basis:
                        row += [_g(b.values[i].real), _g(b.values[i].imag)]
                    wr.writerow(row)
            data["csv"] = path
        lines = [f"kernel dim={res.dimension} delta={kw['delta']}",
                 "singular values: " + (" ".join(_g(s) for s in res.singular_values) or "-"),
                 "residuals: " + (" ".join(_g(r) for r in res.residuals) or "-")]
        if res.dimension:
            lines.append("x  " + "  ".join(f"phi_{k}" for k in range(res.dimension)))
            for xs in (1e-3, 1e-2, 1e-1, 1.0, 10.0):
                i = int(abs(x - xs).argmin())
                lines.append(_g(x[i]) + "  " + "  ".join(_gc(b.values[i]) for b in res.basis))
        self.emit_record("kernel", "ok", "Kernel", data=data, text="\n".join(lines))

    def cmd_homogeneity(self, cmd, kw):
        from .bessel_model import verify_homogeneity
        spec = self._spec(cmd.args[0])
        t = kw["t"]
        if t <= 0:
            raise DslError(cmd.span, "t must be positive")
        fam = kw["family"]
        roots = [(complex(mu), M) for mu, M in kw.get("roots", ())]
        if fam in ("trace", "poisson") and not roots:
            raise DslError(cmd.span, f"the {fam} family needs roots=[...]")
        ctx = self.context(spec, kw.get("delta", Fraction(-1)))
        r = verify_homogeneity(fam, spec, ctx, float(t), roots, kw.get("count", 6), self.opt.seed)
        self.emit_record("homogeneity", "ok", "Homogeneity", data={"family": fam, "t": str(t), "residual": _g(r)},
                         text=f"homogeneity family={fam} t={t} residual={_g(r)}")

    # driver
    def run(self, script: Script) -> list[str]:
        for st in script.statements:
            try:
                if isinstance(st, Let):
                    self.env[st.name] = self.eval(st.value)
                else:
                    self.run_command(st)
            except DslError:
                raise
            except (RuleError, ValueError, KeyError, ArithmeticError) as exc:
                msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
                raise DslError(st.span, str(msg)) from None
        return self.out


def _typename(v) -> str:
    from .bessel_model import BesselSpec
    for typ, name in ((IndexSet, "index set"), (OperatorClass, "operator class"), (IndexFamily, "index family"),
                      (Twist, "twist"), (OperatorData, "operator data"), (BesselSpec, "Bessel operator")):
        if isinstance(v, typ):
            return name
    return type(v).__name__


def _describe_value(v) -> str:
    from .bessel_model import BesselSpec
    if isinstance(v, Twist):
        return str(v)
    if isinstance(v, BesselSpec):
        terms = ", ".join(f"({j},{_alpha(a)}):{_fnum(c)}" for (j, a), c in sorted(v.coeffs.items()))
        return f"op m={v.m} {{ {terms} }} eta=[{', '.join(repr(e) for e in v.eta)}]"
    if isinstance(v, OperatorData):
        return (f"data m={v.m} n={v.n} roots={_roots(v.roots)} "
                f"delta={v.delta} deltabar={v.delta_bar}")
    return str(v)


def run(script: Script, options: Optional[Options] = None) -> str:
    return "\n".join(Runner(options).run(script)) + "\n"


# command line -------------------------------------------------------------------------

class _ArgError(Exception):
    pass


class _Args(argparse.ArgumentParser):
    def error(self, message):  # report as a diagnostic instead of exiting with code 2
        raise _ArgError(message)


def parse_grid(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must be min:max:points, got {text!r}")
    lo, hi, pts = float(parts[0]), float(parts[1]), int(parts[2])
    if not (0 < lo < hi) or pts < 16:
        raise ValueError(f"bad grid {text!r}: need 0 < min < max and at least 16 points")
    return lo, hi, pts


def build_arg_parser() -> argparse.ArgumentParser:
    p = _Args(prog="phgcalc", description="Run a script of index-set, operator-class and Bessel-model commands.")
    p.add_argument("script", help="input file, or - for standard input")
    p.add_argument("--json", action="store_true", help="one JSON record per command")
    p.add_argument("--tol-asym", type=float, default=1e-6)
    p.add_argument("--tol-solve", type=float, default=1e-6)
    p.add_argument("--grid", type=parse_grid, default=None, metavar="MIN:MAX:POINTS")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", dest="csv_dir", default=None, metavar="DIR")
    p.add_argument("--format", action="store_true", help="print the canonical form of the script and exit")
    return p


def options_from_args(ns: argparse.Namespace) -> Options:
    return Options(json=ns.json, tol_asym=ns.tol_asym, tol_solve=ns.tol_solve, grid=ns.grid,
                   seed=ns.seed, csv_dir=ns.csv_dir)


def main(argv: Optional[Sequence[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        ns = build_arg_parser().parse_args(argv)
    except _ArgError as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    try:
        if ns.script == "-":
            text = sys.stdin.read()
            label = "<stdin>"
        else:
            with open(ns.script, encoding="utf-8") as fh:
                text = fh.read()
            label = ns.script
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: cannot read {ns.script}: {exc}", file=stderr)
        return 1
    runner = Runner(options_from_args(ns))
    try:
        script = parse(text)
        if ns.format:
            stdout.write(format_script(script))
            return 0
        runner.run(script)
    except DslError as exc:
        for line in runner.out:
            print(line, file=stdout)
        print(f"{label}:{exc.diagnostic}", file=stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is an internal error
        print(f"{label}: internal error: {type(exc).__name__}: {exc}", file=stderr)
        return 2
    for line in runner.out:
        print(line, file=stdout)
    return 0
