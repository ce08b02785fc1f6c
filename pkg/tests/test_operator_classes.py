from fractions import Fraction

import pytest
from hypothesis import given

from phgcalc.index_algebra import INF, NAT, ComplexExact, IndexSet, conjugate, extended_union, index_set, subset
from phgcalc.operator_classes import (
    ADJOINT_RULES,
    COMPOSITION_RULES,
    KINDS,
    LeadingOnlyError,
    LeadingSet,
    LedgerError,
    OperatorClass,
    OperatorData,
    RuleError,
    Twist,
    TwistBlock,
    adjoint_class,
    bessel_degree,
    compose_classes,
    critical_blocks,
    evaluate,
    fourier_rule,
    include_into,
    mapping_verdict,
    parametrix_ledger,
    untwist,
)
from strategies import operator_classes

S = index_set
OC = OperatorClass.make
HALF = Fraction(1, 2)
UNTWISTED = [k for k, v in KINDS.items() if not v.twists and k in ADJOINT_RULES]


# formula interpreter ---------------------------------------------------------------

def test_evaluate_basic():
    env = {"E_lf": S("{(0,0)}"), "E_rf": S("{(1,0)}")}
    assert evaluate("EU(E_lf, E_rf)", env) == S("{(0,0),(1,1)}")
    assert evaluate("E_lf+E_rf+n+1", env, n=2) == S("{(4,0)}")
    assert evaluate("conj(E_rf)-2*d-1", env, delta=HALF) == S("{(-1,0)}")
    assert evaluate("INF", env) == INF
    with pytest.raises(RuleError):
        evaluate("E_ff", env)
    with pytest.raises(RuleError):
        evaluate("E_lf +", env)


def test_leading_sets_are_closed_under_sum_but_not_eu():
    a = LeadingSet(S("{(0,0),(2,0)}"))
    assert a.base == S("{(0,0)}")
    env = {"A": a, "B": S("{(1/2,0)}")}
    s = evaluate("A+B", env)
    assert isinstance(s, LeadingSet) and s.base == S("{(1/2,0)}")
    with pytest.raises(LeadingOnlyError):
        evaluate("EU(A, B)", env)


# inclusions and Fourier conversions --------------------------------------------------

def test_very_residual_into_zero_calc():
    E_lf, E_rf = S("{(1/2,0)}"), S("{(-1/2,1)}")
    v = include_into(OC("VeryResidual", n=2, lf=E_lf, rf=E_rf), "ZeroCalc")
    assert v.ok and v.result.kind == "ZeroCalc"
    assert v.result["ff0"] == E_lf + E_rf + S("{(3,0)}")


def test_zero_b_interior_into_extended():
    c = OC("ZeroBInterior", n=2, lf=NAT, rf=NAT, ffb=S("{(1,0)}"), ff0=S("{(2,0)}"))
    v = include_into(c, "ExtZeroCalc")
    assert v.ok and v.result["ff0"] == extended_union([S("{(2,0)}"), S("{(3,0)}")])


def test_zero_interior_into_zero_calc():
    c = OC("ZeroInterior", n=1, lf=NAT, rf=NAT, ff0=S("{(1/2,0)}"))
    v = include_into(c, "ZeroCalc")
    assert v.ok and v.result["ff0"] == extended_union([S("{(1/2,0)}"), S("{(2,0)}")])


def test_inclusion_requires_inf():
    v = include_into(OC("ZeroInterior", lf=NAT, rf=NAT, ff0=NAT), "VeryResidual")
    assert v.status == "fail" and "INF" in v.message
    assert include_into(OC("Boundary", sym=NAT), "ZeroCalc").status == "no-rule"


def test_poisson_to_symbolic():
    v = fourier_rule("toSymbolic", OC("ZeroPoisson", of=NAT, ff=S("{(1,0)}")))
    assert v.ok and v.result.kind == "ZeroPoisson"
    assert v.result["of"] == S("{(0,0),(1,1)}") and v.result["ff"] == S("{(1,0)}")


def test_poisson_to_physical():
    v = fourier_rule("toPhysical", OC("ZeroPoisson", n=2, of=NAT, ff=NAT))
    assert v.ok and v.result.kind == "PhysZeroPoisson" and v.result["ff"] == S("{(0,0),(2,1)}")


def test_0b_to_symbolic_with_inf_ff0():
    c = OC("ExtZeroCalc", lf=NAT, rf=NAT, ffb=S("{(1/2,1)}"), ff0=INF)
    v = fourier_rule("toSymbolic", c)
    assert v.ok and v.result["ffb"] == S("{(1/2,1)}")


def test_fourier_direction_validated():
    with pytest.raises(ValueError):
        fourier_rule("sideways", OC("Boundary", sym=NAT))


# adjoints ----------------------------------------------------------------------------

def test_adjoint_trace_example():
    c = adjoint_class(OC("ZeroTrace", of=NAT, ff=NAT), -HALF)
    assert c.kind == "ZeroPoisson" and c["of"] == NAT and c["ff"] == S("{(-1,0)}")


def test_adjoint_interior_at_minus_half():
    lf, rf, ff0 = S("{(1+1i,0)}"), S("{(-1/2,1)}"), S("{(0,0),(1/2-1i,0)}")
    c = adjoint_class(OC("ZeroInterior", lf=lf, rf=rf, ff0=ff0), -HALF)
    assert c.family() == {"lf": conjugate(rf), "rf": conjugate(lf), "ff0": conjugate(ff0)}


def test_adjoint_twists():
    s = Twist.of((HALF, 2))
    c = adjoint_class(OC("TwistedZeroTrace", of=NAT, ff=NAT, s=s), 0)
    assert c.kind == "TwistedZeroPoisson" and c.s == s.neg_adjoint()
    b = adjoint_class(OC("TwistedBoundary", sym=NAT, s=s, t=Twist.zero()), 0)
    assert b.s == Twist.zero().neg_adjoint() and b.t == s.neg_adjoint()
    with pytest.raises(RuleError):
        adjoint_class(OC("ZeroCalc", lf=NAT, rf=NAT, ff0=NAT), 0)


@given(operator_classes(kinds=UNTWISTED, real_only=True))
def test_adjoint_involution(c):
    assert adjoint_class(adjoint_class(c, -HALF), -HALF) == c


@given(operator_classes(kinds=UNTWISTED))
def test_adjoint_involution_any_weight(c):
    d = Fraction(1, 3)
    assert adjoint_class(adjoint_class(c, d), d) == c


@given(operator_classes(kinds=["ZeroTrace", "ZeroPoisson", "ZeroInterior"], real_only=True))
def test_adjoint_reverses_composition_of_self_pairs(c):
    # (A B)^* = B^* A^* on the class level whenever both sides are defined
    v = compose_classes(c, adjoint_class(c, -HALF))
    w = compose_classes(adjoint_class(adjoint_class(c, -HALF), -HALF), adjoint_class(c, -HALF))
    assert v.status == w.status
    if v.ok:
        assert adjoint_class(v.result, -HALF) == compose_classes(
            adjoint_class(adjoint_class(c, -HALF), -HALF), adjoint_class(c, -HALF)).result


# compositions ------------------------------------------------------------------------

def test_poisson_after_boundary():
    E_of, E_ff, G = S("{(1,0)}"), S("{(0,0)}"), S("{(1/2,1)}")
    v = compose_classes(OC("ZeroPoisson", of=E_of, ff=E_ff), OC("Boundary", sym=G))
    assert v.ok and v.citations == ("compositions-involving-boundary",)
    assert v.result == OC("ZeroPoisson", of=E_of, ff=E_ff + G)


def test_global_0b_composition():
    E = OC("ZeroBInterior", n=2, lf=NAT, rf=S("{(1,0)}"), ffb=NAT, ff0=NAT)
    F = OC("ZeroBInterior", n=2, lf=S("{(1,0)}"), rf=NAT, ffb=NAT, ff0=NAT)
    v = compose_classes(E, F)
    assert v.ok and v.citations == ("global-composition-0b-0b",)
    assert v.result["ffb"] == extended_union([NAT, S("{(1,0)}")])
    assert v.result["ff0"] == NAT
    local = compose_classes(E, F, scope="local")
    assert local.citations == ("compositions-involving-interior",)
    assert subset(local.result["lf"], v.result["lf"])


def test_trace_poisson_condition_boundary_case():
    v = compose_classes(OC("ZeroTrace", of=S("{(-1/2,0)}"), ff=NAT), OC("ZeroPoisson", of=S("{(-1/2,0)}"), ff=NAT))
    assert v.status == "fail" and "<= -1" in v.message
    w = compose_classes(OC("ZeroTrace", of=S("{(-1/3,0)}"), ff=NAT), OC("ZeroPoisson", of=S("{(-1/2,0)}"), ff=NAT))
    assert w.ok and w.result.kind == "Boundary"


def test_composition_failures():
    assert compose_classes(OC("Boundary", sym=NAT), OC("ZeroPoisson", of=NAT, ff=NAT)).status == "no-rule"
    v = compose_classes(OC("ZeroPoisson", n=1, of=NAT, ff=NAT), OC("Boundary", n=2, sym=NAT))
    assert v.status == "fail" and "dimensions" in v.message
    a, b = Twist.of((0, 1)), Twist.of((HALF, 1))
    v = compose_classes(OC("TwistedBoundary", sym=NAT, s=a, t=a), OC("TwistedBoundary", sym=NAT, s=a, t=b))
    assert v.status == "fail" and "twist mismatch" in v.message
    with pytest.raises(ValueError):
        compose_classes(OC("Boundary", sym=NAT), OC("Boundary", sym=NAT), scope="everywhere")


def test_every_rule_has_a_known_result_kind():
    for r in COMPOSITION_RULES:
        assert {r.left, r.right, r.result} <= set(KINDS)
        assert {f for f, _ in r.faces} == set(KINDS[r.result].faces)


# twisted and untwisted leading sets ---------------------------------------------------

def test_twisted_face_is_leading():
    c = OC("TwistedZeroTrace", of=NAT, ff=S("{(0,0),(1/2,1),(2,0)}"), s=Twist.zero())
    assert isinstance(c["ff"], LeadingSet) and c["ff"].base == S("{(0,0),(1/2,1)}")


def test_untwist_spreads_leading_set():
    s = Twist.of((HALF, 2), (1, 1))
    c = OC("TwistedZeroTrace", of=NAT, ff=NAT, s=s)
    parts = untwist(c)
    assert [p["ff"].base for p in parts] == [S("{(1/2,1)}"), S("{(1,0)}")]
    p = untwist(OC("TwistedZeroPoisson", of=NAT, ff=NAT, s=s))
    assert p[0]["ff"].base == S("{(-1/2,1)}")
    with pytest.raises(RuleError):
        untwist(OC("Boundary", sym=NAT))


@given(operator_classes(kinds=["TwistedZeroTrace", "TwistedZeroPoisson"]))
def test_untwist_contains_leading_set(c):
    sign = 1 if c.kind == "TwistedZeroTrace" else -1
    for b, part in zip(c.s.blocks, untwist(c)):
        shifted = IndexSet(tuple((g.alpha + b.mu * sign, g.l) for g in c["ff"].gens))
        assert subset(shifted, part["ff"].base)


def test_twist_block_validation():
    with pytest.raises(ValueError):
        TwistBlock(0, 0)
    with pytest.raises(ValueError):
        TwistBlock(0, 2, 3)
    with pytest.raises(ValueError):
        Twist(())
    assert TwistBlock(HALF, 1, -1, True) == TwistBlock(HALF, 1)
    assert str(Twist.of((HALF, 2, -1, True))) == "[(1/2,2,-T)]"


def test_class_validation():
    with pytest.raises(ValueError):
        OC("ZeroTrace", of=NAT)
    with pytest.raises(ValueError):
        OC("ZeroTrace", of=NAT, ff=NAT, s=Twist.zero())
    with pytest.raises(ValueError):
        OC("TwistedZeroTrace", of=NAT, ff=NAT)
    with pytest.raises(ValueError):
        OC("ZeroInterior", lf=NAT, rf=NAT, ff0=NAT, order=2)


# homogeneity -----------------------------------------------------------------------------

def test_bessel_degree_poisson():
    h = bessel_degree(OC("ZeroPoisson", of=NAT, ff=NAT))
    assert h.degree == ComplexExact(0) and h.dilate_left and not h.dilate_right


def test_bessel_degree_twisted_trace():
    s = Twist.of((HALF, 1))
    h = bessel_degree(OC("TwistedZeroTrace", of=NAT, ff=NAT, s=s))
    assert h.left_twist == (s, -1) and h.dilate_right
    assert "t^(-[(1/2,1)])" in h.law()


def test_bessel_degree_errors():
    with pytest.raises(RuleError):
        bessel_degree(OC("ZeroPoisson", of=NAT, ff=S("{(0,1)}")))
    with pytest.raises(RuleError):
        bessel_degree(OC("ZeroPoisson", of=NAT, ff=INF))
    with pytest.raises(RuleError):
        bessel_degree(OC("VeryResidual", lf=NAT, rf=NAT))


def test_bessel_degree_interior_order():
    h = bessel_degree(OC("ZeroInterior", lf=NAT, rf=NAT, ff0=S("{(-2,0)}")))
    assert h.degree == ComplexExact(2) and h.dilate_left and h.dilate_right


# mapping verdicts ------------------------------------------------------------------------

def test_trace_bounded_at_minus_half():
    v = mapping_verdict(OC("ZeroTrace", of=NAT, ff=NAT), -HALF)
    assert v.ok and "bounded" in v.detail and v.citations == ("mapping-twisted-trace-interior-sobolev",)


def test_trace_fails_for_low_of():
    v = mapping_verdict(OC("ZeroTrace", of=S("{(-2,0)}"), ff=NAT), 1)
    assert v.status == "fail"


def test_0b_interior_compact():
    c = OC("ZeroBInterior", lf=S("{(1,0)}"), rf=NAT, ffb=S("{(1/2,0)}"), ff0=S("{(1/2,0)}"))
    v = mapping_verdict(c, 0, "sobolevCompact")
    assert v.ok and "compact" in v.detail
    w = mapping_verdict(c.with_sets(ff0=NAT), 0, "sobolevCompact")
    assert w.status == "fail"
    assert mapping_verdict(c.with_sets(ff0=NAT), 0).ok


def test_zero_calc_compact_only_residual():
    c = OC("ZeroCalc", lf=S("{(1,0)}"), rf=NAT, ff0=S("{(1,0)}"), order=-2)
    assert mapping_verdict(c, 0, "sobolevCompact").status == "fail"
    assert mapping_verdict(OC("ZeroCalc", lf=S("{(1,0)}"), rf=NAT, ff0=S("{(1,0)}")), 0, "sobolevCompact").ok


def test_phg_mapping():
    c = OC("ZeroInterior", lf=S("{(1,0)}"), rf=NAT, ff0=NAT)
    v = mapping_verdict(c, question="phg", input_set=NAT)
    assert v.ok and "{(1,0)}" in v.detail
    v = mapping_verdict(c, question="phg", input_set=S("{(-1,0)}"))
    assert v.status == "fail"
    with pytest.raises(ValueError):
        mapping_verdict(c, question="bounded?")


def test_boundary_mapping():
    assert mapping_verdict(OC("Boundary", sym=NAT)).ok
    assert mapping_verdict(OC("Boundary", sym=S("{(1,0)}"))).status == "fail"
    assert mapping_verdict(OC("Boundary", sym=NAT), question="sobolevCompact").status == "fail"


# parametrix ledger -----------------------------------------------------------------------

def desk_example():
    L = OperatorData.make(2, [(HALF, 0), (-HALF, 0)], 0, HALF, 2)
    Q = OC("TwistedBoundary", n=2, sym=NAT, s=Twist.of((-HALF, 1, -1)), t=Twist.of((0, 1)))
    return L, Q


def test_ledger_single_root():
    L, Q = desk_example()
    led = parametrix_ledger(L, Q)
    assert led.E_lf == S("{(1/2,0)}") and led.E_rf == S("{(-1/2,0)}")
    assert led.s_L == Twist.of((HALF, 1))
    R = led.step("R").cls
    assert R == OC("VeryResidual", n=2, lf=S("{(1/2,0)}"), rf=S("{(-1/2,0)}"))
    assert led.step("B0").rule == "twisted-compositions-mixed"


def test_ledger_two_roots_integer_gap():
    L = OperatorData.make(2, [(0, 0), (1, 0)], -HALF, 1, 2)
    blocks = critical_blocks(L, {ComplexExact(0): 0, ComplexExact(1): 1})
    assert [b.size for b in blocks.blocks] == [1, 2]
    Q = OC("TwistedBoundary", n=2, sym=NAT, s=blocks.negated(), t=Twist.zero(3))
    led = parametrix_ledger(L, Q)
    assert dict(led.log_orders)[ComplexExact(1)] == 1
    assert [b.size for b in led.s_L.blocks] == [1, 2]


def test_ledger_errors():
    L, Q = desk_example()
    with pytest.raises(LedgerError):
        parametrix_ledger(OperatorData.make(2, L.roots, HALF, HALF, 2), Q)
    with pytest.raises(LedgerError):
        parametrix_ledger(L, Q.__class__.make("TwistedBoundary", n=2, sym=NAT, s=Twist.zero(), t=Twist.zero()))
    with pytest.raises(LedgerError):
        parametrix_ledger(L, OC("Boundary", n=2, sym=NAT))
    with pytest.raises(LedgerError):
        parametrix_ledger(OperatorData.make(2, [(-1, 0)], 0, HALF, 2), Q)
