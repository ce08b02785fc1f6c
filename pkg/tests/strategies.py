"""Hypothesis strategies for small exact index sets and operator classes."""
from fractions import Fraction

from hypothesis import strategies as st

from phgcalc.index_algebra import INF, ComplexExact, Generator, IndexSet
from phgcalc.operator_classes import KINDS, OperatorClass, Twist, TwistBlock

rationals = st.builds(Fraction, st.integers(-6, 6), st.sampled_from([1, 2, 3]))
small_im = st.sampled_from([Fraction(0), Fraction(0), Fraction(1), Fraction(-1), Fraction(1, 2)])


def generators(real_only=False):
    im = st.just(Fraction(0)) if real_only else small_im
    return st.builds(lambda re, i, l: Generator(ComplexExact(re, i), l), rationals, im, st.integers(0, 2))


def index_sets(real_only=False, allow_inf=True, max_gens=3):
    finite = st.lists(generators(real_only), min_size=1, max_size=max_gens).map(lambda gs: IndexSet(tuple(gs)))
    return st.one_of(st.just(INF), finite) if allow_inf else finite


twist_blocks = st.builds(TwistBlock, st.builds(ComplexExact, rationals, small_im), st.integers(1, 3),
                         st.sampled_from([1, -1]), st.booleans())
twists = st.lists(twist_blocks, min_size=1, max_size=2).map(lambda bs: Twist(tuple(bs)))


@st.composite
def operator_classes(draw, kinds=None, real_only=False):
    kind = draw(st.sampled_from(sorted(kinds or KINDS)))
    info = KINDS[kind]
    faces = {}
    for f in info.faces:
        lead = f in info.leading
        faces[f] = draw(index_sets(real_only, allow_inf=not lead))
    tw = {name: draw(twists) for name in info.twists}
    n = draw(st.integers(1, 3))
    order = draw(st.one_of(st.none(), rationals)) if info.has_order else None
    return OperatorClass.make(kind, n=n, order=order, **tw, **faces)
