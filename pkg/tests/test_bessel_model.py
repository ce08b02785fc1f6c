import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phgcalc.bessel_model import (
    BesselSpec,
    FitError,
    HalfLineFn,
    ModelContext,
    ModelError,
    TwistMatrix,
    apply_exact,
    apply_operator,
    bessel_trace_family,
    calderon_inverse,
    calderon_space,
    critical_roots,
    function_battery,
    generalized_inverse,
    indicial_polynomial,
    indicial_roots,
    k_half,
    log_grid,
    model_bvp_solve,
    modified_bessel_spec,
    projector,
    solve_bessel_kernel,
    trace_coefficients,
    twist_matrix,
    twist_pow,
    verify_homogeneity,
)

ROOTS = [(-0.5 + 0j, 0)]


@pytest.fixture(scope="module")
def bessel():
    spec = modified_bessel_spec((1.0,))
    ctx = ModelContext(delta=-1.0)
    return spec, ctx, solve_bessel_kernel(spec, ctx)


# indicial data -----------------------------------------------------------------------

def test_indicial_polynomial_examples():
    assert np.allclose(indicial_polynomial(modified_bessel_spec()), [-0.25, 0, 1])
    assert np.allclose(indicial_polynomial(BesselSpec(2, {(2, (0,)): 1}, (1.0,))), [0, 0, 1])
    mixed = BesselSpec(3, {(3, (0, 0)): 1, (1, (0, 0)): 2, (0, (0, 1)): 1}, (0.0, 1.0))
    assert np.allclose(indicial_polynomial(mixed), [0, 2, 0, 1])


@pytest.mark.parametrize("coeffs,expected", [
    ([-0.25, 0, 1], [(-0.5, 0), (0.5, 0)]),
    ([0, 0, 1], [(0, 1)]),
    ([-1, 3, -3, 1], [(1, 2)]),
    ([0, 2, 0, 1], [(-math.sqrt(2) * 1j, 0), (0, 0), (math.sqrt(2) * 1j, 0)]),
])
def test_indicial_roots(coeffs, expected):
    got = indicial_roots(coeffs)
    assert len(got) == len(expected)
    for (z, M), (w, N) in zip(sorted(got, key=lambda r: (r[0].real, r[0].imag)),
                              sorted(expected, key=lambda r: (complex(r[0]).real, complex(r[0]).imag))):
        assert abs(z - w) < 1e-10 and M == N


def test_indicial_roots_degenerate():
    with pytest.raises(ModelError):
        indicial_roots([0, 0])
    assert indicial_roots([3]) == []


def test_critical_roots():
    roots = [(-0.5, 0), (0.5, 0)]
    assert critical_roots(roots, 0, 0.5) == [(0.5, 0)]
    assert critical_roots(roots, -1, -0.75) == []
    with pytest.raises(ModelError):
        critical_roots(roots, 0.5, 0.5)


# twist powers ------------------------------------------------------------------------------

def test_twist_pow_single_log():
    S = TwistMatrix(0.3 + 0.2j, 1)
    for t in (0.5, 2.0, 7.0):
        expect = t ** (0.3 + 0.2j) * np.array([[1, math.log(t)], [0, 1]])
        assert np.allclose(twist_pow(t, S), expect, atol=1e-14)
    assert np.allclose(twist_pow(1.0, [S, TwistMatrix(-1.0, 2)]), np.eye(5))
    with pytest.raises(ModelError):
        twist_pow(0.0, S)


blocks = st.builds(TwistMatrix, st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False),
                   st.integers(0, 3), st.sampled_from([1, -1]), st.booleans())
times = st.floats(0.1, 10.0)


@given(st.lists(blocks, min_size=1, max_size=3), times, times)
def test_twist_group_law(S, t, s):
    lhs = twist_pow(t * s, S)
    rhs = twist_pow(t, S) @ twist_pow(s, S)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))


@given(st.lists(blocks, min_size=1, max_size=2))
def test_twist_generator_is_derivative_at_one(S):
    h = 1e-5
    fd = (twist_pow(1 + h, S) - twist_pow(1 - h, S)) / (2 * h)
    assert np.max(np.abs(fd - twist_matrix(S))) < 1e-6 * max(1.0, np.max(np.abs(twist_matrix(S))) ** 3)


# trace coefficients ---------------------------------------------------------------------------

def test_trace_of_k_half():
    x = log_grid()
    u = HalfLineFn.from_callable(k_half, x, [(-0.5, 0), (0.5, 0)])
    c = trace_coefficients(u, (-0.5, 0))
    assert abs(c[0] - math.sqrt(math.pi / 2)) < 1e-4


def test_trace_of_x_log_x():
    x = log_grid()
    u = HalfLineFn.from_callable(lambda x: x * np.log(x), x)
    assert np.allclose(trace_coefficients(u, (1.0, 1)), [0, 1], atol=1e-8)


def test_trace_fit_failures():
    x = log_grid()
    u = HalfLineFn.from_callable(lambda x: np.sin(1 / np.sqrt(x)), x)
    with pytest.raises(FitError):
        trace_coefficients(u, (0.0, 0))
    with pytest.raises(FitError):
        trace_coefficients(HalfLineFn.from_callable(lambda x: np.exp(-x), np.geomspace(1e-3, 1e3, 64)), (0.0, 0))


@pytest.mark.parametrize("t", [0.5, 2.0, 5.0])
def test_trace_dilation_on_log_homogeneous(t):
    x = log_grid()
    u = HalfLineFn.from_callable(lambda x: x ** 0.25 * (2 - 3 * np.log(x)) + x ** 1.25, x, [(1.25, 0)])
    root = (0.25, 1)
    lhs = trace_coefficients(u.dilate(t), root)
    rhs = twist_pow(t, TwistMatrix(0.25, 1)) @ trace_coefficients(u, root)
    assert np.max(np.abs(lhs - rhs)) < 1e-8


# contexts and specs ------------------------------------------------------------------------------

def test_context_validation():
    with pytest.raises(ModelError):
        ModelContext(grid=np.geomspace(1e-3, 1e3, 100))
    with pytest.raises(ModelError):
        ModelContext(grid=np.linspace(1e-7, 1e3, 100))
    with pytest.raises(ModelError):
        ModelContext(tol_asym=0)
    assert ModelContext.from_range(1e-8, 1e4, 300).grid[0] == pytest.approx(1e-8)


def test_spec_validation():
    with pytest.raises(ModelError):
        BesselSpec(2, {(2, (0,)): 1}, (0.0,))
    with pytest.raises(ModelError):
        BesselSpec(2, {(1, (0,)): 1}, (1.0,))
    with pytest.raises(ModelError):
        BesselSpec(2, {(2, (0,)): 1, (1, (2,)): 1}, (1.0,))
    with pytest.raises(ModelError):
        BesselSpec(2, {(2, (0, 0)): 1}, (1.0,))
    assert modified_bessel_spec((0.6, 0.8)).is_elliptic()


def test_exact_application_matches_finite_differences():
    spec = modified_bessel_spec((1.3,))
    ctx = ModelContext(delta=-1.0)
    inner = (ctx.grid > 1e-6) & (ctx.grid < 30)
    for f in function_battery(ctx, 4, seed=3):
        fd = apply_operator(spec, f(ctx.grid), ctx)
        ex = apply_exact(spec, f)(ctx.grid)
        assert np.max(np.abs(fd - ex)[inner] / (1 + np.abs(ex[inner]))) < 1e-6


# kernels ---------------------------------------------------------------------------------------

def test_kernel_dimensions(bessel):
    spec, ctx, ker = bessel
    assert ker.dimension == 1
    assert solve_bessel_kernel(spec, ModelContext(delta=0.0)).dimension == 0


def test_kernel_first_order():
    spec = BesselSpec(1, {(1, (0,)): 1, (0, (0,)): -0.5}, (1.0,))
    ctx = ModelContext(delta=0.0)
    ker = solve_bessel_kernel(spec, ctx)
    assert ker.dimension == 1
    phi = ker.basis[0].values
    ratio = phi / ctx.grid ** 0.5
    assert np.max(np.abs(ratio - ratio[len(ratio) // 2])) < 1e-6 * abs(ratio[len(ratio) // 2])
    assert solve_bessel_kernel(spec, ModelContext(delta=1.0)).dimension == 0


def test_projector_is_orthogonal():
    # the identities are algebraic; a coarse grid keeps the dense products small
    spec = modified_bessel_spec((1.0,))
    ctx = ModelContext.from_range(1e-7, 1e3, 700, delta=-1.0, tol_solve=1e-4)
    ker = solve_bessel_kernel(spec, ctx)
    Pm = projector(ker, ctx)
    W = np.diag(ctx.weights())
    assert np.max(np.abs(Pm @ Pm - Pm)) < 1e-10
    assert np.max(np.abs(W @ Pm - (W @ Pm).conj().T)) < 1e-10


def test_calderon_rank_one(bessel):
    spec, ctx, _ = bessel
    C = calderon_space(spec, ctx, ROOTS)
    assert C.shape == (1, 1) and abs(abs(C[0, 0]) - 1) < 1e-12
    empty = calderon_space(spec, ModelContext(delta=0.0), ROOTS)
    assert empty.shape == (1, 0)


def test_bvp_with_kernel_datum(bessel):
    spec, ctx, ker = bessel
    fam = bessel_trace_family(spec, ctx, ROOTS)
    phi1 = ker.basis[0].values
    sq = np.array([[1.5 + 0.5j]])
    k0 = calderon_inverse(sq, calderon_space(spec, ctx, ROOTS))
    res = model_bvp_solve(spec, ctx, ROOTS, sq, k0, lambda x: 0 * x, sq @ fam(phi1), fam)
    assert ctx.norm(res.u.values - phi1) / ctx.norm(phi1) < 1e-6
    assert res.boundary_residual < 1e-8


def test_generalized_inverse_recovers_orthogonal_part(bessel):
    spec, ctx, ker = bessel
    phi = ker.basis[0].values
    for w in function_battery(ctx, 3, seed=7):
        wv = w(ctx.grid)
        wv_perp = wv - ctx.inner(wv, phi) * phi
        u = generalized_inverse(spec, ctx, apply_exact(spec, w), ker)
        assert ctx.norm(u - wv_perp) / ctx.norm(wv_perp) < 1e-6
        assert abs(ctx.inner(u, phi)) < 1e-8 * ctx.norm(u)


def test_homogeneity_at_identity(bessel):
    spec, ctx, _ = bessel
    assert verify_homogeneity("trace", spec, ctx, 1.0, ROOTS) < 1e-12
    assert verify_homogeneity("L", spec, ctx, 3.0) < 1e-9
    with pytest.raises(ModelError):
        verify_homogeneity("nope", spec, ctx, 2.0, ROOTS)
    with pytest.raises(ModelError):
        verify_homogeneity("L", spec, ctx, -1.0)
