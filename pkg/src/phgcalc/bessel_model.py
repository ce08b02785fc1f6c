"""Half-line model problems: indicial data, twist powers, Bessel kernels and traces.

Everything is expressed in s = log x, where x d/dx becomes d/ds and a model
operator sum_k x^k Q_k(d/ds) is a constant-coefficient ODE plus exponential
potentials.  Kernels are computed by two-sided shooting: solutions admissible
at x -> 0 are integrated rightwards, solutions decaying at x -> oo leftwards,
and the two families are matched at x = 1/|eta|.  Both directions are the
numerically stable ones for the modes they carry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .index_algebra import ComplexExact, enumerate_up_to, simple_set_from_roots


class ModelError(ValueError):
    pass


class FitError(ModelError):
    pass


class InjectivityError(ModelError):
    pass


# context and operator data ---------------------------------------------------------

def log_grid(x_min: float = 1e-12, x_max: float = 1e3, per_octave: int = 128) -> np.ndarray:
    """Log-uniform grid through x=1 whose step divides log 2, so dilation by 2 is an index shift."""
    h = math.log(2.0) / per_octave
    k0 = math.floor(math.log(x_min) / h)
    k1 = math.ceil(math.log(x_max) / h)
    return np.exp(h * np.arange(k0, k1 + 1))


@dataclass(frozen=True)
class ModelContext:
    n: int = 1
    delta: float = -1.0
    grid: np.ndarray = field(default_factory=log_grid, compare=False)
    tol_asym: float = 1e-6
    tol_solve: float = 1e-6

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or len(g) < 16 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ModelError("grid must be strictly increasing positive abscissas")
        if g[0] > 1e-6 * (1 + 1e-9) or g[-1] < 1e3 * (1 - 1e-9):
            raise ModelError("grid must span at least [1e-6, 1e3]")
        steps = np.diff(np.log(g))
        if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
            raise ModelError("grid must be log-uniform")
        if self.tol_asym <= 0 or self.tol_solve <= 0:
            raise ModelError("tolerances must be positive")
        object.__setattr__(self, "grid", g)

    @classmethod
    def from_range(cls, x_min: float, x_max: float, points: int, **kw) -> "ModelContext":
        return cls(grid=np.geomspace(x_min, x_max, points), **kw)

    @property
    def s(self) -> np.ndarray:
        return np.log(self.grid)

    @property
    def h(self) -> float:
        return float(np.log(self.grid[1] / self.grid[0]))

    def weights(self) -> np.ndarray:
        """Trapezoid weights for the x^delta L_b^2 pairing: integral of u conj(v) x^(-2 delta - 1) dx."""
        w = np.full(len(self.grid), self.h)
        w[0] = w[-1] = self.h / 2
        return w * self.grid ** (-2 * self.delta)

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        return complex(np.sum(u * np.conj(v) * self.weights()))

    def norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(self.inner(u, u).real, 0.0))


MultiIndex = tuple[int, ...]


@dataclass(frozen=True)
class BesselSpec:
    """N_eta = sum L[j, alpha] (x d/dx)^j (i x eta)^alpha (multiplication applied first)."""

    m: int
    coeffs: Mapping[tuple[int, MultiIndex], complex]
    eta: tuple[float, ...]

    def __post_init__(self) -> None:
        n = len(self.eta)
        clean = {}
        for (j, alpha), c in self.coeffs.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != n:
                raise ModelError(f"multi-index {alpha} does not match eta of dimension {n}")
            if j < 0 or min(alpha, default=0) < 0 or j + sum(alpha) > self.m:
                raise ModelError(f"term (x d/dx)^{j} (x d/dy)^{alpha} exceeds order {self.m}")
            if c != 0:
                clean[(int(j), alpha)] = complex(c)
        object.__setattr__(self, "coeffs", clean)
        object.__setattr__(self, "eta", tuple(float(e) for e in self.eta))
        if not any(self.eta):
            raise ModelError("eta must be nonzero")
        if self.coeffs.get((self.m, (0,) * n), 0) == 0:
            raise ModelError("the (x d/dx)^m coefficient must be nonzero")

    @property
    def n(self) -> int:
        return len(self.eta)

    def with_eta(self, eta: Sequence[float]) -> "BesselSpec":
        return BesselSpec(self.m, self.coeffs, tuple(eta))

    def scaled(self, t: float) -> "BesselSpec":
        return self.with_eta([t * e for e in self.eta])

    @property
    def eta_norm(self) -> float:
        return math.sqrt(sum(e * e for e in self.eta))

    def has_eta_terms(self) -> bool:
        return any(sum(a) for (_, a) in self.coeffs)

    def principal_symbol(self, xi0: float, xi: Sequence[float]) -> complex:
        return sum(c * (1j * xi0) ** j * np.prod([(1j * x) ** a for x, a in zip(xi, alpha)])
                   for (j, alpha), c in self.coeffs.items() if j + sum(alpha) == self.m)

    def is_elliptic(self, samples: int = 512, seed: int = 0) -> bool:
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(samples, self.n + 1))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        vals = [abs(self.principal_symbol(p[0], p[1:])) for p in pts]
        return min(vals) > 1e-10

    def potential_polys(self) -> dict[int, np.ndarray]:
        """Q_k (ascending coefficients in d/ds) with N_eta = sum_k x^k Q_k(d/ds)."""
        out: dict[int, np.ndarray] = {}
        for (j, alpha), c in self.coeffs.items():
            k = sum(alpha)
            w = c * np.prod([(1j * e) ** a for e, a in zip(self.eta, alpha)])
            # (d/ds)^j x^k = x^k (d/ds + k)^j
            poly = P.polypow([k, 1], j) if j else np.array([1.0])
            out[k] = P.polyadd(out.get(k, np.zeros(1)), w * poly)
        return out

    def ode_coefficients(self, s: np.ndarray) -> np.ndarray:
        """Rows c_i(s), i = 0..m, with N_eta u = sum_i c_i(s) u^(i)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        c = np.zeros((self.m + 1, len(s)), dtype=complex)
        for k, poly in self.potential_polys().items():
            for i, a in enumerate(poly):
                c[i] += a * np.exp(k * s)
        return c

    def far_field_roots(self) -> np.ndarray:
        """lambda with u ~ exp(lambda x) at x -> oo: roots of the top-order part."""
        poly = np.zeros(self.m + 1, dtype=complex)
        for (j, alpha), c in self.coeffs.items():
            if j + sum(alpha) == self.m:
                poly[j] += c * np.prod([(1j * e) ** a for e, a in zip(self.eta, alpha)])
        poly = np.trim_zeros(poly, "b")
        if len(poly) <= 1:
            return np.zeros(0, dtype=complex)
        return companion_roots(poly)


# indicial data --------------------------------------------------------------------

def indicial_polynomial(spec: BesselSpec) -> np.ndarray:
    """Ascending coefficients of sum_j L[j, 0] z^j."""
    zero = (0,) * spec.n
    out = np.zeros(spec.m + 1, dtype=complex)
    for (j, alpha), c in spec.coeffs.items():
        if alpha == zero:
            out[j] += c
    return out


def companion_roots(coeffs: Sequence[complex]) -> np.ndarray:
    c = np.trim_zeros(np.asarray(coeffs, dtype=complex), "b")
    deg = len(c) - 1
    if deg < 1:
        return np.zeros(0, dtype=complex)
    comp = np.zeros((deg, deg), dtype=complex)
    comp[1:, :-1] = np.eye(deg - 1)
    comp[:, -1] = -c[:-1] / c[-1]
    return np.linalg.eigvals(comp)


def _poly_derivs_at(c: np.ndarray, z: complex, k: int) -> list[complex]:
    out, d = [], c
    for _ in range(k):
        out.append(complex(P.polyval(z, d)) if len(d) else 0j)
        d = P.polyder(d) if len(d) > 1 else np.zeros(0)
    return out


def indicial_roots(coeffs: Sequence[complex], cluster_tol: float = 1e-8) -> list[tuple[complex, int]]:
    """Roots with multiplicity convention (cluster size - 1).

    A k-fold root splits into eigenvalues spread by about eps^(1/k), so a group
    of k eigenvalues is merged when its spread is below that scale and the
    first k derivatives of the polynomial vanish at its mean.
    """
    c = np.trim_zeros(np.asarray(coeffs, dtype=complex), "b")
    if len(c) == 0:
        raise ModelError("the indicial polynomial is identically zero")
    if len(c) == 1:
        return []
    roots = list(companion_roots(c))
    scale = max(1.0, max(abs(r) for r in roots))
    eps = np.finfo(float).eps
    out: list[tuple[complex, int]] = []
    remaining = sorted(roots, key=lambda r: (r.real, r.imag))
    while remaining:
        r0 = remaining[0]
        order = sorted(remaining, key=lambda r: abs(r - r0))
        best = 1
        for k in range(len(order), 1, -1):
            grp = order[:k]
            center = np.mean(grp)
            spread = max(abs(r - center) for r in grp)
            radius = max(cluster_tol, 50 * (eps * scale) ** (1.0 / k) * scale)
            if spread > radius:
                continue
            ders = _poly_derivs_at(c, center, k)
            norms = [np.sum(np.abs(P.polyder(c, i) if i else c)) * scale ** 0 for i in range(k)]
            if all(abs(d) <= 1e-6 * max(nm, 1.0) for d, nm in zip(ders, norms)):
                best = k
                break
        grp = order[:best]
        center = _polish(c, complex(np.mean(grp)), best)
        out.append((_clean(center), best - 1))
        for r in grp:
            remaining.remove(r)
    out.sort(key=lambda rm: (rm[0].real, rm[0].imag))
    return out


def _polish(c: np.ndarray, z: complex, k: int) -> complex:
    """Newton on the (k-1)-th derivative, where a k-fold root is simple."""
    d = c
    for _ in range(k - 1):
        d = P.polyder(d)
    dd = P.polyder(d) if len(d) > 1 else np.zeros(1)
    for _ in range(8):
        den = P.polyval(z, dd)
        if den == 0:
            break
        step = P.polyval(z, d) / den
        z = z - step
        if abs(step) < 1e-16 * max(1.0, abs(z)):
            break
    return complex(z)


def _clean(z: complex, tol: float = 1e-12) -> complex:
    re = 0.0 if abs(z.real) < tol else z.real
    im = 0.0 if abs(z.imag) < tol else z.imag
    return complex(re, im)


def critical_roots(roots: Iterable[tuple[complex, int]], delta: float, delta_bar: float):
    if not delta < delta_bar:
        raise ModelError(f"empty critical strip: delta={delta} >= delta_bar={delta_bar}")
    return [(mu, M) for mu, M in roots if delta < complex(mu).real <= delta_bar]


# twist powers -----------------------------------------------------------------------

@dataclass(frozen=True)
class TwistMatrix:
    """alpha*I + N on C^(M+1), N with superdiagonal (1, 2, ..., M)."""

    alpha: complex
    M: int
    sign: int = 1
    transposed: bool = False

    def __post_init__(self) -> None:
        if self.M < 0:
            raise ModelError("M must be nonnegative")

    @classmethod
    def from_block(cls, block) -> "TwistMatrix":
        mu = block.mu
        return cls(complex(float(mu.re), float(mu.im)), block.size - 1, block.sign, block.transposed)

    @property
    def size(self) -> int:
        return self.M + 1

    def matrix(self) -> np.ndarray:
        a = self.alpha * np.eye(self.size, dtype=complex)
        for i in range(self.M):
            if self.transposed:
                a[i + 1, i] = self.sign * (i + 1)
            else:
                a[i, i + 1] = self.sign * (i + 1)
        return a

    def power(self, t: float) -> np.ndarray:
        """t^S in closed form: t^alpha * U with U[i, i+k] = C(i+k, k) (sign log t)^k."""
        if t <= 0:
            raise ModelError("t must be positive")
        lt = math.log(t)
        u = np.zeros((self.size, self.size), dtype=complex)
        for i in range(self.size):
            for k in range(self.size - i):
                u[i, i + k] = math.comb(i + k, k) * (self.sign * lt) ** k
        if self.transposed:
            u = u.T
        return np.exp(self.alpha * lt) * u


TwistLike = Union[TwistMatrix, Sequence[TwistMatrix]]


def _blocks(S: TwistLike) -> list[TwistMatrix]:
    if isinstance(S, TwistMatrix):
        return [S]
    if hasattr(S, "blocks"):
        return [TwistMatrix.from_block(b) for b in S.blocks]
    return list(S)


def twist_matrix(S: TwistLike) -> np.ndarray:
    from scipy.linalg import block_diag
    return block_diag(*[b.matrix() for b in _blocks(S)])


def twist_pow(t: float, S: TwistLike) -> np.ndarray:
    from scipy.linalg import block_diag
    return block_diag(*[b.power(t) for b in _blocks(S)])


def twist_for_roots(roots: Sequence[tuple[complex, int]]) -> list[TwistMatrix]:
    return [TwistMatrix(complex(mu), int(M)) for mu, M in roots]


# half-line functions -------------------------------------------------------------------

@dataclass
class HalfLineFn:
    """Values on a grid plus known expansion exponents (mu, log order) at x -> 0."""

    x: np.ndarray
    values: np.ndarray
    exponents: tuple[tuple[complex, int], ...] = ()
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def from_callable(cls, f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                      exponents: Sequence[tuple[complex, int]] = ()) -> "HalfLineFn":
        return cls(np.asarray(x), np.asarray(f(np.asarray(x)), dtype=complex), tuple(exponents), f)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.func is not None:
            return np.asarray(self.func(np.asarray(x)), dtype=complex)
        s = np.log(self.x)
        re = CubicSpline(s, self.values.real)(np.log(x))
        im = CubicSpline(s, self.values.imag)(np.log(x))
        out = re + 1j * im
        out[(x < self.x[0]) | (x > self.x[-1])] = 0
        return out

    def dilate(self, t: float) -> "HalfLineFn":
        """lambda_t^* u (x) = u(t x)."""
        if self.func is not None:
            f = self.func
            return HalfLineFn.from_callable(lambda x: f(t * x), self.x, self.exponents)
        return HalfLineFn(self.x, self(t * self.x), self.exponents)


def _exponent_basis(mu: complex, M: int, extra: Sequence[tuple[complex, int]], depth: int = 3):
    """Target terms first, then nuisance terms, de-duplicated."""
    terms: list[tuple[complex, int]] = [(mu, l) for l in range(M + 1)]
    for k in range(1, depth + 1):
        terms += [(mu + k, l) for l in range(M + 1)]
    for nu, l in extra:
        if complex(nu).real < mu.real + depth + 0.5:
            for ll in range(l + 1):
                terms.append((complex(nu), ll))
    out: list[tuple[complex, int]] = []
    for nu, l in terms:
        if not any(abs(nu - a) < 1e-9 and l == b for a, b in out):
            out.append((complex(nu), l))
    return out


def trace_coefficients(u: HalfLineFn, root: tuple[complex, int], tol_asym: float = 1e-6,
                       window: float = 1e-2, depth: int = 3) -> np.ndarray:
    """Coefficients c_0..c_M of x^mu (log x)^l in the small-x expansion of u (least squares)."""
    mu, M = complex(root[0]), int(root[1])
    sel = u.x <= window
    x = u.x[sel]
    if len(x) < 4 * (M + 1 + depth):
        raise FitError("too few grid points in the fitting window")
    y = u.values[sel]
    basis = _exponent_basis(mu, M, u.exponents, depth)
    lx = np.log(x)
    scale = x ** (-mu.real)
    A = np.stack([x ** nu * lx ** l * scale for nu, l in basis], axis=1)
    b = y * scale
    col = np.linalg.norm(A, axis=0)
    col[col == 0] = 1
    sol, *_ = np.linalg.lstsq(A / col, b, rcond=None)
    sol = sol / col
    resid = np.linalg.norm(A @ sol - b) / max(np.linalg.norm(b), 1e-300)
    if resid > tol_asym:
        raise FitError(f"asymptotic fit residual {resid:.3e} exceeds {tol_asym:g}")
    return sol[: M + 1]


# the ODE in s = log x ---------------------------------------------------------------------

def _rhs(spec: BesselSpec, forcing: Optional[Callable[[float], complex]] = None):
    polys = spec.potential_polys()
    m = spec.m

    def f(s, y):
        c = np.zeros(m + 1, dtype=complex)
        for k, poly in polys.items():
            ek = math.exp(k * s)
            c[: len(poly)] += poly * ek
        top = -np.dot(c[:m], y)
        if forcing is not None:
            top += forcing(s)
        dy = np.empty_like(y)
        dy[:-1] = y[1:]
        dy[-1] = top / c[m]
        return dy

    return f


def _integrate(spec, y0: np.ndarray, s_from: float, s_to: float, s_eval: np.ndarray,
               forcing=None) -> np.ndarray:
    """States (m x len(s_eval)) for each column of y0 (m x k)."""
    y0 = np.atleast_2d(np.asarray(y0, dtype=complex))
    if y0.shape[0] != spec.m:
        y0 = y0.T
    out = np.zeros((y0.shape[1], spec.m, len(s_eval)), dtype=complex)
    if abs(s_to - s_from) < 1e-15:
        for j in range(y0.shape[1]):
            out[j] = y0[:, j:j + 1]
        return out
    uniq, inv = np.unique(s_eval, return_inverse=True)
    teval = uniq if s_to > s_from else uniq[::-1]
    for j in range(y0.shape[1]):
        sol = solve_ivp(_rhs(spec, forcing), (s_from, s_to), y0[:, j], method="DOP853",
                        t_eval=teval, rtol=1e-11, atol=1e-30)
        if not sol.success:
            raise ModelError(f"ODE integration failed: {sol.message}")
        ys = sol.y if s_to > s_from else sol.y[:, ::-1]
        out[j] = ys[:, inv]
    return out


def _power_state(mu: complex, l: int, s: float, m: int) -> np.ndarray:
    """d^i/ds^i of exp(mu s) s^l, divided by exp(mu s), for i < m."""
    out = np.zeros(m, dtype=complex)
    for i in range(m):
        acc = 0j
        for k in range(min(i, l) + 1):
            acc += math.comb(i, k) * mu ** (i - k) * math.perm(l, k) * s ** (l - k)
        out[i] = acc
    return out


def _exp_state(lam: complex, x: float, m: int) -> np.ndarray:
    """d^i/ds^i of exp(lam x) divided by exp(lam x): Touchard polynomials in lam x."""
    out = np.zeros(m, dtype=complex)
    poly = np.array([1.0 + 0j])
    for i in range(m):
        out[i] = P.polyval(lam * x, poly)
        poly = P.polymulx(P.polyadd(poly, P.polyder(poly) if len(poly) > 1 else [0]))
    return out


@dataclass
class KernelResult:
    basis: list[HalfLineFn]
    singular_values: np.ndarray
    residuals: list[float]

    @property
    def dimension(self) -> int:
        return len(self.basis)


def _admissible_roots(spec: BesselSpec, delta: float):
    roots = indicial_roots(indicial_polynomial(spec))
    gap = min((abs(mu.real - delta) for mu, _ in roots), default=1.0)
    if gap < 1e-6:
        raise ModelError(f"delta={delta} is indicial")
    return roots, [(mu, M) for mu, M in roots if mu.real > delta]


def _left_states(spec, allowed, s0):
    cols = []
    for mu, M in allowed:
        for l in range(M + 1):
            st = _power_state(mu, l, s0, spec.m)
            cols.append(st / np.linalg.norm(st))
    return np.array(cols, dtype=complex).T.reshape(spec.m, len(cols))


def _far_start(spec: BesselSpec, ctx: ModelContext) -> tuple[float, np.ndarray]:
    lam = spec.far_field_roots()
    dec = [l for l in lam if l.real < -1e-12]
    if not dec:
        return math.log(ctx.grid[-1]), np.zeros((spec.m, 0), dtype=complex)
    rate = min(-l.real for l in dec)
    xr = min(ctx.grid[-1], 40.0 / rate)
    cols = []
    for l in dec:
        st = _exp_state(l, xr, spec.m)
        cols.append(st / np.linalg.norm(st))
    return math.log(xr), np.array(cols, dtype=complex).T.reshape(spec.m, len(cols))


def _match_point(spec, ctx, s_r):
    s_m = -math.log(spec.eta_norm)
    return min(max(s_m, ctx.s[0] + 1.0), s_r - 0.5)


class _Shooter:
    """Left (admissible) and right (decaying) homogeneous solution families on the grid."""

    def __init__(self, spec: BesselSpec, ctx: ModelContext):
        self.spec, self.ctx = spec, ctx
        self.roots, self.allowed = _admissible_roots(spec, ctx.delta)
        s = ctx.s
        self.s0 = s[0]
        self.free_right = not spec.has_eta_terms()
        if self.free_right:
            self.s_r, self.s_m = s[-1], s[-1]
        else:
            self.s_r, yr = _far_start(spec, ctx)
            self.s_m = _match_point(spec, ctx, self.s_r)
        self.left_idx = np.nonzero(s <= self.s_m)[0]
        self.right_idx = np.nonzero((s > self.s_m) & (s <= self.s_r))[0]
        yl = _left_states(spec, self.allowed, self.s0)
        ev = np.concatenate([s[self.left_idx], [self.s_m]])
        self.WL = _integrate(spec, yl, self.s0, self.s_m, ev) if yl.shape[1] else np.zeros((0, spec.m, len(ev)))
        if self.free_right:
            self.WR = np.zeros((0, spec.m, len(self.right_idx) + 1))
        else:
            ev = np.concatenate([s[self.right_idx], [self.s_m]])
            self.WR = _integrate(spec, yr, self.s_r, self.s_m, ev) if yr.shape[1] else np.zeros((0, spec.m, len(ev)))

    def match_matrix(self) -> np.ndarray:
        left = self.WL[:, :, -1].T
        right = self.WR[:, :, -1].T
        if self.free_right:
            return np.zeros((0, left.shape[1]), dtype=complex)
        return np.concatenate([left, -right], axis=1)

    def assemble(self, coef: np.ndarray, left_part=None, right_part=None) -> np.ndarray:
        kl = self.WL.shape[0]
        u = np.zeros(len(self.ctx.grid), dtype=complex)
        u[self.left_idx] = np.tensordot(coef[:kl], self.WL[:, 0, :-1], axes=1)
        if len(self.right_idx):
            if self.free_right:
                pass
            else:
                u[self.right_idx] = np.tensordot(coef[kl:], self.WR[:, 0, :-1], axes=1)
        if left_part is not None:
            u[self.left_idx] += left_part
        if right_part is not None:
            u[self.right_idx] += right_part
        return u


def apply_operator(spec: BesselSpec, u: np.ndarray, ctx: ModelContext) -> np.ndarray:
    """N_eta u on the grid by fourth-order central differences in s (edges set to 0)."""
    h = ctx.h
    m = spec.m
    derivs = [np.asarray(u, dtype=complex)]
    for _ in range(m):
        d = np.zeros_like(derivs[-1])
        v = derivs[-1]
        d[2:-2] = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * h)
        derivs.append(d)
    c = spec.ode_coefficients(ctx.s)
    out = sum(c[i] * derivs[i] for i in range(m + 1))
    out[: 2 * m] = 0
    out[-2 * m:] = 0
    return out


def _orthonormalize(vectors: list[np.ndarray], ctx: ModelContext) -> list[np.ndarray]:
    if not vectors:
        return []
    V = np.stack(vectors, axis=1)
    w = np.sqrt(ctx.weights())
    Q, R = np.linalg.qr(V * w[:, None])
    keep = np.abs(np.diag(R)) > 1e-12 * max(np.abs(np.diag(R)).max(), 1e-300)
    return [Q[:, j] / w for j in range(Q.shape[1]) if keep[j]]


def solve_bessel_kernel(spec: BesselSpec, ctx: ModelContext, rank_tol: float = 1e-8) -> KernelResult:
    """Orthonormal basis (x^delta L_b^2 pairing) of the kernel of N_eta on the grid."""
    sh = _Shooter(spec, ctx)
    kl = sh.WL.shape[0]
    if sh.free_right:
        coefs = [np.eye(kl)[:, j] for j in range(kl)]
        sv = np.zeros(0)
    else:
        A = sh.match_matrix()
        norms = np.linalg.norm(A, axis=0)
        norms[norms == 0] = 1
        _, sv, vh = np.linalg.svd(A / norms)
        k = A.shape[1]
        full = np.zeros(k)
        full[: len(sv)] = sv
        null = [j for j in range(k) if full[j] <= rank_tol * max(full.max(), 1e-300)]
        coefs = [vh[j].conj() / norms for j in null] if vh.shape[0] == k else []
    raw = [sh.assemble(c) for c in coefs]
    basis = _orthonormalize(raw, ctx)
    exps = tuple((mu, M) for mu, M in sh.allowed)
    fns, res = [], []
    for b in basis:
        r = ctx.norm(apply_operator(spec, b, ctx)) / max(ctx.norm(b), 1e-300)
        if r > ctx.tol_solve:
            raise ModelError(f"kernel residual {r:.3e} exceeds tol_solve={ctx.tol_solve:g}")
        fns.append(HalfLineFn(ctx.grid, b, _expansion_exponents(exps)))
        res.append(r)
    return KernelResult(fns, sv, res)


def _expansion_exponents(allowed, depth: int = 4) -> tuple[tuple[complex, int], ...]:
    """Exponents of admissible solutions: the index set generated by the admissible roots."""
    if not allowed:
        return ()
    pairs = [(ComplexExact.of(_rational_or_float(mu)), M) for mu, M in allowed]
    try:
        E, _ = simple_set_from_roots(pairs)
    except Exception:
        return tuple(allowed)
    top = min(mu.real for mu, _ in allowed) + depth
    out = []
    for g in enumerate_up_to(E, _frac(top)):
        out.append((complex(float(g.alpha.re), float(g.alpha.im)), g.l))
    return tuple(out)


def _frac(x: float):
    from fractions import Fraction
    return Fraction(x).limit_denominator(10**6)


def _rational_or_float(z: complex) -> str:
    from fractions import Fraction
    re = Fraction(z.real).limit_denominator(10**6)
    im = Fraction(z.imag).limit_denominator(10**6)
    return f"{re}+{im}i" if im >= 0 else f"{re}{im}i"


# trace family, Calderon space, Poisson map ------------------------------------------------------

@dataclass
class TraceFamily:
    matrix: np.ndarray
    kernel: KernelResult
    traces: np.ndarray
    roots: tuple[tuple[complex, int], ...]

    def __call__(self, u: Union[HalfLineFn, np.ndarray]) -> np.ndarray:
        vals = u.values if isinstance(u, HalfLineFn) else np.asarray(u)
        return self.matrix @ vals


def kernel_traces(kernel: KernelResult, roots: Sequence[tuple[complex, int]], tol_asym: float) -> np.ndarray:
    rows = sum(int(M) + 1 for _, M in roots)
    T = np.zeros((rows, kernel.dimension), dtype=complex)
    for i, phi in enumerate(kernel.basis):
        T[:, i] = np.concatenate([trace_coefficients(phi, (mu, M), tol_asym) for mu, M in roots]) \
            if roots else np.zeros(0)
    return T


def projector(kernel: KernelResult, ctx: ModelContext) -> np.ndarray:
    """Dense weighted-orthogonal projector onto the kernel (grid x grid)."""
    w = ctx.weights()
    Pm = np.zeros((len(ctx.grid), len(ctx.grid)), dtype=complex)
    for phi in kernel.basis:
        Pm += np.outer(phi.values, np.conj(phi.values) * w)
    return Pm


def bessel_trace_family(spec: BesselSpec, ctx: ModelContext, roots: Sequence[tuple[complex, int]]) -> TraceFamily:
    """u -> sum_i <u, phi_i> trace(phi_i), the trace of the kernel projection."""
    ker = solve_bessel_kernel(spec, ctx)
    if ker.dimension == 0:
        raise ModelError("the kernel is trivial; there is no trace family")
    T = kernel_traces(ker, roots, ctx.tol_asym)
    w = ctx.weights()
    Phi = np.stack([np.conj(p.values) * w for p in ker.basis], axis=0)
    return TraceFamily(T @ Phi, ker, T, tuple(roots))


def calderon_space(spec: BesselSpec, ctx: ModelContext, roots: Sequence[tuple[complex, int]],
                   rank_tol: float = 1e-8) -> np.ndarray:
    """Orthonormal columns spanning the range of the trace family."""
    ker = solve_bessel_kernel(spec, ctx)
    rows = sum(int(M) + 1 for _, M in roots)
    if ker.dimension == 0:
        return np.zeros((rows, 0), dtype=complex)
    T = kernel_traces(ker, roots, ctx.tol_asym)
    U, sv, _ = np.linalg.svd(T, full_matrices=False)
    rank = int(np.sum(sv > rank_tol * max(sv.max(), 1e-300)))
    if rank != ker.dimension:
        raise InjectivityError(f"trace has rank {rank} on a kernel of dimension {ker.dimension}")
    return U[:, :rank]


def poisson_map(fam: TraceFamily, psi: np.ndarray) -> np.ndarray:
    """The kernel element whose trace is the Calderon projection of psi."""
    coef, *_ = np.linalg.lstsq(fam.traces, np.asarray(psi, dtype=complex), rcond=None)
    return sum((c * p.values for c, p in zip(coef, fam.kernel.basis)), np.zeros(len(fam.kernel.basis[0].values), complex))


# generalized inverse and the model boundary problem ---------------------------------------------------

def _dense(spec, y0: np.ndarray, s_from: float, s_to: float):
    """Dense solutions for each column of y0; returns t-array -> (len(t), m, k) states."""
    sols = []
    for j in range(y0.shape[1]):
        sol = solve_ivp(_rhs(spec), (s_from, s_to), y0[:, j], method="DOP853",
                        dense_output=True, rtol=1e-11, atol=1e-30)
        if not sol.success:
            raise ModelError(f"ODE integration failed: {sol.message}")
        sols.append(sol.sol)
    m = spec.m

    def ev(t):
        t = np.atleast_1d(t)
        if not sols:
            return np.zeros((len(t), m, 0), dtype=complex)
        return np.stack([f(t).T for f in sols], axis=-1)

    return ev


def _vector_forcing(v) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(v, HalfLineFn) and v.func is None:
        s = np.log(v.x)
        re, im = CubicSpline(s, v.values.real), CubicSpline(s, v.values.imag)
        lo, hi = s[0], s[-1]

        def f(t):
            t = np.atleast_1d(t)
            out = re(t) + 1j * im(t)
            out[(t < lo) | (t > hi)] = 0
            return out
        return f
    g = v.func if isinstance(v, HalfLineFn) else v
    return lambda t: np.asarray(g(np.exp(np.atleast_1d(t))), dtype=complex)


def _solve_window(spec: BesselSpec, ctx: ModelContext, force) -> tuple[float, float]:
    s = ctx.s
    if not spec.has_eta_terms():
        return s[0], s[-1]
    dec = [l for l in spec.far_field_roots() if l.real < -1e-12]
    rate = min(-l.real for l in dec) if dec else 1.0
    vals = np.abs(force(s)) * ctx.grid ** (-ctx.delta)
    big = np.nonzero(vals > 1e-16 * max(vals.max(), 1e-300))[0]
    x_end = max(40.0 / rate, ctx.grid[big[-1]] if len(big) else 0.0)
    x_end = min(x_end, 500.0 / rate, ctx.grid[-1])
    return s[0], math.log(x_end)


def _complete_basis(R: np.ndarray, Lm: np.ndarray, n_allowed: int, need: int) -> np.ndarray:
    """Coefficients (in terms of the columns of Lm) of `need` directions completing span(R)."""
    K = Lm.shape[1]
    scale = 1.0 / np.maximum(np.linalg.norm(Lm, axis=0), 1e-300)
    chosen = R / np.maximum(np.linalg.norm(R, axis=0), 1e-300) if R.shape[1] else np.zeros((Lm.shape[0], 0))
    coefs: list[np.ndarray] = []
    for group in (list(range(n_allowed)), list(range(n_allowed, K))):
        if len(coefs) >= need or not group:
            continue
        Q = np.linalg.qr(chosen)[0] if chosen.shape[1] else np.zeros((Lm.shape[0], 0))
        block = Lm[:, group] * scale[group]
        comp = block - Q @ (Q.conj().T @ block)
        _, sv, vh = np.linalg.svd(comp, full_matrices=False)
        for i in range(len(sv)):
            if len(coefs) >= need or sv[i] < 1e-10:
                break
            c = np.zeros(K, dtype=complex)
            c[group] = scale[group] * vh[i].conj()
            coefs.append(c)
            chosen = np.concatenate([chosen, (Lm @ c)[:, None]], axis=1)
    if len(coefs) < need:
        raise ModelError("cannot complete a fundamental system from the computed modes")
    return np.stack(coefs, axis=1) if coefs else np.zeros((K, 0), dtype=complex)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def generalized_inverse(spec: BesselSpec, ctx: ModelContext, v: Union[HalfLineFn, Callable],
                        kernel: Optional[KernelResult] = None) -> np.ndarray:
    """Solution of N_eta u = v in x^delta L_b^2, orthogonal to the kernel.

    Variation of parameters over a fundamental system split into modes that
    decay as x -> oo (their coefficients are accumulated from the left end) and
    modes admissible at x -> 0 (accumulated from the right end).  Coefficients
    are carried scaled by the mode norms, so every growth factor that occurs is
    a ratio rho(s)/rho(s') <= 1.
    """
    force = _vector_forcing(v)
    roots, allowed = _admissible_roots(spec, ctx.delta)
    s0, s1 = _solve_window(spec, ctx, force)
    m = spec.m
    disallowed = [(mu, M) for mu, M in roots if mu.real <= ctx.delta]
    modes = _left_states(spec, allowed + disallowed, s0)
    n_allowed = sum(M + 1 for _, M in allowed)
    left = _dense(spec, modes, s0, s1)
    if spec.has_eta_terms():
        dec = [l for l in spec.far_field_roots() if l.real < -1e-12]
        yr = np.array([_exp_state(l, math.exp(s1), m) for l in dec], dtype=complex).T.reshape(m, len(dec))
        right = _dense(spec, yr / np.linalg.norm(yr, axis=0), s1, s0)
        k_r = len(dec)
    else:
        right, k_r = _dense(spec, np.zeros((m, 0)), s0, s1), 0
    need = m - k_r
    s_ref = min(max(-math.log(spec.eta_norm), s0 + 1.0), s1 - 0.5)
    Cg = _complete_basis(right(s_ref)[0], left(s_ref)[0], n_allowed, need)

    def fundamental(t):
        return np.concatenate([left(t) @ Cg, right(t)], axis=2)

    s = ctx.s
    win = np.nonzero((s >= s0 - 1e-12) & (s <= s1 + 1e-12))[0]
    tw = s[win]
    Yk = fundamental(tw)
    rho = np.linalg.norm(Yk, axis=1)
    # integrals of c' = Y^-1 e_m f / c_m over each grid cell, 4-point Gauss-Legendre
    a, b = tw[:-1], tw[1:]
    mid, half = (a + b) / 2, (b - a) / 2
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    Yn = fundamental(nodes)
    e = np.zeros((len(nodes), m), dtype=complex)
    e[:, -1] = force(nodes) / spec.ode_coefficients(nodes)[m]
    dc = np.linalg.solve(Yn, e[:, :, None])[:, :, 0]
    cell = (dc.reshape(len(mid), len(_GL_NODES), m) * _GL_WEIGHTS[None, :, None]).sum(axis=1) * half[:, None]
    chat = np.zeros((len(tw), m), dtype=complex)
    for k in range(len(tw) - 2, -1, -1):
        chat[k, :need] = rho[k, :need] / rho[k + 1, :need] * chat[k + 1, :need] - rho[k, :need] * cell[k, :need]
    for k in range(1, len(tw)):
        chat[k, need:] = rho[k, need:] / rho[k - 1, need:] * chat[k - 1, need:] + rho[k, need:] * cell[k - 1, need:]
    u = np.zeros(len(s), dtype=complex)
    u[win] = np.sum(Yk[:, 0, :] / rho * chat, axis=1)
    ker = kernel if kernel is not None else solve_bessel_kernel(spec, ctx)
    for phi in ker.basis:
        u = u - ctx.inner(u, phi.values) * phi.values
    return u


@dataclass
class BVPResult:
    u: HalfLineFn
    ode_residual: float
    boundary_residual: float


def model_bvp_solve(spec: BesselSpec, ctx: ModelContext, roots: Sequence[tuple[complex, int]],
                    sigma_q: np.ndarray, k0: np.ndarray, v: Union[HalfLineFn, Callable],
                    phi: np.ndarray, fam: Optional[TraceFamily] = None) -> BVPResult:
    """u = G v + b k0 phi, solving N_eta u = v and sigma_q trace(u) = phi."""
    fam = fam if fam is not None else bessel_trace_family(spec, ctx, roots)
    sigma_q = np.atleast_2d(np.asarray(sigma_q, dtype=complex))
    k0 = np.atleast_2d(np.asarray(k0, dtype=complex))
    C = calderon_space(spec, ctx, roots)
    restricted = sigma_q @ C
    cond = np.linalg.cond(restricted)
    if not np.isfinite(cond) or cond > 1e8:
        raise ModelError(f"boundary symbol restricted to the Calderon space is ill-conditioned (cond={cond:.3e})")
    idem = k0 @ sigma_q
    proj_c = C @ C.conj().T
    if np.max(np.abs(idem @ idem - idem)) > 1e-8 or np.max(np.abs(idem @ proj_c - proj_c)) > 1e-8:
        raise ModelError("k0 sigma_q is not an idempotent onto the Calderon space")
    u = generalized_inverse(spec, ctx, v, fam.kernel)
    u = u + poisson_map(fam, idem @ (k0 @ np.asarray(phi, dtype=complex)))
    vv = v.values if isinstance(v, HalfLineFn) else np.asarray(v(ctx.grid), dtype=complex)
    r_ode = ctx.norm(apply_operator(spec, u, ctx) - vv * _interior_mask(spec, ctx)) / max(ctx.norm(vv), 1e-300)
    r_bc = float(np.linalg.norm(sigma_q @ fam(u) - phi))
    return BVPResult(HalfLineFn(ctx.grid, u, fam.kernel.basis[0].exponents if fam.kernel.basis else ()), r_ode, r_bc)


def _interior_mask(spec, ctx):
    m = np.ones(len(ctx.grid))
    m[: 2 * spec.m] = 0
    m[-2 * spec.m:] = 0
    return m


def calderon_inverse(sigma_q: np.ndarray, C: np.ndarray) -> np.ndarray:
    """k0 = C (sigma_q C)^(-1), so k0 sigma_q projects onto the Calderon space along ker sigma_q."""
    return C @ np.linalg.inv(np.atleast_2d(sigma_q) @ C)


# closed-form test functions -----------------------------------------------------------------------

@dataclass(frozen=True)
class ExpPoly:
    """x^a exp(-b x) p(x) with p a polynomial (ascending coefficients)."""

    a: complex
    b: float
    p: tuple[complex, ...]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x ** self.a * np.exp(-self.b * x) * P.polyval(x, np.array(self.p, dtype=complex))

    def euler(self) -> "ExpPoly":
        """x d/dx."""
        p = np.array(self.p, dtype=complex)
        q = P.polyadd(P.polyadd(self.a * p, -self.b * P.polymulx(p)), P.polymulx(P.polyder(p)) if len(p) > 1 else [0])
        return ExpPoly(self.a, self.b, tuple(q))

    def times_x(self, k: int, c: complex = 1) -> "ExpPoly":
        return ExpPoly(self.a, self.b, tuple([0] * k + [c * v for v in self.p]))

    def __add__(self, other: "ExpPoly") -> "ExpPoly":
        if abs(self.a - other.a) > 1e-15 or self.b != other.b:
            raise ValueError("ExpPoly sums need equal exponents")
        return ExpPoly(self.a, self.b, tuple(P.polyadd(np.array(self.p, complex), np.array(other.p, complex))))

    def dilate(self, t: float) -> "ExpPoly":
        """x -> f(t x)."""
        p = tuple(c * t ** (self.a + k) for k, c in enumerate(self.p))
        return ExpPoly(self.a, self.b * t, p)


def apply_exact(spec: BesselSpec, f: ExpPoly) -> ExpPoly:
    """N_eta f in closed form."""
    out = ExpPoly(f.a, f.b, (0,))
    for k, poly in spec.potential_polys().items():
        g = f
        acc = ExpPoly(f.a, f.b, (0,))
        for i, c in enumerate(poly):
            if c != 0:
                acc = acc + ExpPoly(g.a, g.b, tuple(c * v for v in g.p))
            g = g.euler()
        out = out + acc.times_x(k)
    return out


def function_battery(ctx: ModelContext, count: int = 20, seed: int = 0) -> list[ExpPoly]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a = ctx.delta + 1.0 + 1.5 * rng.random()
        b = 0.5 + 1.5 * rng.random()
        p = tuple(rng.normal(size=3) + 1j * rng.normal(size=3))
        out.append(ExpPoly(complex(a), float(b), p))
    return out


# homogeneity checks -------------------------------------------------------------------------

def verify_homogeneity(family: str, spec: BesselSpec, ctx: ModelContext, t: float,
                       roots: Sequence[tuple[complex, int]] = (), count: int = 6, seed: int = 0) -> float:
    """Sup-norm residual of the dilation law for family in {L, G, trace, poisson}."""
    if t <= 0:
        raise ModelError("t must be positive")
    battery = function_battery(ctx, count, seed)
    x = ctx.grid
    spec_t = spec.scaled(t)
    interior = (x > 1e-5) & (x < 50.0)
    if family == "L":
        res = 0.0
        for f in battery:
            lhs = apply_exact(spec_t, f)(x)
            rhs = apply_exact(spec, f.dilate(1 / t)).dilate(t)(x)
            res = max(res, float(np.max(np.abs(lhs - rhs) * x ** (-ctx.delta))))
        return res
    if family == "G":
        res = 0.0
        for f in battery:
            v = apply_exact(spec_t, f)
            lhs = generalized_inverse(spec_t, ctx, v)
            inner = generalized_inverse(spec, ctx, v.dilate(1 / t))
            rhs = HalfLineFn(x, inner).dilate(t).values
            res = max(res, float(np.max(np.abs(lhs - rhs)[interior] * x[interior] ** (-ctx.delta))))
        return res
    S = twist_for_roots(roots)
    fam = bessel_trace_family(spec, ctx, roots)
    fam_t = fam if t == 1 else bessel_trace_family(spec_t, ctx, roots)
    Tt = twist_pow(t, S)
    if family == "trace":
        res = 0.0
        for f in battery:
            lhs = fam_t(f(x))
            rhs = Tt @ fam(f.dilate(1 / t)(x))
            res = max(res, float(np.max(np.abs(lhs - rhs))))
        return res
    if family == "poisson":
        rng = np.random.default_rng(seed)
        res = 0.0
        for _ in range(count):
            psi = fam.traces @ (rng.normal(size=fam.kernel.dimension) + 0j)
            lhs = poisson_map(fam_t, Tt @ psi)
            rhs = HalfLineFn(x, poisson_map(fam, psi)).dilate(t).values
            res = max(res, float(np.max(np.abs(lhs - rhs)[interior] * x[interior] ** (-ctx.delta))))
        return res
    raise ModelError(f"unknown family {family!r}")


# the closed-form example --------------------------------------------------------------------

def modified_bessel_spec(eta: Sequence[float] = (1.0,), shift: float = 0.25) -> BesselSpec:
    """(x d/dx)^2 - x^2 |eta|^2 - shift, i.e. (x d/dx)^2 + (x d/dy)^2 - shift after Fourier transform."""
    n = len(eta)
    coeffs: dict = {(2, (0,) * n): 1.0, (0, (0,) * n): -shift}
    for i in range(n):
        alpha = tuple(2 if k == i else 0 for k in range(n))
        coeffs[(0, alpha)] = 1.0
    return BesselSpec(2, coeffs, tuple(eta))


def k_half(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.pi / (2 * x)) * np.exp(-x)
