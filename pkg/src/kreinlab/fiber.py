"""Per-mode (fiber) model for A = -Laplace + m^2 on flat products.

The domain is ``T^{n-1} x (0, ell)`` (slab) or ``T^{n-1} x (0, inf)``
(half-cylinder), with ``T = R / 2 pi Z``. The boundary ``Sigma`` is the face
``x_n = 0``; the slab always carries homogeneous Dirichlet data at
``x_n = ell``. Expanding in cross-section Fourier modes ``xi in Z^{n-1}``,
every operator decouples into the 1D problem

    -u'' + (a - lam) u = f,    a = |xi|^2 + m^2,

with the normal trace ``nu1 u = u'(0)`` (interior-pointing derivative). With
this sign Green's formula reads
``(Au, v) - (u, Av) = nu1 u conj(gamma0 v) - gamma0 u conj(nu1 v)``.

Closed forms (DtN symbol, Poisson-fiber norm, Dirichlet resolvent) live next
to an independent second-order finite-difference oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Union

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import LinAlgError, eigvalsh_tridiagonal, solve_banded

from kreinlab._expquad import forward_integrals
from kreinlab.errors import DomainError, NearEigenvalueError

SLAB = "slab"
HALF_CYLINDER = "half-cylinder"

FiberFunction = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]

# |1 - exp(-2 kappa ell)| below this is treated as a pole of coth
_POLE_TOL = 1e-12


@dataclass(frozen=True)
class Geometry:
    kind: Literal["slab", "half-cylinder"] = SLAB
    n: int = 2
    ell: float = 1.0

    def __post_init__(self):
        if self.kind not in (SLAB, HALF_CYLINDER):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError("dimension n must be an integer >= 2")
        if self.kind == SLAB and not self.ell > 0:
            raise ValueError("slab length ell must be positive")

    @property
    def is_slab(self) -> bool:
        return self.kind == SLAB

    @property
    def boundary_dim(self) -> int:
        return self.n - 1


@dataclass(frozen=True)
class ModelOperator:
    """A = -Laplace + msq; houses A, A_gamma and A_max through the fiber solvers."""

    msq: float = 1.0

    def __post_init__(self):
        if not self.msq > 0:
            raise ValueError("msq must be positive")

    def mode(self, xi) -> "Mode":
        return Mode(tuple(int(v) for v in np.atleast_1d(xi)), self.msq)


@dataclass(frozen=True)
class Mode:
    xi: tuple
    msq: float

    @property
    def a(self) -> float:
        return float(sum(v * v for v in self.xi)) + self.msq

    def kappa(self, lam) -> complex:
        return complex(kappa(self.a, lam))


@dataclass(frozen=True)
class Discretization1D:
    """Uniform grid with N cells on (0, ell) or on the truncated half-line (0, x_cut)."""

    N: int = 10_000
    x_cut: float | None = None

    def __post_init__(self):
        if self.N < 4:
            raise ValueError("grid needs at least 4 cells")

    def length(self, geom: Geometry, kap: complex) -> float:
        if geom.is_slab:
            return geom.ell
        if self.x_cut is not None:
            return float(self.x_cut)
        if not complex(kap).real > 0:
            raise DomainError("lambda lies on the branch cut of the fiber")
        return max(10.0 / complex(kap).real, 10.0)

    def grid(self, geom: Geometry, kap: complex = 1.0) -> np.ndarray:
        return np.linspace(0.0, self.length(geom, kap), self.N + 1)

    def refined(self) -> "Discretization1D":
        return Discretization1D(2 * self.N, self.x_cut)


@dataclass
class FiberSolution:
    x: np.ndarray
    values: np.ndarray
    gamma0: complex
    nu1: complex

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def l2_norm(self) -> float:
        return math.sqrt(_simpson(np.abs(self.values) ** 2, self.h).real)


@dataclass(frozen=True)
class Dirichlet:
    """gamma0 u = value."""

    value: complex = 0.0


@dataclass(frozen=True)
class Robin:
    """nu1 u = b gamma0 u + value; a Neumann-type condition with multiplier b at one mode."""

    b: complex = 0.0
    value: complex = 0.0


NeumannType = Robin


# ---------------------------------------------------------------------------
# closed forms (vectorized over a = |xi|^2 + msq)


def kappa(a, lam):
    """Principal square root of a - lam (Re >= 0)."""
    return np.sqrt(np.asarray(a, dtype=complex) - lam)


def _exp2(kap, length):
    return np.exp(-2.0 * kap * length)


def _check_cut(a, lam, geom: Geometry):
    lam_c = complex(lam)
    if geom.is_slab or lam_c.imag != 0.0:
        return
    bad = np.asarray(a) <= lam_c.real
    if np.any(bad):
        raise DomainError("lambda lies on the branch cut [a, inf) of the fiber", lam=lam)


def _coth_minus_one(kap, ell, lam=None):
    e = _exp2(kap, ell)
    denom = 1.0 - e
    if np.any(np.abs(denom) < _POLE_TOL):
        raise NearEigenvalueError("lambda is a Dirichlet eigenvalue of the slab fiber", lam=lam)
    return 2.0 * e / denom


def dtn_values(a, lam, geom: Geometry):
    """p^lam(a): nu1 of the (A - lam)-null solution with gamma0 = 1."""
    _check_cut(a, lam, geom)
    kap = kappa(a, lam)
    if not geom.is_slab:
        return -kap
    return -kap * (1.0 + _coth_minus_one(kap, geom.ell, lam))


def dtn_difference(a, lam, geom: Geometry):
    """q^lam = p^0 - p^lam, evaluated without cancellation for large a."""
    _check_cut(a, lam, geom)
    a = np.asarray(a, dtype=float)
    k0 = np.sqrt(a).astype(complex)
    kl = kappa(a, lam)
    # kl - k0 = -lam / (kl + k0)
    diff = -lam / (kl + k0)
    if geom.is_slab:
        diff = diff + kl * _coth_minus_one(kl, geom.ell, lam) - k0 * _coth_minus_one(k0, geom.ell)
    return diff


def dtn_symbol(mode: Mode, lam, geom: Geometry) -> complex:
    """DtN symbol p^lam(xi) for one mode.

    Half-cylinder: ``-kappa``; slab: ``-kappa coth(kappa ell)``. On the slab
    the symbol is meromorphic in lam, so real lam above ``a`` is allowed
    (continuation); only the Dirichlet fiber eigenvalues are excluded.

    Raises
    ------
    DomainError
        lam on the half-cylinder branch cut, or at a slab Dirichlet eigenvalue.
    """
    try:
        return complex(dtn_values(mode.a, lam, geom))
    except DomainError as exc:
        raise type(exc)(str(exc).split(" (")[0], mode=mode.xi, lam=lam) from None


def _normsq_values(a, lam, geom: Geometry):
    kap = np.real(kappa(a, lam))
    if not geom.is_slab:
        return 1.0 / (2.0 * kap)
    x = kap * geom.ell
    e = np.exp(-2.0 * x)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        coth = (1.0 + e) / (1.0 - e)
        csch2 = 4.0 * e / (1.0 - e) ** 2
        g = coth - x * csch2
    # d/dx (x coth x) by its Taylor series where the closed form cancels
    small = x < 0.1
    if np.any(small):
        xs = x[small] if np.ndim(x) else x
        x2 = xs * xs
        series = xs * (2 / 3 + x2 * (-4 / 45 + x2 * (12 / 945 + x2 * (-8 / 4725 + x2 * 20 / 93555))))
        if np.ndim(g):
            g[small] = series
        else:
            g = series
    return g / (2.0 * kap)


def poisson_normsq_values(a, lam: float, geom: Geometry):
    """||k^lam||^2 for real lam below every fiber's spectrum (vectorized)."""
    lam_c = complex(lam)
    if lam_c.imag != 0.0:
        raise DomainError("Poisson fiber norm needs real lambda", lam=lam)
    a = np.asarray(a, dtype=float)
    if np.any(a <= lam_c.real):
        raise DomainError("lambda must lie below the fiber spectrum", lam=lam)
    return _normsq_values(a, lam_c.real, geom)


def poisson_fiber_normsq(mode: Mode, lam: float, geom: Geometry) -> float:
    """Squared L2 norm of the Poisson fiber k^lam with gamma0 k^lam = 1.

    Half-cylinder ``1 / (2 kappa)``; slab
    ``(sinh(2 kappa ell) - 2 kappa ell) / (4 kappa sinh^2(kappa ell))``.
    """
    try:
        return float(poisson_normsq_values(mode.a, lam, geom))
    except DomainError as exc:
        raise DomainError(str(exc).split(" (")[0], mode=mode.xi, lam=lam) from None


def poisson_fiber(mode: Mode, lam, geom: Geometry) -> Callable[[np.ndarray], np.ndarray]:
    """The Poisson fiber k^lam (null solution of A - lam, gamma0 = 1) as a callable."""
    kap = mode.kappa(lam)
    if not geom.is_slab:
        _check_cut(mode.a, lam, geom)
        return lambda x: np.exp(-kap * np.asarray(x, dtype=float))
    ell = geom.ell
    _coth_minus_one(kap, ell, lam)
    e = np.exp(-2.0 * kap * ell)

    def k(x):
        x = np.asarray(x, dtype=float)
        return (np.exp(-kap * x) - np.exp(-kap * (2.0 * ell - x))) / (1.0 - e)

    return k


# ---------------------------------------------------------------------------
# fiber functions and quadrature


def _simpson(y: np.ndarray, h: float) -> complex:
    """Composite Simpson rule on a uniform grid (odd interval counts get a 3/8 tail)."""
    y = np.asarray(y)
    n = y.size - 1
    if n < 2:
        return h * 0.5 * (y[0] + y[-1])
    if n % 2 == 0:
        return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())
    head = _simpson(y[:-3], h)
    tail = 3.0 * h / 8.0 * (y[-4] + 3.0 * y[-3] + 3.0 * y[-2] + y[-1])
    return head + tail


def inner(u: np.ndarray, v: np.ndarray, h: float) -> complex:
    """L2(0, X) inner product (u, v) = int u conj(v) by Simpson's rule."""
    return complex(_simpson(np.asarray(u) * np.conj(v), h))


def as_callable(f: FiberFunction, x: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Callables pass through; grid arrays are interpolated by a cubic spline."""
    if callable(f):
        return f
    f = np.asarray(f)
    if f.shape != x.shape:
        raise ValueError(f"grid function has {f.size} samples, grid has {x.size}")
    spline = CubicSpline(x, f)
    return spline


def _sample(f: FiberFunction, x: np.ndarray):
    fn = as_callable(f, x)
    mid = 0.5 * (x[:-1] + x[1:])
    nodes = np.broadcast_to(np.asarray(fn(x), dtype=complex), x.shape)
    mids = np.broadcast_to(np.asarray(fn(mid), dtype=complex), mid.shape)
    return nodes, mids


# ---------------------------------------------------------------------------
# Dirichlet resolvent via the explicit Green's function


def _dirichlet_resolvent_grid(a, lam, f: FiberFunction, x: np.ndarray, geom: Geometry):
    kap = complex(kappa(a, lam))
    if kap.real <= 0.0:
        raise DomainError("lambda lies on the branch cut of the fiber", lam=lam)
    h = float(x[1] - x[0])
    nodes, mids = _sample(f, x)
    F, G = forward_integrals(nodes, mids, h, kap)
    Fb, Gb = forward_integrals(nodes[::-1], mids[::-1], h, kap)
    Fb, Gb = Fb[::-1], Gb[::-1]
    if geom.is_slab:
        length = x[-1]
        e = np.exp(-2.0 * kap * length)
        if abs(1.0 - e) < _POLE_TOL:
            raise NearEigenvalueError("lambda is a Dirichlet eigenvalue of the slab fiber", lam=lam)
        near = 1.0 - np.exp(-2.0 * kap * (length - x))
        u = (near * (F - G) + (-np.expm1(-2.0 * kap * x)) * (Fb - Gb)) / (2.0 * kap * (1.0 - e))
        nu1 = (Fb[0] - Gb[0]) / (1.0 - e)
    else:
        u = ((F - G) + (-np.expm1(-2.0 * kap * x)) * Fb) / (2.0 * kap)
        nu1 = Fb[0]
    return u, complex(nu1)


def dirichlet_resolvent_fiber(
    mode: Mode,
    lam,
    f: FiberFunction,
    geom: Geometry,
    disc: Discretization1D = Discretization1D(),
) -> FiberSolution:
    """Fiber of (A_gamma - lam)^{-1} f by the explicit Green's function.

    ``f`` is a callable of ``x`` or an array sampled on ``disc.grid``. The
    Green's function is integrated exactly against the piecewise quadratic
    interpolant of ``f``; ``nu1`` of the result is ``int f k^lam``.
    """
    kap = mode.kappa(lam)
    try:
        x = disc.grid(geom, kap)
        u, nu1 = _dirichlet_resolvent_grid(mode.a, lam, f, x, geom)
    except DomainError as exc:
        raise type(exc)(str(exc).split(" (")[0], mode=mode.xi, lam=lam) from None
    return FiberSolution(x, u, 0j, nu1)


# ---------------------------------------------------------------------------
# finite-difference oracle


def _fd_system(shift: complex, bc, x: np.ndarray, f_nodes: np.ndarray):
    """Banded matrix (ab), rhs and first unknown index for the FD fiber problem.

    Interior rows are ``(-u_{i-1} + 2u_i - u_{i+1})/h^2 + shift u_i = f_i``.
    Robin/Neumann-type rows come from a ghost point and are halved so that
    the matrix is symmetric with mass weights (1/2, 1, ..., 1).
    """
    h = float(x[1] - x[0])
    N = x.size - 1
    ih2 = 1.0 / h**2
    if isinstance(bc, Dirichlet):
        m = N - 1
        diag = np.full(m, 2.0 * ih2 + shift, dtype=complex)
        off = np.full(m - 1, -ih2, dtype=complex)
        rhs = np.array(f_nodes[1:N], dtype=complex)
        rhs[0] += complex(bc.value) * ih2
        first = 1
    elif isinstance(bc, Robin):
        m = N
        diag = np.full(m, 2.0 * ih2 + shift, dtype=complex)
        diag[0] = ih2 + complex(bc.b) / h + 0.5 * shift
        off = np.full(m - 1, -ih2, dtype=complex)
        rhs = np.array(f_nodes[:N], dtype=complex)
        rhs[0] = 0.5 * f_nodes[0] - complex(bc.value) / h
        first = 0
    else:
        raise TypeError(f"unsupported boundary condition {bc!r}")
    ab = np.zeros((3, m), dtype=complex)
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    return ab, rhs, first


def _fd_solve(a, lam, bc, f: FiberFunction, x: np.ndarray):
    f_nodes = np.broadcast_to(np.asarray(as_callable(f, x)(x), dtype=complex), x.shape)
    shift = complex(a) - complex(lam)
    ab, rhs, first = _fd_system(shift, bc, x, f_nodes)
    try:
        sol = solve_banded((1, 1), ab, rhs)
    except LinAlgError:
        raise NearEigenvalueError("finite-difference fiber matrix is singular", lam=lam) from None
    if not np.all(np.isfinite(sol)):
        raise NearEigenvalueError("finite-difference fiber matrix is singular", lam=lam)
    u = np.zeros(x.size, dtype=complex)
    u[first : first + sol.size] = sol
    h = float(x[1] - x[0])
    if isinstance(bc, Dirichlet):
        u[0] = complex(bc.value)
        # ghost value from the differential equation at x = 0
        nu1 = (u[1] - u[0]) / h + 0.5 * h * (f_nodes[0] - shift * u[0])
    else:
        nu1 = complex(bc.b) * u[0] + complex(bc.value)
    _check_near_eigenvalue(ab, rhs, sol)
    return u, complex(nu1)


def _check_near_eigenvalue(ab, rhs, sol, growth: float = 1e10):
    # amplification ||u|| / ||rhs|| far beyond the inverse of the smallest
    # structural scale of the matrix signals (near) singularity
    scale = np.max(np.abs(ab[1]))
    rnorm = np.linalg.norm(rhs)
    if rnorm > 0 and np.linalg.norm(sol) * scale > growth * rnorm * sol.size:
        raise NearEigenvalueError("lambda is (near) an eigenvalue of the finite-difference fiber")


def oracle_solve(
    mode: Mode,
    lam,
    bc,
    f: FiberFunction,
    disc: Discretization1D,
    geom: Geometry,
    *,
    richardson: bool = False,
) -> FiberSolution:
    """Finite-difference solution of (-d^2 + a - lam) u = f with one boundary condition at x = 0.

    ``bc`` is :class:`Dirichlet` (``gamma0 u = value``) or :class:`Robin`
    (``nu1 u = b gamma0 u + value``); the far end carries homogeneous
    Dirichlet data. With ``richardson=True`` the grid is doubled and the two
    second-order solutions are combined to fourth order at the coarse nodes
    (``f`` must then be a callable).

    Raises
    ------
    NearEigenvalueError
        The discrete fiber operator is singular at ``lam``.
    """
    if disc.N < 100:
        raise ValueError("oracle grid needs N >= 100")
    kap = mode.kappa(lam)
    try:
        x = disc.grid(geom, kap)
        u, nu1 = _fd_solve(mode.a, lam, bc, f, x)
        if richardson:
            if not callable(f):
                raise ValueError("Richardson extrapolation needs f as a callable")
            xf = np.linspace(0.0, x[-1], 2 * disc.N + 1)
            uf, nu1f = _fd_solve(mode.a, lam, bc, f, xf)
            u = (4.0 * uf[::2] - u) / 3.0
            nu1 = (4.0 * nu1f - nu1) / 3.0
    except DomainError as exc:
        raise type(exc)(str(exc).split(" (")[0], mode=mode.xi, lam=lam) from None
    return FiberSolution(x, u, complex(u[0]), nu1)


def fd_tridiagonal(a: float, bc, x: np.ndarray):
    """Symmetrized FD fiber operator W^{-1/2} K W^{-1/2} as (diagonal, offdiagonal, weights).

    ``K u = mu W u`` is the discrete eigenproblem of ``-d^2 + a`` with the
    given boundary condition at 0 and Dirichlet at the far end. The weights
    are the trapezoid mass weights of the unknowns, so ``h * sum(w |u|^2)``
    is the discrete L2 norm.
    """
    if isinstance(bc, Robin) and complex(bc.b).imag != 0.0:
        raise ValueError("fiber eigenvalues need a real Robin coefficient")
    N = x.size - 1
    dummy = np.zeros(x.size)
    ab, _, _ = _fd_system(complex(a), bc, x, dummy)
    diag = ab[1].real.copy()
    off = ab[0, 1:].real.copy()
    w = np.ones(diag.size)
    if isinstance(bc, Robin):
        w[0] = 0.5
    sw = np.sqrt(w)
    return diag / w, off / (sw[:-1] * sw[1:]), w


def fiber_eigenvalues(
    mode: Mode,
    bc,
    disc: Discretization1D,
    geom: Geometry = Geometry(),
    *,
    count: int | None = None,
    refine: bool = False,
) -> np.ndarray:
    """Ascending eigenvalues of the discretized slab fiber operator.

    ``count`` limits the output to the lowest eigenvalues. ``refine``
    Richardson-extrapolates the lowest ``count`` eigenvalues from grids N and
    2N (second-order scheme, so the combination is ``(4 mu_2N - mu_N) / 3``).
    """
    if not geom.is_slab:
        raise DomainError("fiber eigenvalues need the slab (discrete fiber spectrum)")
    bc = Robin(complex(bc.b).real) if isinstance(bc, Robin) else Dirichlet()

    def _eigs(N):
        x = np.linspace(0.0, geom.ell, N + 1)
        d, e, _ = fd_tridiagonal(mode.a, bc, x)
        if count is None:
            return eigvalsh_tridiagonal(d, e)
        k = min(count, d.size)
        return eigvalsh_tridiagonal(d, e, select="i", select_range=(0, k - 1))

    mu = _eigs(disc.N)
    if refine:
        if count is None:
            raise ValueError("refine needs an explicit count")
        mu = (4.0 * _eigs(2 * disc.N) - mu) / 3.0
    return np.sort(mu)


def fd_lowest_modes(a: float, bc, x: np.ndarray, count: int = 1):
    """Lowest eigenpairs of the FD fiber operator, eigenvectors on the full grid.

    The vectors are normalized in the discrete L2 norm; entries at Dirichlet
    nodes are zero.
    """
    from scipy.linalg import eigh_tridiagonal

    d, e, w = fd_tridiagonal(a, bc, x)
    mu, vec = eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1))
    h = float(x[1] - x[0])
    vec = vec / np.sqrt(w)[:, None] / np.sqrt(h)
    full = np.zeros((x.size, vec.shape[1]))
    first = 1 if isinstance(bc, Dirichlet) else 0
    full[first : first + vec.shape[0]] = vec
    return mu, full


def robin_secular(lam, a: float, b: float, geom: Geometry):
    """b - p^lam(a) = b + kappa coth(kappa ell): zero exactly at Robin fiber eigenvalues."""
    return complex(b) - complex(dtn_values(a, lam, geom))
