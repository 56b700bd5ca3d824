"""Realizations defined by boundary conditions and their Krein resolvent formulas.

A realization is given by a Neumann-type condition ``nu1 u = C gamma0 u`` with
a Fourier multiplier ``C`` on the boundary, optionally restricted to a finite
set ``S`` of modes (the subspace case ``X = Y = span{modes in S}``; modes
outside ``S`` carry the Dirichlet condition). It corresponds to the boundary
operator ``L = C - P^0``; for ``lam`` in the resolvent set of the Dirichlet
realization, ``L^lam = C - P^lam`` and

    (A~ - lam)^{-1} - (A_gamma - lam)^{-1} = K^lam (L^lam)^{-1} (K^{lam-bar})^*.

Everything is evaluated fiber by fiber.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import brentq

from kreinlab.errors import DomainError, NearEigenvalueError
from kreinlab.fiber import (
    Discretization1D,
    FiberFunction,
    FiberSolution,
    Geometry,
    Mode,
    ModelOperator,
    _simpson,
    as_callable,
    dirichlet_resolvent_fiber,
    dtn_difference,
    dtn_values,
    inner,
    poisson_fiber,
)
from kreinlab.lattice import Lattice

# |l^lam| < POLE_TOL * <xi> is treated as a pole of the M-function
POLE_TOL = 1e-10


def _as_xi(xi) -> np.ndarray:
    arr = np.asarray(xi)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def _bracket(xi: np.ndarray) -> np.ndarray:
    return np.sqrt(1.0 + np.sum(xi.astype(float) ** 2, axis=1))


def _a_values(xi: np.ndarray, op: ModelOperator) -> np.ndarray:
    return np.sum(xi.astype(float) ** 2, axis=1) + op.msq


@dataclass(frozen=True)
class BoundarySymbol:
    """A Fourier multiplier xi -> C on the boundary with an order tag (<= 1).

    Build instances with :meth:`robin`, :meth:`polynomial`,
    :meth:`tabulated` or :meth:`function`. Calling the symbol on an
    ``(M, n-1)`` integer array returns the ``M`` complex values.
    """

    kind: str
    order: int
    coefficients: tuple = ()
    table: Mapping | None = field(default=None, compare=False)
    fn: Callable | None = field(default=None, compare=False)
    elliptic: bool | None = None

    @classmethod
    def robin(cls, b: complex) -> "BoundarySymbol":
        return cls("robin", 0, (complex(b),))

    @classmethod
    def polynomial(cls, coefficients) -> "BoundarySymbol":
        """sum_k c_k <xi>^k with k <= 1."""
        coeffs = tuple(complex(c) for c in coefficients)
        if len(coeffs) > 2:
            raise ValueError("polynomial symbols are limited to order <= 1")
        order = 1 if len(coeffs) == 2 and coeffs[1] != 0 else 0
        return cls("polynomial", order, coeffs)

    @classmethod
    def tabulated(cls, table: Mapping, order: int = 0) -> "BoundarySymbol":
        clean = {tuple(int(v) for v in np.atleast_1d(k)): complex(v) for k, v in table.items()}
        return cls("tabulated", order, table=clean)

    @classmethod
    def function(cls, fn: Callable, order: int = 1, elliptic: bool | None = None) -> "BoundarySymbol":
        return cls("function", order, fn=fn, elliptic=elliptic)

    def __call__(self, xi) -> np.ndarray:
        xi = _as_xi(xi)
        if self.kind == "robin":
            return np.full(xi.shape[0], self.coefficients[0], dtype=complex)
        if self.kind == "polynomial":
            br = _bracket(xi)
            out = np.zeros(xi.shape[0], dtype=complex)
            for k, c in enumerate(self.coefficients):
                out += c * br**k
            return out
        if self.kind == "tabulated":
            try:
                return np.array([self.table[tuple(int(v) for v in row)] for row in xi], dtype=complex)
            except KeyError as exc:
                raise DomainError("tabulated symbol undefined at mode", mode=exc.args[0]) from None
        return np.asarray(self.fn(xi), dtype=complex)

    def scaled(self, factor: complex) -> "BoundarySymbol":
        if self.kind == "robin":
            return BoundarySymbol.robin(factor * self.coefficients[0])
        if self.kind == "polynomial":
            return BoundarySymbol.polynomial([factor * c for c in self.coefficients])
        return BoundarySymbol.function(lambda xi: factor * self(xi), self.order, self.elliptic)


@dataclass(frozen=True)
class Realization:
    """Realization A~ given by ``nu1 u = C gamma0 u`` on the modes of ``mode_subset``.

    Exactly one of ``c`` (the multiplier in the condition) or ``l`` (the
    boundary operator, ``C = L + P^0``) is given. ``mode_subset=None`` means
    all modes; an empty set gives the Dirichlet realization.
    """

    c: BoundarySymbol | None = None
    l: BoundarySymbol | None = None
    mode_subset: frozenset | None = None

    def __post_init__(self):
        if (self.c is None) == (self.l is None):
            raise ValueError("give exactly one of c or l")
        if self.mode_subset is not None:
            subset = frozenset(tuple(int(v) for v in np.atleast_1d(m)) for m in self.mode_subset)
            object.__setattr__(self, "mode_subset", subset)

    @classmethod
    def robin(cls, b: complex, mode_subset=None) -> "Realization":
        return cls(c=BoundarySymbol.robin(b), mode_subset=mode_subset)

    @classmethod
    def neumann_type(cls, c: BoundarySymbol, mode_subset=None) -> "Realization":
        return cls(c=c, mode_subset=mode_subset)

    @classmethod
    def from_l(cls, l: BoundarySymbol, mode_subset=None) -> "Realization":
        return cls(l=l, mode_subset=mode_subset)

    def in_subset(self, xi) -> np.ndarray:
        xi = _as_xi(xi)
        if self.mode_subset is None:
            return np.ones(xi.shape[0], dtype=bool)
        return np.array([tuple(int(v) for v in row) in self.mode_subset for row in xi], dtype=bool)

    def c_values(self, xi, geom: Geometry, op: ModelOperator) -> np.ndarray:
        xi = _as_xi(xi)
        if self.c is not None:
            return self.c(xi)
        return self.l(xi) + dtn_values(_a_values(xi, op), 0.0, geom)

    def l_values(self, xi, geom: Geometry, op: ModelOperator) -> np.ndarray:
        xi = _as_xi(xi)
        if self.l is not None:
            return self.l(xi)
        return self.c(xi) - dtn_values(_a_values(xi, op), 0.0, geom)

    def shifted_l_values(self, xi, lam, geom: Geometry, op: ModelOperator) -> np.ndarray:
        xi = _as_xi(xi)
        a = _a_values(xi, op)
        if self.l is not None:
            return self.l(xi) + dtn_difference(a, lam, geom)
        return self.c(xi) - dtn_values(a, lam, geom)


# ---------------------------------------------------------------------------
# boundary operators


def principal_coefficient(values: np.ndarray, bracket: np.ndarray) -> float:
    """Extrapolated limit of values / <xi> as <xi> -> inf.

    Fits ``values / <xi> = r + beta / <xi>`` by least squares on the outer
    half of the supplied radii and returns ``r``, the coefficient of the
    order-1 part of a classical symbol.
    """
    ratio = np.asarray(values, dtype=float) / bracket
    outer = bracket >= 0.5 * bracket.max()
    design = np.stack([np.ones(outer.sum()), 1.0 / bracket[outer]], axis=1)
    coef, *_ = np.linalg.lstsq(design, ratio[outer], rcond=None)
    return float(coef[0])


_PROBE_RADII = np.linspace(5_000.0, 10_000.0, 11)
_ELLIPTIC_TOL = 1e-6


def _probe_elliptic(symbol_values: Callable[[np.ndarray], np.ndarray], dim: int) -> bool:
    xi = np.zeros((_PROBE_RADII.size, dim), dtype=np.int64)
    xi[:, 0] = _PROBE_RADII.astype(np.int64)
    vals = symbol_values(xi)
    return principal_coefficient(np.abs(vals), _bracket(xi)) > _ELLIPTIC_TOL


def l_symbol(realization: Realization, geom: Geometry, op: ModelOperator) -> BoundarySymbol:
    """The boundary operator L = C - P^0 as a multiplier.

    The result carries an ``elliptic`` flag: order-1 ellipticity of
    ``C - P^0`` (``|l(xi)| >= const <xi>`` for large ``|xi|``). Order-0
    multipliers ``C`` are elliptic outright because ``-P^0`` is elliptic of
    order 1; otherwise the flag is decided by probing large modes, and left
    ``None`` for tabulated data.
    """

    def fn(xi):
        return realization.l_values(xi, geom, op)

    source = realization.c if realization.c is not None else realization.l
    if realization.c is not None and realization.c.kind in ("robin", "polynomial") and realization.c.order <= 0:
        elliptic = True
    elif source.kind == "tabulated":
        elliptic = None
    else:
        elliptic = _probe_elliptic(fn, geom.boundary_dim)
    return BoundarySymbol.function(fn, order=1, elliptic=elliptic)


def shifted_l_symbol(realization: Realization, lam, geom: Geometry, op: ModelOperator) -> BoundarySymbol:
    """L^lam = L + (P^0 - P^lam), i.e. l^lam = c - p^lam.

    Evaluating the returned symbol raises :class:`DomainError` when ``lam``
    hits a fiber spectrum of the Dirichlet realization.
    """
    def fn(xi):
        return realization.shifted_l_values(xi, lam, geom, op)

    return BoundarySymbol.function(fn, order=1)


def perturbation_bound(lam, geom: Geometry, op: ModelOperator, R: float, dim: int | None = None):
    """sup over |xi| <= R of |p^0 - p^lam| <xi> and the radius where it is attained.

    Finite uniformly in R: ``P^0 - P^lam`` maps H^{-1/2} into H^{1/2}.
    Radii are swept along one axis (the symbols depend on |xi| only).
    """
    radii = np.arange(0, int(R) + 1, dtype=float)
    vals = np.abs(dtn_difference(radii**2 + op.msq, lam, geom)) * np.sqrt(1.0 + radii**2)
    k = int(np.argmax(vals))
    return float(vals[k]), float(radii[k])


@dataclass
class MFunctionSample:
    lam: complex
    xi: np.ndarray
    values: np.ndarray

    def at(self, xi) -> complex:
        key = tuple(int(v) for v in np.atleast_1d(xi))
        for row, v in zip(self.xi, self.values):
            if tuple(int(t) for t in row) == key:
                return complex(v)
        raise KeyError(key)


def _check_poles(lvals: np.ndarray, xi: np.ndarray, lam):
    bad = np.abs(lvals) < POLE_TOL * _bracket(xi)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise NearEigenvalueError("lambda is (near) an eigenvalue of the realization", mode=xi[k], lam=lam)


def m_function(realization: Realization, lam, lattice: Lattice) -> MFunctionSample:
    """Per-mode M-function M_L(lam) = -1 / l^lam(xi) on the modes of X inside the lattice.

    Raises
    ------
    NearEigenvalueError
        Some mode has ``|l^lam| < 1e-10 <xi>``; ``lam`` is then (near) an
        eigenvalue of the realization, and the error names the mode.
    """
    xi = lattice.xi[realization.in_subset(lattice.xi)]
    try:
        lvals = realization.shifted_l_values(xi, lam, lattice.geom, lattice.op)
    except DomainError as exc:
        raise type(exc)(str(exc).split(" (")[0], lam=lam) from None
    _check_poles(lvals, xi, lam)
    return MFunctionSample(complex(lam), xi, -1.0 / lvals)


def cauchy_defect(realization: Realization, lam0, lattice: Lattice, radius: float = 0.1, points: int = 8) -> float:
    """Max relative deviation between M(lam0) and its trapezoid Cauchy mean over a circle.

    A holomorphy proxy: for holomorphic M the circle mean reproduces the
    center value up to ``(radius / distance-to-pole)^points``.
    """
    center = m_function(realization, lam0, lattice).values
    theta = 2.0 * np.pi * np.arange(points) / points
    acc = np.zeros_like(center)
    for t in theta:
        acc += m_function(realization, lam0 + radius * np.exp(1j * t), lattice).values
    mean = acc / points
    return float(np.max(np.abs(mean - center) / np.maximum(np.abs(center), 1e-300)))


def pole_scan(
    realization: Realization,
    mode: Mode,
    geom: Geometry,
    op: ModelOperator,
    lam_min: float,
    lam_max: float,
    samples: int = 4000,
) -> list[float]:
    """Real roots of l^lam(xi) = 0 for lam in (lam_min, lam_max), i.e. poles of M_L.

    Sign changes of ``Re l^lam`` on a uniform sample are refined with Brent's
    method; sign changes across poles of ``l^lam`` itself (Dirichlet fiber
    eigenvalues) are discarded.
    """
    xi = np.array([mode.xi])
    if not realization.in_subset(xi)[0]:
        return []

    def g(lam):
        return float(realization.shifted_l_values(xi, lam, geom, op)[0].real)

    grid = np.linspace(lam_min, lam_max, samples + 1)[1:-1]
    vals = []
    for lam in grid:
        try:
            vals.append(g(lam))
        except DomainError:
            vals.append(np.nan)
    vals = np.asarray(vals)
    roots = []
    scale = math.sqrt(1.0 + sum(v * v for v in mode.xi))
    for i in range(grid.size - 1):
        lo, hi = vals[i], vals[i + 1]
        if not (np.isfinite(lo) and np.isfinite(hi)):
            continue
        if lo == 0.0:
            roots.append(float(grid[i]))
            continue
        if lo * hi < 0.0:
            r = brentq(g, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-14, maxiter=200)
            if abs(g(r)) < 1e-6 * scale:
                roots.append(float(r))
    return roots


# ---------------------------------------------------------------------------
# Krein resolvent formula


def krein_apply_fiber(
    realization: Realization,
    lam,
    mode: Mode,
    f: FiberFunction,
    geom: Geometry,
    op: ModelOperator,
    disc: Discretization1D = Discretization1D(),
) -> FiberSolution:
    """One fiber of (A~ - lam)^{-1} f by the Krein formula.

    ``u = R f + k^lam (f, k^{lam-bar}) / l^lam`` where ``R`` is the Dirichlet
    resolvent fiber and ``(f, k^{lam-bar}) = nu1 R f`` by Green's formula.
    Modes outside the realization's subset get ``R f`` only.
    """
    res = dirichlet_resolvent_fiber(mode, lam, f, geom, disc)
    xi = np.array([mode.xi])
    if not realization.in_subset(xi)[0]:
        return res
    try:
        lval = complex(realization.shifted_l_values(xi, lam, geom, op)[0])
    except DomainError as exc:
        raise type(exc)(str(exc).split(" (")[0], mode=mode.xi, lam=lam) from None
    _check_poles(np.array([lval]), xi, lam)
    alpha = res.nu1 / lval
    k = poisson_fiber(mode, lam, geom)
    values = res.values + alpha * k(res.x)
    nu1 = res.nu1 + alpha * complex(dtn_values(mode.a, lam, geom))
    return FiberSolution(res.x, values, alpha, nu1)


def krein_apply(
    realization: Realization,
    lam,
    data: Mapping,
    geom: Geometry,
    op: ModelOperator,
    disc: Discretization1D = Discretization1D(),
) -> dict:
    """Apply (A~ - lam)^{-1} to mode-resolved data ``{xi: fiber function}``.

    Returns ``{xi: FiberSolution}`` keyed by integer tuples in sorted order.
    """
    normalized = {tuple(int(v) for v in np.atleast_1d(k)): f for k, f in data.items()}
    return {
        key: krein_apply_fiber(realization, lam, op.mode(key), normalized[key], geom, op, disc)
        for key in sorted(normalized)
    }


# ---------------------------------------------------------------------------
# consistency checks at fiber level

# fourth-order one-sided and central stencils
_D2_EDGE0 = np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0
_D2_EDGE1 = np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / 12.0
_D1_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0


def _second_derivative(u: np.ndarray, h: float) -> np.ndarray:
    d2 = np.empty_like(u)
    d2[2:-2] = (-u[:-4] + 16 * u[1:-3] - 30 * u[2:-2] + 16 * u[3:-1] - u[4:]) / 12.0
    d2[0] = _D2_EDGE0 @ u[:6]
    d2[1] = _D2_EDGE1 @ u[:6]
    d2[-1] = _D2_EDGE0 @ u[::-1][:6]
    d2[-2] = _D2_EDGE1 @ u[::-1][:6]
    return d2 / h**2


def reduced_green_check(
    u: FiberFunction,
    w: FiberFunction,
    mode: Mode,
    geom: Geometry,
    disc: Discretization1D = Discretization1D(),
) -> float:
    """|(Au, w) - (Gamma u) conj(gamma0 w)| with Gamma u = nu1 u - p^0 gamma0 u.

    ``w`` must be a null solution of A on the fiber and ``u`` a smooth fiber
    function vanishing at the far end of the grid. Derivatives use
    fourth-order differences and the integral Simpson's rule.
    """
    x = disc.grid(geom, math.sqrt(mode.a))
    h = float(x[1] - x[0])
    uu = np.asarray(as_callable(u, x)(x), dtype=complex)
    ww = np.asarray(as_callable(w, x)(x), dtype=complex)
    if abs(uu[-1]) > 1e-8 * max(1.0, np.max(np.abs(uu))):
        raise ValueError("u must vanish at the far end of the fiber")
    Au = -_second_derivative(uu, h) + mode.a * uu
    lhs = inner(Au, ww, h)
    nu1 = (_D1_EDGE0 @ uu[:5]) / h
    gamma_u = nu1 - complex(dtn_values(mode.a, 0.0, geom)) * uu[0]
    rhs = gamma_u * np.conj(ww[0])
    return float(abs(lhs - rhs))


@dataclass
class DiagramResidual:
    null_residual: float
    form_residual: float
    inversion_residual: float

    @property
    def residual(self) -> float:
        return max(self.null_residual, self.form_residual)


def diagram_check(
    realization: Realization,
    lam,
    mode: Mode,
    geom: Geometry,
    op: ModelOperator,
    disc: Discretization1D = Discretization1D(),
) -> DiagramResidual:
    """Fiber-level check that T^lam E^lam and T + G^lam agree.

    With ``z`` the Z-fiber normalized by ``gamma0 z = 1``:

    * ``E^lam z = z + lam (A_gamma - lam)^{-1} z`` must be the
      ``(A - lam)``-null solution with trace 1 (``null_residual``, relative);
    * ``<(T + G^lam) z, z> = l - lam <E^lam z, z>`` must equal
      ``<T^lam E^lam z, E'^{lam-bar} z> = l^lam gamma0(E z) conj(gamma0(E' z))``
      (``form_residual``, relative to ``max(1, |l^lam|)``);
    * ``F^lam E^lam z = E^lam z - lam A_gamma^{-1} E^lam z`` must return ``z``
      (``inversion_residual``, relative).
    """
    xi = np.array([mode.xi])
    if not realization.in_subset(xi)[0]:
        raise ValueError("diagram check needs a mode of the realization's subset")
    z = poisson_fiber(mode, 0.0, geom)

    def e_map(mu):
        res = dirichlet_resolvent_fiber(mode, mu, z, geom, disc)
        return res.x, z(res.x) + mu * res.values

    x, ez = e_map(lam)
    h = float(x[1] - x[0])
    zx = z(x)
    _, ez_adj = e_map(np.conj(lam)) if complex(lam).imag != 0.0 else (x, ez)

    k_lam = poisson_fiber(mode, lam, geom)(x)
    null_res = math.sqrt(_simpson(np.abs(ez - k_lam) ** 2, h).real / _simpson(np.abs(k_lam) ** 2, h).real)

    l0 = complex(realization.l_values(xi, geom, op)[0])
    l_lam = complex(realization.shifted_l_values(xi, lam, geom, op)[0])
    lhs = l0 - lam * inner(ez, zx, h)
    rhs = l_lam * ez[0] * np.conj(ez_adj[0])
    form_res = abs(lhs - rhs) / max(1.0, abs(l_lam))

    back = dirichlet_resolvent_fiber(mode, 0.0, ez, geom, disc)
    fez = ez - lam * back.values
    inv_res = math.sqrt(_simpson(np.abs(fez - zx) ** 2, h).real / _simpson(np.abs(zx) ** 2, h).real)
    return DiagramResidual(float(null_res), float(form_res), float(inv_res))
