"""Singular values of resolvent differences, counting functions and power-law fits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigvalsh, solve_banded
from scipy.special import gamma as gamma_fn

from kreinlab.errors import DomainError, NearEigenvalueError
from kreinlab.extension import POLE_TOL, BoundarySymbol, Realization
from kreinlab.fiber import (
    Dirichlet,
    Discretization1D,
    Geometry,
    ModelOperator,
    Robin,
    _fd_system,
    poisson_normsq_values,
)
from kreinlab.lattice import Lattice


@dataclass
class SingularValueSeries:
    """s-numbers sorted descending, one per retained lattice mode.

    ``modes[j]`` is the lattice point that produced ``values[j]``.
    """

    values: np.ndarray
    modes: np.ndarray
    label: str
    R: float

    def __len__(self) -> int:
        return self.values.size

    @property
    def j(self) -> np.ndarray:
        return np.arange(1, self.values.size + 1)


@dataclass
class FitResult:
    exponent: float
    constant: float
    window: tuple
    residual: float
    plateau: float | None = None


def _sorted_series(values: np.ndarray, modes: np.ndarray, label: str, R: float) -> SingularValueSeries:
    # stable sort keeps the lattice order among ties, so output is reproducible
    order = np.argsort(-values, kind="stable")
    return SingularValueSeries(values[order], modes[order], label, R)


def _real_lambda(lam) -> float:
    lam_c = complex(lam)
    if lam_c.imag != 0.0:
        raise DomainError("closed-form s-numbers need real lambda", lam=lam)
    return lam_c.real


def _checked_l(realization: Realization, xi, lam, lattice: Lattice) -> np.ndarray:
    lvals = realization.shifted_l_values(xi, lam, lattice.geom, lattice.op).real
    bad = np.abs(lvals) < POLE_TOL * np.sqrt(1.0 + np.sum(xi.astype(float) ** 2, axis=1))
    if np.any(bad):
        k = int(np.argmax(bad))
        raise NearEigenvalueError("lambda is (near) an eigenvalue of the realization", mode=xi[k], lam=lam)
    return lvals


def svalues_vs_dirichlet(
    realization: Realization, lam: float, R: float, geom: Geometry, op: ModelOperator
) -> SingularValueSeries:
    """s-numbers of (A~ - lam)^{-1} - (A_gamma - lam)^{-1}.

    Each fiber difference is the rank-one operator ``k (., k) / l^lam``, so
    its single s-number is ``||k^lam||^2 / |l^lam|``; modes outside the
    realization's subset contribute 0.
    """
    lam = _real_lambda(lam)
    lattice = Lattice(geom, op, R)
    xi = lattice.xi
    mask = realization.in_subset(xi)
    s = np.zeros(len(lattice))
    if np.any(mask):
        lvals = _checked_l(realization, xi[mask], lam, lattice)
        s[mask] = poisson_normsq_values(lattice.a[mask], lam, geom) / np.abs(lvals)
    return _sorted_series(s, xi, "robin-vs-dirichlet", R)


def svalues_robin_pair(
    b1: float, b2: float, lam: float, R: float, geom: Geometry, op: ModelOperator
) -> SingularValueSeries:
    """s-numbers of the difference of two Robin resolvents.

    Per mode ``||k^lam||^2 |b2 - b1| / (|l1^lam| |l2^lam|)``.
    """
    lam = _real_lambda(lam)
    lattice = Lattice(geom, op, R)
    xi = lattice.xi
    l1 = _checked_l(Realization.robin(b1), xi, lam, lattice)
    l2 = _checked_l(Realization.robin(b2), xi, lam, lattice)
    s = poisson_normsq_values(lattice.a, lam, geom) * abs(b2 - b1) / (np.abs(l1) * np.abs(l2))
    return _sorted_series(s, xi, "robin-pair", R)


def _fd_inverse_sym(a: float, lam: float, bc, x: np.ndarray) -> np.ndarray:
    """W^{1/2} (K - lam W)^{-1} W^{1/2} on the Robin unknowns 0..N-1 (Dirichlet: node 0 is zero)."""
    N = x.size - 1
    zeros = np.zeros(x.size)
    ab, _, first = _fd_system(complex(a - lam), bc, x, zeros)
    ab = ab.real
    m = ab.shape[1]
    w = np.ones(m)
    if isinstance(bc, Robin):
        w[0] = 0.5
    inv = solve_banded((1, 1), ab, np.diag(np.sqrt(w)))
    inv = np.sqrt(w)[:, None] * inv
    full = np.zeros((N, N))
    full[first:, first:] = inv
    return full


def svalues_iterates(
    realization: Realization,
    power: int,
    R: float,
    geom: Geometry,
    op: ModelOperator,
    disc: Discretization1D = Discretization1D(800),
    lam: float = 0.0,
) -> SingularValueSeries:
    """s-numbers of (A~ - lam)^{-N} - (A_gamma - lam)^{-N} through the FD oracle.

    Per mode the two discretized fiber operators are inverted densely, raised
    to the power ``N`` and the largest singular value of the difference is
    kept. Fibers are computed once per distinct ``|xi|^2`` and repeated for
    every lattice point.
    """
    if not geom.is_slab:
        raise DomainError("iterates need the slab geometry")
    if not 1 <= power <= 3:
        raise ValueError("power must be 1, 2 or 3")
    if realization.c is None or realization.c.kind != "robin":
        raise ValueError("iterates are implemented for Robin realizations")
    lam = _real_lambda(lam)
    b = realization.c.coefficients[0].real
    lattice = Lattice(geom, op, R)
    xi = lattice.xi
    x = np.linspace(0.0, geom.ell, disc.N + 1)
    h = geom.ell / disc.N
    kmax = math.sqrt(lattice.a.max() - lam)
    est = (kmax * h) ** 2 / 12.0
    if est > 0.05:
        warnings.warn(f"grid too coarse for |xi| <= {R}: estimated relative error {est:.2g}", stacklevel=2)

    mask = realization.in_subset(xi)
    a_vals = lattice.a
    cache: dict[float, float] = {}
    s = np.zeros(len(lattice))
    for idx in np.flatnonzero(mask):
        a = float(a_vals[idx])
        if a not in cache:
            rob = _fd_inverse_sym(a, lam, Robin(b), x)
            dir_ = _fd_inverse_sym(a, lam, Dirichlet(), x)
            diff = np.linalg.matrix_power(rob, power) - np.linalg.matrix_power(dir_, power)
            diff = 0.5 * (diff + diff.T)
            ev = eigvalsh(diff)
            cache[a] = float(max(abs(ev[0]), abs(ev[-1])))
        s[idx] = cache[a]
    return _sorted_series(s, xi, f"iterates-N{power}", R)


def weyl_fit(series: SingularValueSeries, expected_decay: float | None = None) -> FitResult:
    """Least-squares power law ``s_j ~ C j^exponent`` on the tail window [len/2, 0.9 len].

    ``residual`` is the max relative deviation of the data from the fitted
    line on the window. When ``expected_decay`` (the positive rate ``k`` in
    ``s_j j^k -> c``) is given, ``plateau`` is ``median(s_j j^k)`` there.
    """
    n = len(series)
    if n < 200:
        raise ValueError("series too short for a tail fit (need >= 200)")
    lo, hi = n // 2, int(0.9 * n)
    j = series.j[lo:hi].astype(float)
    s = series.values[lo:hi]
    if np.any(s <= 0.0):
        raise ValueError("series has zero entries in the fit window")
    slope, intercept = np.polyfit(np.log(j), np.log(s), 1)
    fitted = np.exp(intercept) * j**slope
    residual = float(np.max(np.abs(s / fitted - 1.0)))
    plateau = None
    if expected_decay is not None:
        plateau = float(np.median(s * j**expected_decay))
    return FitResult(float(slope), float(math.exp(intercept)), (lo + 1, hi), residual, plateau)


def counting_function(series: SingularValueSeries, t: float) -> int:
    """N'(t) = #{j : s_j >= 1/t}."""
    return int(np.count_nonzero(series.values >= 1.0 / t))


def schatten_partial_sum(series: SingularValueSeries, p: float) -> float:
    # ascending summation order keeps the sum reproducible and accurate
    return float(np.sum(np.sort(series.values) ** p))


def weyl_constant(geom: Geometry) -> float:
    """c_A = vol(Omega) omega_n / (2 pi)^n for -Laplace on the slab, vol = (2 pi)^{n-1} ell."""
    n = geom.n
    omega = math.pi ** (n / 2) / gamma_fn(n / 2 + 1)
    return (2 * math.pi) ** (n - 1) * geom.ell * omega / (2 * math.pi) ** n


@dataclass
class DirichletWeylTable:
    t: np.ndarray
    counts: np.ndarray
    c_A: float

    @property
    def ratio(self) -> np.ndarray:
        return self.counts / (self.c_A * self.t)


def dirichlet_weyl(R: float, k_max: int, geom: Geometry, op: ModelOperator, t_values) -> DirichletWeylTable:
    """Counting function of the Dirichlet realization by lattice enumeration.

    Eigenvalues are ``|xi|^2 + msq + (k pi / ell)^2`` for ``|xi| <= R`` and
    ``1 <= k <= k_max``. Counts are exact for ``t`` below the truncation
    ceiling ``min(R^2, (k_max pi / ell)^2) + msq``.

    Raises
    ------
    DomainError
        Some ``t`` exceeds the ceiling.
    """
    if not geom.is_slab:
        raise DomainError("Dirichlet Weyl counting needs the slab geometry")
    t_values = np.atleast_1d(np.asarray(t_values, dtype=float))
    ceiling = min(R**2, (k_max * math.pi / geom.ell) ** 2) + op.msq
    if np.any(t_values > ceiling):
        raise DomainError(f"t above the truncation ceiling {ceiling:g}")
    lattice = Lattice(geom, op, R)
    a = np.sort(lattice.a)
    counts = np.empty(t_values.size, dtype=np.int64)
    for i, t in enumerate(t_values):
        room = t - a[a <= t]
        k = np.floor(geom.ell * np.sqrt(room) / math.pi).astype(np.int64)
        counts[i] = int(np.minimum(k, k_max).sum())
    return DirichletWeylTable(t_values, counts, weyl_constant(geom))
