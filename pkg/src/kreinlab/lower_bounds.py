"""Lower bounds of realizations and of their boundary operators.

The boundary norm on H^{-1/2} is ``||phi||^2 = sum <xi>^{-1} |phi(xi)|^2``
unless stated otherwise; for multipliers the form ratio then diagonalizes
and ``m_{-1/2}(L) = inf Re l(xi) <xi>``. The "isometric" norm
``sum ||k^0(xi)||^2 |phi(xi)|^2`` makes ``gamma0`` restricted to the null
space an isometry, so that the lower bound of L is exactly that of the
abstract operator T.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from kreinlab.errors import DomainError
from kreinlab.extension import BoundarySymbol, Realization, principal_coefficient
from kreinlab.fiber import (
    Dirichlet,
    Discretization1D,
    Geometry,
    ModelOperator,
    Robin,
    dtn_difference,
    fd_lowest_modes,
    fd_tridiagonal,
    poisson_normsq_values,
)
from kreinlab.lattice import Lattice


def _lower_bound(values: np.ndarray, weight: np.ndarray, xi: np.ndarray):
    ratio = np.real(values) / weight
    k = int(np.argmin(ratio))
    return float(ratio[k]), xi[k]


def lower_bound_symbol(
    symbol: BoundarySymbol,
    R: float,
    geom: Geometry,
    op: ModelOperator = ModelOperator(),
    norm: str = "bracket",
) -> float:
    """m_{-1/2}(L) for a multiplier L over the modes |xi| <= R.

    ``norm="bracket"`` uses the fixed ``<xi>^{-1}`` weight (the bound is
    ``inf Re l <xi>``); ``norm="isometric"`` uses ``||k^0(xi)||^2`` (the bound
    is ``inf Re l / ||k^0||^2``).
    """
    lattice = Lattice(geom, op, R)
    return _symbol_bound(symbol(lattice.xi), lattice.xi, geom, op, norm)[0]


def _symbol_bound(values, xi: np.ndarray, geom: Geometry, op: ModelOperator, norm: str):
    xi_sq = np.sum(xi.astype(float) ** 2, axis=1)
    if norm == "bracket":
        weight = 1.0 / np.sqrt(1.0 + xi_sq)
    elif norm == "isometric":
        weight = poisson_normsq_values(xi_sq + op.msq, 0.0, geom)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return _lower_bound(values, weight, xi)


@dataclass
class QMuPoint:
    mu: float
    bound: float
    minimizer: tuple
    g_bound: float


def q_mu_scan(mu_list, geom: Geometry, op: ModelOperator, R: float) -> list[QMuPoint]:
    """m_{-1/2}(Q^mu) for Q^mu = P^0 - P^mu along negative mu.

    ``g_bound`` is the lower bound of the fiber operator G^mu on the null
    space in the H-norm, ``inf q / ||k^0||^2``; it is reported next to the
    boundary bound without asserting a relation between the two.
    A warning is issued when the minimizing mode sits on the truncation edge.
    """
    lattice = Lattice(geom, op, R)
    normsq = poisson_normsq_values(lattice.a, 0.0, geom)
    radius = np.sqrt(lattice.xi_sq)
    out = []
    for mu in mu_list:
        if not mu < 0:
            raise DomainError("q_mu_scan needs negative mu", lam=mu)
        q = dtn_difference(lattice.a, mu, geom).real
        bound, arg = _lower_bound(q, 1.0 / lattice.bracket, lattice.xi)
        if np.sqrt(np.sum(arg.astype(float) ** 2)) >= radius.max() - 0.5 and R > 0:
            warnings.warn(f"minimizer of Q^mu at the truncation edge (mu={mu})", stacklevel=2)
        g_bound = float(np.min(q / normsq))
        out.append(QMuPoint(float(mu), bound, tuple(int(v) for v in arg), g_bound))
    return out


@dataclass
class LowerBoundReport:
    m_A_gamma: float
    m_T: float
    m_L_minushalf: float
    m_realization: float
    birman_bound: float
    margin: float
    discretization_error: float
    hypothesis_holds: bool
    holds: bool | None
    R: float
    trial_space: str = field(default="")


def _distinct_a(lattice: Lattice, mask: np.ndarray):
    """Distinct values of a = |xi|^2 + msq (all fiber problems depend on |xi| only for Robin data)."""
    return np.unique(lattice.a[mask])


def _lowest_eig(a: float, bc, geom: Geometry, N: int) -> float:
    x = np.linspace(0.0, geom.ell, N + 1)
    d, e, _ = fd_tridiagonal(a, bc, x)
    return float(eigvalsh_tridiagonal(d, e, select="i", select_range=(0, 0))[0])


def _refined_lowest(a: float, bc, geom: Geometry, N: int):
    coarse = _lowest_eig(a, bc, geom, N)
    fine = _lowest_eig(a, bc, geom, 2 * N)
    return (4.0 * fine - coarse) / 3.0, abs(fine - coarse)


def birman_check(
    realization: Realization,
    geom: Geometry,
    op: ModelOperator,
    R: float,
    disc: Discretization1D = Discretization1D(2000),
) -> LowerBoundReport:
    """Check m(A~) >= m(T) m(A_gamma) / (m(T) + m(A_gamma)) for a self-adjoint Robin realization.

    m(A_gamma) and m(A~) are the smallest Richardson-refined FD fiber
    eigenvalues over ``|xi| <= R`` (modes outside the subset carry the
    Dirichlet condition); m(T) is ``inf l / ||k^0||^2`` over the subset.
    ``holds`` is ``None`` when the hypothesis ``m(T) > -m(A_gamma)`` fails.
    """
    if not geom.is_slab:
        raise DomainError("birman_check needs the slab geometry")
    if realization.c is None or realization.c.kind != "robin" or realization.c.coefficients[0].imag != 0:
        raise ValueError("birman_check needs a real Robin realization")
    b = realization.c.coefficients[0].real
    lattice = Lattice(geom, op, R)
    mask = realization.in_subset(lattice.xi)

    disc_err = 0.0
    m_dir = math.inf
    for a in _distinct_a(lattice, np.ones(len(lattice), dtype=bool)):
        mu, err = _refined_lowest(a, Dirichlet(), geom, disc.N)
        m_dir = min(m_dir, mu)
        disc_err = max(disc_err, err)

    m_real = math.inf
    for a in _distinct_a(lattice, mask):
        mu, err = _refined_lowest(a, Robin(b), geom, disc.N)
        m_real = min(m_real, mu)
        disc_err = max(disc_err, err)
    if not np.all(mask):
        m_real = min(m_real, m_dir)

    if np.any(mask):
        sub = lattice.xi[mask]
        lvals = realization.l_values(sub, geom, op)
        m_T = _symbol_bound(lvals, sub, geom, op, "isometric")[0]
        m_L = _symbol_bound(lvals, sub, geom, op, "bracket")[0]
        hypothesis = m_T > -m_dir
        bound = m_T * m_dir / (m_T + m_dir) if hypothesis else math.nan
    else:
        # V = {0}: T has lower bound +inf and the bound degenerates to m(A_gamma)
        m_T = m_L = math.inf
        hypothesis = True
        bound = m_dir
    margin = m_real - bound if hypothesis else math.nan
    holds = bool(margin >= -disc_err) if hypothesis else None
    return LowerBoundReport(
        m_A_gamma=m_dir,
        m_T=m_T,
        m_L_minushalf=m_L,
        m_realization=m_real,
        birman_bound=bound,
        margin=margin,
        discretization_error=disc_err,
        hypothesis_holds=hypothesis,
        holds=holds,
        R=R,
        trial_space=f"lowest FD fiber eigenvectors, N={disc.N} and {2 * disc.N}, |xi| <= {R}",
    )


@dataclass
class GardingResult:
    holds: bool
    symbol_elliptic: bool
    form_holds: bool
    c: float
    k: float
    c_prime: float
    k_prime: float
    witness: tuple | None


# principal coefficients at or below this count as non-elliptic
GARDING_TOL = 1e-2


def _deficit(lower: np.ndarray, values: np.ndarray) -> float:
    """Smallest k >= 0 with values >= lower - k, rounding-level excess dropped."""
    gap = float(np.max(lower - values))
    return gap if gap > 1e-9 * float(np.max(np.abs(lower))) else 0.0


def _sample_radii(R: float, count: int) -> np.ndarray:
    radii = np.unique(np.round(np.geomspace(1.0, R, count)).astype(int))
    return np.concatenate(([0], radii))


def garding_check(
    symbol: BoundarySymbol,
    geom: Geometry,
    op: ModelOperator,
    R: float = 1000.0,
    disc: Discretization1D | None = None,
    *,
    form_R: float = 400.0,
    form_radii: int = 40,
    trial_count: int = 3,
    as_l: bool = True,
) -> GardingResult:
    """Strong ellipticity of L versus a Garding inequality for the realization.

    Symbol side: with ``r`` the extrapolated limit of ``Re l / <xi>`` over
    ``|xi| <= R``, L is strongly elliptic iff ``r > GARDING_TOL``; then
    ``Re l >= c' <xi> - k'`` with ``c' = r`` and the smallest such ``k'``.

    Form side: on the lowest ``trial_count`` FD eigenvectors of each sampled
    fiber (radii up to ``form_R``), the ratio ``Re(A~u, u) / ||u||_1^2``
    is extrapolated in the same way; the inequality
    ``Re(A~u, u) >= c ||u||_1^2 - k ||u||_0^2`` is found iff that limit exceeds
    ``GARDING_TOL``.

    ``symbol`` is L itself (``as_l=True``) or the multiplier C of the
    condition (``as_l=False``). A failing case reports a witness mode of
    large modulus where the ratio is most negative.
    """
    if not geom.is_slab:
        raise DomainError("garding_check needs the slab geometry")
    realization = Realization.from_l(symbol) if as_l else Realization.neumann_type(symbol)

    lattice = Lattice(geom, op, R)
    lvals = realization.l_values(lattice.xi, geom, op).real
    br = lattice.bracket
    r_sym = principal_coefficient(lvals, br)
    symbol_elliptic = r_sym > GARDING_TOL
    outer = br >= 0.5 * br.max()
    witness = None
    if symbol_elliptic:
        c_prime = r_sym
        k_prime = _deficit(c_prime * br, lvals)
    else:
        c_prime, k_prime = 0.0, math.inf
        idx = np.flatnonzero(outer)[np.argmin(lvals[outer] / br[outer])]
        witness = tuple(int(v) for v in lattice.xi[idx])

    # realization side, one representative mode per sampled radius
    radii = _sample_radii(form_R, form_radii)
    dim = geom.boundary_dim
    xi_s = np.zeros((radii.size, dim), dtype=np.int64)
    xi_s[:, 0] = radii
    a_s = radii.astype(float) ** 2 + op.msq
    c_s = realization.c_values(xi_s, geom, op).real
    if disc is None:
        kap = math.sqrt(a_s.max()) + np.max(np.abs(c_s))
        disc = Discretization1D(max(2000, int(math.ceil(50.0 * kap * geom.ell))))
    x = np.linspace(0.0, geom.ell, disc.N + 1)
    h = geom.ell / disc.N
    mu_all, h1_all, br_all = [], [], []
    for a, c, rad in zip(a_s, c_s, radii):
        mu, vec = fd_lowest_modes(a, Robin(c), x, trial_count)
        for m, v in zip(mu, vec.T):
            grad = np.sum(np.diff(v) ** 2) / h
            l2 = h * (0.5 * v[0] ** 2 + np.sum(v[1:] ** 2))
            h1 = grad + (1.0 + rad**2) * l2
            mu_all.append(m)
            h1_all.append(h1 / l2)
            br_all.append(math.sqrt(1.0 + rad**2))
    mu_all = np.asarray(mu_all)
    h1_all = np.asarray(h1_all)
    br_all = np.asarray(br_all)
    # the per-radius minimum ratio enters the extrapolation
    ratio = mu_all / h1_all
    uniq = np.unique(br_all)
    min_ratio = np.array([ratio[br_all == u].min() for u in uniq])
    r_form = principal_coefficient(min_ratio * uniq, uniq)
    form_holds = r_form > GARDING_TOL
    if form_holds:
        c_form = r_form
        k_form = _deficit(c_form * h1_all, mu_all)
    else:
        c_form, k_form = 0.0, math.inf
        if witness is None:
            outer_s = uniq >= 0.5 * uniq.max()
            rad_w = int(round(math.sqrt(uniq[outer_s][np.argmin(min_ratio[outer_s])] ** 2 - 1.0)))
            witness = (rad_w,) + (0,) * (dim - 1)
    return GardingResult(
        holds=symbol_elliptic and form_holds,
        symbol_elliptic=symbol_elliptic,
        form_holds=form_holds,
        c=c_form,
        k=k_form,
        c_prime=c_prime,
        k_prime=k_prime,
        witness=witness,
    )
