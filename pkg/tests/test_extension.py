import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kreinlab.errors import DomainError, NearEigenvalueError
from kreinlab.extension import (
    BoundarySymbol,
    Realization,
    cauchy_defect,
    diagram_check,
    krein_apply,
    krein_apply_fiber,
    l_symbol,
    m_function,
    perturbation_bound,
    pole_scan,
    reduced_green_check,
    shifted_l_symbol,
)
from kreinlab.fiber import (
    Discretization1D,
    Geometry,
    ModelOperator,
    Robin,
    dirichlet_resolvent_fiber,
    dtn_values,
    fiber_eigenvalues,
    inner,
    oracle_solve,
    poisson_fiber,
)
from kreinlab.lattice import Lattice

SLAB = Geometry("slab", 2, 1.0)
HALF = Geometry("half-cylinder", 2)
OP = ModelOperator(1.0)


def datum(x):
    return (1.0 + x) * np.exp(-x)


def rel_l2(u, v):
    return np.linalg.norm(u - v) / np.linalg.norm(v)


# --- symbols -------------------------------------------------------------------


def test_symbol_constructors():
    xi = np.array([[0], [3]])
    assert np.allclose(BoundarySymbol.robin(2.0)(xi), 2.0)
    assert np.allclose(BoundarySymbol.polynomial([1.0, 2.0])(xi), 1 + 2 * np.sqrt([1.0, 10.0]))
    tab = BoundarySymbol.tabulated({0: 1.0, 3: 5.0})
    assert np.allclose(tab(xi), [1.0, 5.0])
    with pytest.raises(DomainError):
        tab(np.array([[1]]))
    with pytest.raises(ValueError):
        BoundarySymbol.polynomial([1, 2, 3])


def test_scaled_symbol():
    xi = np.array([[0], [7]])
    sym = BoundarySymbol.polynomial([1.0, -2.0])
    assert np.allclose(sym.scaled(3.0)(xi), 3.0 * sym(xi))


def test_l_robin_zero_half_cylinder():
    l = l_symbol(Realization.robin(0.0), HALF, OP)
    assert l(np.array([[0]]))[0] == pytest.approx(1.0)
    assert l.elliptic is True


def test_l_degenerate_choice_is_non_elliptic():
    c = BoundarySymbol.function(lambda xi: dtn_values(np.sum(xi**2, axis=1) + 1.0, 0.0, SLAB), order=1)
    l = l_symbol(Realization.neumann_type(c), SLAB, OP)
    xi = np.arange(0, 100)[:, None]
    assert np.max(np.abs(l(xi))) < 1e-12
    assert l.elliptic is False


def test_l_tabulated_flag_unknown():
    l = l_symbol(Realization.from_l(BoundarySymbol.tabulated({0: 1.0})), SLAB, OP)
    assert l.elliptic is None


def test_shifted_l_at_zero_is_l():
    real = Realization.robin(2.0)
    xi = Lattice(SLAB, OP, 20).xi
    assert np.allclose(shifted_l_symbol(real, 0.0, SLAB, OP)(xi), l_symbol(real, SLAB, OP)(xi), rtol=1e-14)


@pytest.mark.parametrize("b", [0.0, 2.0, -1.5])
def test_shifted_l_slab_frozen(b):
    # a = 1, lam = -3: kappa = 2, l^lam = b + 2 coth 2
    val = shifted_l_symbol(Realization.robin(b), -3.0, SLAB, OP)(np.array([[0]]))[0]
    assert val.real == pytest.approx(b + 2.0 / math.tanh(2.0), rel=1e-14)


def test_shifted_l_from_l_matches_from_c():
    c = BoundarySymbol.robin(1.5)
    via_c = Realization.neumann_type(c)
    via_l = Realization.from_l(BoundarySymbol.function(lambda xi: via_c.l_values(xi, SLAB, OP)))
    xi = Lattice(SLAB, OP, 30).xi
    assert np.allclose(via_c.shifted_l_values(xi, -4 + 1j, SLAB, OP), via_l.shifted_l_values(xi, -4 + 1j, SLAB, OP))


@pytest.mark.parametrize("lam", [-1.0, -100.0])
def test_perturbation_bound_finite(lam):
    # (sqrt(a - lam) - sqrt(a)) <xi> increases to |lam| / 2: bounded uniformly in R
    s1, _ = perturbation_bound(lam, HALF, OP, 1000)
    s2, _ = perturbation_bound(lam, HALF, OP, 10_000)
    assert s1 <= s2 <= abs(lam) / 2
    assert s2 == pytest.approx(abs(lam) / 2, rel=2e-3)
    assert s2 - s1 < 1e-2 * s2


# --- M-function ----------------------------------------------------------------


def test_m_function_values_at_zero():
    real = Realization.robin(2.0)
    lat = Lattice(SLAB, OP, 10)
    sample = m_function(real, 0.0, lat)
    expected = -1.0 / real.l_values(lat.xi, SLAB, OP)
    assert np.allclose(sample.values, expected)
    assert sample.at(3) == pytest.approx(complex(expected[list(map(tuple, lat.xi)).index((3,))]))


def test_m_function_only_on_subset():
    real = Realization.robin(2.0, mode_subset=[(0,), (2,)])
    sample = m_function(real, -1.0, Lattice(SLAB, OP, 5))
    assert sorted(tuple(r) for r in sample.xi) == [(0,), (2,)]
    with pytest.raises(KeyError):
        sample.at(1)


@pytest.mark.parametrize("b", [-3.0, -5.0])
def test_pole_matches_fd_eigenvalue(b):
    real = Realization.robin(b)
    mode = OP.mode(1)
    poles = pole_scan(real, mode, SLAB, OP, -50.0, OP.msq)
    eig = fiber_eigenvalues(mode, Robin(b), Discretization1D(2000), SLAB, count=3, refine=True)
    eig = eig[(eig > -50) & (eig < OP.msq)]
    assert len(poles) == len(eig) >= 1
    assert np.max(np.abs(np.array(poles) - eig)) < 1e-4


def test_m_function_raises_at_pole():
    real = Realization.robin(-3.0)
    mode = OP.mode(0)
    (pole,) = pole_scan(real, mode, SLAB, OP, -50.0, 1.0)
    with pytest.raises(NearEigenvalueError, match="mode=\\(0,\\)"):
        m_function(real, pole, Lattice(SLAB, OP, 3))


def test_kernel_iff_l_vanishes_on_subset():
    # l(0) = 0: lam = 0 is an eigenvalue exactly when mode 0 belongs to S
    l = BoundarySymbol.function(lambda xi: np.sqrt(1.0 + np.sum(xi**2, axis=1)) - 1.0, order=1)
    lat = Lattice(SLAB, OP, 4)
    with pytest.raises(NearEigenvalueError):
        m_function(Realization.from_l(l, mode_subset=[(0,), (1,)]), 0.0, lat)
    m_function(Realization.from_l(l, mode_subset=[(1,), (2,)]), 0.0, lat)


@pytest.mark.parametrize("lam0", [-2.0, -0.5 + 0.5j, -20.0])
def test_cauchy_defect(lam0):
    assert cauchy_defect(Realization.robin(2.0), lam0, Lattice(SLAB, OP, 20)) < 1e-6


# --- Krein formula ---------------------------------------------------------------


@pytest.mark.parametrize("geom", [SLAB, HALF], ids=["slab", "half"])
@pytest.mark.parametrize("lam", [-5.0, -1.0 + 4.0j])
@pytest.mark.parametrize("xi", [0, 3, 17])
def test_krein_matches_oracle(geom, lam, xi):
    real = Realization.robin(2.0)
    disc = Discretization1D(4000)
    mode = OP.mode(xi)
    u = krein_apply_fiber(real, lam, mode, datum, geom, OP, disc)
    ref = oracle_solve(mode, lam, Robin(2.0), datum, disc, geom, richardson=True)
    # the oracle carries Dirichlet data at the half-line cut; compare away from it
    keep = slice(None) if geom.is_slab else slice(0, u.x.size // 2)
    assert rel_l2(u.values[keep], ref.values[keep]) < 1e-7
    assert u.nu1 == pytest.approx(2.0 * u.gamma0, rel=1e-10)


def test_krein_apply_dict_interface():
    real = Realization.robin(2.0)
    out = krein_apply(real, -5.0, {(2,): datum, 0: datum, (-1,): datum}, SLAB, OP, Discretization1D(500))
    assert list(out) == [(-1,), (0,), (2,)]


def test_outside_subset_is_dirichlet_resolvent():
    real = Realization.robin(2.0, mode_subset=[(0,)])
    disc = Discretization1D(1000)
    u = krein_apply_fiber(real, -5.0, OP.mode(1), datum, SLAB, OP, disc)
    ref = dirichlet_resolvent_fiber(OP.mode(1), -5.0, datum, SLAB, disc)
    assert np.array_equal(u.values, ref.values)


def test_large_b_correction_vanishes():
    disc = Discretization1D(1000)
    mode = OP.mode(2)
    ref = dirichlet_resolvent_fiber(mode, -5.0, datum, SLAB, disc).values
    corr = [np.max(np.abs(krein_apply_fiber(Realization.robin(b), -5.0, mode, datum, SLAB, OP, disc).values - ref))
            for b in (1e2, 1e4, 1e6)]
    assert corr[0] > corr[1] > corr[2]
    assert corr[1] / corr[2] == pytest.approx(100.0, rel=0.01)


def test_first_resolvent_identity():
    real = Realization.robin(2.0)
    disc = Discretization1D(4000)
    mode = OP.mode(2)
    l1, l2 = -3.0, -7.0 + 2.0j
    r1 = krein_apply_fiber(real, l1, mode, datum, SLAB, OP, disc)
    r2 = krein_apply_fiber(real, l2, mode, datum, SLAB, OP, disc)
    r12 = krein_apply_fiber(real, l1, mode, r2.values, SLAB, OP, disc)
    assert rel_l2(r1.values - r2.values, (l1 - l2) * r12.values) < 1e-8


@settings(max_examples=15, deadline=None)
@given(b=st.floats(-0.5, 20.0), lam=st.floats(-40.0, -0.1), xi=st.integers(-10, 10),
       p=st.floats(0.5, 4.0), q=st.floats(0.5, 4.0))
def test_krein_resolvent_symmetric(b, lam, xi, p, q):
    real = Realization.robin(b)
    disc = Discretization1D(2000)
    mode = OP.mode(xi)
    f = lambda x: np.cos(p * x) + x
    g = lambda x: np.exp(-q * x)
    rf = krein_apply_fiber(real, lam, mode, f, SLAB, OP, disc)
    rg = krein_apply_fiber(real, lam, mode, g, SLAB, OP, disc)
    x, h = rf.x, rf.h
    lhs, rhs = inner(rf.values, g(x), h), inner(f(x), rg.values, h)
    assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(lhs))


# --- consistency checks ----------------------------------------------------------


def test_reduced_green_null_solution():
    mode = OP.mode(2)
    w = poisson_fiber(mode, 0.0, SLAB)
    # u = w - (far-end value) keeps u(ell) = 0 trivially since w(ell) = 0
    assert reduced_green_check(w, w, mode, SLAB, Discretization1D(4000)) < 1e-8


@settings(max_examples=30, deadline=None)
@given(c=st.lists(st.floats(-3, 3), min_size=3, max_size=3), xi=st.integers(-20, 20), slab=st.booleans())
def test_reduced_green_random(c, xi, slab):
    geom = SLAB if slab else HALF
    mode = OP.mode(xi)
    w = poisson_fiber(mode, 0.0, geom)
    if slab:
        u = lambda x: (c[0] + c[1] * x + c[2] * x**2) * (1 - x)
    else:
        u = lambda x: (c[0] + c[1] * x + c[2] * x**2) * np.exp(-x) * np.maximum(10 - x, 0) ** 6 / 1e6
    scale = 1 + sum(abs(t) for t in c)
    assert reduced_green_check(u, w, mode, geom, Discretization1D(10_000)) < 1e-6 * scale * mode.a


def test_reduced_green_needs_vanishing_far_end():
    with pytest.raises(ValueError):
        reduced_green_check(lambda x: 1 + 0 * x, poisson_fiber(OP.mode(0), 0.0, SLAB), OP.mode(0), SLAB,
                            Discretization1D(100))


def test_diagram_at_zero_is_exact():
    res = diagram_check(Realization.robin(2.0), 0.0, OP.mode(1), SLAB, OP, Discretization1D(1000))
    assert res.residual < 1e-13
    assert res.inversion_residual < 1e-13


@pytest.mark.parametrize("lam", [-0.5, -9.0, -3.0 + 2.0j])
@pytest.mark.parametrize("xi", [0, 5, 40])
def test_diagram_random(lam, xi):
    res = diagram_check(Realization.robin(2.0), lam, OP.mode(xi), SLAB, OP, Discretization1D(4000))
    assert res.residual < 1e-6
    assert res.inversion_residual < 1e-8


def test_diagram_needs_subset_mode():
    with pytest.raises(ValueError):
        diagram_check(Realization.robin(2.0, mode_subset=[]), -1.0, OP.mode(0), SLAB, OP)
