import math
import logging

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rayleigh_fwmdn import dispersion as d
from rayleigh_fwmdn.dispersion import (
    DomainError,
    EarthStack,
    ImpedanceTensor,
    LayerParams,
    NoRootError,
    RootSearchConfig,
    boundary_matrix_G,
    dispersion_curve,
    dispersion_curves,
    dispersion_residual,
    elastic_params_from_vs,
    halfspace_impedance,
    layer_transfer,
    default_frequency_grid,
    solve_phase_velocity,
    surface_impedance,
    vertical_wavenumbers,
)

import oracles

log = logging.getLogger(__name__)

POISSON_RATIO = oracles.rayleigh_ratio(1 / math.sqrt(3))
GRID = default_frequency_grid()


def poisson_layer(vs, ratio=1.732, rho=None):
    rho = elastic_params_from_vs(vs).rho if rho is None else rho
    return LayerParams.from_velocities(vs, ratio * vs, rho)


def rel(a, b):
    return np.max(np.abs(np.asarray(a) - np.asarray(b))) / np.max(np.abs(np.asarray(b)))


# --- elastic parameters -----------------------------------------------------

def test_unit_velocity_collapses_to_coefficients():
    p = elastic_params_from_vs(1.0)
    assert p.rho == pytest.approx(0.466, rel=1e-15)
    assert p.mu == pytest.approx(0.466, rel=1e-15)
    assert p.lam == pytest.approx(0.466, rel=1e-15)
    assert p.vp == pytest.approx(1.732, abs=1e-3)


def test_vs3_against_high_precision():
    mpmath.mp.dps = 40
    rho = mpmath.mpf("0.466") * mpmath.mpf(3) ** mpmath.mpf("0.214")
    mu = mpmath.mpf("0.466") * mpmath.mpf(3) ** mpmath.mpf("2.214")
    p = elastic_params_from_vs(3.0)
    assert p.rho == pytest.approx(float(rho), rel=1e-14)
    assert p.mu == pytest.approx(float(mu), rel=1e-14)
    assert p.lam == p.mu
    assert p.rho == pytest.approx(0.5895, abs=1e-4)
    assert p.mu == pytest.approx(5.306, abs=1e-3)
    assert p.vp == pytest.approx(5.196, abs=1e-3)
    assert p.mu == pytest.approx(p.rho * p.vs**2, rel=1e-12)


@pytest.mark.parametrize("vs", [0.0, -1.0, float("nan")])
def test_nonpositive_vs_rejected(vs):
    with pytest.raises(DomainError):
        elastic_params_from_vs(vs)


def test_layer_invariants_enforced():
    with pytest.raises(DomainError):
        LayerParams(vs=3.0, vp=2.0, rho=1.0, mu=9.0, lam=-14.0)
    with pytest.raises(DomainError):
        LayerParams(vs=3.0, vp=6.0, rho=1.0, mu=8.0, lam=20.0)


# --- wavenumbers -------------------------------------------------------------

def test_branch_point():
    lay = elastic_params_from_vs(3.0)
    wn = vertical_wavenumbers(3.0, 2.0, lay)
    assert wn.eta_s == 0


def test_real_root_below_vs():
    wn = vertical_wavenumbers(2.5, 2.0, elastic_params_from_vs(3.0))
    assert wn.eta_s.imag == 0 and wn.eta_s.real > 0


def test_imaginary_root_above_vs():
    lay = elastic_params_from_vs(3.0)
    c, w = 3.5, 2.0
    wn = vertical_wavenumbers(c, w, lay)
    q = (w / c) ** 2 - (w / 3.0) ** 2
    assert q < 0
    assert wn.eta_s.real == 0 and wn.eta_s.imag > 0
    assert wn.eta_s.imag == pytest.approx(math.sqrt(-q), rel=1e-14)


@given(
    c=st.floats(0.5, 8.0),
    w=st.floats(0.05, 15.0),
    vs=st.floats(2.0, 6.0),
)
def test_branch_contract(c, w, vs):
    lay = elastic_params_from_vs(vs)
    wn = vertical_wavenumbers(c, w, lay)
    for eta, k in ((wn.eta_s, wn.k_s), (wn.eta_p, wn.k_p)):
        assert eta.real >= 0
        if eta.real == 0:
            assert eta.imag >= 0
        target = wn.gamma**2 - k**2
        assert abs(eta**2 - target) <= 1e-12 * max(abs(target), wn.gamma**2)


# --- half-space --------------------------------------------------------------

def test_halfspace_det_vanishes_at_rayleigh_root():
    lay = poisson_layer(3.0)
    root = oracles.rayleigh_ratio(1 / 1.732) * 3.0
    assert root == pytest.approx(0.9194 * 3.0, abs=1e-3)
    Z = halfspace_impedance(root, 1.0, lay)
    scale = max(abs(Z.zxx * Z.zzz), abs(Z.zxz * Z.zzx))
    assert abs(Z.det()) / scale < 1e-6


def test_halfspace_det_changes_sign_across_root():
    lay = poisson_layer(3.0)
    lo = halfspace_impedance(0.5 * 3.0, 1.0, lay).det()
    hi = halfspace_impedance(0.99 * 3.0, 1.0, lay).det()
    assert lo.real * hi.real < 0


def test_halfspace_matches_classical_rayleigh_function():
    # det Z = mu^2 R / (eta_s eta_p - gamma^2), R the classical Rayleigh function
    lay = poisson_layer(3.0)
    for c in (1.0, 2.0, 2.7, 2.9):
        w = 1.3
        wn = vertical_wavenumbers(c, w, lay)
        g2 = wn.gamma**2
        R = (2 * g2 - wn.k_s**2) ** 2 - 4 * g2 * wn.eta_s * wn.eta_p
        expect = lay.mu**2 * R / (wn.eta_s * wn.eta_p - g2)
        assert halfspace_impedance(c, w, lay).det() == pytest.approx(expect, rel=1e-12)


def test_halfspace_homogeneous_in_moduli():
    a = poisson_layer(3.0, rho=1.0)
    b = poisson_layer(3.0, rho=7.5)
    Za = halfspace_impedance(2.1, 0.7, a).matrix()
    Zb = halfspace_impedance(2.1, 0.7, b).matrix()
    np.testing.assert_allclose(Zb, 7.5 * Za, rtol=1e-13)


def test_halfspace_is_stress_over_displacement():
    lay = elastic_params_from_vs(4.0)
    c, w = 3.1, 2.0
    g, es, ep = oracles.wavenumbers(c, w, lay.vs, lay.vp)
    fs = oracles.mode_fields("s", -1, 0.0, 0.0, g, es, lay.mu, lay.lam)
    fp = oracles.mode_fields("p", -1, 0.0, 0.0, g, ep, lay.mu, lay.lam)
    U = np.column_stack([fs[:2], fp[:2]])
    S = np.column_stack([fs[2:], fp[2:]])
    np.testing.assert_allclose(halfspace_impedance(c, w, lay).matrix(), S @ np.linalg.inv(U), rtol=1e-12)


def test_lame_equations_hold_symbolically():
    assert oracles.check_lame_symbolically()


# --- boundary matrix and layer transfer --------------------------------------

def test_G_matches_symbolic_assembly():
    rng = np.random.default_rng(3)
    for _ in range(20):
        lay = elastic_params_from_vs(rng.uniform(3, 5))
        c, w, h = rng.uniform(2.5, 6.0), rng.uniform(0.1, 12.0), rng.uniform(0.5, 6.0)
        Z = ImpedanceTensor.from_matrix(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
        G = boundary_matrix_G(lay, h, vertical_wavenumbers(c, w, lay), Z)
        ref = oracles.assemble_G(lay, h, c, w, Z.matrix())
        np.testing.assert_allclose(G, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_G_exponentials_unity_at_double_branch_point():
    lay = elastic_params_from_vs(3.0)
    wn = d.Wavenumbers(gamma=1.0, eta_s=0j, eta_p=0j, k_s=1.0, k_p=1.0)
    Z = ImpedanceTensor(1, 2, 3, 4)
    G_thick = boundary_matrix_G(lay, 5.0, wn, Z)
    G_thin = boundary_matrix_G(lay, 1e-3, wn, Z)
    np.testing.assert_array_equal(G_thick, G_thin)


@pytest.mark.parametrize("h", [1e-9, 1e-10, 1e-12])
def test_zero_thickness_is_identity(h):
    # lower impedance of another material at the same (c, omega): stack-scale entries
    rng = np.random.default_rng(1)
    lay = elastic_params_from_vs(3.6)
    for _ in range(20):
        c, w = rng.uniform(2.5, 5.0), rng.uniform(0.1, 12.57)
        Z = halfspace_impedance(c, w, elastic_params_from_vs(rng.uniform(4.0, 5.6)))
        out = layer_transfer(Z, lay, h, c, w)
        assert rel(out.matrix(), Z.matrix()) < 1e-8


def test_same_material_is_fixed_point():
    lay = elastic_params_from_vs(4.2)
    for c, w in ((3.0, 0.5), (3.5, 6.0), (4.5, 10.0), (5.0, 2.0)):
        Zh = halfspace_impedance(c, w, lay)
        out = layer_transfer(Zh, lay, 4.0, c, w)
        assert rel(out.matrix(), Zh.matrix()) < 1e-6


def test_two_layer_global_oracle():
    top, half = elastic_params_from_vs(3.3), elastic_params_from_vs(4.6)
    stack = EarthStack((top, half), (4.0,))
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 30:
        c, w = rng.uniform(2.6, 4.9), rng.uniform(0.0785, 12.57)
        ref, cond = oracles.global_two_layer_impedance(top, half, 4.0, c, w)
        if cond > 1e9:
            continue
        assert rel(surface_impedance(stack, c, w).matrix(), ref) < 1e-6
        checked += 1


def test_batched_transfer_matches_G_route():
    rng = np.random.default_rng(11)
    for _ in range(30):
        vs = rng.uniform(3.0, 5.6, size=rng.integers(2, 10))
        stack = EarthStack.from_vs(vs)
        c, w = rng.uniform(0.85 * vs.min(), 1.05 * vs.max()), rng.uniform(0.0785, 12.57)
        Z, _ = d._surface_batch(d._stack_arrays(stack), np.float64(c), np.float64(w))
        batch = np.array([[Z[0], Z[1]], [Z[2], Z[3]]])
        assert rel(batch, surface_impedance(stack, c, w).matrix()) < 1e-8


def test_ill_conditioned_transfer_reports_context():
    lay = elastic_params_from_vs(3.0)
    Z = halfspace_impedance(2.0, 1.0, lay)
    with pytest.raises(d.IllConditionedTransferError) as exc:
        layer_transfer(Z, lay, 4.0, 2.0, 1.0, layer_index=3, max_condition=1.0)
    assert exc.value.layer_index == 3 and exc.value.omega == 1.0


# --- surface impedance -------------------------------------------------------

def test_single_layer_stack_is_halfspace():
    lay = elastic_params_from_vs(3.7)
    stack = EarthStack((lay,), ())
    assert surface_impedance(stack, 3.2, 1.1) == halfspace_impedance(3.2, 1.1, lay)


def test_uniform_three_layers_equal_halfspace():
    stack = EarthStack.from_vs([3.5, 3.5, 3.5])
    for c, w in ((3.0, 0.3), (3.2, 5.0), (3.6, 12.0)):
        ref = halfspace_impedance(c, w, stack.layers[-1])
        assert rel(surface_impedance(stack, c, w).matrix(), ref.matrix()) < 1e-6


def test_nine_layer_stability_sweep():
    rng = np.random.default_rng(2024)
    lo = np.array([3.00, 3.10, 3.20, 3.30, 3.80, 3.90, 4.00, 4.20, 4.60])
    hi = np.array([3.80, 3.90, 3.95, 4.00, 4.60, 4.70, 4.75, 4.80, 5.60])
    stack = EarthStack.from_vs(rng.uniform(lo, hi))
    failures = 0
    for _ in range(1000):
        c = rng.uniform(0.85 * lo.min(), 1.05 * hi.max())
        w = rng.uniform(0.0785, 12.57)
        try:
            Z = surface_impedance(stack, c, w)
        except d.IllConditionedTransferError as err:
            failures += 1
            log.warning("ill-conditioned transfer: %s", err)
            continue
        assert np.all(np.isfinite(Z.matrix()))
    assert failures == 0


# --- residual ----------------------------------------------------------------

def test_residual_small_at_halfspace_root():
    stack = EarthStack((poisson_layer(3.0),), ())
    root = oracles.rayleigh_ratio(1 / 1.732) * 3.0
    assert abs(dispersion_residual(stack, 0.9194 * 3.0, 1.0)) < 1e-4
    delta = 1e-4
    assert dispersion_residual(stack, root - delta, 1.0) * dispersion_residual(stack, root + delta, 1.0) < 0


def test_residual_scale_free():
    vs = [3.3, 3.9, 4.8]
    s1 = EarthStack(tuple(poisson_layer(v, rho=1.0) for v in vs), (4.0, 4.0))
    s2 = EarthStack(tuple(poisson_layer(v, rho=13.0) for v in vs), (4.0, 4.0))
    for c in (2.9, 3.3, 4.0, 4.7):
        assert dispersion_residual(s1, c, 2.0) == pytest.approx(dispersion_residual(s2, c, 2.0), rel=1e-10)


def test_residual_has_no_sign_change_at_poles():
    # between layer velocities the raw det Z0 has poles; the residual must not flip there
    stack = EarthStack.from_vs([3.4, 4.6])
    w = 3.0
    cs = np.linspace(3.45, 4.55, 4000)
    Z = [surface_impedance(stack, c, w) for c in cs]
    mag = np.array([max(abs(z.zxx), abs(z.zzz)) for z in Z])
    assert mag.max() / np.median(mag) > 1e2  # a pole is present
    r = np.array([dispersion_residual(stack, c, w) for c in cs])
    flips = np.nonzero(np.sign(r[:-1]) != np.sign(r[1:]))[0]
    for k in flips:
        # every flip is a genuine free-surface mode
        assert oracles.free_surface_singularity(stack, cs[k], w) < 1e-3


# --- root finding ------------------------------------------------------------

def test_homogeneous_poisson_solid():
    stack = EarthStack((poisson_layer(3.0),), ())
    expect = oracles.rayleigh_ratio(1 / 1.732) * 3.0
    for w in GRID[::7]:
        c = solve_phase_velocity(stack, w)
        assert c == pytest.approx(2.7583, abs=1e-3)
        assert c == pytest.approx(expect, abs=2e-5)


def test_high_frequency_limit_is_top_layer():
    stack = EarthStack.from_vs([3.2, 4.6])
    top = solve_phase_velocity(EarthStack.from_vs([3.2]), 1.0)
    assert solve_phase_velocity(stack, 12.57) == pytest.approx(top, rel=0.02)


def test_low_frequency_limit_is_halfspace():
    stack = EarthStack.from_vs([3.2, 4.6])
    bottom = solve_phase_velocity(EarthStack.from_vs([4.6]), 1.0)
    assert solve_phase_velocity(stack, 0.0785) == pytest.approx(bottom, rel=0.05)


def test_root_is_free_surface_mode():
    for vs in ([3.5, 4.3, 5.1], [3.8, 3.2, 4.6], [3.4, 3.5, 3.6, 3.65, 4.2, 4.3, 4.4, 4.5, 5.1]):
        stack = EarthStack.from_vs(vs)
        for w in (0.5, 2.0, 5.0):
            c = solve_phase_velocity(stack, w)
            at = oracles.free_surface_singularity(stack, c, w)
            off = oracles.free_surface_singularity(stack, c + 0.02, w)
            assert at < 1e-3 * off


def test_no_root_error():
    stack = EarthStack.from_vs([3.0])
    cfg = RootSearchConfig(c_min=1.0, c_max=2.0)
    with pytest.raises(NoRootError) as exc:
        solve_phase_velocity(stack, 1.0, cfg)
    assert exc.value.bracket == (1.0, 2.0) and exc.value.omegas == [1.0]


def test_config_validation():
    with pytest.raises(ValueError):
        RootSearchConfig(grid_points=1)
    with pytest.raises(ValueError):
        RootSearchConfig(c_min=3.0, c_max=2.0)
    with pytest.raises(ValueError):
        RootSearchConfig(tol=0)


def test_root_strictly_bracketed():
    rng = np.random.default_rng(5)
    cfg = RootSearchConfig()
    for _ in range(5):
        vs = np.sort(rng.uniform(3.0, 5.6, size=4))
        stack = EarthStack.from_vs(vs)
        lo, hi = cfg.bracket(vs)
        for w in (0.1, 3.0, 12.0):
            c = solve_phase_velocity(stack, w, cfg)
            assert lo < c < hi
            assert dispersion_residual(stack, c - 2e-5, w) * dispersion_residual(stack, c + 2e-5, w) < 0


# --- curves ------------------------------------------------------------------

def test_uniform_stack_flat_curve():
    curve = dispersion_curve(EarthStack.from_vs([3.0, 3.0, 3.0]), GRID)
    assert len(curve.velocities) == 50
    assert np.ptp(curve.velocities) < 1e-4


def test_normal_dispersion_for_increasing_profile():
    mids = [3.5, 4.3, 5.1]
    curve = dispersion_curve(EarthStack.from_vs(mids), GRID)
    assert np.all(np.diff(curve.velocities) < 0)


def test_curve_rejects_unsorted_frequencies():
    with pytest.raises(DomainError):
        dispersion_curve(EarthStack.from_vs([3.0]), [1.0, 0.5])


def test_batch_curves_match_single():
    rng = np.random.default_rng(9)
    vs = rng.uniform(3.0, 5.0, size=(4, 5))
    batch = dispersion_curves(vs, GRID)
    for row, out in zip(vs, batch):
        np.testing.assert_array_equal(out, dispersion_curve(EarthStack.from_vs(row), GRID).velocities)


def test_profile_blocking_is_invisible(monkeypatch):
    vs = np.random.default_rng(10).uniform(3.0, 5.0, size=(7, 4))
    ref = dispersion_curves(vs, GRID[::5])
    monkeypatch.setattr(d, "_PROFILE_BLOCK", 3)
    assert dispersion_curves(vs, GRID[::5]).tobytes() == ref.tobytes()


@settings(max_examples=15, deadline=None)
@given(vs=st.floats(2.5, 6.0), n=st.integers(1, 9), h=st.floats(0.5, 8.0))
def test_degenerate_stack_equivalence(vs, n, h):
    half = dispersion_curve(EarthStack.from_vs([vs]), GRID).velocities
    layered = dispersion_curve(EarthStack.from_vs([vs] * n, thickness=h), GRID).velocities
    assert np.max(np.abs(layered - half)) < 1e-4


def test_scale_invariance_of_roots():
    vs = [3.4, 4.1, 4.9]
    s1 = EarthStack(tuple(poisson_layer(v, rho=1.0) for v in vs), (4.0, 4.0))
    s2 = EarthStack(tuple(poisson_layer(v, rho=3.7) for v in vs), (4.0, 4.0))
    for w in (0.2, 2.0, 9.0):
        assert solve_phase_velocity(s1, w) == pytest.approx(solve_phase_velocity(s2, w), abs=1e-5)
