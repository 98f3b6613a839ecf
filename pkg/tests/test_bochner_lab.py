import cmath
import math
from fractions import Fraction as Q

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conekit import bochner_lab as bl
from conekit import model_geometry as mg
from conekit.curvature_audit import PatchGrid
from conekit.errors import AnnulusUnresolved, DomainError, NotCompactlySupported
from conekit.orbifold_tensors import OrbifoldPairP1, TensorSpec, h0_dimension_p1

from oracles import radial_log_cutoff_energy, radial_naive_cutoff_energy

W3 = cmath.exp(2j * math.pi / 3)


def _z_at_rho(rho):
    """point of the one-factor local model with rho = log(-log |z|^2) = rho"""
    return math.exp(-math.exp(rho) / 2)


def test_theta_examples():
    one = mg.local_config([0.5])
    th, d = bl.cutoff_theta(one, [_z_at_rho(1.0)], 1.0)
    assert th == pytest.approx(1.0, abs=1e-12)
    th, d = bl.cutoff_theta(one, [_z_at_rho(2.5)], 0.5)
    assert th == pytest.approx(0.5, abs=1e-12)
    assert d > 0
    th, d = bl.cutoff_theta(one, [_z_at_rho(3.2)], 0.5)
    assert th == 0.0 and d == 0.0


def test_theta_gradient_against_chain_rule():
    # |dbar theta|^2 in omega_o: Xi'^2 |d rho / dz|^2 / g ; rho = log(-2 log r)
    one = mg.local_config([0.5])
    z = _z_at_rho(2.3)
    _, d = bl.cutoff_theta(one, [z], 0.5)
    drho = 1.0 / (2 * z * math.log(z))  # d/dz of log(-log|z|^2) on the real axis
    g = 1.0 + z ** -1.0
    assert d == pytest.approx(bl.xi_eps_prime(2.3, 0.5) ** 2 * drho**2 / g, rel=1e-10)


def test_profile_plateaus_and_bound():
    x = np.linspace(-5, 50, 20001)
    for e in (1.0, 0.5, 0.1, 1 / 30):
        xi = bl.xi_eps(x, e)
        assert np.all(xi[x <= 1 / e] == 0.0)
        assert np.all(xi[x >= 1 + 1 / e] == 1.0)
    # translation invariance: identical sup of the derivative for every eps
    grid = np.linspace(0, 1, 10001)
    sups = {float(np.max(np.abs(bl.xi_eps_prime(1 / e + grid, e)))) for e in (1.0, 0.25, 1 / 7, 1e-3)}
    assert sups == {float(np.max(np.abs(bl.smoothstep_prime(1 + grid))))}
    assert bl.CutoffSpec(0.25).support == (4.0, 5.0)
    with pytest.raises(DomainError):
        bl.CutoffSpec(0.0)


@given(r=st.floats(1e-12, 0.6), ang=st.floats(0, 2 * math.pi), e=st.floats(0.2, 1.0))
def test_theta_range_and_support(r, ang, e):
    cfg = mg.sphere_config([0, "inf", 1], [0.5, 0.5, 0.4])
    z = r * complex(math.cos(ang), math.sin(ang))
    th, d = bl.cutoff_theta(cfg, [z], e)
    assert 0.0 <= th <= 1.0
    lp = float(bl._log_product(cfg, np.array([[z]]))[0])
    inner, outer = -math.exp(1 + 1 / e), -math.exp(1 / e)
    if lp < inner or lp > outer:
        assert d <= 1e-14
    assert d >= 0


@pytest.mark.parametrize("point", [0, "inf"])
def test_log_cutoff_energy_matches_radial_oracle(point):
    cfg = mg.sphere_config([point], [0.5])
    u = bl.monomial_tensor(1, 2) if point == 0 else TensorSpec(2, 0, lambda z, c="N": z if c == "S" else z**3)
    eps = [0.5, 1 / 3, 0.25]
    rep = bl.truncation_error_integral(u, bl.cone_metric(cfg), cfg, eps)
    ref = [radial_log_cutoff_energy(0.5, cfg.weight_constant, cfg.normalizer, 2, e) for e in eps]
    np.testing.assert_allclose(rep.integrals, ref, rtol=1e-6)
    assert rep.monotone
    assert rep.fit_slope <= -0.45 and rep.passed


def test_naive_cutoff_energy_matches_radial_oracle():
    cfg = mg.sphere_config([0], [0.5])
    eps = [1e-1, 1e-2, 1e-3]
    rep = bl.naive_cutoff_integral(bl.monomial_tensor(1, 2), bl.cone_metric(cfg), cfg, eps)
    ref = [radial_naive_cutoff_energy(0.5, cfg.weight_constant, cfg.normalizer, 2, e) for e in eps]
    np.testing.assert_allclose(rep.integrals, ref, rtol=1e-6)
    assert rep.passed and rep.ratio <= 10


def test_zero_tensor_energies():
    cfg = mg.sphere_config([0], [0.5])
    assert np.all(bl.truncation_error_integral(None, None, cfg, [0.5, 0.25]).integrals == 0)
    assert np.all(bl.naive_cutoff_integral(None, None, cfg, [0.1]).integrals == 0)


def test_annulus_unresolved_reports_usable_eps():
    cfg = mg.sphere_config([0], [0.5])
    with pytest.raises(AnnulusUnresolved) as info:
        bl.truncation_error_integral(bl.monomial_tensor(1, 2), None, cfg, [1 / 8])
    usable = info.value.largest_usable_epsilon
    assert 1 / 8 < usable <= 0.25
    bl.truncation_error_integral(bl.monomial_tensor(1, 2), None, cfg, [usable])


def test_decay_rows_layout():
    cfg = mg.sphere_config([0], [0.5])
    rep = bl.truncation_error_integral(bl.monomial_tensor(1, 2), None, cfg, [0.5, 1 / 3])
    rows = rep.rows()
    assert len(rows) == 2 and len(rows[0]) == len(bl.DECAY_COLUMNS)
    assert rows[0][2] == pytest.approx(math.log(rows[0][1]))


# ---------------------------------------------------------------------------
# identity on patches
# ---------------------------------------------------------------------------

def _bump(z, c, R):
    q = np.abs(z - c) ** 2 / R**2
    out = np.zeros(z.shape)
    inside = q < 1
    out[inside] = np.exp(-1 / (1 - q[inside]))
    return out


def _spectral_dbar(f, L):
    n = f.shape[0]
    k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
    F = np.fft.fft2(f)
    fx = np.fft.ifft2(1j * k[None, :] * F)
    fy = np.fft.ifft2(1j * k[:, None] * F)
    return 0.5 * (fx + 1j * fy)


def test_zero_tensor_identity():
    G = PatchGrid(32)
    assert bl.bochner_identity_check(TensorSpec(1, 0, np.zeros((32, 32))), np.ones((32, 32)), np.zeros((32, 32)), G) == (0.0, 0.0, 0.0)


def test_flat_torus_identity_and_spectral_value():
    n, L = 256, 2 * np.pi
    G = PatchGrid(n, L, 0.0, True)
    u = _bump(G.z, np.pi + np.pi * 1j, 3.0) * (1 + 0.3 * G.z)
    g = 1.7
    lhs, rhs, gap = bl.bochner_identity_check(TensorSpec(1, 0, u), np.full((n, n), g), np.zeros((n, n)), G)
    assert gap <= 1e-12
    ref = float(np.sum(np.abs(_spectral_dbar(np.conj(u) * g, L)) ** 2 / g) * 2 * G.h**2)
    assert lhs == pytest.approx(ref, rel=1e-3)


def test_identity_detects_wrong_curvature():
    G = PatchGrid(128, 4.0, -2.0, False)
    g = 1 + 0.3 * np.cos(G.z.real) * np.sin(2 * G.z.imag)
    u = _bump(G.z, 0.1j, 1.6)
    _, _, gap = bl.bochner_identity_check(TensorSpec(1, 0, u), g, np.zeros(g.shape), G)
    assert gap > 1e-2


def test_round_sphere_identity_converges():
    gaps = []
    for n in (64, 128, 256):
        G = PatchGrid(n, 4.0, -2.0, False)
        g = 2 / (1 + np.abs(G.z) ** 2) ** 2
        gaps.append(bl.bochner_identity_check(TensorSpec(1, 0, _bump(G.z, 0.2, 1.5)), g, g, G)[2])
    assert gaps[-1] <= 1e-2
    assert gaps[0] / gaps[1] >= 2 and gaps[1] / gaps[2] >= 2


def test_not_compactly_supported():
    G = PatchGrid(64, 4.0, -2.0, False)
    u = np.ones((64, 64))
    with pytest.raises(NotCompactlySupported):
        bl.bochner_identity_check(TensorSpec(1, 0, u), np.ones((64, 64)), np.zeros((64, 64)), G)


# ---------------------------------------------------------------------------
# the vanishing experiment
# ---------------------------------------------------------------------------

def test_trial_tensor_dbar_against_differences():
    pair = OrbifoldPairP1((0, "inf", 1, W3, W3 * W3), (Q(1, 2),) * 5)
    u, dbar = bl.trial_tensor(pair, 1, 0)
    z = np.array([0.3 + 0.2j, -0.5 + 0.1j, 0.8j])
    h = 1e-6
    fd = 0.5 * ((u.values(z + h) - u.values(z - h)) + 1j * (u.values(z + 1j * h) - u.values(z - 1j * h))) / (2 * h)
    np.testing.assert_allclose(dbar(z), fd, rtol=1e-7, atol=1e-10)


def test_experiment_neutral_and_vacuous():
    five = OrbifoldPairP1((0, "inf", 1, W3, W3 * W3), (Q(1, 2),) * 5)
    assert bl.theorem_b_experiment(five, 1, 1, 1).status == "neutral"
    four = OrbifoldPairP1((0, "inf", 1, -1), (Q(1, 2),) * 4)
    rep = bl.theorem_b_experiment(four, 1, 0, 0)
    assert rep.status == "vacuous" and rep.h0 == max(0, 2 - 4 + 1) == 0 and rep.passed
    with pytest.raises(DomainError):
        bl.theorem_b_experiment(five, 0, 1, 1)


@pytest.mark.slow
def test_experiment_vanishing_margin():
    five = OrbifoldPairP1((0, "inf", 1, W3, W3 * W3), (Q(1, 2),) * 5)
    rep = bl.theorem_b_experiment(five, 1, 0, 1)
    assert rep.status == "vanishing"
    assert rep.h0 == h0_dimension_p1(five, 1, 0) == 0
    assert np.all(np.diff(rep.truncation) < 0)
    assert rep.margin[-1] > 0
    assert rep.passed
