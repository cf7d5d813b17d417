import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from fibercollective.couplings import (CouplingParams, CouplingSet, EmitterChain,
                                       alpha_from_geometry, build, default_broadening,
                                       gamma_1d, gamma_3d, kernel_scan, omega_1d, omega_3d)
from fibercollective.fiber import FiberSpec, ModeTable


def test_chain_validation():
    with pytest.raises(ValueError):
        EmitterChain(np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        EmitterChain(np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        EmitterChain.regular(0, 0.5)
    chain = EmitterChain.regular(4, 0.59)
    np.testing.assert_allclose(chain.positions, [0, 0.59, 1.18, 1.77])


def test_params_validation():
    with pytest.raises(ValueError):
        CouplingParams(alpha=-0.1)
    with pytest.raises(ValueError):
        CouplingParams(alpha=0.1, broadening=-1.0)
    with pytest.raises(ValueError):
        CouplingParams(alpha=0.1, broadening="wide")


def test_omega_3d_values():
    assert omega_3d(np.pi) == pytest.approx(0.75 * (1 / np.pi + 1 / np.pi**3), rel=1e-14)
    assert omega_3d(np.pi) == pytest.approx(0.2630, abs=1e-4)
    xi = 1e-3
    assert omega_3d(xi) == pytest.approx(-0.75 / xi**3, rel=1e-5)
    assert abs(omega_3d(1e6)) < 1e-6
    with pytest.raises(ValueError):
        omega_3d(0.0)


def test_gamma_3d_values():
    assert gamma_3d(0.0) == 1.0
    assert gamma_3d(np.pi) == pytest.approx(-3 / (2 * np.pi**2), rel=1e-13)
    assert abs(gamma_3d(1e6)) < 1e-5


def _gamma_3d_oracle(x):
    x = mpmath.mpf(x)
    return float(1.5 * (mpmath.sin(x) / x + mpmath.cos(x) / x**2 - mpmath.sin(x) / x**3))


@pytest.mark.parametrize("xi", [1e-6, 1e-3, 0.1, 0.4999, 0.5, 0.5001, 1.0, 7.3, 40.0])
def test_gamma_3d_against_high_precision(xi):
    mpmath.mp.dps = 40
    assert gamma_3d(xi) == pytest.approx(_gamma_3d_oracle(xi), rel=1e-13, abs=1e-15)


def test_gamma_3d_small_xi_series():
    xi = np.array([1e-4, 1e-2])
    np.testing.assert_allclose(gamma_3d(xi), 1 - xi**2 / 5 + 3 * xi**4 / 280, rtol=1e-12)


def test_single_mode_kernels():
    p = CouplingParams(alpha=0.75)
    xi = np.pi / (2 * 1.2)
    assert omega_1d(xi, p) == pytest.approx(0.375, rel=1e-14)
    assert gamma_1d(xi, p) == pytest.approx(0.0, abs=1e-14)
    assert omega_1d(0.0, p) == 0.0
    assert gamma_1d(0.0, p) == 0.75


def test_two_modes_average():
    xi = np.linspace(0.1, 20, 50)
    both = CouplingParams(alpha=1.0, modes=ModeTable.from_values([1.0, 1.2], [0.5, 0.5]))
    one = CouplingParams(alpha=1.0, modes=ModeTable.single(1.0))
    two = CouplingParams(alpha=1.0, modes=ModeTable.single(1.2))
    np.testing.assert_allclose(gamma_1d(xi, both), 0.5 * (gamma_1d(xi, one) + gamma_1d(xi, two)))
    np.testing.assert_allclose(omega_1d(xi, both), 0.5 * (omega_1d(xi, one) + omega_1d(xi, two)))


def test_empty_table_warns():
    p = CouplingParams(alpha=0.5, modes=ModeTable())
    with pytest.warns(RuntimeWarning):
        assert gamma_1d(1.0, p) == 0.0
    with pytest.warns(RuntimeWarning):
        assert omega_1d(1.0, p) == 0.0


def test_uncoupled_modes_dropped():
    p = CouplingParams(alpha=1.0, modes=ModeTable.from_values([1.2, 1.1], [1.0, 0.0]))
    q = CouplingParams(alpha=1.0, modes=ModeTable.single(1.2))
    xi = np.linspace(0, 10, 11)
    np.testing.assert_array_equal(gamma_1d(xi, p), gamma_1d(xi, q))


def test_alpha_from_geometry():
    spec = FiberSpec(radius=20.0, n_core=1.1, wavelength=0.689)
    alpha = alpha_from_geometry(spec)
    assert 8e-5 <= alpha <= 1e-4
    double = FiberSpec(radius=40.0, n_core=1.1, wavelength=0.689)
    assert alpha_from_geometry(double) == pytest.approx(alpha / 4, rel=1e-14)
    # k0 a = sqrt(3) gives alpha = 1
    unit = FiberSpec(radius=np.sqrt(3) * 0.689 / (2 * np.pi), n_core=1.1, wavelength=0.689)
    assert alpha_from_geometry(unit) == pytest.approx(1.0, rel=1e-14)


def test_build_two_atoms_matches_kernels():
    p = CouplingParams(alpha=0.75)
    c = build(EmitterChain.regular(2, 0.59), p)
    xi = 2 * np.pi * 0.59
    assert c.omega[0, 1] == pytest.approx(omega_3d(xi) + omega_1d(xi, p), rel=1e-14)
    assert c.gamma[0, 1] == pytest.approx(gamma_3d(xi) + gamma_1d(xi, p), rel=1e-14)
    assert c.gamma_total == 1.75
    np.testing.assert_array_equal(np.diag(c.gamma), [1.75, 1.75])
    np.testing.assert_array_equal(np.diag(c.omega), [0, 0])


def test_build_single_atom():
    c = build(EmitterChain.regular(1, 1.0), CouplingParams(alpha=0.3))
    assert c.omega.shape == (1, 1) and c.omega[0, 0] == 0
    assert c.gamma[0, 0] == pytest.approx(1.3)


def test_build_independent_limit():
    c = build(EmitterChain.regular(5, 0.3), CouplingParams(alpha=0.0, include_3d=True))
    assert c.gamma_total == 1.0
    c0 = build(EmitterChain.regular(5, 0.3), CouplingParams(alpha=0.0, include_3d=False))
    np.testing.assert_array_equal(c0.omega, 0)
    np.testing.assert_array_equal(c0.gamma, 0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 25), d=st.floats(0.05, 2.0), alpha=st.floats(0.0, 1.0),
       beta=st.floats(1.01, 1.5), include_3d=st.booleans())
def test_matrices_symmetric_and_psd(n, d, alpha, beta, include_3d):
    c = build(EmitterChain.regular(n, d),
              CouplingParams(alpha=alpha, modes=ModeTable.single(beta), include_3d=include_3d))
    np.testing.assert_array_equal(c.omega, c.omega.T)
    np.testing.assert_array_equal(c.gamma, c.gamma.T)
    assert c.min_eigenvalue() >= -1e-9
    np.testing.assert_allclose(np.diag(c.gamma), c.gamma_total, rtol=0, atol=0)
    assert c.gamma_total == pytest.approx(float(include_3d) + alpha, abs=1e-15)


def test_solved_table_psd(table_1um):
    c = build(EmitterChain.regular(12, 0.37), CouplingParams(alpha=0.2, modes=table_1um))
    assert c.is_psd()
    assert c.gamma_total == pytest.approx(1 + 0.2 * table_1um.chi.sum())


def test_coincident_positions_rejected():
    with pytest.raises(ValueError):
        build(EmitterChain(np.array([0.0, 0.0])), CouplingParams(alpha=0.1))


@pytest.mark.parametrize("delta", [0.01, 0.05])
def test_lorentzian_envelope(delta):
    beta, chi, alpha = 1.2, 0.8, 0.6
    p = CouplingParams(alpha=alpha, modes=ModeTable.single(beta, chi), broadening=delta)
    xi = np.array([0.7, 3.1, 9.4])
    c = np.cos(beta * xi)
    np.testing.assert_allclose(gamma_1d(xi, p) / c, alpha * chi * np.exp(-delta * xi), rtol=1e-13)
    # the envelope is the Fourier transform of a normalized Lorentzian line
    for x in xi:
        line = lambda b: (delta / np.pi) / ((b - beta) ** 2 + delta**2)
        re, _ = integrate.quad(lambda b: line(b) * np.cos(b * x), beta - 4000 * delta,
                               beta + 4000 * delta, limit=4000, weight=None)
        assert re == pytest.approx(np.cos(beta * x) * np.exp(-delta * x), abs=5e-4)


def test_default_broadening(table_5um):
    width = default_broadening(table_5um)
    spacing = np.mean(np.diff(np.sort(table_5um.coupled().beta_bar)))
    assert width == pytest.approx(0.02 * spacing)
    assert default_broadening(ModeTable.single()) == 0.0
    p = CouplingParams(alpha=0.1, modes=table_5um, broadening="auto")
    assert p.broadened


def test_coupling_set_round_trip(tmp_path):
    c = build(EmitterChain.regular(4, 0.59), CouplingParams(alpha=0.75))
    c.save(tmp_path / "c.txt")
    back = CouplingSet.from_text((tmp_path / "c.txt").read_text())
    np.testing.assert_array_equal(back.gamma, c.gamma)
    np.testing.assert_array_equal(back.omega, c.omega)
    assert back.gamma_total == c.gamma_total and back.broadened == c.broadened


def test_kernel_scan_columns():
    xi = np.linspace(0.5, 5, 10)
    p = CouplingParams(alpha=0.5)
    rows = kernel_scan(xi, p)
    assert rows.shape == (10, 5)
    np.testing.assert_array_equal(rows[:, 4], gamma_1d(xi, p))
