"""Tests for the extended model with singular and intermediate drifts."""

import math

import numpy as np
import pytest

from slowfast_fbm import averaging as av
from slowfast_fbm import extended_model as ex
from slowfast_fbm.errors import DomainError, PreconditionError
from slowfast_fbm.fluctuations import linear_limit_variance, sigma_phi
from slowfast_fbm.model import ScaleParams, get_model, scalar_model
from slowfast_fbm.sde_core import make_noise, simulate_ensemble, simulate_pair

EXT = get_model("ou-quadratic-ext")
QUAD = av.invariant_measure_quadrature(EXT)
HOM = ex.RegimeSpec()


def zero_ext():
    base = get_model("ou-quadratic")
    zero = lambda x, y: 0.0 * y
    return base, get_model("ou-quadratic", b=zero, g=lambda y: 0.0 * y)


class TestRegimeSpec:
    @pytest.mark.parametrize("lam,name,idx", [(0.0, "homogenization", 1), (0.5, "averaging", 2)])
    def test_regime(self, lam, name, idx):
        r = ex.RegimeSpec(lam)
        assert r.regime == name and r.index == idx

    @pytest.mark.parametrize("lam", [-1.0, math.inf, math.nan])
    def test_invalid_lambda(self, lam):
        with pytest.raises(DomainError):
            ex.RegimeSpec(lam)

    @pytest.mark.parametrize("eps", [2**-4, 2**-8, 2**-12])
    def test_kappa_ladder_exact(self, eps):
        r = ex.RegimeSpec(0.5, kappa=2.0)
        sc = ex.regime_scales(r, eps)
        assert math.sqrt(sc.eta / sc.eps) - 0.5 == pytest.approx(2.0 * math.sqrt(eps), rel=1e-12)

    def test_homogenization_needs_eta(self):
        with pytest.raises(DomainError):
            ex.regime_scales(HOM, 0.01)
        assert ex.regime_scales(HOM, 0.01, eta=1e-4).eta == 1e-4


class TestCentering:
    def test_linear_b_is_centered(self):
        assert ex.check_centering(EXT, QUAD).passed

    def test_quadratic_b_is_not(self):
        m = get_model("ou-quadratic-ext", b=lambda x, y: y * y)
        assert not ex.check_centering(m, QUAD).passed

    def test_zero_b(self):
        _, m = zero_ext()
        assert ex.check_centering(m, QUAD).passed

    def test_missing_b(self):
        with pytest.raises(DomainError):
            ex.check_centering(get_model("ou-quadratic"), QUAD)


class TestSimulation:
    def test_reduces_bitwise_with_zero_terms(self):
        base, m = zero_ext()
        sc = ScaleParams(2**-4, 2**-8)
        noise = make_noise(base, 8, 1.0, 512, seed=3)
        a = ex.simulate_extended(m, sc, HOM, 8, 1.0, noise)
        b = simulate_pair(base, sc, 8, 1.0, noise)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_ensemble_reduces_bitwise(self):
        base, m = zero_ext()
        sc = ScaleParams(2**-4, 2**-4 * 0.25)
        a = ex.simulate_extended_ensemble(m, sc, ex.RegimeSpec(0.5), 8, 1.0, 4, seed=1)
        b = simulate_ensemble(base, sc, 8, 1.0, 4, seed=1)
        assert np.array_equal(a.x, b.x)

    def test_regime_mismatch(self):
        noise = make_noise(EXT, 4, 1.0, 64, seed=0)
        with pytest.raises(DomainError):
            ex.simulate_extended(EXT, ScaleParams(0.01, 0.04), HOM, 4, 1.0, noise)
        with pytest.raises(DomainError):
            ex.simulate_extended(EXT, ScaleParams(0.01, 0.01), ex.RegimeSpec(0.2), 4, 1.0, noise)

    def test_singular_term_is_large_but_finite(self):
        sc = ex.regime_scales(HOM, 2**-4, eta=2**-10)
        e = ex.simulate_extended_ensemble(EXT, sc, HOM, 16, 1.0, 50, seed=2)
        assert np.isfinite(e.x).all()


class TestCorrector:
    def test_psi_is_identity(self):
        psi = ex.solve_correction_psi(EXT, QUAD)
        # -y Psi' + Psi''/2 = -y gives Psi = y
        assert np.max(np.abs(psi.values - psi.grid)) < 1e-4
        assert np.max(np.abs(psi.dvalues - 1.0)) < 1e-4

    def test_zero_b_gives_zero(self):
        _, m = zero_ext()
        psi = ex.solve_correction_psi(m, QUAD, n_grid=401)
        assert np.max(np.abs(psi.values)) < 1e-12

    def test_uncentered_rejected(self):
        m = get_model("ou-quadratic-ext", b=lambda x, y: y * y)
        with pytest.raises(PreconditionError):
            ex.solve_correction_psi(m, QUAD)

    def test_sigma_psi(self):
        psi = ex.solve_correction_psi(EXT, QUAD)
        assert sigma_phi(EXT, psi, QUAD)()[0, 0] == pytest.approx(1.0, abs=1e-5)


class TestEffectiveDrift:
    x = np.array([[0.5], [-1.0]])
    y = np.array([[0.3], [2.0]])

    def test_homogenization(self):
        psi = ex.solve_correction_psi(EXT, QUAD)
        got = ex.effective_drift(EXT, HOM, psi, self.x, self.y)
        want = -self.x + self.y**2 - self.y  # Psi' g + c with Psi' = 1, g = -y
        assert got == pytest.approx(want, abs=1e-4)

    def test_averaging(self):
        got = ex.effective_drift(EXT, ex.RegimeSpec(0.5), None, self.x, self.y)
        assert got == pytest.approx(-self.x + self.y**2 + self.y / 0.5, abs=1e-14)

    def test_homogenization_needs_psi(self):
        with pytest.raises(DomainError):
            ex.effective_drift(EXT, HOM, None, self.x, self.y)

    def test_no_extra_terms(self):
        base = get_model("ou-quadratic")
        got = ex.effective_drift(base, ex.RegimeSpec(0.5), None, self.x, self.y)
        assert np.array_equal(got, base.c(self.x, self.y))


class TestLimitODE:
    def test_homogenization_closed_form(self):
        psi = ex.solve_correction_psi(EXT, QUAD)
        grid, X = ex.limit_ode_extended(EXT, HOM, QUAD, [1.0], 1.0, 1e-3, psi=psi)
        # phibar = -x + 1/2 - E y = -x + 1/2
        assert X[:, 0] == pytest.approx(0.5 + 0.5 * np.exp(-grid), abs=1e-6)

    def test_averaging_closed_form(self):
        lam = 0.5
        mu = av.invariant_measure_quadrature(EXT, lam=lam)
        grid, X = ex.limit_ode_extended(EXT, ex.RegimeSpec(lam), mu, [1.0], 1.0, 1e-3)
        # fast law N(0, 1/(2(1+lam))), b/lam averages to zero
        v = 1 / (2 * (1 + lam))
        assert X[:, 0] == pytest.approx(v + (1 - v) * np.exp(-grid), abs=1e-6)

    def test_needs_psi(self):
        with pytest.raises(DomainError):
            ex.limit_ode_extended(EXT, HOM, QUAD, [1.0], 1.0, 0.1)


class TestLimitTheta:
    def test_jacobian_of_linear_map(self):
        A = np.array([[2.0, -1.0], [0.5, 3.0]])
        J = ex._jacobian(lambda x: x @ A.T, np.array([0.3, -0.7]))
        assert np.allclose(J, A, atol=1e-8)

    def test_homogenization_variance(self):
        psi = ex.solve_correction_psi(EXT, QUAD)
        grid, xbar = ex.limit_ode_extended(EXT, HOM, QUAD, [1.0], 1.0, 1 / 64, psi=psi)
        _, th = ex.limit_theta_extended(EXT, HOM, (psi, None), QUAD, xbar, 4000, 64, 1.0, seed=5)
        # Brownian weight is one in this regime
        exact = linear_limit_variance(-1.0, 1.0, 1.0, 1.0, 0.75, 1.0)
        v = th[:, -1, 0].var(ddof=1)
        assert abs(v - exact) < 4 * v * math.sqrt(2 / 3999)
        assert np.all(th[:, 0] == 0.0)

    @pytest.mark.parametrize(
        "regime,corr",
        [(HOM, (None, None)), (ex.RegimeSpec(0.5), ("psi", None)), (ex.RegimeSpec(0.0, kappa=1.0), ("psi", None))],
    )
    def test_missing_correctors(self, regime, corr):
        with pytest.raises(DomainError):
            ex.limit_theta_extended(EXT, regime, corr, QUAD, np.ones(5), 10, 4, 1.0, seed=0)

    def test_kappa_zero_reduces_to_plain_law(self):
        lam = 0.5
        m = scalar_model("lin", lambda x, y: -x + y, lambda y: 1.0, lambda y: -y, lambda y: 1.0, b=lambda x, y: y, g=lambda y: -y)
        mu = av.invariant_measure_quadrature(m, lam=lam)
        phi = av.solve_poisson_fd(m, lambda y: y + y / lam, mu, lam=lam)
        grid, xbar = ex.limit_ode_extended(m, ex.RegimeSpec(lam), mu, [1.0], 1.0, 1 / 32)
        _, a = ex.limit_theta_extended(m, ex.RegimeSpec(lam), (None, phi), mu, xbar, 50, 32, 1.0, seed=1)
        _, b = ex.limit_theta_extended(m, ex.RegimeSpec(lam, kappa=0.0), (None, phi), mu, xbar, 50, 32, 1.0, seed=1)
        assert np.array_equal(a, b)
