"""Slow-fast systems with a singular slow drift (sqrt(eps/eta)) b and an
intermediate fast drift (eps eta)^{-1/2} g, in the homogenization
(lam = 0) and averaging (lam > 0) regimes."""

import math
from dataclasses import dataclass

import numpy as np

from .averaging import averaged_function, solve_limit_ode, solve_poisson_fd
from .errors import DomainError, PreconditionError
from .fluctuations import LimitLawSpec, sigma_phi, simulate_limit_theta
from .model import ScaleParams
from .sde_core import simulate_ensemble, simulate_pair

HOMOGENIZATION = "homogenization"
AVERAGING = "averaging"
JACOBIAN_STEP = 1e-5


@dataclass(frozen=True)
class RegimeSpec:
    lam: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise DomainError(f"lambda must be a nonnegative real, got {self.lam}")

    @property
    def regime(self):
        return HOMOGENIZATION if self.lam == 0 else AVERAGING

    @property
    def index(self):
        return 1 if self.lam == 0 else 2


def regime_scales(regime, eps, eta=None):
    """Scale parameters on the regime's ladder.

    eta = (lam + kappa sqrt(eps))^2 eps, so that sqrt(eta/eps) - lam equals
    kappa sqrt(eps) exactly.  In the homogenization regime with kappa = 0 the
    caller supplies eta (any eta with eta/eps -> 0).
    """
    if eta is None:
        root = regime.lam + regime.kappa * math.sqrt(eps)
        if root <= 0:
            raise DomainError("homogenization regime with kappa = 0 needs an explicit eta")
        eta = root * root * eps
    return ScaleParams(eps, eta, lam=regime.lam, kappa=regime.kappa)


def _check_consistent(regime, scales):
    ratio = math.sqrt(scales.eta / scales.eps)
    if regime.regime == HOMOGENIZATION and ratio >= 1.0:
        raise DomainError(f"homogenization regime needs sqrt(eta/eps) < 1, got {ratio:.3g}")
    if regime.regime == AVERAGING and abs(ratio / regime.lam - 1.0) > 0.5:
        raise DomainError(f"sqrt(eta/eps)={ratio:.3g} is far from lambda={regime.lam}")


def _b_of_y(model):
    if model.b is None:
        raise DomainError("the model has no singular drift b")
    b, m = model.b, model.dim_x
    return lambda y: b(np.zeros((y.shape[0], m)), y)


@dataclass(frozen=True)
class CenteringReport:
    value: np.ndarray
    stderr: np.ndarray
    passed: bool


def check_centering(model, mu, n_se=4.0, floor=1e-8):
    """|int b dmu| <= n_se * stderr (plus a floor for quadrature measures)."""
    bfun = _b_of_y(model)
    v = np.atleast_1d(mu.mean(bfun))
    se = np.atleast_1d(mu.stderr(bfun))
    return CenteringReport(v, se, bool(np.all(np.abs(v) <= n_se * se + floor)))


def simulate_extended(model, scales, regime, n, T, noise, **kw):
    """One path of the extended system on the supplied noise."""
    _check_consistent(regime, scales)
    return simulate_pair(model, scales, n, T, noise, extended=True, **kw)


def simulate_extended_ensemble(model, scales, regime, n, T, n_paths, seed, **kw):
    _check_consistent(regime, scales)
    return simulate_ensemble(model, scales, n, T, n_paths, seed, extended=True, **kw)


def solve_correction_psi(model, mu, y_domain=(-5.0, 5.0), n_grid=4001, regime=None, **kw):
    """Psi with L Psi = -b under the limiting fast generator, centered under mu."""
    regime = regime or RegimeSpec()
    rep = check_centering(model, mu)
    if not rep.passed:
        raise PreconditionError(f"b is not centered under mu: mean {rep.value} (stderr {rep.stderr})")
    bfun = _b_of_y(model)
    if model.dim_x != 1:
        raise DomainError("solve_correction_psi supports a one-dimensional slow variable")
    rhs = lambda y: bfun(y[:, None])[:, 0]
    return solve_poisson_fd(model, rhs, mu, y_domain, n_grid, lam=regime.lam, check_centered=False, **kw)


def effective_drift(model, regime, psi, x, y):
    """phi_1 = Psi' g + c (lam = 0) or phi_2 = b / lam + c (lam > 0), batched."""
    c = model.c(x, y)
    if regime.regime == HOMOGENIZATION:
        if model.g is None:
            return c
        if psi is None:
            raise DomainError("the homogenization regime needs the corrector Psi")
        return c + psi.derivative(y[:, 0])[:, None] * model.g(y)
    if model.b is None:
        return c
    return c + model.b(x, y) / regime.lam


def effective_function(model, regime, psi=None):
    return lambda x, y: effective_drift(model, regime, psi, x, y)


def averaged_effective_drift(model, regime, mu, psi=None, **kw):
    return averaged_function(model, mu, effective_function(model, regime, psi), **kw)


def limit_ode_extended(model, regime, mu, x0, T, h, psi=None):
    """RK4 solution of dXbar = phibar(Xbar) dt."""
    if regime.regime == HOMOGENIZATION and model.g is not None and psi is None:
        raise DomainError("the homogenization regime needs the corrector Psi")
    phibar = averaged_effective_drift(model, regime, mu, psi)
    return solve_limit_ode(phibar, x0, T, h)


def _jacobian(fn, x):
    """Central-difference Jacobian of fn: (1, m) -> (1, m) at x (m,)."""
    m = x.size
    J = np.empty((m, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = JACOBIAN_STEP
        J[:, j] = (fn((x + e)[None])[0] - fn((x - e)[None])[0]) / (2 * JACOBIAN_STEP)
    return J


def limit_theta_extended(model, regime, correctors, mu, xbar, n_paths, n, T, seed):
    """Ensemble of the regime's limiting fluctuation SDE.

    ``correctors = (psi, phi_star)``; psi is required in the homogenization
    regime, phi_star (the corrector of phi_* - phibar_*) whenever kappa != 0
    or in the averaging regime.  Returns (grid, theta).
    """
    psi, phi_star = correctors
    hom = regime.regime == HOMOGENIZATION
    if hom and psi is None:
        raise DomainError("homogenization regime needs Psi")
    if not hom and phi_star is None:
        raise DomainError("averaging regime needs Phi_2")
    if regime.kappa != 0 and phi_star is None:
        raise DomainError("kappa != 0 needs the corrector Phi_*")
    xbar = np.asarray(xbar, dtype=float).reshape(n + 1, model.dim_x)
    h = T / n
    phibar = averaged_effective_drift(model, regime, mu, psi)
    Js = [_jacobian(phibar, xi) for xi in xbar]
    sig_bar = np.atleast_2d(mu.mean(model.sigma))

    if hom:
        Sfun, weight = sigma_phi(model, psi, mu), 1.0
    else:
        Sfun, weight = sigma_phi(model, phi_star, mu), regime.lam
    Ss = [Sfun(xi) for xi in xbar]

    extras = None
    if regime.kappa != 0:
        g = model.g if model.g is not None else (lambda y: np.zeros_like(y))
        corr_g = np.atleast_1d(mu.mean(lambda y: phi_star.derivative(y[:, 0])[:, None] * g(y)))
        extras = []
        for xi in xbar:
            e = regime.kappa * corr_g
            if not hom and model.b is not None:
                xb = np.broadcast_to(xi, (mu.size, xi.size))
                bbar = np.tensordot(mu.weights, model.b(xb, mu.samples), axes=(0, 0))
                e = e - regime.kappa / regime.lam**2 * bbar
            extras.append(e)

    idx = lambda t: min(n, int(round(t / h)))
    law = LimitLawSpec(
        drift_jacobian=lambda t: Js[idx(t)],
        sigma_phi=lambda t: Ss[idx(t)],
        sigma_bar=sig_bar,
        lam=regime.lam,
        hurst=model.hurst,
        extra_drift=None if extras is None else (lambda t: extras[idx(t)]),
        bm_weight=weight,
    )
    return simulate_limit_theta(law, n_paths, n, T, seed)
