"""Model definitions, asymptotic parameters and the test-model registry.

Coefficient callables are batched: ``x`` has shape (P, m), ``y`` has shape
(P, k) with k = d - m, and

* ``c(x, y)``  -> (P, m)       slow drift
* ``sigma(y)`` -> (P, m, m)    slow (fBm) diffusion
* ``f(y)``     -> (P, k)       fast drift
* ``tau(y)``   -> (P, k, k)    fast diffusion
* ``b(x, y)``  -> (P, m)       singular slow drift (extended model)
* ``g(y)``     -> (P, k)       intermediate fast drift (extended model)
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DomainError
from .fbm_noise import as_hurst


@dataclass(frozen=True)
class GrowthMeta:
    """Declared growth constants |c| <= K(1+|x|^r)(1+|y|^q) and recurrence (alpha, beta, gamma).

    ``gamma = 0`` declares that grad_x c is bounded, which removes the upper
    limit on admissible moment orders p.
    """

    K: float = 1.0
    q: float = 2.0
    r: float = 0.0
    alpha: float = 0.9
    beta: float = 2.0
    gamma: float = 0.0


@dataclass(frozen=True)
class ModelSpec:
    name: str
    dim_x: int
    dim_y: int
    c: Callable
    sigma: Callable
    f: Callable
    tau: Callable
    b: Optional[Callable] = None
    g: Optional[Callable] = None
    hurst: float = 0.75
    x0: tuple = (1.0,)
    y0: tuple = (0.0,)
    growth: GrowthMeta = field(default_factory=GrowthMeta)
    relaxation_time: float = 1.0
    # set when c - cbar and b do not depend on x; lets solvers reuse one corrector
    x_independent_corrector: bool = False

    def __post_init__(self):
        as_hurst(self.hurst)
        if len(self.x0) != self.dim_x or len(self.y0) != self.dim_y:
            raise DomainError("initial condition dimensions do not match the model")

    @property
    def x0_array(self):
        return np.asarray(self.x0, dtype=float)

    @property
    def y0_array(self):
        return np.asarray(self.y0, dtype=float)

    @property
    def extended(self):
        return self.b is not None or self.g is not None

    def fast_drift(self, lam=0.0):
        """Rescaled fast drift f + lam * g of the limiting generator."""
        if self.g is None or lam == 0.0:
            return self.f
        f, g = self.f, self.g
        return lambda y: f(y) + lam * g(y)

    def with_initial(self, x0=None, y0=None):
        kw = {}
        if x0 is not None:
            kw["x0"] = tuple(np.atleast_1d(np.asarray(x0, dtype=float)).tolist())
        if y0 is not None:
            kw["y0"] = tuple(np.atleast_1d(np.asarray(y0, dtype=float)).tolist())
        return replace(self, **kw)

    def reduced(self):
        """The base model obtained by dropping b and g."""
        return replace(self, b=None, g=None)


@dataclass(frozen=True)
class ScaleParams:
    eps: float
    eta: float
    lam: float = 0.0
    kappa: float = 0.0
    formal: bool = False  # permits eps = 0 (formal averaged-limit run)

    def __post_init__(self):
        if self.eta <= 0:
            raise DomainError(f"eta must be positive, got {self.eta}")
        if self.eps < 0 or (self.eps == 0 and not self.formal):
            raise DomainError(f"eps must be positive, got {self.eps}")
        if self.lam < 0:
            raise DomainError(f"lambda must be nonnegative, got {self.lam}")

    @property
    def ratio(self):
        """sqrt(eta) / sqrt(eps)."""
        return np.sqrt(self.eta / self.eps) if self.eps > 0 else np.inf


def _const_matrix(value, k):
    def fn(y):
        return np.full((y.shape[0], k, k), float(value))

    return fn


def _ou_c(x, y):
    return -x + y * y


def _ou_f(y):
    return -y


def _sigma_sqrt(y):
    return np.sqrt(1.0 + y * y)[:, :, None]


def _b_linear(x, y):
    return y.copy()


def _g_linear(y):
    return -y


_ONE = _const_matrix(1.0, 1)


def _ou_quadratic(**kw):
    base = dict(
        name="ou-quadratic",
        dim_x=1,
        dim_y=1,
        c=_ou_c,
        sigma=_ONE,
        f=_ou_f,
        tau=_ONE,
        growth=GrowthMeta(K=1.0, q=2.0, r=1.0, alpha=0.9, beta=2.0, gamma=0.0),
        x_independent_corrector=True,
    )
    base.update(kw)
    return ModelSpec(**base)


REGISTRY = {
    "ou-quadratic": lambda: _ou_quadratic(),
    "ou-quadratic-sigma": lambda: _ou_quadratic(name="ou-quadratic-sigma", sigma=_sigma_sqrt),
    "ou-quadratic-ext": lambda: _ou_quadratic(name="ou-quadratic-ext", b=_b_linear, g=_g_linear),
    "ou-quadratic-sigma-ext": lambda: _ou_quadratic(
        name="ou-quadratic-sigma-ext", sigma=_sigma_sqrt, b=_b_linear, g=_g_linear
    ),
}


def get_model(name, **overrides):
    try:
        model = REGISTRY[name]()
    except KeyError:
        raise DomainError(f"unknown model {name!r}; known: {sorted(REGISTRY)}") from None
    return replace(model, **overrides) if overrides else model


def scalar_model(name, c, sigma, f, tau, b=None, g=None, **kw):
    """Build a 1+1 dimensional model from scalar vectorised functions.

    ``c(x, y)``, ``sigma(y)``, ... act elementwise on 1-D arrays.
    """

    def wrap_xy(fn):
        return lambda x, y: np.broadcast_to(fn(x[:, 0], y[:, 0]), (x.shape[0],))[:, None] + 0.0

    def wrap_y(fn):
        return lambda y: np.broadcast_to(fn(y[:, 0]), (y.shape[0],))[:, None] + 0.0

    def wrap_mat(fn):
        return lambda y: np.broadcast_to(fn(y[:, 0]), (y.shape[0],))[:, None, None] + 0.0

    return ModelSpec(
        name=name,
        dim_x=1,
        dim_y=1,
        c=wrap_xy(c),
        sigma=wrap_mat(sigma),
        f=wrap_y(f),
        tau=wrap_mat(tau),
        b=None if b is None else wrap_xy(b),
        g=None if g is None else wrap_y(g),
        **kw,
    )
