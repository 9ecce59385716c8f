"""First-order limit: invariant measure, averaged coefficients, limit ODE,
Poisson correctors and the strong / ergodic error tables."""

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu

from . import rng as _rng
from .errors import DomainError, PreconditionError, SimulationError
from .model import ScaleParams
from .stats import fit_slope
from .sde_core import OVERFLOW, n_substeps_pow2, simulate_fast_rescaled, simulate_ladder, tau_sup_norm2

MOMENT_ORDER = 4
BURN_IN_RELAXATIONS = 50.0
FK_RELAXATIONS = 20.0


# --------------------------------------------------------------------------- invariant measure

@dataclass
class InvariantMeasureEstimate:
    """Weighted point cloud approximating mu.

    ``groups`` labels independent chains; standard errors use the spread of
    per-chain means, which accounts for autocorrelation inside each chain.
    Quadrature measures carry no groups and report zero standard error.
    """

    samples: np.ndarray  # (N, k)
    weights: np.ndarray  # (N,)
    groups: Optional[np.ndarray] = None
    step: Optional[float] = None  # Euler step of the sampling chain
    moments: np.ndarray = field(init=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.samples.shape[0],) or w.size == 0:
            raise DomainError("weights must be a nonempty vector matching samples")
        self.weights = w / w.sum()
        self.moments = np.array([self.mean(lambda y, o=o: y**o) for o in range(1, MOMENT_ORDER + 1)])
        if not np.isfinite(self.moments).all():
            raise SimulationError("invariant-measure moments are not finite")

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def size(self):
        return self.samples.shape[0]

    def mean(self, fn):
        """E_mu[fn(y)] for fn mapping (N, k) to (N, ...)."""
        v = np.asarray(fn(self.samples), dtype=float)
        return np.tensordot(self.weights, v, axes=(0, 0))

    def stderr(self, fn):
        if self.groups is None:
            return np.zeros_like(np.asarray(self.mean(fn)))
        v = np.asarray(fn(self.samples), dtype=float)
        labels = np.unique(self.groups)
        gm = np.stack([v[self.groups == g].mean(axis=0) for g in labels])
        return gm.std(axis=0, ddof=1) / math.sqrt(len(labels))


def estimate_invariant_measure(
    model,
    burn_in=None,
    n_samples=200_000,
    thin=10,
    seed=0,
    *,
    h_tilde=None,
    n_chains=256,
    lam=0.0,
):
    """Sample mu from the rescaled fast process dY = f dt + tau dB.

    ``n_chains`` independent chains run side by side (vectorised); each
    discards ``burn_in`` time units and keeps every ``thin``-th Euler state.
    ``h_tilde`` is the Euler step in rescaled time.
    """
    if n_samples < 1 or thin < 1 or n_chains < 1:
        raise DomainError("n_samples, thin and n_chains must be positive")
    relax = model.relaxation_time
    h_tilde = relax / 64 if h_tilde is None else h_tilde
    burn_in = BURN_IN_RELAXATIONS * relax if burn_in is None else burn_in
    n_chains = min(n_chains, n_samples)
    per_chain = math.ceil(n_samples / n_chains)
    n_burn = math.ceil(burn_in / (h_tilde * thin))
    steps = (n_burn + per_chain) * thin
    _, Y = simulate_fast_rescaled(
        model,
        steps * h_tilde,
        h_tilde,
        seed,
        n_paths=n_chains,
        lam=lam,
        record_every=thin,
        tag=_rng.INVARIANT,
    )
    kept = Y[:, n_burn + 1 : n_burn + 1 + per_chain]  # (C, per_chain, k)
    groups = np.repeat(np.arange(n_chains), kept.shape[1])
    samples = kept.reshape(-1, model.dim_y)
    return InvariantMeasureEstimate(samples, np.ones(len(samples)), groups, h_tilde)


def invariant_measure_quadrature(model, y_domain=(-8.0, 8.0), n_grid=8001, lam=0.0):
    """Density of mu for a one-dimensional fast variable on a grid.

    p(y) is proportional to tau(y)^-2 exp(int_0^y 2 (f + lam g) / tau^2);
    weights are trapezoid weights times the normalised density.
    """
    if model.dim_y != 1:
        raise DomainError("quadrature invariant measure needs dim_y = 1")
    y = np.linspace(y_domain[0], y_domain[1], n_grid)
    col = y[:, None]
    a = model.tau(col)[:, 0, 0] ** 2
    drift = model.fast_drift(lam)(col)[:, 0]
    expo = cumulative_simpson(2.0 * drift / a, x=y, initial=0.0)
    expo -= expo.max()
    dens = np.exp(expo) / a
    w = dens * (y[1] - y[0])
    w[[0, -1]] *= 0.5
    return InvariantMeasureEstimate(col, w)


# --------------------------------------------------------------------------- averaging

def average(fn, mu):
    """int fn(y) mu(dy) for fn mapping (N, k) to (N, ...)."""
    return mu.mean(fn)


def averaged_drift(model, mu, x, fn=None):
    """cbar(x) = int c(x, y) mu(dy) (or any ``fn(x, y)``); x is (m,) or (P, m)."""
    fn = model.c if fn is None else fn
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    N = mu.size
    out = []
    for xi in xs:
        xb = np.broadcast_to(xi, (N, xi.size))
        out.append(np.tensordot(mu.weights, fn(xb, mu.samples), axes=(0, 0)))
    out = np.asarray(out)
    return out[0] if single else out


def averaged_function(model, mu, fn=None, *, x_range=(-10.0, 10.0), n_nodes=129):
    """Fast callable (P, m) -> (P, m) for cbar.

    For m = 1 cbar is tabulated on ``x_range`` and interpolated by a cubic
    spline (exact for polynomials of degree <= 3 in x); otherwise each call
    averages directly.
    """
    fn = model.c if fn is None else fn
    if model.dim_x != 1:
        return lambda x: averaged_drift(model, mu, x, fn)
    nodes = np.linspace(x_range[0], x_range[1], n_nodes)
    vals = averaged_drift(model, mu, nodes[:, None], fn)
    spline = CubicSpline(nodes, vals, axis=0)

    def cbar(x):
        x = np.asarray(x, dtype=float)
        if np.any(x < x_range[0]) or np.any(x > x_range[1]):
            return averaged_drift(model, mu, x, fn)
        return spline(x[..., 0])

    return cbar


def solve_limit_ode(cbar, x0, T, h):
    """Classical RK4 for dX/dt = cbar(X); cbar maps (P, m) to (P, m).

    ``x0`` is (m,) or (P, m).  Returns (grid, X) with X of shape (n+1, m) or
    (P, n+1, m).
    """
    if h <= 0 or T <= 0:
        raise DomainError("T and h must be positive")
    n = int(round(T / h))
    if not math.isclose(n * h, T, rel_tol=1e-9):
        raise DomainError(f"T={T} is not a multiple of h={h}")
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    x = np.atleast_2d(x0).copy()
    out = np.empty((x.shape[0], n + 1, x.shape[1]))
    out[:, 0] = x
    for i in range(n):
        k1 = cbar(x)
        k2 = cbar(x + 0.5 * h * k1)
        k3 = cbar(x + 0.5 * h * k2)
        k4 = cbar(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(x).all() or np.abs(x).max() > OVERFLOW:
            raise SimulationError(f"limit ODE overflow at step {i + 1}", step=i + 1)
        out[:, i + 1] = x
    grid = np.linspace(0.0, T, n + 1)
    return grid, (out[0] if single else out)


# --------------------------------------------------------------------------- Poisson correctors

@dataclass
class PoissonSolution:
    x_slice: object  # point, or the string "x-independent"
    grid: np.ndarray
    values: np.ndarray
    dvalues: np.ndarray
    centering_residual: float
    full_grid: Optional[np.ndarray] = None
    full_values: Optional[np.ndarray] = None
    full_dvalues: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise DomainError("corrector grid must be strictly increasing")
        if self.full_grid is None:
            self.full_grid, self.full_values, self.full_dvalues = self.grid, self.values, self.dvalues

    def value(self, y):
        return np.interp(np.asarray(y, dtype=float), self.full_grid, self.full_values)

    def derivative(self, y):
        return np.interp(np.asarray(y, dtype=float), self.full_grid, self.full_dvalues)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "phi", "dphi"])
            for row in zip(self.grid, self.values, self.dvalues):
                w.writerow([repr(float(v)) for v in row])


def _centering_check(rhs, mu, n_se=4.0, floor=1e-6):
    col = lambda y: rhs(y[:, 0])
    v = float(mu.mean(col))
    se = float(mu.stderr(col))
    if abs(v) > n_se * se + floor:
        raise PreconditionError(f"right-hand side is not centered under mu: mean {v:.3g} (stderr {se:.2g})")
    return v


def _generator_matrix(drift, a, dy):
    """Central-difference generator with reflecting (zero-flux ghost) ends."""
    N = drift.size
    lo = a / dy**2 - drift / (2 * dy)
    up = a / dy**2 + drift / (2 * dy)
    diag = -2 * a / dy**2
    lower = lo[1:].copy()
    upper = up[:-1].copy()
    upper[0] = 2 * a[0] / dy**2
    lower[-1] = 2 * a[-1] / dy**2
    return sparse.diags([lower, diag, upper], [-1, 0, 1], shape=(N, N), format="csc")


def discrete_generator(model, grid, values, lam=0.0):
    """Apply the central-difference generator to grid values (interior rows)."""
    col = grid[:, None]
    drift = model.fast_drift(lam)(col)[:, 0]
    a = 0.5 * model.tau(col)[:, 0, 0] ** 2
    return (_generator_matrix(drift, a, grid[1] - grid[0]) @ values)[1:-1]


def solve_poisson_fd(
    model,
    rhs,
    mu=None,
    y_domain=(-5.0, 5.0),
    n_grid=4001,
    *,
    lam=0.0,
    pad=0.4,
    x_slice="x-independent",
    check_centered=True,
):
    """Solve (f + lam g) phi' + tau^2/2 phi'' = -rhs, centered under mu.

    ``rhs`` maps a 1-D array of y-values to a 1-D array.  The reflecting
    boundary sits ``pad`` half-widths outside ``y_domain`` so its boundary
    layer stays off the requested grid.  The discrete right-hand side is
    projected onto the range of the operator with its left null vector.
    """
    if model.dim_y != 1:
        raise DomainError("solve_poisson_fd supports dim_y = 1 only; use solve_poisson_fk")
    lo, hi = y_domain
    if not hi > lo or n_grid < 5:
        raise DomainError("need y_min < y_max and n_grid >= 5")
    if mu is not None and check_centered:
        _centering_check(rhs, mu)
    dy = (hi - lo) / (n_grid - 1)
    npad = int(math.ceil(pad * 0.5 * (hi - lo) / dy))
    N = n_grid + 2 * npad
    y = lo + dy * (np.arange(N) - npad)
    col = y[:, None]
    drift = model.fast_drift(lam)(col)[:, 0]
    a = 0.5 * model.tau(col)[:, 0, 0] ** 2
    A = _generator_matrix(drift, a, dy)
    r = np.asarray(rhs(y), dtype=float)

    # left null vector: A^T pi = 0 with sum(pi) = 1
    At = A.T.tolil()
    At[N - 1, :] = np.ones(N)
    e = np.zeros(N)
    e[-1] = 1.0
    pi = splu(At.tocsc()).solve(e)
    r = r - pi @ r

    # pin the centre value; the dropped equation is implied by consistency
    M = A.tolil()
    c = N // 2
    M[c, :] = 0.0
    M[c, c] = 1.0
    b = -r
    b[c] = 0.0
    phi = splu(M.tocsc()).solve(b)
    if mu is None:
        shift = float(pi @ phi)
    else:
        shift = float(mu.mean(lambda s: np.interp(s[:, 0], y, phi)))
    phi = phi - shift
    dphi = np.gradient(phi, dy, edge_order=2)
    resid = 0.0 if mu is None else abs(float(mu.mean(lambda s: np.interp(s[:, 0], y, phi))))
    sl = slice(npad, npad + n_grid)
    return PoissonSolution(x_slice, y[sl], phi[sl], dphi[sl], resid, y, phi, dphi)


def solve_poisson_fk(
    model,
    rhs,
    y,
    T_max=None,
    n_paths=4000,
    seed=0,
    *,
    h=None,
    lam=0.0,
    mu=None,
):
    """Feynman-Kac estimate phi(y) = int_0^T_max E rhs(Y_t^y) dt.

    ``rhs`` maps (P, k) to (P,).  Returns (estimate, stderr, tail) where
    ``tail`` bounds the neglected part by |E rhs(Y_T_max)| (plus one
    standard error) times the relaxation time.  With ``mu`` the centering
    precondition is checked first.
    """
    relax = model.relaxation_time
    T_max = FK_RELAXATIONS * relax if T_max is None else T_max
    h = relax / 200 if h is None else h
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != model.dim_y:
        raise DomainError("starting point has the wrong dimension")
    if mu is not None:
        _centering_check(lambda s: rhs(s[:, None]) if model.dim_y == 1 else rhs(s), mu)
    times, Y, integral = simulate_fast_rescaled(
        model, T_max, h, seed, y0=y, n_paths=n_paths, lam=lam, record_every=int(round(T_max / h)),
        tag=_rng.FK, integrand=rhs,
    )
    est = float(integral.mean())
    se = float(integral.std(ddof=1) / math.sqrt(n_paths))
    end = rhs(Y[:, -1])
    tail = abs(float(end.mean())) * relax + float(end.std(ddof=1) / math.sqrt(n_paths)) * relax
    return est, se, tail


# --------------------------------------------------------------------------- error tables

def admissible_p_bound(model, T, tau_sup2=None):
    """Upper bound on p, or inf when grad_x c is declared bounded."""
    gm = model.growth
    if gm.gamma <= 0:
        return math.inf
    tau_sup2 = tau_sup_norm2(model) if tau_sup2 is None else tau_sup2
    return 2 * gm.alpha / (T * gm.beta * gm.gamma * tau_sup2)


def _check_p(model, p, T):
    if p <= 0:
        raise PreconditionError(f"p must be positive, got {p}")
    bound = admissible_p_bound(model, T)
    if p >= bound:
        raise PreconditionError(f"p={p} outside the admissible range p < {bound:.6g}")


def sup_moment(diff, p):
    """(E sup_t |diff|^p, stderr) for diff of shape (P, n+1, m)."""
    s = np.max(np.linalg.norm(diff, axis=2), axis=1) ** p
    return float(s.mean()), float(s.std(ddof=1) / math.sqrt(len(s)))


def _level_measure(model, dt_over_eta, cache, mu_kwargs, lam=0.0):
    key = (round(dt_over_eta, 14), lam)
    if key not in cache:
        cache[key] = estimate_invariant_measure(model, h_tilde=dt_over_eta, lam=lam, **mu_kwargs)
    return cache[key]


def strong_error_table(
    model,
    scale_list,
    p,
    n_paths,
    n,
    T,
    seed,
    *,
    threads=1,
    mu_kwargs=None,
    per_relax=50,
    limit=None,
):
    """E sup_t |X^eps_t - Xbar_t|^p along a ladder driven by common random numbers.

    Each level's cbar uses an invariant measure sampled with that level's
    Euler step dt/eta, so the comparison isolates the averaging error.
    ``limit`` overrides Xbar with a callable (ensemble, level) -> (P, n+1, m).
    Returns (rows, ensembles); rows carry epsilon, eta, p, error, stderr.
    """
    _check_p(model, p, T)
    scale_list = [s if isinstance(s, ScaleParams) else ScaleParams(*s) for s in scale_list]
    ens = simulate_ladder(model, scale_list, n, T, n_paths, seed, threads=threads, per_relax=per_relax)
    mu_kwargs = dict(mu_kwargs or {})
    mu_kwargs.setdefault("seed", seed)
    cache = {}
    h = T / n
    rows = []
    for e in ens:
        if limit is not None:
            xbar = limit(e)
        else:
            mu = _level_measure(model, h / e.n_sub / e.scales.eta, cache, mu_kwargs)
            cbar = averaged_function(model, mu)
            _, xb = solve_limit_ode(cbar, model.x0_array, T, h)
            xbar = xb[None]
        err, se = sup_moment(e.x - xbar, p)
        rows.append({"epsilon": e.scales.eps, "eta": e.scales.eta, "p": p, "error": err, "stderr": se})
    return rows, ens


def ergodic_error_table(
    model,
    h_fn,
    eta_list,
    p,
    n_paths,
    n,
    T,
    seed,
    *,
    eps_list=None,
    hbar=None,
    x_independent=False,
    threads=1,
    mu_kwargs=None,
    per_relax=50,
):
    """E sup_t |int_0^t (h(X,Y) - hbar(X)) ds|^p for each eta.

    ``h_fn(x, y)`` maps to (P, 1).  ``hbar`` (callable (P, m) -> (P, 1)) is
    estimated per level from mu when omitted; ``x_independent`` declares that
    h depends on y only, so hbar is a constant.  Returns (rows, fit) where
    fit is the log-log slope against sqrt(eta), or None with fewer than
    three levels or a zero error.
    """
    eps_list = list(eta_list) if eps_list is None else list(eps_list)
    scales = [ScaleParams(e, t) for e, t in zip(eps_list, eta_list)]
    h = T / n
    mu_kwargs = dict(mu_kwargs or {})
    mu_kwargs.setdefault("seed", seed)
    cache = {}
    accs = []
    for s in scales:
        ns = n_substeps_pow2(h, s.eta, per_relax)
        if hbar is not None:
            hb = hbar
        else:
            mu = _level_measure(model, h / ns / s.eta, cache, mu_kwargs)
            if x_independent:
                const = float(mu.mean(lambda y: h_fn(np.zeros((len(y), model.dim_x)), y)[:, 0]))
                hb = lambda x, const=const: np.full((x.shape[0], 1), const)
            else:
                hb = averaged_function(model, mu, h_fn)
        accs.append({"h": (h_fn, 1), "hbar": (lambda x, y, hb=hb: hb(x), 1)})
    ens = simulate_ladder(model, scales, n, T, n_paths, seed, accumulators=accs, threads=threads, per_relax=per_relax)
    rows = []
    for e in ens:
        err, se = sup_moment(e.acc["h"] - e.acc["hbar"], p)
        rows.append({"epsilon": e.scales.eps, "eta": e.scales.eta, "p": p, "error": err, "stderr": se})
    errs = [r["error"] for r in rows]
    fit = None
    if len(rows) >= 3 and min(errs) > 0:
        fit = fit_slope(np.sqrt([r["eta"] for r in rows]), [e ** (1.0 / p) for e in errs])
    return rows, fit


def write_table_csv(path, rows, columns=("epsilon", "eta", "p", "error", "stderr")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])
