"""Second-order limit: fluctuation ensembles, their three-term decomposition,
the diffusion coefficient Sigma_Phi, the limiting mixed SDE and
distributional comparison of ensembles."""

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng as _rng
from .averaging import solve_limit_ode
from .errors import DomainError, NumericalError, PreconditionError
from .fbm_noise import as_hurst, h_inner_product, sample_fgn
from .sde_core import simulate_ensemble, simulate_ladder
from .stats import ks_critical, ks_two_sample

MIN_PATHS = 100
PSD_TOL = 1e-10


@dataclass
class FluctuationEnsemble:
    grid: np.ndarray
    theta: np.ndarray  # (P, n+1, m)
    scales: object
    xbar: np.ndarray  # (n+1, m)
    components: Optional[tuple] = None  # (I, II, III), each (P, n+1, m)

    @property
    def n_paths(self):
        return self.theta.shape[0]

    def decomposition_error(self):
        """max |theta - (I + II + III)| over paths and grid."""
        if self.components is None:
            raise DomainError("components were not recorded")
        return float(np.max(np.abs(self.theta - sum(self.components))))


def _slow_accumulators(model, cbar, scales, extended):
    c, b = model.c, model.b
    acc = {"cbar": lambda x, y: cbar(x)}
    if extended and b is not None:
        rb = math.sqrt(scales.eps / scales.eta)
        acc["c"] = lambda x, y: c(x, y) + rb * b(x, y)
    else:
        acc["c"] = c
    return acc


def _build_theta(e, xbar, x0, components):
    eps = e.scales.eps
    root = math.sqrt(eps)
    theta = (e.x - xbar[None]) / root
    theta[:, 0] = 0.0
    comps = None
    if components:
        # int cbar(Xbar) ds is taken as Xbar_t - x0, which makes the identity exact
        I = (e.acc["cbar"] - (xbar - x0)[None]) / root
        II = (e.acc["c"] - e.acc["cbar"]) / root
        III = e.acc["sigma_dw"]
        comps = (I, II, III)
    return FluctuationEnsemble(e.grid, theta, e.scales, xbar, comps)


def theta_ensemble(
    model,
    scales,
    n_paths,
    n,
    T,
    seed,
    *,
    xbar=None,
    cbar=None,
    components=True,
    extended=False,
    threads=1,
    n_sub=None,
):
    """theta = (X - Xbar)/sqrt(eps) with the decomposition I + II + III.

    ``cbar`` (callable (P, m) -> (P, m)) is required; ``xbar`` defaults to
    its RK4 solution on the slow grid.
    """
    if cbar is None:
        raise DomainError("theta_ensemble needs the averaged drift cbar")
    if xbar is None:
        _, xbar = solve_limit_ode(cbar, model.x0_array, T, T / n)
    xbar = np.asarray(xbar, dtype=float).reshape(n + 1, model.dim_x)
    acc = _slow_accumulators(model, cbar, scales, extended) if components else None
    e = simulate_ensemble(
        model, scales, n, T, n_paths, seed, n_sub=n_sub, accumulators=acc, extended=extended,
        threads=threads, record_sigma_dw=components,
    )
    return _build_theta(e, xbar, model.x0_array, components)


def theta_ladder(
    model,
    scales_list,
    n_paths,
    n,
    T,
    seed,
    *,
    cbars,
    components=False,
    extended=False,
    threads=1,
    per_relax=50,
):
    """theta ensembles for a ladder of scales on common random numbers.

    ``cbars`` holds one averaged drift per level (levels may need their own
    invariant measure to match the Euler step).
    """
    if len(cbars) != len(scales_list):
        raise DomainError("need one cbar per ladder level")
    h = T / n
    xbars = [solve_limit_ode(cb, model.x0_array, T, h)[1] for cb in cbars]
    accs = [_slow_accumulators(model, cb, s, extended) if components else {} for cb, s in zip(cbars, scales_list)]
    ens = simulate_ladder(
        model, scales_list, n, T, n_paths, seed, accumulators=accs, extended=extended, threads=threads,
        per_relax=per_relax, record_sigma_dw=components,
    )
    return [_build_theta(e, xb, model.x0_array, components) for e, xb in zip(ens, xbars)]


# --------------------------------------------------------------------------- Sigma_Phi

def psd_sqrt(A, tol=PSD_TOL):
    """Symmetric PSD square root by eigendecomposition."""
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -tol * scale:
        raise NumericalError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3g})")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _gradient_fn(corrector):
    """Normalise a corrector into grad(x, y) -> (N, m, k) for one-dimensional y."""

    def from_solutions(sols, y):
        sols = sols if isinstance(sols, (list, tuple)) else [sols]
        return np.stack([s.derivative(y[:, 0]) for s in sols], axis=1)[:, :, None]

    if callable(corrector) and not hasattr(corrector, "derivative"):
        return lambda x, y: from_solutions(corrector(x), y)
    return lambda x, y: from_solutions(corrector, y)


def sigma_phi(model, corrector, mu):
    """x -> (overline{(grad_y Phi tau)(grad_y Phi tau)^T})^{1/2}.

    ``corrector`` is a PoissonSolution (m = 1), a list of them (one per slow
    coordinate) or a callable x -> such a list.
    """
    grad = _gradient_fn(corrector)
    tau_s = model.tau(mu.samples)  # (N, k, k)

    def fn(x=None):
        x = np.zeros(model.dim_x) if x is None else np.asarray(x, dtype=float)
        G = grad(x, mu.samples)  # (N, m, k)
        A = G @ tau_s
        outer = np.einsum("n,nik,njk->ij", mu.weights, A, A)
        return psd_sqrt(outer)

    return fn


# --------------------------------------------------------------------------- limit law

@dataclass
class LimitLawSpec:
    """Coefficients of d theta = J(s) theta ds + lam Sigma(s) dB + sigma_bar dW^H (+ extra(s) ds).

    ``drift_jacobian`` and ``sigma_phi`` map a time to an (m, m) matrix;
    ``extra_drift`` (optional) maps a time to an (m,) vector.
    """

    drift_jacobian: Callable
    sigma_phi: Callable
    sigma_bar: np.ndarray
    lam: float
    hurst: float = 0.75
    extra_drift: Optional[Callable] = None
    bm_weight: Optional[float] = None  # overrides lam as the dB weight

    def __post_init__(self):
        as_hurst(self.hurst)
        self.sigma_bar = np.atleast_2d(np.asarray(self.sigma_bar, dtype=float))
        if self.lam < 0:
            raise DomainError("lambda must be nonnegative")


def constant_law(J, Sigma, sigma_bar, lam, hurst=0.75):
    J = np.atleast_2d(np.asarray(J, dtype=float))
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if np.abs(S - S.T).max() > 1e-12 or np.linalg.eigvalsh(S).min() < -PSD_TOL:
        raise NumericalError("Sigma_Phi must be symmetric positive semidefinite")
    return LimitLawSpec(lambda s: J, lambda s: S, sigma_bar, lam, hurst)


def simulate_limit_theta(law, n_paths, n, T, seed):
    """Euler scheme for the limit SDE on the slow grid, theta_0 = 0.

    The fBm driver is an exact fGn sample per step; W^H and B use their own
    stream tags, so they are independent of each other and of any prelimit
    ensemble sharing the seed.
    """
    m = law.sigma_bar.shape[0]
    h = T / n
    grid = np.linspace(0.0, T, n + 1)
    wgens = _rng.streams(seed, range(n_paths), _rng.LIMIT_FBM)
    bgens = _rng.streams(seed, range(n_paths), _rng.LIMIT_BM)
    dW = sample_fgn(n, T, law.hurst, wgens, dim=m)  # (P, n, m)
    dB = _rng.normals(bgens, (n, m)) * math.sqrt(h)
    weight = law.lam if law.bm_weight is None else law.bm_weight
    theta = np.zeros((n_paths, n + 1, m))
    th = theta[:, 0]
    for i in range(n):
        t = grid[i]
        J = np.atleast_2d(law.drift_jacobian(t))
        S = np.atleast_2d(law.sigma_phi(t))
        drift = th @ J.T
        if law.extra_drift is not None:
            drift = drift + np.asarray(law.extra_drift(t), dtype=float)
        th = th + drift * h + weight * dB[:, i] @ S.T + dW[:, i] @ law.sigma_bar.T
        theta[:, i + 1] = th
    return grid, theta


def linear_limit_variance(J, sigma_phi_value, sigma_bar, lam, H, T, n=4096):
    """Var(theta_T) for the scalar limit with constant coefficients.

    Brownian part in closed form; fBm part as ||sigma_bar e^{J(T-.)}||^2 in
    the fBm reproducing space.
    """
    s = np.linspace(0.0, T, n + 1)
    kern = sigma_bar * np.exp(J * (T - s))
    fbm_part = h_inner_product(kern, kern, H, T)
    if J == 0:
        bm_part = lam**2 * sigma_phi_value**2 * T
    else:
        bm_part = lam**2 * sigma_phi_value**2 * (math.exp(2 * J * T) - 1) / (2 * J)
    return bm_part + fbm_part


# --------------------------------------------------------------------------- comparison

@dataclass
class ComparisonReport:
    rows: list
    cov_rows: list
    passed: bool
    alpha: float
    n_se: float
    moment_orders: int = 2

    def to_csv(self, path):
        keys = ["time", "coord", "ks", "ks_crit"] + [f"mom{o}_diff" for o in range(1, self.moment_orders + 1)]
        keys += [f"mom{o}_se" for o in range(1, self.moment_orders + 1)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in self.rows:
                w.writerow([r[k] if isinstance(r[k], int) else repr(float(r[k])) for k in keys])
            fh.write(f"# verdict: {'PASS' if self.passed else 'FAIL'}\n")

    def ks(self, time, coord=0):
        for r in self.rows:
            if math.isclose(r["time"], time) and r["coord"] == coord:
                return r["ks"]
        raise KeyError((time, coord))


def _values_at(ens, grid, t):
    if isinstance(ens, FluctuationEnsemble):
        grid, ens = ens.grid, ens.theta
    ens = np.asarray(ens, dtype=float)
    if ens.ndim == 2:
        ens = ens[:, :, None]
    i = int(np.argmin(np.abs(grid - t)))
    if not math.isclose(grid[i], t, abs_tol=1e-12):
        raise DomainError(f"time {t} is not on the ensemble grid")
    return ens[:, i]


def compare_distributions(ens_a, ens_b, times, moments_up_to=2, *, grid=None, alpha=0.01, n_se=4.0, cov_pairs=None):
    """Fixed-time marginal comparison of two ensembles.

    Ensembles are FluctuationEnsembles or arrays (P, n+1[, m]) on ``grid``.
    Per time and coordinate: two-sample KS against the level-``alpha``
    critical value and raw-moment differences against ``n_se`` pooled
    standard errors.  Covariances are compared at ``cov_pairs`` (default all
    pairs of ``times``) for the first coordinate.
    """
    ga = ens_a.grid if isinstance(ens_a, FluctuationEnsemble) else grid
    gb = ens_b.grid if isinstance(ens_b, FluctuationEnsemble) else grid
    if ga is None or gb is None:
        raise DomainError("array ensembles need a grid")
    rows = []
    ok = True
    for t in times:
        A = _values_at(ens_a, ga, t)
        B = _values_at(ens_b, gb, t)
        if len(A) < MIN_PATHS or len(B) < MIN_PATHS:
            raise PreconditionError(f"need at least {MIN_PATHS} paths per ensemble")
        crit = ks_critical(len(A), len(B), alpha)
        for j in range(A.shape[1]):
            a, b = A[:, j], B[:, j]
            row = {"time": float(t), "coord": j, "ks": ks_two_sample(a, b), "ks_crit": crit}
            ok &= row["ks"] <= crit
            for o in range(1, moments_up_to + 1):
                d = float(np.mean(a**o) - np.mean(b**o))
                se = math.sqrt(np.var(a**o, ddof=1) / len(a) + np.var(b**o, ddof=1) / len(b))
                row[f"mom{o}_diff"] = d
                row[f"mom{o}_se"] = se
                ok &= abs(d) <= n_se * se
            rows.append(row)
    cov_rows = []
    pairs = cov_pairs if cov_pairs is not None else [(s, t) for i, s in enumerate(times) for t in times[i + 1 :]]
    for s, t in pairs:
        res = []
        for ens, g in ((ens_a, ga), (ens_b, gb)):
            u = _values_at(ens, g, s)[:, 0]
            v = _values_at(ens, g, t)[:, 0]
            prod = (u - u.mean()) * (v - v.mean())
            res.append((prod.mean(), prod.std(ddof=1) / math.sqrt(len(prod))))
        d = res[0][0] - res[1][0]
        se = math.hypot(res[0][1], res[1][1])
        cov_rows.append({"s": float(s), "t": float(t), "cov_diff": float(d), "stderr": float(se)})
        ok &= abs(d) <= n_se * se
    return ComparisonReport(rows, cov_rows, bool(ok), alpha, n_se, moments_up_to)
