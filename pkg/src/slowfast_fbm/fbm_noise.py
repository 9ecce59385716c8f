"""Exact sampling of fractional Brownian motion on uniform grids.

The default sampler is circulant embedding of the fractional Gaussian noise
(fGn) autocovariance, diagonalised by FFT.  When the embedding spectrum is
indefinite beyond ``TOL_EIG`` the sampler falls back to a dense Cholesky
factor of the exact fGn covariance.
"""

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import cholesky, matmul_toeplitz, toeplitz

from . import rng as _rng
from .errors import DomainError, NumericalError

TOL_EIG = 1e-10
CHOLESKY_MAX = 2**14


@dataclass(frozen=True)
class HurstParameter:
    value: float
    relaxed: bool = False

    def __post_init__(self):
        lo_ok = self.value >= 0.5 if self.relaxed else self.value > 0.5
        if not (lo_ok and self.value < 1.0):
            raise DomainError(f"Hurst index must lie in (1/2, 1), got {self.value}")

    @classmethod
    def brownian(cls):
        """H = 1/2, only for consistency checks against standard BM."""
        return cls(0.5, relaxed=True)

    def __float__(self):
        return float(self.value)


def as_hurst(H):
    if isinstance(H, HurstParameter):
        return H
    return HurstParameter(float(H))


def alpha_h(H):
    H = float(as_hurst(H))
    return H * (2.0 * H - 1.0)


def covariance_rh(s, t, H):
    """R_H(s, t) = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2."""
    H = float(as_hurst(H))
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("covariance_rh needs nonnegative times")
    two_h = 2.0 * H
    out = 0.5 * (s**two_h + t**two_h - np.abs(t - s) ** two_h)
    return float(out) if out.ndim == 0 else out


def fgn_autocovariance(k, H, step=1.0):
    """Autocovariance of fBm increments over cells of width ``step`` at lag ``k``."""
    H = as_hurst(H).value
    if step <= 0:
        raise DomainError(f"step must be positive, got {step}")
    k = np.abs(np.asarray(k, dtype=float))
    two_h = 2.0 * H
    g = 0.5 * ((k + 1) ** two_h - 2 * k**two_h + np.abs(k - 1) ** two_h)
    g = g * step**two_h
    return float(g) if g.ndim == 0 else g


@dataclass
class FbmPath:
    grid: np.ndarray
    values: np.ndarray  # (n+1,) or (n+1, m)
    hurst: HurstParameter
    seed: tuple = field(default=())

    def __post_init__(self):
        if len(self.values) != len(self.grid):
            raise DomainError("grid and values length differ")

    @property
    def increments(self):
        return np.diff(self.values, axis=0)


@lru_cache(maxsize=64)
def _embedding_sqrt_eigs(n, H):
    """sqrt(eigenvalues / M) of the circulant embedding of unit-step fGn, or None."""
    k = np.arange(n + 1)
    gamma = fgn_autocovariance(k, H)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = np.fft.fft(row).real
    top = lam.max()
    if lam.min() < -TOL_EIG * top:
        return None
    lam = np.clip(lam, 0.0, None)
    return np.sqrt(lam / row.size)


@lru_cache(maxsize=16)
def _cholesky_factor(n, H):
    if n > CHOLESKY_MAX:
        raise NumericalError(f"Cholesky fallback limited to n <= {CHOLESKY_MAX}, got {n}")
    cov = toeplitz(fgn_autocovariance(np.arange(n), H))
    try:
        return cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"fGn covariance not positive definite (n={n}, H={H})") from exc


def fgn_from_normals(n, H, z):
    """Map standard normals to unit-step fGn samples.

    ``z`` has shape (..., 2*(2n)) for the circulant route; the Cholesky
    fallback consumes the first n entries.  Both routes are exact.
    """
    H = as_hurst(H)
    root = _embedding_sqrt_eigs(n, H)
    if root is None:
        L = _cholesky_factor(n, H)
        return z[..., :n] @ L.T
    M = root.size
    w = z[..., :M] + 1j * z[..., M : 2 * M]
    return np.fft.fft(root * w, axis=-1)[..., :n].real


def fgn_normals_needed(n):
    return 2 * (2 * n)


def sample_fgn(n, T, H, gens, dim=1):
    """fGn increments for a batch of paths, one generator per path.

    Returns shape (P, n, dim).  Components are independent and drawn in
    order from each path's own stream.
    """
    H = as_hurst(H)
    if n < 1 or T <= 0:
        raise DomainError("need n >= 1 and T > 0")
    z = _rng.normals(gens, (dim, fgn_normals_needed(n)))
    inc = fgn_from_normals(n, H, z) * (T / n) ** H.value
    return np.swapaxes(inc, 1, 2)


def sample_fbm(n, T, H, seed, dim=1, path_index=0):
    """One exact fBm path on the uniform grid t_k = kT/n."""
    hp = as_hurst(H)
    gen = _rng.stream(seed, path_index, _rng.FBM)
    inc = sample_fgn(n, T, hp, [gen], dim=dim)[0]
    values = np.vstack([np.zeros((1, dim)), np.cumsum(inc, axis=0)])
    if dim == 1:
        values = values[:, 0]
    grid = np.linspace(0.0, T, n + 1)
    return FbmPath(grid, values, hp, seed=(seed, path_index, _rng.FBM))


def sample_fbm_ensemble(n, T, H, n_paths, seed, dim=1, first_path=0):
    """Ensemble (P, n+1, dim) built path by path from per-path streams."""
    gens = _rng.streams(seed, range(first_path, first_path + n_paths), _rng.FBM)
    inc = sample_fgn(n, T, H, gens, dim=dim)
    out = np.zeros((n_paths, n + 1, dim))
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


def h_inner_product(phi, psi, H, T):
    """<phi, psi> in the fBm reproducing space for grid functions on [0, T].

    Product trapezoid rule: each cell carries the average of its two node
    values, and the kernel alpha_H |r-u|^{2H-2} is integrated exactly over
    every pair of cells (which reduces to the fGn autocovariance).
    """
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if phi.shape != psi.shape or phi.ndim != 1 or phi.size < 2:
        raise DomainError("phi and psi must be sampled on the same grid")
    n = phi.size - 1
    step = T / n
    a = 0.5 * (phi[1:] + phi[:-1])
    b = 0.5 * (psi[1:] + psi[:-1])
    if not a.any() or not b.any():
        return 0.0
    gamma = fgn_autocovariance(np.arange(n), H, step)
    return float(a @ matmul_toeplitz(gamma, b))


def write_paths_csv(path, grid, values, prefix="w"):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    header = ["t"] + [f"{prefix}{i + 1}" for i in range(values.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, row in zip(grid, values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
