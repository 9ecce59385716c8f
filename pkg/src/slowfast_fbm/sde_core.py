"""Two-scale Euler integrator for the slow-fast system and its diagnostics.

Per slow step of size h the fast component takes ``n_sub`` Euler-Maruyama
substeps of size h/n_sub with drift f/eta and diffusion tau/sqrt(eta).  The
slow drift is integrated on the same substeps (it feeds on the fast state),
while the fBm increment of the slow step, weighted by sigma at the left
slow-grid point, is spread evenly over the substeps.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng as _rng
from .errors import DomainError, PreconditionError, SimulationError
from .fbm_noise import FbmPath, alpha_h, as_hurst, sample_fgn
from .model import ModelSpec, ScaleParams

OVERFLOW = 1e12
SUBSTEPS_PER_RELAXATION = 50
MAX_SUBSTEPS = 10**6
_BLOCK_BUDGET = 4_000_000  # doubles per Brownian block


def n_substeps(h, eta, per_relax=SUBSTEPS_PER_RELAXATION):
    return int(min(MAX_SUBSTEPS, max(1, math.ceil(per_relax * h / eta - 1e-9))))


def n_substeps_pow2(h, eta, per_relax=SUBSTEPS_PER_RELAXATION):
    """Smallest power of two >= per_relax*h/eta; ladders use these so that
    coarser levels aggregate the finest Brownian increments exactly."""
    need = n_substeps(h, eta, per_relax)
    return 1 << (need - 1).bit_length()


def matvec(A, v):
    """Batched A @ v for A (P, i, j), v (P, j)."""
    if A.shape[-1] == 1:
        return A[:, :, 0] * v
    return np.einsum("pij,pj->pi", A, v)


# --------------------------------------------------------------------------- noise

@dataclass
class NoiseBundle:
    grid: np.ndarray
    fbm: FbmPath  # values (n+1, m)
    bm: np.ndarray  # (n, n_sub, k) Brownian sub-increments
    seed: tuple = ()

    @property
    def n_sub(self):
        return self.bm.shape[1]

    @property
    def fbm_increments(self):
        return np.diff(self.fbm.values, axis=0)


def _draw_bm(gens, n_steps, n_sub, k, dt):
    return _rng.normals(gens, (n_steps, n_sub, k)) * math.sqrt(dt)


def make_noise(model, n, T, n_sub, seed, path_index=0):
    """The driving noise of replica ``path_index``; same streams as ensembles use."""
    m, k = model.dim_x, model.dim_y
    fgen = _rng.stream(seed, path_index, _rng.FBM)
    bgen = _rng.stream(seed, path_index, _rng.BM)
    inc = sample_fgn(n, T, model.hurst, [fgen], dim=m)[0]
    values = np.vstack([np.zeros((1, m)), np.cumsum(inc, axis=0)])
    grid = np.linspace(0.0, T, n + 1)
    fbm = FbmPath(grid, values, as_hurst(model.hurst), seed=(seed, path_index, _rng.FBM))
    bm = _draw_bm([bgen], n, n_sub, k, T / n / n_sub)[0]
    return NoiseBundle(grid, fbm, bm, seed=(seed, path_index))


def coarsen_noise(noise, factor):
    """Same noise on a slow grid ``factor`` times coarser (n_sub unchanged)."""
    n = len(noise.grid) - 1
    if n % factor:
        raise DomainError(f"slow step count {n} not divisible by {factor}")
    nc = n // factor
    ns, k = noise.n_sub, noise.bm.shape[2]
    bm = noise.bm.reshape(nc, factor * ns, k).reshape(nc, ns, factor, k).sum(axis=2)
    vals = noise.fbm.values[::factor]
    grid = noise.grid[::factor]
    fbm = FbmPath(grid, vals, noise.fbm.hurst, noise.fbm.seed)
    return NoiseBundle(grid, fbm, bm, noise.seed)


# --------------------------------------------------------------------------- records

@dataclass
class SamplePath:
    grid: np.ndarray
    x: np.ndarray  # (n+1, m)
    y: np.ndarray  # (n+1, k)
    model: ModelSpec
    scales: ScaleParams
    fbm_increments: np.ndarray  # (n, m)
    noise: Optional[NoiseBundle] = None
    acc: dict = field(default_factory=dict)


@dataclass
class Ensemble:
    grid: np.ndarray
    x: np.ndarray  # (P, n+1, m)
    y: np.ndarray  # (P, n+1, k)
    fbm_increments: np.ndarray  # (P, n, m)
    model: ModelSpec
    scales: ScaleParams
    seed: int
    path_indices: np.ndarray
    n_sub: int
    acc: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.x.shape[0]

    def path(self, i):
        return SamplePath(
            self.grid,
            self.x[i],
            self.y[i],
            self.model,
            self.scales,
            self.fbm_increments[i],
            acc={key: v[i] for key, v in self.acc.items()},
        )


# --------------------------------------------------------------------------- engine

@dataclass
class _Level:
    scales: ScaleParams
    n_sub: int
    extended: bool
    accumulators: dict


def _integrate(model, levels, h, n, dwh, bm_blocks, n_sub_fine, P):
    """Advance all levels through n slow steps on shared noise.

    ``dwh`` is (P, n, m); ``bm_blocks`` yields (P, B, n_sub_fine, k) arrays of
    Brownian increments on the finest substep grid for consecutive steps.
    Overflow is reported as SimulationError rather than numpy warnings.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _integrate_levels(model, levels, h, n, dwh, bm_blocks, n_sub_fine, P)


def _integrate_levels(model, levels, h, n, dwh, bm_blocks, n_sub_fine, P):
    m, k = model.dim_x, model.dim_y
    x0 = np.broadcast_to(model.x0_array, (P, m))
    y0 = np.broadcast_to(model.y0_array, (P, k))
    out = []
    for lv in levels:
        rec = {
            "x": np.empty((P, n + 1, m)),
            "y": np.empty((P, n + 1, k)),
            "acc": {name: np.zeros((P, n + 1, m if dim is None else dim)) for name, (fn, dim) in lv.accumulators.items()},
            "state": [x0.copy(), y0.copy()],
        }
        rec["x"][:, 0] = x0
        rec["y"][:, 0] = y0
        out.append(rec)

    c, sigma, f, tau, b, g = model.c, model.sigma, model.f, model.tau, model.b, model.g
    step = 0
    for block in bm_blocks:
        for jb in range(block.shape[1]):
            fine = block[:, jb]
            dw = dwh[:, step]
            for lv, rec in zip(levels, out):
                x, y = rec["state"]
                sc = lv.scales
                ns = lv.n_sub
                r = n_sub_fine // ns
                dB = fine if r == 1 else fine.reshape(P, ns, r, k).sum(axis=2)
                dt = h / ns
                inv_eta = 1.0 / sc.eta
                inv_sqrt_eta = 1.0 / math.sqrt(sc.eta)
                ext = lv.extended
                if ext:
                    rb = math.sqrt(sc.eps / sc.eta)
                    rg = 1.0 / math.sqrt(sc.eps * sc.eta)
                sig_dw = matvec(sigma(y), dw)
                nz = math.sqrt(sc.eps) * sig_dw / ns
                accs = [(rec["acc"][name], fn) for name, (fn, _) in lv.accumulators.items() if name != "sigma_dw"]
                running = [np.zeros_like(a[:, 0]) for a, _ in accs]
                for j in range(ns):
                    cx = c(x, y)
                    if ext and b is not None:
                        cx = cx + rb * b(x, y)
                    for i, (_, fn) in enumerate(accs):
                        running[i] += fn(x, y) * dt
                    x = x + cx * dt + nz
                    fy = f(y) * inv_eta
                    if ext and g is not None:
                        fy = fy + rg * g(y)
                    y = y + fy * dt + matvec(tau(y), dB[:, j]) * inv_sqrt_eta
                for i, (a, _) in enumerate(accs):
                    a[:, step + 1] = a[:, step] + running[i]
                if "sigma_dw" in rec["acc"]:
                    a = rec["acc"]["sigma_dw"]
                    a[:, step + 1] = a[:, step] + sig_dw
                if not (np.isfinite(x).all() and np.isfinite(y).all()) or max(
                    np.abs(x).max(), np.abs(y).max()
                ) > OVERFLOW:
                    raise SimulationError(
                        f"state left the finite range at slow step {step + 1} "
                        f"(eps={sc.eps}, eta={sc.eta})",
                        step=step + 1,
                    )
                rec["x"][:, step + 1] = x
                rec["y"][:, step + 1] = y
                rec["state"] = [x, y]
            step += 1
    return out


def _noop(x, y):
    raise AssertionError("placeholder accumulator evaluated")


def _prepare_accumulators(spec):
    """Normalise {name: fn} / {name: (fn, dim)}; 'sigma_dw' is built in."""
    res = {}
    for name, val in (spec or {}).items():
        if name == "sigma_dw":
            continue
        fn, dim = (val, None) if callable(val) else val
        res[name] = (fn, dim)
    return res


def _chunk_run(model, levels, n, T, seed, idx, n_sub_fine, want_sigma_dw):
    P = len(idx)
    m, k = model.dim_x, model.dim_y
    h = T / n
    fgens = _rng.streams(seed, idx, _rng.FBM)
    bgens = _rng.streams(seed, idx, _rng.BM)
    dwh = sample_fgn(n, T, model.hurst, fgens, dim=m)
    B = max(1, min(n, _BLOCK_BUDGET // max(1, P * n_sub_fine * k)))
    dt_fine = h / n_sub_fine

    def blocks():
        done = 0
        while done < n:
            nb = min(B, n - done)
            yield _draw_bm(bgens, nb, n_sub_fine, k, dt_fine)
            done += nb

    lvls = []
    for lv in levels:
        acc = dict(lv.accumulators)
        if want_sigma_dw:
            acc["sigma_dw"] = (_noop, m)
        lvls.append(_Level(lv.scales, lv.n_sub, lv.extended, acc))
    return dwh, _integrate(model, lvls, h, n, dwh, blocks(), n_sub_fine, P)


def _run_paths(model, levels, n, T, n_paths, seed, n_sub_fine, threads, chunk, first_path, want_sigma_dw):
    idx_all = np.arange(first_path, first_path + n_paths)
    chunks = [idx_all[i : i + chunk] for i in range(0, n_paths, chunk)]

    def job(idx):
        return _chunk_run(model, levels, n, T, seed, idx, n_sub_fine, want_sigma_dw)

    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, chunks))
    else:
        results = [job(ix) for ix in chunks]
    grid = np.linspace(0.0, T, n + 1)
    dwh = np.concatenate([r[0] for r in results])
    ensembles = []
    for li, lv in enumerate(levels):
        recs = [r[1][li] for r in results]
        acc = {name: np.concatenate([rc["acc"][name] for rc in recs]) for name in recs[0]["acc"]}
        ensembles.append(
            Ensemble(
                grid,
                np.concatenate([rc["x"] for rc in recs]),
                np.concatenate([rc["y"] for rc in recs]),
                dwh,
                model,
                lv.scales,
                seed,
                idx_all,
                lv.n_sub,
                acc,
            )
        )
    return ensembles


def simulate_ensemble(
    model,
    scales,
    n,
    T,
    n_paths,
    seed,
    *,
    n_sub=None,
    accumulators=None,
    extended=False,
    threads=1,
    chunk=2048,
    first_path=0,
    record_sigma_dw=False,
):
    """Monte Carlo replicas of the slow-fast system (paths are independent).

    ``accumulators`` maps a name to ``fn(x, y)`` (or ``(fn, dim)``); its
    left-point integral over the substep grid is recorded at slow times.
    ``record_sigma_dw`` records the running sum of sigma(y_k) dW^H_k.
    """
    h = T / n
    ns = n_sub or n_substeps(h, scales.eta)
    lv = _Level(scales, ns, extended, _prepare_accumulators(accumulators))
    return _run_paths(model, [lv], n, T, n_paths, seed, ns, threads, chunk, first_path, record_sigma_dw)[0]


def simulate_ladder(
    model,
    scales_list,
    n,
    T,
    n_paths,
    seed,
    *,
    accumulators=None,
    extended=False,
    threads=1,
    chunk=1024,
    per_relax=SUBSTEPS_PER_RELAXATION,
    record_sigma_dw=False,
):
    """Ensembles for several (eps, eta) levels driven by common random numbers.

    One fBm path per replica is shared by every level; the Brownian driver is
    drawn on the finest substep grid and aggregated for coarser levels.
    ``accumulators`` is either one dict for all levels or a list of dicts.
    """
    h = T / n
    subs = [n_substeps_pow2(h, s.eta, per_relax) for s in scales_list]
    fine = max(subs)
    if isinstance(accumulators, (list, tuple)):
        acc_list = [_prepare_accumulators(a) for a in accumulators]
    else:
        acc_list = [_prepare_accumulators(accumulators) for _ in scales_list]
    levels = [_Level(s, ns, extended, a) for s, ns, a in zip(scales_list, subs, acc_list)]
    return _run_paths(model, levels, n, T, n_paths, seed, fine, threads, chunk, 0, record_sigma_dw)


def simulate_pair(model, scales, n, T, noise, *, accumulators=None, extended=False, record_sigma_dw=False):
    """One trajectory of the slow-fast system on the supplied noise."""
    if len(noise.grid) != n + 1 or not np.isclose(noise.grid[-1], T):
        raise DomainError("noise grid does not match (n, T)")
    ns = noise.n_sub
    if T / n / ns > scales.eta:
        raise DomainError(f"substep {T / n / ns:.3g} exceeds eta={scales.eta:.3g}; the fast Euler step is unstable")
    acc = _prepare_accumulators(accumulators)
    if record_sigma_dw:
        acc["sigma_dw"] = (_noop, model.dim_x)
    lv = _Level(scales, ns, extended, acc)
    dwh = noise.fbm_increments[None]
    recs = _integrate(model, [lv], T / n, n, dwh, iter([noise.bm[None]]), ns, 1)
    rec = recs[0]
    return SamplePath(
        noise.grid,
        rec["x"][0],
        rec["y"][0],
        model,
        scales,
        noise.fbm_increments,
        noise=noise,
        acc={name: a[0] for name, a in rec["acc"].items()},
    )


def simulate_fast_rescaled(
    model,
    T,
    h,
    seed,
    *,
    y0=None,
    n_paths=1,
    lam=0.0,
    record_every=1,
    tag=_rng.FAST,
    integrand=None,
):
    """Euler-Maruyama for dY = (f + lam g)(Y) dt + tau(Y) dB on [0, T].

    Returns (times, Y) with Y of shape (n_paths, n_records, k).  With
    ``integrand`` the trapezoid integral of integrand(Y_t) over [0, T] is
    returned as a third item, shape (n_paths,).
    """
    if T <= 0 or h <= 0:
        raise DomainError("T and h must be positive")
    k = model.dim_y
    steps = int(round(T / h))
    drift = model.fast_drift(lam)
    tau = model.tau
    y = np.broadcast_to(model.y0_array if y0 is None else np.asarray(y0, float), (n_paths, k)).copy()
    gens = _rng.streams(seed, range(n_paths), tag)
    sq = math.sqrt(h)
    recs = [y.copy()]
    if integrand is not None:
        prev = integrand(y)
        total = np.zeros_like(prev)
    B = max(1, min(steps, _BLOCK_BUDGET // max(1, n_paths * k)))
    done = 0
    while done < steps:
        nb = min(B, steps - done)
        z = _rng.normals(gens, (nb, k))
        for j in range(nb):
            y = y + drift(y) * h + matvec(tau(y), z[:, j]) * sq
            if integrand is not None:
                cur = integrand(y)
                total += 0.5 * h * (prev + cur)
                prev = cur
            if (done + j + 1) % record_every == 0:
                recs.append(y.copy())
        done += nb
        if not np.isfinite(y).all() or np.abs(y).max() > OVERFLOW:
            raise SimulationError(f"fast process left the finite range near step {done}", step=done)
    Y = np.stack(recs, axis=1)
    times = np.arange(Y.shape[1]) * h * record_every
    if integrand is not None:
        return times, Y, total
    return times, Y


# --------------------------------------------------------------------------- conditions

@dataclass
class ConditionResult:
    name: str
    passed: bool
    worst: float
    witness: Optional[np.ndarray] = None
    detail: str = ""


@dataclass
class ConditionReport:
    results: list

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def __getitem__(self, name):
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self):
        lines = []
        for r in self.results:
            verdict = "PASS" if r.passed else "FAIL"
            wit = "" if r.witness is None else " witness=" + ",".join(f"{v:.6g}" for v in np.ravel(r.witness))
            lines.append(f"{r.name}: {verdict} worst={r.worst:.6g}{wit} {r.detail}".rstrip())
        return "\n".join(lines)


def check_conditions(model, sample_box, n_probe=2000, seed=0, *, shell=0.5, floor=1e-8, lam=0.0):
    """Probe growth, nondegeneracy and recurrence of ``model`` on a box.

    ``sample_box = (x_radius, y_radius)``.  The recurrence inequality
    y.f(y) + alpha|y|^beta + (beta-2+k)/2 sup|tau|^2 <= 0 is checked on the
    shell ``shell*y_radius <= |y| <= y_radius``.
    """
    xr, yr = sample_box
    if not (np.isfinite(xr) and np.isfinite(yr)):
        raise DomainError("sample box must be finite")
    gen = _rng.stream(seed, 0, _rng.INIT)
    m, k = model.dim_x, model.dim_y
    gm = model.growth
    x = gen.uniform(-xr, xr, (n_probe, m))
    y = gen.uniform(-yr, yr, (n_probe, k))
    res = []

    cval = np.linalg.norm(model.c(x, y), axis=1)
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    bound = gm.K * (1 + nx**gm.r) * (1 + ny**gm.q)
    slack = cval - bound
    i = int(np.argmax(slack))
    res.append(ConditionResult("growth_c", bool(slack[i] <= 0), float(slack[i]), np.concatenate([x[i], y[i]])))

    S = model.sigma(y)
    ev = np.linalg.eigvalsh(S @ np.swapaxes(S, 1, 2))[:, 0]
    i = int(np.argmin(ev))
    res.append(ConditionResult("nondegenerate_sigma", bool(ev[i] > floor), float(ev[i]), y[i]))

    Tm = model.tau(y)
    tt = Tm @ np.swapaxes(Tm, 1, 2)
    ev = np.linalg.eigvalsh(tt)
    i = int(np.argmin(ev[:, 0]))
    res.append(ConditionResult("nondegenerate_tau", bool(ev[i, 0] > floor), float(ev[i, 0]), y[i]))
    tau_sup2 = float(np.max(np.sum(Tm**2, axis=(1, 2))))

    # recurrence on the outer shell: radial directions scaled into the shell
    u = gen.standard_normal((n_probe, k))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rad = gen.uniform(shell * yr, yr, (n_probe, 1))
    ys = u * rad
    lams = [lam] if model.g is None else [max(0.0, lam - 0.1), lam, lam + 0.1]
    worst = -np.inf
    wit = None
    for lm in lams:
        fy = model.fast_drift(lm)(ys)
        val = (
            np.sum(ys * fy, axis=1)
            + gm.alpha * np.linalg.norm(ys, axis=1) ** gm.beta
            + 0.5 * (gm.beta - 2 + k) * tau_sup2
        )
        i = int(np.argmax(val))
        if val[i] > worst:
            worst, wit = float(val[i]), ys[i]
    res.append(ConditionResult("recurrence", bool(worst <= 0), worst, wit, f"sup|tau|^2={tau_sup2:.6g}"))
    return ConditionReport(res)


def tau_sup_norm2(model, radius=10.0, n_probe=2000, seed=0):
    gen = _rng.stream(seed, 1, _rng.INIT)
    y = gen.uniform(-radius, radius, (n_probe, model.dim_y))
    T = model.tau(y)
    return float(np.max(np.linalg.norm(T, ord=2, axis=(1, 2)) ** 2))


# --------------------------------------------------------------------------- Ito residual

@dataclass(frozen=True)
class TestFunction:
    """F(x, y) with gradients; all callables take single points x (m,), y (k,)."""

    __test__ = False  # not a pytest class

    F: Callable
    dx: Callable
    dxx: Callable
    dy: Optional[Callable] = None
    dyy: Optional[Callable] = None


def _causal_kernel_weights(n, step, H):
    """w[d] = int over the cell d cells back of (s-u)^{2H-2} du, exactly."""
    e = 2.0 * H - 1.0
    d = np.arange(1, n + 1, dtype=float)
    return ((d * step) ** e - ((d - 1) * step) ** e) / e


def ito_residual(F, path, scales=None):
    """|F(X_T,Y_T) - F(x0,y0) - discretised right side of the fBm Ito formula|.

    The divergence integral is the left-point pathwise sum minus its trace
    correction alpha_H int int D_u(grad F sigma)_s |s-u|^{2H-2}; the
    epsilon alpha_H double integral is added back.  Kernel integrals are
    exact per cell.
    """
    if F.dx is None or F.dxx is None:
        raise DomainError("ito_residual needs x-derivatives of F")
    scales = scales or path.scales
    model = path.model
    ydep = F.dy is not None or F.dyy is not None
    if ydep and (F.dy is None or F.dyy is None):
        raise DomainError("ito_residual needs both y-derivatives of F")
    H = float(as_hurst(model.hurst))
    aH = alpha_h(H)
    x, y = path.x, path.y
    n = len(path.grid) - 1
    h = path.grid[1] - path.grid[0]
    eps, eta = scales.eps, scales.eta
    m = model.dim_x

    cs = model.c(x[:-1], y[:-1])  # (n, m)
    sg = model.sigma(y[:-1])  # (n, m, m)
    gx = np.array([F.dx(x[i], y[i]) for i in range(n)]).reshape(n, m)
    gxx = np.array([F.dxx(x[i], y[i]) for i in range(n)]).reshape(n, m, m)

    lhs = F.F(x[-1], y[-1]) - F.F(x[0], y[0])
    drift = float(np.sum(gx * cs) * h)
    dW = path.fbm_increments.reshape(n, m)
    pathwise = math.sqrt(eps) * float(np.sum(gx * matvec(sg, dW)))

    # inner_k = sum_{j<k} sigma_j * w[k-j]  (per matrix entry)
    w = _causal_kernel_weights(n, h, H)
    flat = sg.reshape(n, m * m)
    inner = np.zeros_like(flat)
    for col in range(m * m):
        conv = np.convolve(flat[:, col], w)[: n - 1]
        inner[1:, col] = conv
    inner = inner.reshape(n, m, m)
    # D_u X_s = sqrt(eps) sigma(y_u) for u < s, so the trace term equals the Ito term
    frob = np.einsum("kij,kil,kjl->k", gxx, sg, inner)
    ito_term = eps * aH * float(np.sum(frob) * h)
    trace = ito_term
    divergence = pathwise - trace

    yterm = 0.0
    if ydep:
        k = model.dim_y
        gy = np.array([F.dy(x[i], y[i]) for i in range(n)]).reshape(n, k)
        gyy = np.array([F.dyy(x[i], y[i]) for i in range(n)]).reshape(n, k, k)
        tt = model.tau(y[:-1])
        tt = tt @ np.swapaxes(tt, 1, 2)
        yterm = float(np.sum(gy * np.diff(y, axis=0))) + float(np.sum(gyy * tt) * h) / (2.0 * eta)
    rhs = drift + divergence + ito_term + yterm
    return abs(lhs - rhs)


# --------------------------------------------------------------------------- exponential moments

def exp_moment_diag(
    model,
    etas,
    nu,
    beta,
    T,
    n_paths,
    seed,
    *,
    n_report=4,
    per_relax=64,
    n_se=3.0,
    tau_sup2=None,
):
    """sup_{t<=T} E exp(nu |Y^eta_t|^beta) for each eta, estimated on a report grid.

    Returns a dict with rows (eta, estimate, stderr, t_at_sup) and a
    ``bounded`` flag: every pair of estimates agrees within ``n_se``
    combined standard errors.
    """
    alpha = model.growth.alpha
    if tau_sup2 is None:
        tau_sup2 = tau_sup_norm2(model)
    if nu * beta * tau_sup2 >= 2 * alpha:
        raise PreconditionError(
            f"need nu*beta*sup|tau|^2 < 2*alpha, got {nu * beta * tau_sup2:.6g} >= {2 * alpha:.6g}"
        )
    rows = []
    for ei, eta in enumerate(etas):
        h_slow = T / n_report
        ns = n_substeps(h_slow, eta, per_relax)
        dt = h_slow / ns
        t, Y = simulate_fast_rescaled(
            model,
            T / eta,
            dt / eta,
            seed,
            n_paths=n_paths,
            record_every=ns,
            tag=_rng.FAST + 1 + ei,
        )
        vals = np.exp(nu * np.linalg.norm(Y, axis=2) ** beta)  # (P, n_report+1)
        means = vals.mean(axis=0)
        ses = vals.std(axis=0, ddof=1) / math.sqrt(n_paths)
        i = int(np.argmax(means))
        rows.append({"eta": eta, "estimate": float(means[i]), "stderr": float(ses[i]), "t": float(t[i] * eta)})
    bounded = True
    for a in rows:
        for b in rows:
            if abs(a["estimate"] - b["estimate"]) > n_se * math.hypot(a["stderr"], b["stderr"]):
                bounded = False
    return {"rows": rows, "bounded": bounded}
