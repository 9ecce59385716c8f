"""Experiment configuration and the pipelines behind each CLI subcommand.

Configuration is INI text.  Every numeric value is an arithmetic expression
(``2^-4`` is fine); lists are comma separated.  See README for the grammar.
"""

import configparser
import csv
import hashlib
import json
import math
import os
import platform
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy

from . import __version__
from . import averaging as av
from . import extended_model as ext
from . import fluctuations as fl
from .errors import (
    ConfigError,
    DomainError,
    ExpressionError,
    NumericalError,
    PreconditionError,
    SimulationError,
)
from .expr import parse_expression
from .model import REGISTRY, GrowthMeta, ModelSpec, ScaleParams, get_model
from .sde_core import n_substeps_pow2, simulate_ensemble, simulate_ladder
from .stats import fit_slope

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_NUMERICAL = 4
EXIT_CHECK = 5

COMMANDS = ("simulate", "average", "poisson", "rates", "ergodic", "fluctuations", "extended")

DEFAULT_CONFIG = """
[model]
name = ou-quadratic

[scales]
eps = 2^-4, 2^-5, 2^-6, 2^-7, 2^-8, 2^-9
eta = eps

[run]
T = 1
n = 16
n_paths = 2000
p = 2
seed = 20240601
"""


def exit_code_for(exc):
    if isinstance(exc, (ConfigError, DomainError)):
        return EXIT_CONFIG
    if isinstance(exc, PreconditionError):
        return EXIT_PRECONDITION
    if isinstance(exc, (NumericalError, SimulationError)):
        return EXIT_NUMERICAL
    return 1


# --------------------------------------------------------------------------- configuration

@dataclass
class ExperimentConfig:
    model: ModelSpec
    eps: list
    eta: list
    T: float = 1.0
    n: int = 16
    n_paths: int = 2000
    p: float = 2.0
    seed: int = 0
    regime: Optional[ext.RegimeSpec] = None
    formats: tuple = ("csv",)
    sections: dict = field(default_factory=dict)
    text: str = ""

    @property
    def scales(self):
        return [ScaleParams(e, t) for e, t in zip(self.eps, self.eta)]

    @property
    def digest(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def number(self, section, key, default):
        raw = self.get(section, key)
        return default if raw is None else _scalar(raw, f"{section}.{key}")

    def numbers(self, section, key, default):
        raw = self.get(section, key)
        return default if raw is None else _scalar_list(raw, f"{section}.{key}")


def _scalar(text, where):
    try:
        return parse_expression(text.strip()).scalar()
    except ExpressionError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _scalar_list(text, where):
    items = [t for t in text.split(",") if t.strip()]
    if not items:
        raise ConfigError(f"{where}: empty list")
    return [_scalar(t, where) for t in items]


def _integer(text, where):
    v = _scalar(text, where)
    if v != int(v):
        raise ConfigError(f"{where}: expected an integer, got {v}")
    return int(v)


def _coefficient(source, where, needs):
    try:
        e = parse_expression(source)
    except ExpressionError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    extra = e.variables - set(needs)
    if extra:
        raise ConfigError(f"{where}: variables {sorted(extra)} are not allowed here")
    return e


def _inline_model(sec, name):
    """A 1+1 dimensional model from expressions c(x,y), sigma(y), f(y), tau(y)[, b(x,y), g(y)]."""
    missing = [k for k in ("c", "sigma", "f", "tau") if k not in sec]
    if missing:
        raise ConfigError(f"model: missing expressions {missing}")
    c = _coefficient(sec["c"], "model.c", "xy")
    sigma = _coefficient(sec["sigma"], "model.sigma", "y")
    f = _coefficient(sec["f"], "model.f", "y")
    tau = _coefficient(sec["tau"], "model.tau", "y")
    b = _coefficient(sec["b"], "model.b", "xy") if "b" in sec else None
    g = _coefficient(sec["g"], "model.g", "y") if "g" in sec else None

    def xy(e):
        return lambda x, y: np.broadcast_to(e(x=x[:, 0], y=y[:, 0]), (x.shape[0],))[:, None] + 0.0

    def vec(e):
        return lambda y: np.broadcast_to(e(y=y[:, 0]), (y.shape[0],))[:, None] + 0.0

    def mat(e):
        return lambda y: np.broadcast_to(e(y=y[:, 0]), (y.shape[0],))[:, None, None] + 0.0

    # c - cbar is x-independent when c has no x or the config says so (e.g. c = -x + y^2)
    flag = sec.get("x_independent_corrector", "").strip().lower() in ("1", "true", "yes")
    return ModelSpec(
        name=name,
        dim_x=1,
        dim_y=1,
        c=xy(c),
        sigma=mat(sigma),
        f=vec(f),
        tau=mat(tau),
        b=None if b is None else xy(b),
        g=None if g is None else vec(g),
        x_independent_corrector=flag or "x" not in c.variables,
    )


def _build_model(sec):
    name = sec.get("name", "inline").strip()
    if any(k in sec for k in ("c", "sigma", "f", "tau")):
        model = _inline_model(sec, name)
    elif name in REGISTRY:
        model = get_model(name)
    else:
        raise ConfigError(f"model: unknown model {name!r}; known: {sorted(REGISTRY)}")
    kw = {}
    if "hurst" in sec:
        kw["hurst"] = _scalar(sec["hurst"], "model.hurst")
    if "x0" in sec:
        kw["x0"] = tuple(_scalar_list(sec["x0"], "model.x0"))
    if "y0" in sec:
        kw["y0"] = tuple(_scalar_list(sec["y0"], "model.y0"))
    growth = {k: _scalar(sec[k], f"model.{k}") for k in ("K", "q", "r", "alpha", "beta", "gamma") if k in sec}
    if growth:
        kw["growth"] = replace(model.growth, **growth) if model.growth else GrowthMeta(**growth)
    try:
        return replace(model, **kw) if kw else model
    except DomainError as exc:
        raise ConfigError(f"model: {exc}") from None


def _build_scales(sec):
    if "eps" in sec:
        eps = _scalar_list(sec["eps"], "scales.eps")
    elif "eps_geometric" in sec:
        vals = _scalar_list(sec["eps_geometric"], "scales.eps_geometric")
        if len(vals) != 3:
            raise ConfigError("scales.eps_geometric: expected start, ratio, count")
        start, ratio, count = vals
        eps = [start * ratio**i for i in range(int(count))]
    else:
        raise ConfigError("scales: need eps or eps_geometric")
    if not eps:
        raise ConfigError("scales: ladder is empty")
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("scales: eps must be positive and strictly decreasing")
    raw = sec.get("eta", "eps").strip()
    if raw == "eps":
        eta = list(eps)
    elif raw.startswith("eps^"):
        power = _scalar(raw[4:], "scales.eta")
        eta = [e**power for e in eps]
    else:
        eta = _scalar_list(raw, "scales.eta")
        if len(eta) != len(eps):
            raise ConfigError("scales: eta list must match the eps list")
    if any(t <= 0 for t in eta):
        raise ConfigError("scales: eta must be positive")
    return eps, eta


def load_config(text=None, path=None, overrides=None):
    """Parse configuration text (or a file); ``overrides`` maps (section, key) to a string."""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    text = DEFAULT_CONFIG if text is None else text
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {s: dict(cp[s]) for s in cp.sections()}
    for (s, k), v in (overrides or {}).items():
        sections.setdefault(s, {})[k] = str(v)
    if "model" not in sections:
        raise ConfigError("config needs a [model] section")
    if "scales" not in sections:
        raise ConfigError("config needs a [scales] section")
    model = _build_model(sections["model"])
    eps, eta = _build_scales(sections["scales"])
    run = sections.get("run", {})
    T = _scalar(run.get("T", "1"), "run.T")
    n = _integer(run.get("n", "16"), "run.n")
    n_paths = _integer(run.get("n_paths", "2000"), "run.n_paths")
    p = _scalar(run.get("p", "2"), "run.p")
    seed = _integer(run.get("seed", "0"), "run.seed")
    if T <= 0 or n < 1 or n_paths < 2 or seed < 0:
        raise ConfigError("run: need T > 0, n >= 1, n_paths >= 2 and seed >= 0")
    regime = None
    if "regime" in sections:
        rs = sections["regime"]
        regime = ext.RegimeSpec(
            _scalar(rs.get("lambda", "0"), "regime.lambda"), _scalar(rs.get("kappa", "0"), "regime.kappa")
        )
    fmt = sections.get("output", {}).get("format", "csv").strip()
    return ExperimentConfig(
        model, eps, eta, T, n, n_paths, p, seed, regime, _formats(fmt), sections, text
    )


def _formats(fmt):
    if fmt not in ("csv", "csv+svg"):
        raise ConfigError(f"output.format must be csv or csv+svg, got {fmt!r}")
    return tuple(fmt.split("+"))


def with_overrides(cfg, seed=None, n_paths=None, fmt=None):
    kw = {}
    if seed is not None:
        kw["seed"] = int(seed)
    if n_paths is not None:
        if n_paths < 2:
            raise ConfigError("--paths must be at least 2")
        kw["n_paths"] = int(n_paths)
    if fmt is not None:
        kw["formats"] = _formats(fmt)
    return replace(cfg, **kw) if kw else cfg


# --------------------------------------------------------------------------- output helpers

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer, str)):
        return str(v)
    return repr(float(v))


class Outputs:
    def __init__(self, out_dir):
        self.dir = out_dir
        self.files = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.dir, name)

    def register(self, name):
        if name not in self.files:
            self.files.append(name)
        return self.path(name)

    def table(self, name, columns, rows, trailer=None):
        with open(self.register(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in columns])
            if trailer:
                fh.write(trailer + "\n")


def _loglog_svg(out, name, xs, ys, errs, xlabel, ylabel):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "slowfast-fbm"
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(xs, ys, yerr=errs, marker="o", linestyle="-", capsize=3)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(out.register(name), format="svg", metadata={"Date": None})
    plt.close(fig)


def _cdf_svg(out, name, samples, labels, xlabel):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "slowfast-fbm"
    fig, ax = plt.subplots(figsize=(5, 4))
    for s, lab in zip(samples, labels):
        v = np.sort(s)
        ax.step(v, np.arange(1, v.size + 1) / v.size, where="post", label=lab)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("empirical CDF")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out.register(name), format="svg", metadata={"Date": None})
    plt.close(fig)


def write_manifest(out, cfg, command, check, extra=None):
    entries = []
    for name in out.files:
        with open(out.path(name), "rb") as fh:
            data = fh.read()
        entries.append({"name": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    manifest = {
        "command": command,
        "config_sha256": cfg.digest,
        "seed": cfg.seed,
        "n_paths": cfg.n_paths,
        "check": check,
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "files": entries,
    }
    if extra:
        manifest["summary"] = extra
    with open(out.path("manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# --------------------------------------------------------------------------- pipelines

def _mu_kwargs(cfg):
    return {
        "n_samples": int(cfg.number("average", "n_samples", 200_000)),
        "thin": int(cfg.number("average", "thin", 10)),
        "n_chains": int(cfg.number("average", "n_chains", 256)),
        "seed": cfg.seed,
    }


def _limit_measure(cfg, lam=0.0):
    """Invariant measure for correctors and exact-limit quantities."""
    if cfg.model.dim_y == 1:
        return av.invariant_measure_quadrature(cfg.model, lam=lam)
    return av.estimate_invariant_measure(cfg.model, lam=lam, **_mu_kwargs(cfg))


def _slope_range(cfg, section):
    lo, hi = cfg.numbers(section, "slope_range", [0.8, 1.2])
    return lo, hi


def run_simulate(cfg, out, threads):
    s = cfg.scales[0]
    e = simulate_ensemble(cfg.model, s, cfg.n, cfg.T, cfg.n_paths, cfg.seed, threads=threads)
    keep = min(cfg.n_paths, int(cfg.number("simulate", "save_paths", 4)))
    m, k = cfg.model.dim_x, cfg.model.dim_y
    cols = ["path", "t"] + [f"x{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(k)]
    rows = []
    for p in range(keep):
        for j, t in enumerate(e.grid):
            r = {"path": int(e.path_indices[p]), "t": t}
            r.update({f"x{i + 1}": e.x[p, j, i] for i in range(m)})
            r.update({f"y{i + 1}": e.y[p, j, i] for i in range(k)})
            rows.append(r)
    out.table("paths.csv", cols, rows)
    mean = e.x.mean(axis=0)
    var = e.x.var(axis=0, ddof=1)
    srows = [{"t": t, "mean_x1": mean[j, 0], "var_x1": var[j, 0]} for j, t in enumerate(e.grid)]
    out.table("summary.csv", ["t", "mean_x1", "var_x1"], srows)
    return True, {"epsilon": s.eps, "eta": s.eta, "n_sub": e.n_sub}


def run_average(cfg, out, threads):
    model = cfg.model
    mu = av.estimate_invariant_measure(model, **_mu_kwargs(cfg))
    rows = []
    for o in range(1, av.MOMENT_ORDER + 1):
        fn = lambda y, o=o: y[:, 0] ** o
        rows.append({"order": o, "moment": mu.mean(fn), "stderr": mu.stderr(fn)})
    out.table("invariant_moments.csv", ["order", "moment", "stderr"], rows)
    ref = _limit_measure(cfg)
    cbar = av.averaged_function(model, ref)
    xs = np.linspace(-2.0, 2.0, 41)
    vals = cbar(xs[:, None])
    out.table("averaged_drift.csv", ["x", "cbar"], [{"x": x, "cbar": v[0]} for x, v in zip(xs, vals)])
    grid, X = av.solve_limit_ode(cbar, model.x0_array, cfg.T, cfg.T / cfg.n)
    out.table("limit_ode.csv", ["t", "xbar1"], [{"t": t, "xbar1": x[0]} for t, x in zip(grid, X)])
    ok = bool(np.isfinite(X).all())
    return ok, {"second_moment": float(mu.moments[1, 0]), "xbar_T": float(X[-1, 0])}


def _corrector(cfg, mu, x):
    model = cfg.model
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cbar_x = av.averaged_drift(model, mu, x)[0]
    rhs = lambda y: model.c(np.broadcast_to(x, (y.size, 1)), y[:, None])[:, 0] - cbar_x
    dom = cfg.numbers("poisson", "y_domain", [-5.0, 5.0])
    n_grid = int(cfg.number("poisson", "n_grid", 4001))
    return av.solve_poisson_fd(model, rhs, mu, tuple(dom), n_grid, x_slice=tuple(x))


def run_poisson(cfg, out, threads):
    model = cfg.model
    if model.dim_x != 1:
        raise ConfigError("poisson: only one-dimensional slow variables are supported")
    mu = _limit_measure(cfg)
    sol = _corrector(cfg, mu, model.x0_array)
    rows = [{"y": a, "phi": b, "dphi": c} for a, b, c in zip(sol.grid, sol.values, sol.dvalues)]
    out.table("corrector.csv", ["y", "phi", "dphi"], rows)
    S = fl.sigma_phi(model, sol, mu)()
    out.table("sigma_phi.csv", ["x", "sigma_phi"], [{"x": model.x0_array[0], "sigma_phi": S[0, 0]}])
    tol = 1e-6 * (1 + float(np.max(np.abs(sol.values))))
    return sol.centering_residual <= tol, {"sigma_phi": float(S[0, 0]), "centering_residual": sol.centering_residual}


def _fit_rows(fit):
    return [{"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "halfwidth": fit.halfwidth}]


def run_rates(cfg, out, threads):
    rows, _ = av.strong_error_table(
        cfg.model, cfg.scales, cfg.p, cfg.n_paths, cfg.n, cfg.T, cfg.seed, threads=threads, mu_kwargs=_mu_kwargs(cfg)
    )
    out.table("rates.csv", ["epsilon", "eta", "p", "error", "stderr"], rows)
    xs = [math.sqrt(r["epsilon"]) + math.sqrt(r["eta"]) for r in rows]
    ys = [r["error"] ** (1 / cfg.p) for r in rows]
    fit = fit_slope(xs, ys)
    out.table("rates_fit.csv", ["slope", "intercept", "r2", "halfwidth"], _fit_rows(fit))
    if "svg" in cfg.formats:
        errs = [r["stderr"] / (cfg.p * r["error"] ** (1 - 1 / cfg.p)) for r in rows]
        _loglog_svg(out, "rates.svg", xs, ys, errs, "sqrt(eps) + sqrt(eta)", "(E sup|X - Xbar|^p)^(1/p)")
    lo, hi = _slope_range(cfg, "rates")
    return lo <= fit.slope <= hi, {"slope": fit.slope, "r2": fit.r2}


def run_ergodic(cfg, out, threads):
    src = cfg.get("ergodic", "h", "y^2")
    e = _coefficient(src, "ergodic.h", "xy")
    h_fn = lambda x, y: np.broadcast_to(e(x=x[:, 0], y=y[:, 0]), (x.shape[0],))[:, None] + 0.0
    rows, fit = av.ergodic_error_table(
        cfg.model, h_fn, cfg.eta, cfg.p, cfg.n_paths, cfg.n, cfg.T, cfg.seed,
        eps_list=cfg.eps, x_independent="x" not in e.variables, threads=threads, mu_kwargs=_mu_kwargs(cfg),
    )
    out.table("ergodic.csv", ["epsilon", "eta", "p", "error", "stderr"], rows)
    if fit is None:
        if max(r["error"] for r in rows) == 0.0:
            return True, {"max_error": 0.0}
        raise ConfigError("ergodic: the slope fit needs at least 3 levels with positive error")
    out.table("ergodic_fit.csv", ["slope", "intercept", "r2", "halfwidth"], _fit_rows(fit))
    if "svg" in cfg.formats:
        xs = [math.sqrt(r["eta"]) for r in rows]
        ys = [r["error"] ** (1 / cfg.p) for r in rows]
        errs = [r["stderr"] / (cfg.p * r["error"] ** (1 - 1 / cfg.p)) for r in rows]
        _loglog_svg(out, "ergodic.svg", xs, ys, errs, "sqrt(eta)", "ergodic error^(1/p)")
    lo, hi = _slope_range(cfg, "ergodic")
    return lo <= fit.slope <= hi, {"slope": fit.slope, "r2": fit.r2}


def _level_cbars(cfg, scales, per_relax=50):
    """Per-level cbar from an invariant measure sampled with the level's Euler step."""
    h = cfg.T / cfg.n
    mk = _mu_kwargs(cfg)
    cache = {}
    out = []
    for s in scales:
        step = h / n_substeps_pow2(h, s.eta, per_relax) / s.eta
        key = round(step, 14)
        if key not in cache:
            cache[key] = av.averaged_function(cfg.model, av.estimate_invariant_measure(cfg.model, h_tilde=step, **mk))
        out.append(cache[key])
    return out


def run_fluctuations(cfg, out, threads):
    model = cfg.model
    if model.dim_x != 1 or model.dim_y != 1:
        raise ConfigError("fluctuations: only 1+1 dimensional models are supported")
    scales = cfg.scales
    lam = cfg.regime.lam if cfg.regime is not None else math.sqrt(scales[-1].eta / scales[-1].eps)
    times = cfg.numbers("fluctuations", "times", [cfg.T / 2, cfg.T])
    cbars = _level_cbars(cfg, scales)
    ens = fl.theta_ladder(model, scales, cfg.n_paths, cfg.n, cfg.T, cfg.seed, cbars=cbars, threads=threads)

    mu = _limit_measure(cfg)
    cbar = av.averaged_function(model, mu)
    grid, xbar = av.solve_limit_ode(cbar, model.x0_array, cfg.T, cfg.T / cfg.n)
    h = cfg.T / cfg.n
    Js = [ext._jacobian(cbar, x) for x in xbar]
    if model.x_independent_corrector:
        S0 = fl.sigma_phi(model, _corrector(cfg, mu, model.x0_array), mu)()
        Ss = [S0] * len(xbar)
    else:
        Ss = [fl.sigma_phi(model, _corrector(cfg, mu, x), mu)() for x in xbar]
    idx = lambda t: min(cfg.n, int(round(t / h)))
    law = fl.LimitLawSpec(
        lambda t: Js[idx(t)], lambda t: Ss[idx(t)], np.atleast_2d(mu.mean(model.sigma)), lam, model.hurst
    )
    lgrid, limit = fl.simulate_limit_theta(law, cfg.n_paths, cfg.n, cfg.T, cfg.seed)

    rows, vrows = [], []
    reports = []
    for li, e in enumerate(ens):
        rep = fl.compare_distributions(e, limit, times, 2, grid=lgrid)
        reports.append(rep)
        for r in rep.rows:
            rows.append({"level": li, "epsilon": e.scales.eps, "eta": e.scales.eta, **r})
        v = e.theta[:, -1, 0]
        vrows.append({
            "epsilon": e.scales.eps, "eta": e.scales.eta, "var": float(v.var(ddof=1)),
            "stderr": float(v.var(ddof=1) * math.sqrt(2 / (len(v) - 1))),
        })
    lv = limit[:, -1, 0]
    vrows.append({"epsilon": 0.0, "eta": 0.0, "var": float(lv.var(ddof=1)), "stderr": float(lv.var(ddof=1) * math.sqrt(2 / (len(lv) - 1)))})
    passed = reports[-1].passed
    cols = ["level", "epsilon", "eta", "time", "coord", "ks", "ks_crit", "mom1_diff", "mom2_diff", "mom1_se", "mom2_se"]
    out.table("fluctuations.csv", cols, rows, trailer=f"# verdict: {'PASS' if passed else 'FAIL'}")
    out.table("theta_variance.csv", ["epsilon", "eta", "var", "stderr"], vrows)
    if "svg" in cfg.formats:
        _cdf_svg(out, "fluctuations_cdf.svg", [ens[-1].theta[:, -1, 0], lv], ["prelimit", "limit"], "theta_T")
    return passed, {"lambda": lam, "ks_T": [rep.ks(times[-1]) for rep in reports]}


def run_extended(cfg, out, threads):
    model = cfg.model
    if not model.extended:
        raise ConfigError("extended: the model has neither b nor g")
    if model.dim_x != 1 or model.dim_y != 1:
        raise ConfigError("extended: only 1+1 dimensional models are supported")
    regime = cfg.regime or ext.RegimeSpec()
    mu = _limit_measure(cfg, lam=regime.lam)
    psi = None
    if regime.regime == ext.HOMOGENIZATION and model.b is not None:
        dom = cfg.numbers("poisson", "y_domain", [-5.0, 5.0])
        psi = ext.solve_correction_psi(model, mu, tuple(dom), int(cfg.number("poisson", "n_grid", 4001)), regime)
    h = cfg.T / cfg.n
    grid, xbar = ext.limit_ode_extended(model, regime, mu, model.x0_array, cfg.T, h, psi)
    name = regime.regime
    out.table("extended_ode.csv", ["regime", "t", "xbar1"], [{"regime": name, "t": t, "xbar1": x[0]} for t, x in zip(grid, xbar)])

    if regime.regime == ext.AVERAGING:
        scales = [ext.regime_scales(regime, e) for e in cfg.eps]
    else:
        scales = [ext.regime_scales(regime, e, t if regime.kappa == 0 else None) for e, t in zip(cfg.eps, cfg.eta)]
    for s in scales:
        ext._check_consistent(regime, s)
    ens = simulate_ladder(model, scales, cfg.n, cfg.T, cfg.n_paths, cfg.seed, extended=True, threads=threads)
    rows = []
    for e in ens:
        err, se = av.sup_moment(e.x - xbar[None], cfg.p)
        rows.append({"regime": name, "epsilon": e.scales.eps, "eta": e.scales.eta, "p": cfg.p, "error": err, "stderr": se})
    out.table("extended_rates.csv", ["regime", "epsilon", "eta", "p", "error", "stderr"], rows)
    summary = {"regime": name, "xbar_T": float(xbar[-1, 0])}
    if psi is not None:
        summary["sigma_psi"] = float(fl.sigma_phi(model, psi, mu)()[0, 0])
    if len(rows) >= 3 and min(r["error"] for r in rows) > 0:
        xs = [math.sqrt(r["epsilon"]) + math.sqrt(r["eta"]) for r in rows]
        fit = fit_slope(xs, [r["error"] ** (1 / cfg.p) for r in rows])
        summary["slope"] = fit.slope
        out.table("extended_fit.csv", ["regime", "slope", "intercept", "r2", "halfwidth"], [{"regime": name, **_fit_rows(fit)[0]}])
    ok = rows[-1]["error"] < rows[0]["error"] if len(rows) >= 2 else bool(np.isfinite(rows[0]["error"]))
    return ok, summary


PIPELINES = {
    "simulate": run_simulate,
    "average": run_average,
    "poisson": run_poisson,
    "rates": run_rates,
    "ergodic": run_ergodic,
    "fluctuations": run_fluctuations,
    "extended": run_extended,
}


def run_experiment(command, cfg, out_dir, threads=1):
    """Run one pipeline; returns (check_passed, manifest)."""
    if command not in PIPELINES:
        raise ConfigError(f"unknown command {command!r}")
    out = Outputs(out_dir)
    ok, summary = PIPELINES[command](cfg, out, threads)
    manifest = write_manifest(out, cfg, command, bool(ok), summary)
    return bool(ok), manifest
