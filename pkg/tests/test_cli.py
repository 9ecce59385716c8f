"""Tests for the command line interface and experiment pipelines."""

import hashlib
import json
import subprocess
import sys

import pytest

from slowfast_fbm.cli import main
from slowfast_fbm.experiments import COMMANDS, load_config
from slowfast_fbm.errors import ConfigError

SMALL = """
[model]
name = ou-quadratic

[scales]
eps = 2^-3, 2^-4, 2^-5
eta = eps

[run]
T = 1
n = 8
n_paths = 60
seed = 7

[average]
n_samples = 20000
n_chains = 64

[poisson]
n_grid = 801
"""


def write(tmp_path, text, name="exp.ini"):
    f = tmp_path / name
    f.write_text(text)
    return str(f)


def run(tmp_path, command, text=SMALL, *extra, out="out"):
    cfg = write(tmp_path, text)
    return main([command, "--config", cfg, "--out", str(tmp_path / out), "--threads", "1", *extra])


def tree_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


class TestConfig:
    def test_default_config_loads(self):
        cfg = load_config()
        assert cfg.model.name == "ou-quadratic"
        assert cfg.eps == [2.0**-k for k in range(4, 10)] and cfg.eta == cfg.eps

    @pytest.mark.parametrize(
        "eta,want",
        [("eps^2", [1 / 16, 1 / 256]), ("0.1, 0.01", [0.1, 0.01])],
    )
    def test_eta_forms(self, eta, want):
        cfg = load_config(SMALL.replace("eps = 2^-3, 2^-4, 2^-5\neta = eps", f"eps = 0.25, 0.0625\neta = {eta}"))
        assert cfg.eta == pytest.approx(want)

    def test_geometric_ladder(self):
        cfg = load_config(SMALL.replace("eps = 2^-3, 2^-4, 2^-5", "eps_geometric = 0.5, 0.5, 4"))
        assert cfg.eps == [0.5, 0.25, 0.125, 0.0625]

    @pytest.mark.parametrize(
        "old,new",
        [
            ("eps = 2^-3, 2^-4, 2^-5", "eps = 2^-5, 2^-4"),
            ("n = 8", "n = 2.5"),
            ("name = ou-quadratic", "name = nope"),
            ("[run]", "[run]\nbroken"),
            ("eta = eps", "eta = 0.1, 0.2"),
        ],
    )
    def test_rejected(self, old, new):
        with pytest.raises(ConfigError):
            load_config(SMALL.replace(old, new))

    def test_inline_model(self):
        cfg = load_config(SMALL.replace("name = ou-quadratic", "c = -x + y^2\nsigma = 1\nf = -y\ntau = 1"))
        assert cfg.model.x_independent_corrector is False
        assert not cfg.model.extended


class TestExitCodes:
    def test_rates_runs(self, tmp_path, capsys):
        assert run(tmp_path, "rates", SMALL, "--paths", "40") == 0
        assert "slope" in capsys.readouterr().out
        lines = (tmp_path / "out" / "rates.csv").read_text().splitlines()
        assert lines[0] == "epsilon,eta,p,error,stderr" and len(lines) == 4

    def test_bad_expression(self, tmp_path, capsys):
        text = SMALL.replace("name = ou-quadratic", "c = -x +* y\nsigma = 1\nf = -y\ntau = 1")
        assert run(tmp_path, "simulate", text) == 2
        err = capsys.readouterr().err
        assert err.startswith("error[config]") and "offset 4" in err

    def test_missing_config_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == 2

    def test_uncentered_singular_drift(self, tmp_path, capsys):
        text = SMALL.replace("name = ou-quadratic", "c = -x + y^2\nsigma = 1\nf = -y\ntau = 1\nb = y^2\ng = -y")
        text = text.replace("eta = eps", "eta = eps^2")
        assert run(tmp_path, "extended", text) == 3
        assert capsys.readouterr().err.startswith("error[precondition]")

    def test_overflow(self, tmp_path, capsys):
        text = SMALL.replace("name = ou-quadratic", "c = x^2\nsigma = 1\nf = -y\ntau = 1\nx0 = 10")
        assert run(tmp_path, "simulate", text) == 4
        assert capsys.readouterr().err.startswith("error[numerical]")

    def test_failed_check(self, tmp_path):
        text = SMALL + "\n[rates]\nslope_range = 5, 6\n"
        assert run(tmp_path, "rates", text) == 0
        assert run(tmp_path, "rates", text, "--check") == 5

    @pytest.mark.parametrize("seed", ["-1", str(2**64), "abc"])
    def test_bad_seed_rejected(self, seed):
        with pytest.raises(SystemExit) as info:
            main(["simulate", "--seed", seed])
        assert info.value.code == 2


class TestOutputs:
    def test_simulate_is_deterministic(self, tmp_path):
        assert run(tmp_path, "simulate", out="a") == 0
        assert run(tmp_path, "simulate", SMALL, "--threads", "3", out="b") == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_seed_override_changes_output(self, tmp_path):
        run(tmp_path, "simulate", out="a")
        run(tmp_path, "simulate", SMALL, "--seed", "8", out="b")
        assert (tmp_path / "a" / "paths.csv").read_bytes() != (tmp_path / "b" / "paths.csv").read_bytes()

    def test_manifest_lists_every_file(self, tmp_path):
        run(tmp_path, "poisson")
        out = tmp_path / "out"
        man = json.loads((out / "manifest.json").read_text())
        names = {f["name"] for f in man["files"]}
        assert names == {p.name for p in out.iterdir()} - {"manifest.json"}
        for f in man["files"]:
            assert hashlib.sha256((out / f["name"]).read_bytes()).hexdigest() == f["sha256"]
        assert man["seed"] == 7 and man["n_paths"] == 60
        assert set(man["versions"]) >= {"package", "numpy", "scipy", "python"}
        assert man["summary"]["sigma_phi"] == pytest.approx(2**-0.5, abs=1e-4)

    def test_svg_is_deterministic(self, tmp_path):
        run(tmp_path, "rates", SMALL, "--format", "csv+svg", out="a")
        run(tmp_path, "rates", SMALL, "--format", "csv+svg", out="b")
        a, b = tmp_path / "a" / "rates.svg", tmp_path / "b" / "rates.svg"
        assert a.read_bytes() == b.read_bytes()
        assert b"<svg" in a.read_bytes()

    @pytest.mark.parametrize("command", [c for c in COMMANDS if c not in ("rates", "extended")])
    def test_every_pipeline_runs(self, tmp_path, command):
        text = SMALL.replace("n_paths = 60", "n_paths = 120") + "\n[fluctuations]\ntimes = 0.5, 1\n"
        assert run(tmp_path, command, text) == 0
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_extended_pipeline(self, tmp_path):
        text = SMALL.replace("name = ou-quadratic", "name = ou-quadratic-ext").replace("eta = eps", "eta = eps^2")
        assert run(tmp_path, "extended", text) == 0
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert man["summary"]["regime"] == "homogenization"
        assert man["summary"]["sigma_psi"] == pytest.approx(1.0, abs=1e-4)

    def test_module_entry_point(self, tmp_path):
        cfg = write(tmp_path, SMALL)
        res = subprocess.run(
            [sys.executable, "-m", "slowfast_fbm", "simulate", "--config", cfg, "--out", str(tmp_path / "m")],
            capture_output=True,
            text=True,
        )
        assert res.returncode == 0, res.stderr
        assert (tmp_path / "m" / "paths.csv").exists()
