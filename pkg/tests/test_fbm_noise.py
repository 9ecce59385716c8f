"""Tests for exact fBm sampling, covariance helpers and the fBm inner product."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import toeplitz

from slowfast_fbm.errors import DomainError
from slowfast_fbm.fbm_noise import (
    HurstParameter,
    _cholesky_factor,
    _embedding_sqrt_eigs,
    alpha_h,
    covariance_rh,
    fgn_autocovariance,
    fgn_from_normals,
    h_inner_product,
    sample_fbm,
    sample_fbm_ensemble,
    write_paths_csv,
)

hursts = st.floats(min_value=0.51, max_value=0.99)
times = st.floats(min_value=0.0, max_value=10.0)


class TestHurstParameter:
    @pytest.mark.parametrize("H", [0.5, 1.0, 0.3, 1.2])
    def test_rejects_outside_open_interval(self, H):
        with pytest.raises(DomainError):
            HurstParameter(H)

    def test_brownian_is_relaxed(self):
        assert HurstParameter.brownian().value == 0.5

    def test_alpha(self):
        assert alpha_h(0.75) == pytest.approx(0.375)


class TestCovariance:
    def test_known_value(self):
        # 0.5 * (1 + 2^1.5 - 1) = sqrt(2)
        assert covariance_rh(1.0, 2.0, 0.75) == pytest.approx(np.sqrt(2.0), abs=1e-12)

    def test_negative_time(self):
        with pytest.raises(DomainError):
            covariance_rh(-1.0, 1.0, 0.75)

    @given(s=times, t=times, H=hursts)
    def test_symmetric_and_diagonal(self, s, t, H):
        assert covariance_rh(s, t, H) == pytest.approx(covariance_rh(t, s, H))
        assert covariance_rh(t, t, H) == pytest.approx(t ** (2 * H))

    def test_fgn_against_brute_force(self):
        # gamma(k) = Cov(W(k+1) - W(k), W(1) - W(0)) from R_H directly
        k, H = 5, 0.75
        brute = covariance_rh(k + 1, 1, H) - covariance_rh(k, 1, H)
        assert brute == pytest.approx(0.1681293408505855, abs=1e-14)
        assert fgn_autocovariance(k, H) == pytest.approx(brute, abs=1e-14)

    def test_fgn_step_scaling(self):
        assert fgn_autocovariance(0, 0.75, step=0.25) == pytest.approx(0.25**1.5)
        with pytest.raises(DomainError):
            fgn_autocovariance(1, 0.75, step=0.0)

    @given(n=st.integers(1, 40), H=hursts)
    def test_fgn_sums_to_endpoint_variance(self, n, H):
        G = toeplitz(fgn_autocovariance(np.arange(n), H))
        assert G.sum() == pytest.approx(n ** (2 * H), rel=1e-10)


class TestSampler:
    def test_path_shape_and_origin(self):
        p = sample_fbm(32, 2.0, 0.7, seed=1)
        assert p.values.shape == (33,)
        assert p.values[0] == 0.0
        assert p.grid[-1] == 2.0

    def test_deterministic_and_path_specific(self):
        a = sample_fbm(16, 1.0, 0.75, seed=3, path_index=2).values
        b = sample_fbm(16, 1.0, 0.75, seed=3, path_index=2).values
        c = sample_fbm(16, 1.0, 0.75, seed=3, path_index=4).values
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_ensemble_matches_single_paths(self):
        ens = sample_fbm_ensemble(16, 1.0, 0.8, 6, seed=9, dim=2)
        for i in (0, 5):
            single = sample_fbm(16, 1.0, 0.8, seed=9, dim=2, path_index=i).values
            assert np.array_equal(ens[i], single)

    @pytest.mark.parametrize("H", [0.6, 0.9])
    def test_covariance_small(self, H):
        n, P = 8, 20_000
        W = sample_fbm_ensemble(n, 1.0, H, P, seed=11)[:, 1:, 0]
        t = np.arange(1, n + 1) / n
        R = covariance_rh(t[:, None], t[None, :], H)
        emp = W.T @ W / P
        se = np.sqrt((np.einsum("pi,pj->ij", W**2, W**2) / P - emp**2) / P)
        assert np.all(np.abs(emp - R) <= 5 * se)

    def test_brownian_limit_has_uncorrelated_increments(self):
        P = 20_000
        W = sample_fbm_ensemble(8, 1.0, HurstParameter.brownian(), P, seed=2)[:, :, 0]
        dW = np.diff(W, axis=1)
        c = np.corrcoef(dW[:, 0], dW[:, 1])[0, 1]
        assert abs(c) < 4 / np.sqrt(P)


class TestEmbedding:
    @given(n=st.integers(1, 300), H=hursts)
    @settings(max_examples=50, deadline=None)
    def test_circulant_spectrum_nonnegative(self, n, H):
        assert _embedding_sqrt_eigs(n, H) is not None

    def test_cholesky_reproduces_covariance(self):
        L = _cholesky_factor(12, 0.7)
        assert np.allclose(L @ L.T, toeplitz(fgn_autocovariance(np.arange(12), 0.7)))

    def test_circulant_map_is_exact(self):
        # covariance of the linear map normals -> fGn equals the Toeplitz matrix
        n, H = 6, 0.75
        eye = np.eye(4 * n)
        A = fgn_from_normals(n, H, eye).T  # (n, 4n)
        assert np.allclose(A @ A.T, toeplitz(fgn_autocovariance(np.arange(n), H)), atol=1e-12)


class TestInnerProduct:
    def test_constant_function_exact(self):
        T, H = 2.0, 0.7
        one = np.ones(65)
        assert h_inner_product(one, one, H, T) == pytest.approx(T ** (2 * H), rel=1e-12)

    def test_indicators_match_covariance(self):
        n, H = 4096, 0.75
        t = np.linspace(0.0, 1.0, n + 1)
        a = (t <= 0.5).astype(float)
        b = np.ones(n + 1)
        assert h_inner_product(a, b, H, 1.0) == pytest.approx(covariance_rh(0.5, 1.0, H), abs=1e-3)

    @given(st.lists(st.floats(-3, 3), min_size=9, max_size=9), st.lists(st.floats(-3, 3), min_size=9, max_size=9))
    def test_symmetric_positive(self, u, v):
        u, v = np.array(u), np.array(v)
        assert h_inner_product(u, v, 0.75, 1.0) == pytest.approx(h_inner_product(v, u, 0.75, 1.0), abs=1e-12)
        assert h_inner_product(u, u, 0.75, 1.0) >= -1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            h_inner_product(np.ones(4), np.ones(5), 0.75, 1.0)


def test_csv_round_trip(tmp_path):
    p = sample_fbm(8, 1.0, 0.75, seed=5)
    f = tmp_path / "w.csv"
    write_paths_csv(f, p.grid, p.values)
    data = np.loadtxt(f, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 1], p.values)
    assert f.read_text().splitlines()[0] == "t,w1"
