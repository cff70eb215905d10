import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmce.channel_sim import SelectionPattern, derive_rng
from gmmce.gmm_core import (
    BlockToeplitz,
    DegenerateResponsibilitiesError,
    FitConfig,
    GmmParams,
    ModelFileError,
    NotPositiveDefiniteError,
    ObservationGmm,
    canonical_order,
    classical_e_step,
    cgauss_logpdf,
    check_invariants,
    em_fit_classical,
    normalize_log_joint,
    psd_project,
    reseed_empty,
    responsibilities,
    sample_covariance,
    spectral_floor,
    structured_update,
    toeplitz_dft,
    toeplitz_spectrum,
    toeplitz_synthesize,
    read_model,
    write_model,
)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def random_pd(rng, n, jitter=0.1):
    B = crandn(rng, n, n)
    return B @ B.conj().T + jitter * np.eye(n)


def explicit_truncated_dft(n):
    """First ``n`` columns of the unitary ``2n``-point DFT, built entry by entry."""
    F = np.empty((2 * n, n), dtype=complex)
    for r in range(2 * n):
        for c in range(n):
            F[r, c] = np.exp(-2j * np.pi * r * c / (2 * n)) / math.sqrt(2 * n)
    return F


def dense_logpdf(x, mu, C):
    d = x - mu
    n = len(x)
    return float(-n * np.log(np.pi) - np.log(np.linalg.det(C).real) - (d.conj() @ np.linalg.inv(C) @ d).real)


class TestLogPdf:
    def test_standard_scalar_at_mean(self):
        assert cgauss_logpdf(np.array([0.3j]), np.array([0.3j]), np.eye(1)) == pytest.approx(
            -1.1447298858494002, abs=1e-15
        )

    def test_standard_scalar_unit_offset(self):
        val = cgauss_logpdf(np.array([1.0 + 0j]), np.zeros(1), np.eye(1))
        assert val == pytest.approx(-math.log(math.pi) - 1.0, abs=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_explicit_inverse(self, seed):
        rng = derive_rng(seed)
        C, mu, x = random_pd(rng, 3), crandn(rng, 3), crandn(rng, 3)
        assert cgauss_logpdf(x, mu, C) == pytest.approx(dense_logpdf(x, mu, C), abs=1e-10)

    def test_batch_shape(self):
        rng = derive_rng(1)
        C, X = random_pd(rng, 4), crandn(rng, 7, 4)
        out = cgauss_logpdf(X, np.zeros(4), C)
        assert out.shape == (7,)
        assert out[3] == pytest.approx(dense_logpdf(X[3], np.zeros(4), C), abs=1e-10)

    def test_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefiniteError):
            cgauss_logpdf(np.zeros(2), np.zeros(2), np.diag([1.0, -1.0]))


def two_component(mu1, mu2, cov=None, weights=(0.5, 0.5)):
    n = len(mu1)
    cov = np.eye(n) if cov is None else cov
    return GmmParams(np.array(weights), np.array([mu1, mu2], dtype=complex), np.array([cov, cov], dtype=complex))


class TestResponsibilities:
    def test_identical_components_are_uniform(self):
        K, n = 5, 3
        params = GmmParams(np.full(K, 1 / K), np.zeros((K, n)), np.repeat(np.eye(n)[None], K, axis=0))
        obs = ObservationGmm(params, SelectionPattern.full(n), 0.5)
        gamma = responsibilities(crandn(derive_rng(0), n), obs)
        np.testing.assert_allclose(gamma, np.full(K, 1 / K), atol=1e-15)

    def test_dominance_limit(self):
        sigma2 = 0.1
        y = np.array([1.0 + 1j, -2.0])
        params = two_component(y, y + 1e6 * math.sqrt(sigma2))
        gamma = responsibilities(y, ObservationGmm(params, SelectionPattern.full(2), sigma2))
        assert gamma[0] >= 1 - 1e-9

    def test_matches_quotient_formula(self):
        rng = derive_rng(3)
        C1, C2 = random_pd(rng, 2), random_pd(rng, 2)
        mu = crandn(rng, 2, 2)
        params = GmmParams(np.array([0.3, 0.7]), mu, np.array([C1, C2]))
        y, s2 = crandn(rng, 2), 0.4
        p1 = 0.3 * np.exp(dense_logpdf(y, mu[0], C1 + s2 * np.eye(2)))
        p2 = 0.7 * np.exp(dense_logpdf(y, mu[1], C2 + s2 * np.eye(2)))
        gamma = responsibilities(y, ObservationGmm(params, SelectionPattern.full(2), s2))
        np.testing.assert_allclose(gamma, [p1 / (p1 + p2), p2 / (p1 + p2)], atol=1e-12)

    def test_observation_space_uses_selected_block(self):
        rng = derive_rng(4)
        C, mu = random_pd(rng, 4), crandn(rng, 2, 4)
        params = GmmParams(np.array([0.5, 0.5]), mu, np.array([C, 2 * C]))
        pattern = SelectionPattern([1, 3], 4)
        y = crandn(rng, 2)
        obs = ObservationGmm(params, pattern, 0.2)
        sub = np.ix_([1, 3], [1, 3])
        l1 = dense_logpdf(y, mu[0, [1, 3]], C[sub] + 0.2 * np.eye(2))
        l2 = dense_logpdf(y, mu[1, [1, 3]], 2 * C[sub] + 0.2 * np.eye(2))
        np.testing.assert_allclose(obs.log_densities(y)[0], [l1, l2], atol=1e-10)

    def test_degenerate(self):
        with pytest.raises(DegenerateResponsibilitiesError):
            normalize_log_joint(np.full((2, 3), -np.inf))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 6), n=st.integers(1, 5),
           scale=st.floats(1e-3, 1e3))
    def test_probability_vector(self, seed, K, n, scale):
        rng = derive_rng(seed)
        w = rng.random(K) + 1e-3
        params = GmmParams(w / w.sum(), scale * crandn(rng, K, n),
                           np.stack([random_pd(rng, n) for _ in range(K)]))
        gamma = responsibilities(scale * crandn(rng, 20, n), ObservationGmm(params, SelectionPattern.full(n), 0.1))
        assert np.all(gamma >= 0)
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-12)


hermitian_matrices = st.builds(
    lambda seed, n: (lambda B: 0.5 * (B + B.conj().T))(crandn(derive_rng(seed), n, n)),
    st.integers(0, 2**32 - 1),
    st.integers(1, 6),
)


class TestPsdProject:
    def test_already_psd(self):
        np.testing.assert_array_equal(psd_project(np.diag([1.0, 2.0])), np.diag([1.0, 2.0]))

    def test_diagonal_truncation(self):
        np.testing.assert_array_equal(psd_project(np.diag([-0.5, 3.0])), np.diag([0.0, 3.0]))

    def test_off_diagonal_hand_evd(self):
        # eigenpairs (+1, (1, 1)/sqrt2) and (-1, (1, -1)/sqrt2); only the first survives
        v = np.array([1.0, 1.0]) / math.sqrt(2)
        expected = np.outer(v, v)
        out = psd_project(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(out, expected, atol=1e-15)
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)

    def test_symmetrizes_input(self):
        S = np.array([[1.0, 2.0], [0.0, 1.0]])
        np.testing.assert_allclose(psd_project(S), psd_project(0.5 * (S + S.T)), atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(S=hermitian_matrices)
    def test_idempotent(self, S):
        P = psd_project(S)
        assert np.linalg.norm(psd_project(P) - P) <= 1e-10 * max(np.linalg.norm(P), 1e-300)
        assert np.linalg.eigvalsh(P).min() >= -1e-12 * max(np.abs(S).max(), 1.0)

    @settings(max_examples=60, deadline=None)
    @given(d=st.lists(st.floats(-10, 10), min_size=1, max_size=8))
    def test_diagonal_equals_elementwise_max(self, d):
        np.testing.assert_array_equal(psd_project(np.diag(d)), np.diag(np.maximum(d, 0.0)))

    @settings(max_examples=60, deadline=None)
    @given(S=hermitian_matrices, alpha=st.floats(1e-3, 1e3))
    def test_scale_equivariance(self, S, alpha):
        lhs, rhs = psd_project(alpha * S), alpha * psd_project(S)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(np.linalg.norm(rhs), alpha * np.linalg.norm(S))


def two_cluster_data(L=5000, seed=0):
    rng = derive_rng(seed)
    labels = rng.random(L) < 0.5
    centers = np.where(labels[:, None], 10.0, -10.0) * np.ones((1, 2))
    return centers + crandn(rng, L, 2)


class TestClassicalEm:
    def test_single_component_closed_form(self):
        X = crandn(derive_rng(1), 300, 3) + 2.0
        cfg = FitConfig(1, max_iters=1)
        fit = em_fit_classical(X, cfg)
        floor = cfg.floor_for(X)
        mean = X.mean(axis=0)
        cov = (X - mean).T @ (X - mean).conj() / X.shape[0]
        np.testing.assert_allclose(fit.weights, [1.0], atol=0)
        np.testing.assert_allclose(fit.means[0], mean, atol=1e-12)
        np.testing.assert_allclose(fit.covs[0], cov + floor * np.eye(3), atol=1e-12)

    def test_two_clusters_recovered(self):
        fit = em_fit_classical(two_cluster_data(), FitConfig(2, seed=3))
        means = fit.means[np.argsort(fit.means[:, 0].real)]
        np.testing.assert_allclose(means, [[-10, -10], [10, 10]], atol=0.1)
        np.testing.assert_allclose(fit.weights, 0.5, atol=0.03)

    def test_identical_samples_give_floor(self):
        X = np.tile(np.array([1.0 + 2j, -0.5j]), (50, 1))
        cfg = FitConfig(1)
        fit = em_fit_classical(X, cfg)
        np.testing.assert_array_equal(fit.covs[0], cfg.floor_for(X) * np.eye(2))
        np.testing.assert_array_equal(fit.means[0], X[0])

    def test_explicit_floor(self):
        X = np.ones((10, 2), dtype=complex)
        fit = em_fit_classical(X, FitConfig(1, cov_floor=0.25))
        np.testing.assert_array_equal(fit.covs[0], 0.25 * np.eye(2))

    def test_monotone_loglik(self):
        X = two_cluster_data(2000, seed=5) + 3 * crandn(derive_rng(6), 2000, 2)
        values = []
        full = SelectionPattern.full(2)

        def record(it, params):
            _, ll = normalize_log_joint(ObservationGmm(params, full, 0.0).log_joint(X))
            values.append(ll.sum())

        em_fit_classical(X, FitConfig(4, max_iters=60, rel_loglik_tol=1e-12), callback=record)
        diffs = np.diff(values)
        assert np.all(diffs >= -1e-8 * np.abs(values[1:]))

    def test_permutation_invariance(self):
        X = crandn(derive_rng(7), 400, 3)
        perm = derive_rng(8).permutation(400)
        a = em_fit_classical(X, FitConfig(3, max_iters=20))
        b = em_fit_classical(X[perm], FitConfig(3, max_iters=20))
        for arr_a, arr_b in [(a.weights, b.weights), (a.means, b.means), (a.covs, b.covs)]:
            assert arr_a.tobytes() == arr_b.tobytes()

    def test_subspace_fit_matches_full_fit(self):
        rng = derive_rng(21)
        P = rng.standard_normal((12, 4))
        Y = crandn(rng, 600, 4) * rng.uniform(0.2, 2.0, (600, 1))
        Y[:300] += 2.0
        X = Y @ P.T
        U = np.linalg.qr(P)[0]
        cfg = FitConfig(3, max_iters=60, seed=1)
        e_step = classical_e_step(canonical_order(X))
        ll_full, ll_sub = [], []
        full = em_fit_classical(X, cfg, callback=lambda it, p: ll_full.append(e_step(p)[0]))
        sub = em_fit_classical(X, cfg, callback=lambda it, p: ll_sub.append(e_step(p)[0]), subspace=U)
        # same trajectory and stopping iteration; the 1e8 conditioning from the floor amplifies round-off
        assert len(ll_full) == len(ll_sub)
        np.testing.assert_allclose(ll_sub, ll_full, rtol=1e-8)
        np.testing.assert_allclose(sub.weights, full.weights, atol=1e-6)
        np.testing.assert_allclose(sub.covs, full.covs, atol=1e-5 * np.abs(full.covs).max())
        check_invariants(sub)

    def test_subspace_rejects_bad_basis(self):
        X = crandn(derive_rng(22), 50, 4)
        with pytest.raises(ValueError):
            em_fit_classical(X, FitConfig(2), subspace=np.eye(3)[:, :2])

    def test_stops_at_max_iters(self):
        calls = []
        em_fit_classical(crandn(derive_rng(9), 100, 2), FitConfig(2, max_iters=3, rel_loglik_tol=1e-15),
                         callback=lambda it, p: calls.append(it))
        assert calls == [1, 2, 3]

    def test_needs_k_samples(self):
        with pytest.raises(ValueError):
            em_fit_classical(np.zeros((2, 3)), FitConfig(3))

    def test_empty_component_is_reseeded(self):
        X = crandn(derive_rng(10), 200, 2)
        # component 1 sits so far away that it gets no responsibility at all
        init = GmmParams(np.array([0.5, 0.5]), np.array([[0, 0], [1e8, 1e8]], dtype=complex),
                         np.stack([np.eye(2), np.eye(2)]).astype(complex))
        fit = em_fit_classical(X, FitConfig(2, max_iters=1), init=init)
        Xs = canonical_order(X)
        _, ll = normalize_log_joint(ObservationGmm(init, SelectionPattern.full(2), 0.0).log_joint(Xs))
        np.testing.assert_array_equal(fit.means[1], Xs[np.argmin(ll)])
        assert fit.weights[1] > 0
        check_invariants(fit)

    def test_reseed_empty_helper(self):
        X = np.arange(8, dtype=complex).reshape(4, 2)
        w, mu = np.array([1.0, 0.0]), np.zeros((2, 2), dtype=complex)
        C = np.zeros((2, 2, 2), dtype=complex)
        fallback = 3 * np.eye(2)
        w2, mu2, C2 = reseed_empty(w, mu, C, np.array([4.0, 0.0]), np.array([0.0, -5.0, 1.0, 2.0]), X, fallback)
        np.testing.assert_array_equal(mu2[1], X[1])
        np.testing.assert_array_equal(C2[1], fallback)
        np.testing.assert_allclose(w2, [1 / 1.25, 0.25 / 1.25])

    def test_weighted_sample_covariance(self):
        X = np.array([[1.0], [3.0]], dtype=complex)
        mean, cov = sample_covariance(X, np.array([1.0, 3.0]))
        assert mean[0] == pytest.approx(2.5)
        assert cov[0, 0].real == pytest.approx((1 * 1.5**2 + 3 * 0.5**2) / 4)


class TestFitConfig:
    @pytest.mark.parametrize("kwargs", [dict(num_components=0), dict(num_components=1, max_iters=0),
                                        dict(num_components=1, rel_loglik_tol=0.0),
                                        dict(num_components=1, init="random")])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FitConfig(**kwargs)

    def test_floor_scales_with_power(self):
        X = 2.0 * np.ones((4, 3), dtype=complex)
        assert FitConfig(1).floor_for(X) == pytest.approx(4e-8)
        assert FitConfig(1).floor_for(np.zeros((4, 3))) == pytest.approx(1e-8)


class TestToeplitz:
    def test_dft_matches_explicit_construction(self):
        Q = toeplitz_dft((3, 2))
        np.testing.assert_allclose(Q, np.kron(explicit_truncated_dft(2), explicit_truncated_dft(3)), atol=1e-14)
        np.testing.assert_allclose(Q.conj().T @ Q, np.eye(6), atol=1e-14)

    @pytest.mark.parametrize("dims", [(4, 1), (3, 2), (5, 3)])
    def test_all_ones_is_identity(self, dims):
        n = dims[0] * dims[1]
        np.testing.assert_allclose(toeplitz_synthesize(np.ones(4 * n), dims), np.eye(n), atol=1e-14)

    @pytest.mark.parametrize("N", [1, 3, 8])
    def test_first_bin(self, N):
        c = np.zeros(4 * N)
        c[0] = 1.0
        # oracle: outer product of the first row of the explicit Q; with the two-dimensional
        # construction that row is (1/sqrt2) * (1/sqrt(2N)) * ones
        q0 = np.kron(explicit_truncated_dft(1), explicit_truncated_dft(N))[0]
        expected = np.outer(q0.conj(), q0)
        out = toeplitz_synthesize(c, (N, 1))
        np.testing.assert_allclose(out, expected, atol=1e-15)
        np.testing.assert_allclose(out, np.ones((N, N)) / (4 * N), atol=1e-15)

    def test_block_toeplitz_structure(self):
        n_c, n_t = 3, 2
        c = derive_rng(11).random(4 * n_c * n_t)
        C = toeplitz_synthesize(c, (n_c, n_t))
        # structural scan: entry depends only on (block difference, within-block difference)
        seen = {}
        for i in range(n_c * n_t):
            for j in range(n_c * n_t):
                key = (i // n_c - j // n_c, i % n_c - j % n_c)
                if key in seen:
                    assert abs(C[i, j] - seen[key]) <= 1e-12
                else:
                    seen[key] = C[i, j]
        assert np.max(np.abs(C - C.conj().T)) <= 1e-12
        assert np.linalg.eigvalsh(C).min() >= -1e-10 * c.sum()

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n_c=st.integers(1, 5), n_t=st.integers(1, 4))
    def test_invariants(self, seed, n_c, n_t):
        c = derive_rng(seed).exponential(size=4 * n_c * n_t)
        C = toeplitz_synthesize(c, (n_c, n_t))
        assert np.max(np.abs(C - C.conj().T)) <= 1e-12
        assert np.linalg.eigvalsh(C).min() >= -1e-10 * c.sum()
        n = n_c * n_t
        for i in range(n):
            for j in range(n):
                ii, jj = i + n_c * ((i // n_c) < n_t - 1), j + n_c * ((j // n_c) < n_t - 1)
                if ii < n and jj < n and i // n_c < n_t - 1 and j // n_c < n_t - 1:
                    assert abs(C[ii, jj] - C[i, j]) <= 1e-10
                if i % n_c < n_c - 1 and j % n_c < n_c - 1:
                    assert abs(C[i + 1, j + 1] - C[i, j]) <= 1e-10

    def test_rejects_negative_and_wrong_length(self):
        with pytest.raises(ValueError):
            toeplitz_synthesize(-np.ones(8), (2, 1))
        with pytest.raises(ValueError):
            toeplitz_synthesize(np.ones(7), (2, 1))

    def test_spectrum_of_synthesis(self):
        Q = toeplitz_dft((2, 2))
        c = derive_rng(12).random(16)
        C = toeplitz_synthesize(c, (2, 2))
        np.testing.assert_allclose(toeplitz_spectrum(C, (2, 2)), np.real(np.diag(Q @ C @ Q.conj().T)), atol=1e-14)


class TestStructuredUpdate:
    def test_fixed_point(self):
        dims = (3, 2)
        c = derive_rng(13).random(24) + 0.1
        C = toeplitz_synthesize(c, dims)
        c_new, C_new = structured_update(C, c, C, dims)
        np.testing.assert_allclose(c_new, c, atol=1e-12)
        np.testing.assert_allclose(C_new, C, atol=1e-12)

    @pytest.mark.parametrize("dims", [(4, 1), (3, 2)])
    def test_doubling_identity(self, dims):
        n = dims[0] * dims[1]
        c = np.ones(4 * n)
        # oracle: Theta = Q (2I - I) Q^H, so diag(Theta) are the squared row norms of Q,
        # N_c N_t / (2 N_c * 2 N_t) = 1/4 for the two-dimensional construction
        Q = np.kron(explicit_truncated_dft(dims[1]), explicit_truncated_dft(dims[0]))
        row_norms = np.sum(np.abs(Q) ** 2, axis=1)
        np.testing.assert_allclose(row_norms, 0.25, atol=1e-14)
        c_new, C_new = structured_update(np.eye(n), c, 2 * np.eye(n), dims)
        np.testing.assert_allclose(c_new, c + c * row_norms * c, atol=1e-14)
        np.testing.assert_allclose(c_new, 1.25, atol=1e-14)
        np.testing.assert_allclose(C_new, 1.25 * np.eye(n), atol=1e-14)

    def test_clamp(self):
        dims = (2, 1)
        c = np.ones(8)
        # C_old = 0.1 I and C_new = 0: diag(Theta) = -10/4, so c + c * Theta * c = -1.5 < 0
        c_new, C_new = structured_update(0.1 * np.eye(2), c, np.zeros((2, 2)), dims)
        np.testing.assert_array_equal(c_new, np.full(8, spectral_floor(c)))
        assert spectral_floor(c) == pytest.approx(1e-10)
        np.testing.assert_allclose(C_new, 1e-10 * np.eye(2), atol=1e-24)

    def test_singular_previous_covariance(self):
        with pytest.raises(NotPositiveDefiniteError, match="PD previous covariance"):
            structured_update(np.zeros((2, 2)), np.ones(8), np.eye(2), (2, 1))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n_c=st.integers(1, 4), n_t=st.integers(1, 3))
    def test_preserves_floor(self, seed, n_c, n_t):
        rng = derive_rng(seed)
        n = n_c * n_t
        c = rng.exponential(size=4 * n) + 1e-3
        C_new = psd_project(0.5 * (lambda B: B + B.conj().T)(crandn(rng, n, n)))
        c_new, C_syn = structured_update(toeplitz_synthesize(c, (n_c, n_t)) + 1e-6 * np.eye(n), c, C_new, (n_c, n_t))
        assert np.all(c_new >= spectral_floor(c))
        np.testing.assert_allclose(C_syn, toeplitz_synthesize(c_new, (n_c, n_t)), atol=1e-14)


class TestCheckInvariants:
    def test_accepts_valid(self):
        check_invariants(two_component([0, 0], [1, 1]))

    def test_weights(self):
        with pytest.raises(AssertionError):
            check_invariants(two_component([0, 0], [1, 1], weights=(0.6, 0.6)))
        with pytest.raises(AssertionError):
            check_invariants(two_component([0, 0], [1, 1], weights=(1.5, -0.5)))

    def test_indefinite(self):
        with pytest.raises(AssertionError):
            check_invariants(two_component([0, 0], [1, 1], cov=np.diag([1.0, -0.1])))

    def test_structure(self):
        c = np.ones((1, 8))
        good = GmmParams(np.ones(1), np.zeros((1, 2)), toeplitz_synthesize(c[0], (2, 1))[None], BlockToeplitz(c, (2, 1)))
        check_invariants(good)
        bad = GmmParams(np.ones(1), np.zeros((1, 2)), 2 * np.eye(2)[None], BlockToeplitz(c, (2, 1)))
        with pytest.raises(AssertionError):
            check_invariants(bad)

    def test_params_are_read_only(self):
        p = two_component([0, 0], [1, 1])
        with pytest.raises(ValueError):
            p.weights[0] = 1.0


class TestModelFiles:
    def test_full_round_trip(self, tmp_path):
        rng = derive_rng(14)
        p = GmmParams(np.array([0.25, 0.75]), crandn(rng, 2, 3), np.stack([random_pd(rng, 3) for _ in range(2)]))
        write_model(tmp_path / "m.mdl", p)
        q, dims = read_model(tmp_path / "m.mdl")
        assert dims == (3, 1) and q.structure is None
        for a, b in [(p.weights, q.weights), (p.means, q.means), (p.covs, q.covs)]:
            assert a.tobytes() == b.tobytes()

    def test_toeplitz_round_trip(self, tmp_path):
        c = derive_rng(15).random((2, 24)) + 0.1
        covs = np.stack([toeplitz_synthesize(ck, (3, 2)) for ck in c])
        p = GmmParams(np.array([0.5, 0.5]), np.zeros((2, 6)), covs, BlockToeplitz(c, (3, 2)))
        write_model(tmp_path / "t.mdl", p)
        q, dims = read_model(tmp_path / "t.mdl")
        assert dims == (3, 2)
        assert q.structure.spectra.tobytes() == c.tobytes()
        np.testing.assert_array_equal(q.covs, covs)

    def test_corrupt(self, tmp_path):
        p = two_component([0, 0], [1, 1])
        path = tmp_path / "c.mdl"
        write_model(path, p)
        raw = path.read_bytes()
        path.write_bytes(b"XXXXXXX" + raw[7:])
        with pytest.raises(ModelFileError, match="magic"):
            read_model(path)
        path.write_bytes(raw[:-5])
        with pytest.raises(ModelFileError, match="size"):
            read_model(path)
