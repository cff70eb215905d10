"""EM fits of a channel-domain GMM from noisy and sparsely observed pilots.

The observations follow ``y = A h + n`` with a known selection pattern ``A``
and AWGN of known variance. The mixture is kept in the channel domain; the
E-step runs in observation space with ``C_{y,k} = A C_k A^H + noise_var I``.

Covariance M-step, for both fits: form the estimated covariance of the
noisy full-dimensional vector, subtract ``noise_var I`` and zero the
negative eigenvalues. This is the maximizer of the expected complete-data
log-likelihood over PSD channel covariances.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from .channel_sim import SelectionPattern
from .estimators import interpolation_matrix
from .gmm_core import (
    BlockToeplitz,
    Callback,
    FitConfig,
    GmmParams,
    ObservationGmm,
    canonical_order,
    classical_e_step,
    classical_m_step,
    hermitian_part,
    initial_params,
    normalize_log_joint,
    psd_project,
    reseed_empty,
    run_em,
    sample_covariance,
    spectral_floor,
    structured_update,
    toeplitz_spectrum,
    toeplitz_synthesize,
)

STRUCTURE_FULL = "full"
STRUCTURE_TOEPLITZ = "toeplitz"


def _observations(observations) -> np.ndarray:
    y = getattr(observations, "y", observations)
    return np.atleast_2d(np.asarray(y, dtype=complex))


def loglik_observations(observations, pattern: SelectionPattern, noise_var: float,
                        gmm: GmmParams) -> float:
    """Total log-likelihood of the observations under the mixture seen through ``pattern``."""
    Y = _observations(observations)
    obs = ObservationGmm(gmm, pattern, noise_var)
    _, sample_ll = normalize_log_joint(obs.log_joint(Y))
    # correctly rounded sum: independent of sample order and exactly additive over copies
    return math.fsum(sample_ll)


def impute_component(y, pattern: SelectionPattern, mean, cov, noise_var: float):
    """Conditional-mean completion of ``y`` under one Gaussian component.

    Returns the full-length vector (observed entries copied from ``y``,
    missing ones replaced by their LMMSE estimate) and the conditional
    covariance of the missing channel entries, of size ``N - M``.
    """
    Y = np.asarray(y, dtype=complex)
    single = Y.ndim == 1
    Y = np.atleast_2d(Y)
    idx, mis = pattern.observed_indices, pattern.missing_indices
    mean = np.asarray(mean, dtype=complex)
    cov = np.asarray(cov, dtype=complex)
    out = np.empty((Y.shape[0], pattern.total_dim), dtype=complex)
    out[:, idx] = Y
    if mis.size == 0:
        return (out[0] if single else out), np.zeros((0, 0), dtype=complex)
    cov_y = hermitian_part(cov[np.ix_(idx, idx)]) + noise_var * np.eye(idx.size)
    factor = scipy.linalg.cho_factor(cov_y, lower=True)
    cross = cov[np.ix_(mis, idx)]
    gain = scipy.linalg.cho_solve(factor, cross.conj().T).conj().T  # (N-M, M)
    out[:, mis] = mean[mis] + (Y - mean[idx]) @ gain.T
    residual = hermitian_part(cov[np.ix_(mis, mis)] - gain @ cross.conj().T)
    return (out[0] if single else out), residual


# ---------------------------------------------------------------------------
# Shared fit machinery
# ---------------------------------------------------------------------------


class _FitState:
    """Sorted observations, their interpolation and the seeding parameters."""

    def __init__(self, observations, pattern, noise_var, config, dims):
        Y = _observations(observations)
        if Y.shape[1] != pattern.num_observed:
            raise ValueError("observations do not match the declared pattern")
        if Y.shape[0] < config.num_components:
            raise ValueError("need at least K training samples")
        if noise_var < 0:
            raise ValueError("noise variance must be nonnegative")
        self.Y = canonical_order(Y)
        self.pattern = pattern
        self.noise_var = float(noise_var)
        N = pattern.total_dim
        if pattern.is_full:
            self.X = self.Y
        else:
            dims = dims if dims is not None else (N, 1)
            self.X = self.Y @ interpolation_matrix(pattern, dims).T
        self.floor = config.floor_for(self.X)
        self.fallback_cov = sample_covariance(self.X)[1] + self.floor * np.eye(N)
        self.classical_e = classical_e_step(self.X)
        self.classical_m = classical_m_step(self.X, self.floor, self.fallback_cov)

    def e_step(self, params, it):
        if it == 1:
            return self.classical_e(params)
        obs = ObservationGmm(params, self.pattern, self.noise_var)
        gamma, sample_ll = normalize_log_joint(obs.log_joint(self.Y))
        return float(sample_ll.sum()), (gamma, sample_ll, obs)


def _noisy_m_step(state: _FitState):
    N = state.pattern.total_dim
    eye = np.eye(N)

    def m_step(params, stats, it):
        if it == 1:
            return state.classical_m(params, stats)
        gamma, sample_ll, _ = stats
        K = gamma.shape[1]
        counts = gamma.sum(axis=0)
        weights = counts / state.Y.shape[0]
        means = np.empty((K, N), dtype=complex)
        covs = np.empty((K, N, N), dtype=complex)
        for k in range(K):
            if counts[k] < 1e-12 * state.Y.shape[0]:
                continue
            means[k], scatter = sample_covariance(state.Y, gamma[:, k])
            covs[k] = psd_project(scatter - state.noise_var * eye) + state.floor * eye
        weights, means, covs = reseed_empty(
            weights, means, covs, counts, sample_ll, state.X, state.fallback_cov
        )
        return GmmParams(weights, means, covs)

    return m_step


def fit_noisy(observations, noise_var: float, config: FitConfig,
              callback: Callback | None = None) -> GmmParams:
    """Fit a channel GMM from fully observed noisy samples ``y = h + n``.

    Seeding follows the classical fit (k-means++ and one plain EM
    iteration on the raw observations); every later M-step keeps the
    classical weight and mean updates and replaces the covariance by the
    PSD projection of ``scatter_k - noise_var I``.
    """
    Y = _observations(observations)
    state = _FitState(Y, SelectionPattern.full(Y.shape[1]), noise_var, config, None)
    params = initial_params(state.X, config, state.floor)
    return run_em(params, state.e_step, _noisy_m_step(state), config, callback)


def _missing_m_step(state: _FitState, structure: str, dims):
    pattern = state.pattern
    idx, mis = pattern.observed_indices, pattern.missing_indices
    N, noise_var, floor = pattern.total_dim, state.noise_var, state.floor
    eye = np.eye(N)

    def seed_structure(params):
        spectra = np.stack([toeplitz_spectrum(C, dims) for C in params.covs])
        spectra = np.maximum(spectra, spectral_floor(spectra)[:, None])
        covs = np.stack([toeplitz_synthesize(c, dims) for c in spectra])
        return GmmParams(params.weights, params.means, covs, BlockToeplitz(spectra, dims))

    def m_step(params, stats, it):
        if it == 1:
            seeded = state.classical_m(params, stats)
            return seeded if structure == STRUCTURE_FULL else seed_structure(seeded)
        gamma, sample_ll, obs = stats
        K = gamma.shape[1]
        counts = gamma.sum(axis=0)
        weights = counts / state.Y.shape[0]
        means = np.empty((K, N), dtype=complex)
        covs = np.empty((K, N, N), dtype=complex)
        spectra = None if structure == STRUCTURE_FULL else params.structure.spectra.copy()
        for k in range(K):
            if counts[k] < 1e-12 * state.Y.shape[0]:
                continue
            mean_obs, scatter_obs = sample_covariance(state.Y, gamma[:, k])
            mu_k, C_k = params.means[k], params.covs[k]
            # imputed samples are affine in y: y_hat - mean_new = T (y - mean_obs),
            # T = [I; gain], so the weighted scatter only needs the M x M moments
            cov_y = np.zeros((N, N), dtype=complex)
            cov_y[np.ix_(idx, idx)] = scatter_obs
            means[k, idx] = mean_obs
            if mis.size:
                cross = C_k[np.ix_(mis, idx)]
                gain = obs.solve(k, cross.conj().T).conj().T
                residual = C_k[np.ix_(mis, mis)] - gain @ cross.conj().T
                means[k, mis] = mu_k[mis] + gain @ (mean_obs - mu_k[idx])
                gs = gain @ scatter_obs
                cov_y[np.ix_(mis, idx)] = gs
                cov_y[np.ix_(idx, mis)] = gs.conj().T
                # the completed entries are noisy channel entries: their
                # conditional covariance carries the noise as well
                cov_y[np.ix_(mis, mis)] = gs @ gain.conj().T + residual + noise_var * np.eye(mis.size)
            C_new = psd_project(cov_y - noise_var * eye) + floor * eye
            if spectra is None:
                covs[k] = C_new
            else:
                spectra[k], covs[k] = structured_update(C_k + floor * eye, spectra[k], C_new, dims)
        empty = np.flatnonzero(counts < 1e-12 * state.Y.shape[0])
        weights, means, covs = reseed_empty(
            weights, means, covs, counts, sample_ll, state.X, state.fallback_cov
        )
        if spectra is None:
            return GmmParams(weights, means, covs)
        for k in empty:
            c = toeplitz_spectrum(state.fallback_cov, dims)
            spectra[k] = np.maximum(c, spectral_floor(c))
            covs[k] = toeplitz_synthesize(spectra[k], dims)
        return GmmParams(weights, means, covs, BlockToeplitz(spectra, dims))

    return m_step


def fit_noisy_missing(observations, pattern: SelectionPattern, noise_var: float,
                      config: FitConfig, structure: str = STRUCTURE_FULL, dims=None,
                      callback: Callback | None = None) -> GmmParams:
    """Fit a channel GMM from noisy pilots observed on a fixed pattern.

    The observations are linearly interpolated to full dimension to seed
    the mixture (k-means++ plus one plain EM iteration). Each further
    iteration computes observation-space responsibilities, completes every
    sample under every component, updates weights and means, and projects
    the completed covariance minus the noise onto the PSD cone. With
    ``structure="toeplitz"`` the spectral parameters then take one
    multiplicative step towards that projection.

    ``dims`` is the ``(N_c, N_t)`` grid of the channel vector; it defaults
    to ``(N, 1)``.
    """
    if structure not in (STRUCTURE_FULL, STRUCTURE_TOEPLITZ):
        raise ValueError(f"unknown covariance structure {structure!r}")
    if observations is not None and hasattr(observations, "pattern"):
        if observations.pattern != pattern:
            raise ValueError("observations were taken with a different pattern")
    N = pattern.total_dim
    dims = tuple(dims) if dims is not None else (N, 1)
    if dims[0] * dims[1] != N:
        raise ValueError("grid dimensions do not match the pattern")
    state = _FitState(observations, pattern, noise_var, config, dims)
    params = initial_params(state.X, config, state.floor)
    return run_em(params, state.e_step, _missing_m_step(state, structure, dims), config, callback)
