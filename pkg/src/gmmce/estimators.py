"""Channel estimators: the GMM estimator and the classical baselines.

All estimators accept a single observation ``(M,)`` or a batch ``(L, M)`` and
return channel estimates of matching rank.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .channel_sim import SelectionPattern
from .gmm_core import (
    GmmParams,
    NotPositiveDefiniteError,
    ObservationGmm,
    hermitian_part,
    normalize_log_joint,
    sample_covariance,
)


def _as_batch(y):
    y = np.asarray(y, dtype=complex)
    return np.atleast_2d(y), y.ndim == 1


def _check_width(Y, pattern: SelectionPattern):
    if Y.shape[1] != pattern.num_observed:
        raise ValueError(
            f"observation length {Y.shape[1]} does not match pattern size {pattern.num_observed}"
        )


def estimate_lmmse(y, pattern: SelectionPattern, mean, cov, noise_var: float):
    """``mean + C A^H (A C A^H + noise_var I)^{-1} (y - A mean)``."""
    Y, single = _as_batch(y)
    _check_width(Y, pattern)
    idx = pattern.observed_indices
    mean = np.broadcast_to(np.asarray(mean, dtype=complex), (pattern.total_dim,))
    cov = np.asarray(cov, dtype=complex)
    cov_y = hermitian_part(cov[np.ix_(idx, idx)]) + noise_var * np.eye(idx.size)
    try:
        factor = scipy.linalg.cho_factor(cov_y, lower=True)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("singular observation covariance") from None
    coef = scipy.linalg.cho_solve(factor, (Y - mean[idx]).T)
    out = mean + (cov[:, idx] @ coef).T
    return out[0] if single else out


def component_estimates(y, pattern: SelectionPattern, noise_var: float, gmm: GmmParams,
                        obs_gmm: ObservationGmm | None = None):
    """Responsibilities ``(L, K)`` and per-component LMMSE estimates ``(K, L, N)``."""
    Y, _ = _as_batch(y)
    _check_width(Y, pattern)
    if obs_gmm is None:
        obs_gmm = ObservationGmm(gmm, pattern, noise_var)
    gamma, _ = normalize_log_joint(obs_gmm.log_joint(Y))
    idx = pattern.observed_indices
    est = np.empty((gmm.num_components, Y.shape[0], gmm.dim), dtype=complex)
    for k in range(gmm.num_components):
        coef = obs_gmm.solve(k, (Y - obs_gmm.means[k]).T)
        est[k] = gmm.means[k] + (gmm.covs[k][:, idx] @ coef).T
    return gamma, est


def estimate_gmm(y, pattern: SelectionPattern, noise_var: float, gmm: GmmParams,
                 obs_gmm: ObservationGmm | None = None):
    """Responsibility-weighted combination of the per-component LMMSE estimates."""
    Y, single = _as_batch(y)
    gamma, est = component_estimates(Y, pattern, noise_var, gmm, obs_gmm)
    out = np.einsum("lk,kln->ln", gamma, est)
    return out[0] if single else out


def estimate_ls(y, pattern: SelectionPattern):
    if not pattern.is_full:
        raise ValueError("LS estimation needs a full observation pattern")
    Y, single = _as_batch(y)
    _check_width(Y, pattern)
    return Y[0].copy() if single else Y.copy()


def estimate_genie(y, pattern: SelectionPattern, noise_var: float, genie_cov):
    """LMMSE with the per-sample true covariance; ``genie_cov`` is ``(N, N)`` or ``(L, N, N)``."""
    if genie_cov is None:
        raise ValueError("genie estimation needs the true channel covariance")
    Y, single = _as_batch(y)
    covs = np.asarray(genie_cov, dtype=complex)
    if covs.ndim == 2:
        covs = np.broadcast_to(covs, (Y.shape[0],) + covs.shape)
    if covs.shape[0] != Y.shape[0]:
        raise ValueError("need one covariance per observation")
    out = np.stack([estimate_lmmse(yl, pattern, 0.0, C, noise_var) for yl, C in zip(Y, covs)])
    return out[0] if single else out


def interpolation_matrix(pattern: SelectionPattern, dims) -> np.ndarray:
    """Real ``(N, M)`` matrix of the bilinear pilot interpolator.

    Frequency first inside every pilot-bearing slot, then time for every
    carrier; both passes hold the outermost value beyond the last pilot.
    """
    n_c, n_t = dims
    if n_c * n_t != pattern.total_dim:
        raise ValueError("grid dimensions do not match the pattern")
    idx = pattern.observed_indices
    m = idx.size
    if m == 0:
        raise ValueError("interpolation needs at least one pilot")
    carriers, slots = idx % n_c, idx // n_c
    pilot_slots = np.unique(slots)
    grid_c = np.arange(n_c)

    freq = np.zeros((n_c, pilot_slots.size, m))
    for s, t in enumerate(pilot_slots):
        sel = np.flatnonzero(slots == t)
        for j, col in enumerate(sel):
            freq[:, s, col] = np.interp(grid_c, carriers[sel], np.eye(sel.size)[j])

    time = np.stack(
        [np.interp(np.arange(n_t), pilot_slots, e) for e in np.eye(pilot_slots.size)], axis=1
    )
    grid = np.einsum("ts,csm->ctm", time, freq)
    return grid.reshape(n_c * n_t, m, order="F")


def lin_interp(y, pattern: SelectionPattern, dims):
    Y, single = _as_batch(y)
    _check_width(Y, pattern)
    out = Y @ interpolation_matrix(pattern, dims).T
    return out[0] if single else out


def fit_global_sample_cov(samples, cov_floor: float | None = None, cov_floor_rel: float = 1e-8):
    """Mean and ``1/L``-normalized covariance plus a floor of the training samples.

    The floor defaults to ``cov_floor_rel`` times the mean sample power.
    """
    X = np.asarray(samples, dtype=complex)
    if X.shape[0] < 2:
        raise ValueError("need at least two samples")
    if cov_floor is None:
        power = float(np.mean(np.abs(X) ** 2))
        cov_floor = cov_floor_rel * (power if power > 0 else 1.0)
    mean, cov = sample_covariance(X)
    return mean, cov + cov_floor * np.eye(X.shape[1])
