"""Complex Gaussian mixture primitives and the classical EM fit."""

from __future__ import annotations

import functools
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from .channel_sim import SelectionPattern

log = logging.getLogger(__name__)

LOG_PI = float(np.log(np.pi))


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class DegenerateResponsibilitiesError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BlockToeplitz:
    """Spectral parameterization ``C_k = Q^H diag(c_k) Q`` on an ``(N_c, N_t)`` grid."""

    spectra: np.ndarray  # (K, 4 * N_c * N_t), nonnegative
    dims: tuple[int, int]


@dataclass(frozen=True, eq=False)
class GmmParams:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, N) complex
    covs: np.ndarray  # (K, N, N) complex Hermitian
    structure: BlockToeplitz | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=complex)
        C = np.asarray(self.covs, dtype=complex)
        K = w.shape[0]
        if mu.shape[0] != K or C.shape[0] != K:
            raise ValueError("weights, means and covariances disagree on K")
        if C.shape[1:] != (mu.shape[1], mu.shape[1]):
            raise ValueError("covariance shape does not match mean dimension")
        for arr in (w, mu, C):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", C)

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def check_invariants(params: GmmParams, psd_tol: float = 1e-10, structure_tol: float = 1e-8):
    """Raise ``AssertionError`` when ``params`` violates a model invariant."""
    w = params.weights
    assert np.all(w >= 0), "negative mixing weight"
    assert abs(w.sum() - 1.0) <= 1e-12, "weights do not sum to one"
    for k, C in enumerate(params.covs):
        scale = max(np.trace(C).real, 1.0)
        assert np.max(np.abs(C - C.conj().T)) <= psd_tol * scale, f"component {k} not Hermitian"
        xi = np.linalg.eigvalsh(0.5 * (C + C.conj().T))
        assert xi.min() >= -psd_tol * scale, f"component {k} has eigenvalue {xi.min():.3e}"
    if params.structure is not None:
        st = params.structure
        for k, c in enumerate(st.spectra):
            assert np.all(c > 0), f"component {k} spectrum not positive"
            C_syn = toeplitz_synthesize(c, st.dims)
            rel = np.linalg.norm(C_syn - params.covs[k]) / np.linalg.norm(C_syn)
            assert rel <= structure_tol, f"component {k} violates Toeplitz structure ({rel:.2e})"


@dataclass(frozen=True)
class FitConfig:
    num_components: int
    max_iters: int = 200
    rel_loglik_tol: float = 1e-6
    cov_floor_rel: float = 1e-8
    cov_floor: float | None = None
    init: str = "kmeans++"
    seed: int = 0

    def __post_init__(self):
        if self.num_components < 1:
            raise ValueError("num_components must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_loglik_tol <= 0 or self.cov_floor_rel <= 0:
            raise ValueError("tolerances must be positive")
        if self.init != "kmeans++":
            raise ValueError(f"unknown init scheme {self.init!r}")

    def floor_for(self, samples: np.ndarray) -> float:
        """Covariance floor: ``cov_floor`` if set, else relative to the mean sample power."""
        if self.cov_floor is not None:
            return float(self.cov_floor)
        power = float(np.mean(np.abs(samples) ** 2)) if samples.size else 0.0
        return self.cov_floor_rel * (power if power > 0 else 1.0)


# ---------------------------------------------------------------------------
# Densities and responsibilities
# ---------------------------------------------------------------------------


def _cholesky(C: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("covariance is not positive definite") from None


def _whiten(chol: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Rows of ``X`` mapped through ``chol^{-1}``."""
    # inverting the triangular factor once turns the batch solve into one gemm
    inv = scipy.linalg.solve_triangular(chol, np.eye(chol.shape[0]), lower=True)
    return X @ inv.T


def cgauss_logpdf(x, mean, cov) -> np.ndarray | float:
    """Log-density of ``N_C(mean, cov)`` at ``x`` (shape ``(N,)`` or ``(L, N)``)."""
    x = np.asarray(x, dtype=complex)
    chol = _cholesky(np.asarray(cov, dtype=complex))
    n = chol.shape[0]
    z = _whiten(chol, np.atleast_2d(x) - mean)
    quad = np.sum(z.real**2 + z.imag**2, axis=1)
    logdet = 2.0 * np.sum(np.log(np.diag(chol).real))
    out = -n * LOG_PI - logdet - quad
    return out if x.ndim == 2 else float(out[0])


class ObservationGmm:
    """The mixture seen through a selection pattern and AWGN of variance ``noise_var``.

    Holds ``A mu_k`` and the Cholesky factors of ``C_{y,k} = A C_k A^H + noise_var I``.
    """

    def __init__(self, params: GmmParams, pattern: SelectionPattern, noise_var: float):
        if pattern.total_dim != params.dim:
            raise ValueError("pattern dimension does not match the model")
        idx = pattern.observed_indices
        self.params = params
        self.pattern = pattern
        self.noise_var = float(noise_var)
        self.means = params.means[:, idx]
        m = idx.size
        cov_y = params.covs[:, idx][:, :, idx] + self.noise_var * np.eye(m)
        self.covs = 0.5 * (cov_y + np.conj(np.swapaxes(cov_y, 1, 2)))
        self.chol = np.stack([_cholesky(C) for C in self.covs])
        self.logdet = 2.0 * np.sum(np.log(np.real(np.diagonal(self.chol, axis1=1, axis2=2))), axis=1)
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(params.weights)

    @property
    def num_components(self) -> int:
        return self.params.num_components

    def log_densities(self, Y: np.ndarray) -> np.ndarray:
        """``log N_C(y_l; A mu_k, C_{y,k})`` as an ``(L, K)`` array."""
        Y = np.atleast_2d(Y)
        m = Y.shape[1]
        out = np.empty((Y.shape[0], self.num_components))
        for k in range(self.num_components):
            z = _whiten(self.chol[k], Y - self.means[k])
            out[:, k] = -m * LOG_PI - self.logdet[k] - np.sum(z.real**2 + z.imag**2, axis=1)
        return out

    def log_joint(self, Y: np.ndarray) -> np.ndarray:
        return self.log_densities(Y) + self.log_weights

    def solve(self, k: int, rhs: np.ndarray) -> np.ndarray:
        """``C_{y,k}^{-1} rhs`` for ``rhs`` of shape ``(M, ...)``."""
        return scipy.linalg.cho_solve((self.chol[k], True), rhs)


def normalize_log_joint(log_joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Responsibilities and per-sample log-likelihoods from ``(L, K)`` log joints."""
    top = np.max(log_joint, axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise DegenerateResponsibilitiesError("degenerate responsibilities")
    r = np.exp(log_joint - top)
    total = r.sum(axis=1, keepdims=True)
    return r / total, (top + np.log(total))[:, 0]


def responsibilities(y, obs_gmm: ObservationGmm) -> np.ndarray:
    """Posterior component probabilities for ``y`` of shape ``(M,)`` or ``(L, M)``."""
    y = np.asarray(y)
    gamma, _ = normalize_log_joint(obs_gmm.log_joint(y))
    return gamma if y.ndim == 2 else gamma[0]


# ---------------------------------------------------------------------------
# PSD projection
# ---------------------------------------------------------------------------


def hermitian_part(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + np.conj(np.swapaxes(S, -1, -2)))


def psd_project(S: np.ndarray) -> np.ndarray:
    """Zero the negative eigenvalues of the Hermitian part of ``S``."""
    H = hermitian_part(np.asarray(S, dtype=complex))
    try:
        # positive definite input is its own projection; a Cholesky test is far cheaper than eigh
        np.linalg.cholesky(H)
        return H
    except np.linalg.LinAlgError:
        pass
    xi, V = np.linalg.eigh(H)
    return hermitian_part((V * np.maximum(xi, 0.0)) @ V.conj().T)


# ---------------------------------------------------------------------------
# Classical EM
# ---------------------------------------------------------------------------

Callback = Callable[[int, GmmParams], None]


def canonical_order(X: np.ndarray) -> np.ndarray:
    """Rows of ``X`` in lexicographic order of (real, imag) parts.

    Fits run on this ordering so that they do not depend on how the
    training set happens to be permuted.
    """
    keys = np.concatenate([X.real, X.imag], axis=1).T[::-1]
    return X[np.lexsort(keys)]


def kmeanspp_means(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    L = X.shape[0]
    means = np.empty((K, X.shape[1]), dtype=complex)
    means[0] = X[rng.integers(L)]
    d2 = np.sum(np.abs(X - means[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        p = d2 / total if total > 0 else np.full(L, 1.0 / L)
        means[k] = X[rng.choice(L, p=p)]
        d2 = np.minimum(d2, np.sum(np.abs(X - means[k]) ** 2, axis=1))
    return means


def sample_covariance(X: np.ndarray, weights: np.ndarray | None = None):
    """Weighted mean and ``1/sum(w)``-normalized scatter of the rows of ``X``."""
    if weights is None:
        weights = np.ones(X.shape[0])
    total = weights.sum()
    mean = weights @ X / total
    Xc = X - mean
    scatter = (Xc * weights[:, None]).T @ Xc.conj() / total
    return mean, hermitian_part(scatter)


def initial_params(X: np.ndarray, config: FitConfig, floor: float) -> GmmParams:
    """k-means++ means, the global sample covariance for every component, uniform weights."""
    K = config.num_components
    rng = np.random.default_rng(config.seed)
    means = kmeanspp_means(X, K, rng)
    _, cov = sample_covariance(X)
    cov = cov + floor * np.eye(X.shape[1])
    return GmmParams(np.full(K, 1.0 / K), means, np.repeat(cov[None], K, axis=0))


def reseed_empty(weights, means, covs, counts, sample_loglik, X, fallback_cov):
    """Re-initialize components with (numerically) no support.

    An empty component is moved onto the training sample the current
    mixture explains worst, with the fallback covariance and weight 1/L.
    """
    L = X.shape[0]
    empty = np.flatnonzero(counts < 1e-12 * L)
    if empty.size == 0:
        return weights, means, covs
    worst = np.argsort(sample_loglik, kind="stable")[: empty.size]
    for k, ell in zip(empty, worst):
        means[k] = X[ell]
        covs[k] = fallback_cov
        weights[k] = 1.0 / L
    return weights / weights.sum(), means, covs


def run_em(params: GmmParams, e_step, m_step, config: FitConfig, callback: Callback | None = None):
    """Generic EM driver.

    ``e_step(params, it) -> (loglik, stats)`` and ``m_step(params, stats, it) -> params``
    with ``it`` counting from 1. Stops after ``max_iters`` M-steps or once the
    relative log-likelihood change drops below ``rel_loglik_tol``.
    """
    prev = None
    for it in range(1, config.max_iters + 1):
        loglik, stats = e_step(params, it)
        log.debug("iteration %d: loglik %.6f", it, loglik)
        if prev is not None and abs(loglik - prev) <= config.rel_loglik_tol * abs(prev):
            log.debug("converged after %d iterations", it - 1)
            break
        params = m_step(params, stats, it)
        prev = loglik
        if callback is not None:
            callback(it, params)
    else:
        log.debug("stopped at max_iters=%d", config.max_iters)
    return params


def classical_e_step(X: np.ndarray):
    full = SelectionPattern.full(X.shape[1])

    def e_step(params, it=1):
        obs = ObservationGmm(params, full, 0.0)
        gamma, sample_ll = normalize_log_joint(obs.log_joint(X))
        return float(sample_ll.sum()), (gamma, sample_ll)

    return e_step


def classical_m_step(X: np.ndarray, floor: float, fallback_cov: np.ndarray):
    N = X.shape[1]
    eye = np.eye(N)

    def m_step(params, stats, it=1):
        gamma, sample_ll = stats
        K = gamma.shape[1]
        counts = gamma.sum(axis=0)
        weights = counts / X.shape[0]
        means = np.empty((K, N), dtype=complex)
        covs = np.empty((K, N, N), dtype=complex)
        for k in range(K):
            if counts[k] < 1e-12 * X.shape[0]:
                continue
            means[k], covs[k] = sample_covariance(X, gamma[:, k])
            covs[k] += floor * eye
        weights, means, covs = reseed_empty(weights, means, covs, counts, sample_ll, X, fallback_cov)
        return GmmParams(weights, means, covs)

    return m_step


def em_fit_classical(samples, config: FitConfig, callback: Callback | None = None,
                     init: GmmParams | None = None, subspace: np.ndarray | None = None) -> GmmParams:
    """Maximum-likelihood GMM fit of complex samples ``(L, N)`` by plain EM.

    ``subspace`` is an optional ``(N, r)`` orthonormal basis of a subspace that
    contains every sample (e.g. the range of an interpolation matrix). The fit
    then runs on the ``r`` coordinates: means stay in the subspace and every
    covariance is ``U S U^H + floor I``, so the result, the log-likelihood and
    the stopping iteration are those of the full-dimensional fit.
    """
    X = canonical_order(np.asarray(samples, dtype=complex))
    if X.shape[0] < config.num_components:
        raise ValueError("need at least K training samples")
    floor = config.floor_for(X)
    if subspace is not None:
        return _fit_in_subspace(X, np.asarray(subspace), floor, config, callback, init)
    params = init if init is not None else initial_params(X, config, floor)
    fallback = sample_covariance(X)[1] + floor * np.eye(X.shape[1])
    return run_em(params, classical_e_step(X), classical_m_step(X, floor, fallback), config, callback)


def _fit_in_subspace(X, U, floor, config, callback, init):
    N, r = U.shape
    if X.shape[1] != N:
        raise ValueError("subspace basis does not match the sample dimension")
    if init is not None:
        raise ValueError("an initial model cannot be combined with a subspace")
    Z = X @ U.conj()
    eye_r, eye_n = np.eye(r), np.eye(N)
    # every component has variance floor on the N - r directions outside the subspace
    offset = -X.shape[0] * (N - r) * (LOG_PI + np.log(floor))

    def lift(p: GmmParams) -> GmmParams:
        covs = U @ (p.covs - floor * eye_r) @ U.conj().T + floor * eye_n
        return GmmParams(p.weights, p.means @ U.T, hermitian_part(covs))

    e_step = classical_e_step(Z)

    def shifted_e_step(params, it=1):
        loglik, stats = e_step(params, it)
        return loglik + offset, stats

    fallback = sample_covariance(Z)[1] + floor * eye_r
    lifted = None if callback is None else (lambda it, p: callback(it, lift(p)))
    params = initial_params(Z, config, floor)
    return lift(run_em(params, shifted_e_step, classical_m_step(Z, floor, fallback), config, lifted))


# ---------------------------------------------------------------------------
# Block-Toeplitz parameterization
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=16)
def toeplitz_dft(dims: tuple[int, int]) -> np.ndarray:
    """Truncated 2D-DFT ``Q = Q_t kron Q_f`` with ``Q_x`` the first ``N_x`` columns of the
    unitary ``2 N_x``-point DFT. Shape ``(4 N_c N_t, N_c N_t)``."""
    def truncated(n):
        return scipy.linalg.dft(2 * n, scale="sqrtn")[:, :n]

    n_c, n_t = dims
    Q = np.kron(truncated(n_t), truncated(n_c))
    Q.setflags(write=False)
    return Q


def toeplitz_synthesize(c, dims) -> np.ndarray:
    """``Q^H diag(c) Q``: Hermitian PSD and block-Toeplitz with Toeplitz blocks."""
    c = np.asarray(c, dtype=float)
    Q = toeplitz_dft(tuple(dims))
    if c.shape != (Q.shape[0],):
        raise ValueError(f"spectrum must have length {Q.shape[0]}")
    if np.any(c < 0):
        raise ValueError("spectrum entries must be nonnegative")
    return hermitian_part((Q.conj().T * c) @ Q)


def toeplitz_spectrum(C: np.ndarray, dims) -> np.ndarray:
    """Real part of ``diag(Q C Q^H)``; seeds the spectral parameters."""
    Q = toeplitz_dft(tuple(dims))
    return np.real(np.sum((Q @ C) * Q.conj(), axis=1))


def spectral_floor(c: np.ndarray) -> np.ndarray | float:
    c = np.asarray(c)
    return 1e-10 * c.sum(axis=-1) / c.shape[-1]


def structured_update(C_old, c_old, C_new, dims):
    """One multiplicative step moving the spectrum ``c_old`` towards ``C_new``.

    ``Theta = Q (C_old^-1 C_new C_old^-1 - C_old^-1) Q^H`` and
    ``c <- c + c * diag(Theta) * c``, clamped at the spectral floor.
    Returns ``(c_new, toeplitz_synthesize(c_new))``.
    """
    c_old = np.asarray(c_old, dtype=float)
    Q = toeplitz_dft(tuple(dims))
    try:
        factor = scipy.linalg.cho_factor(hermitian_part(C_old), lower=True)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("structured update requires PD previous covariance") from None
    inv = hermitian_part(scipy.linalg.cho_solve(factor, np.eye(C_old.shape[0])))
    M = inv @ C_new @ inv - inv
    theta = np.real(np.sum((Q @ M) * Q.conj(), axis=1))
    c_new = np.maximum(c_old + c_old * theta * c_old, spectral_floor(c_old))
    return c_new, toeplitz_synthesize(c_new, dims)


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"GMCEMDL"
MODEL_VERSION = 1
STRUCT_FULL, STRUCT_TOEPLITZ = 0, 1
_MODEL_HEADER = struct.Struct("<7sHIIBII")


class ModelFileError(ValueError):
    pass


def write_model(path, params: GmmParams, dims: tuple[int, int] | None = None) -> None:
    K, N = params.num_components, params.dim
    st = params.structure
    if st is not None:
        dims = st.dims
    elif dims is None:
        dims = (N, 1)
    if dims[0] * dims[1] != N:
        raise ModelFileError("grid dimensions do not match model dimension")
    tag = STRUCT_FULL if st is None else STRUCT_TOEPLITZ
    parts = [
        _MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, K, N, tag, *dims),
        np.asarray(params.weights, dtype="<f8").tobytes(),
        np.asarray(params.means, dtype="<c16").tobytes(),
    ]
    if st is None:
        parts.append(np.asarray(params.covs, dtype="<c16").tobytes())
    else:
        parts.append(np.asarray(st.spectra, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_model(path) -> tuple[GmmParams, tuple[int, int]]:
    raw = Path(path).read_bytes()
    if len(raw) < _MODEL_HEADER.size:
        raise ModelFileError("truncated model header")
    magic, version, K, N, tag, n_c, n_t = _MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise ModelFileError("bad magic bytes")
    if version != MODEL_VERSION:
        raise ModelFileError(f"unsupported model version {version}")
    if n_c * n_t != N:
        raise ModelFileError("grid dimensions do not match model dimension")
    if tag not in (STRUCT_FULL, STRUCT_TOEPLITZ):
        raise ModelFileError(f"unknown structure tag {tag}")
    tail = K * N * N * 16 if tag == STRUCT_FULL else K * 4 * N * 8
    if len(raw) != _MODEL_HEADER.size + 8 * K + 16 * K * N + tail:
        raise ModelFileError("model payload size mismatch")
    pos = _MODEL_HEADER.size
    weights = np.frombuffer(raw, "<f8", K, pos).astype(float)
    pos += 8 * K
    means = np.frombuffer(raw, "<c16", K * N, pos).astype(complex).reshape(K, N)
    pos += 16 * K * N
    if tag == STRUCT_FULL:
        covs = np.frombuffer(raw, "<c16", K * N * N, pos).astype(complex).reshape(K, N, N)
        return GmmParams(weights, means, covs), (n_c, n_t)
    spectra = np.frombuffer(raw, "<f8", K * 4 * N, pos).astype(float).reshape(K, 4 * N)
    covs = np.stack([toeplitz_synthesize(c, (n_c, n_t)) for c in spectra])
    return GmmParams(weights, means, covs, BlockToeplitz(spectra, (n_c, n_t))), (n_c, n_t)
