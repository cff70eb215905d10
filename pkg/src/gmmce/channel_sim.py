"""Channel generators, pilot patterns, the observation model and dataset files.

Two scenarios are supported:

* ``spatial``: SIMO uplink with an N-antenna half-wavelength ULA. Every sample
  draws its own covariance from a Laplacian angular power density and the
  channel is conditionally Gaussian given that covariance.
* ``ofdm``: SISO doubly-selective channel on an ``N_c x N_t`` time-frequency
  grid built from a sum of delayed, Doppler-shifted paths. The grid is
  vectorized column-major, i.e. entry ``(c, t)`` sits at ``c + N_c * t``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

SCENARIO_SPATIAL = "spatial"
SCENARIO_OFDM = "ofdm"


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator whose stream depends only on ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draws with per-entry variance ``var``."""
    scale = math.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# ---------------------------------------------------------------------------
# Parameters and samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialParams:
    num_antennas: int
    num_clusters: int = 1
    sector_halfwidth: float = math.pi / 3
    angular_spread: float = 2.0 * math.pi / 180.0
    grid_points: int = 256

    def __post_init__(self):
        if self.num_antennas < 1:
            raise ValueError("num_antennas must be >= 1")
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        if not 0 < self.sector_halfwidth <= math.pi / 2:
            raise ValueError("sector_halfwidth must lie in (0, pi/2]")
        if self.angular_spread <= 0:
            raise ValueError("angular_spread must be positive")

    @property
    def dims(self) -> tuple[int, int]:
        return (self.num_antennas, 1)


@dataclass(frozen=True)
class OfdmParams:
    num_carriers: int = 12
    num_timeslots: int = 14
    subcarrier_spacing: float = 15e3
    symbol_duration: float = 1.0 / 14e3
    carrier_freq: float = 2.1e9
    num_paths: int = 20
    delay_spread: float = 1e-6
    velocity_range: tuple[float, float] = (3.0, 130.0)

    def __post_init__(self):
        if self.num_carriers < 1 or self.num_timeslots < 1:
            raise ValueError("grid dimensions must be positive")
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")
        if self.delay_spread < 0:
            raise ValueError("delay_spread must be nonnegative")
        lo, hi = self.velocity_range
        if lo > hi:
            raise ValueError("velocity_range must satisfy min <= max")

    @property
    def dims(self) -> tuple[int, int]:
        return (self.num_carriers, self.num_timeslots)

    @property
    def dim(self) -> int:
        return self.num_carriers * self.num_timeslots


@dataclass(frozen=True, eq=False)
class ChannelSample:
    h: np.ndarray
    genie_cov: np.ndarray | None = None
    scenario: str = SCENARIO_SPATIAL


@dataclass(frozen=True, eq=False)
class SelectionPattern:
    """Ordered set of observed vector indices (the rows of a selection matrix)."""

    observed_indices: np.ndarray
    total_dim: int

    def __post_init__(self):
        idx = np.asarray(self.observed_indices, dtype=np.int64).reshape(-1)
        if idx.size > self.total_dim:
            raise ValueError("more observed indices than total dimension")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.total_dim):
            raise ValueError("observed index out of range")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("observed indices must be strictly increasing")
        idx.setflags(write=False)
        object.__setattr__(self, "observed_indices", idx)

    @classmethod
    def full(cls, dim: int) -> "SelectionPattern":
        return cls(np.arange(dim), dim)

    @property
    def num_observed(self) -> int:
        return int(self.observed_indices.size)

    @property
    def is_full(self) -> bool:
        return self.num_observed == self.total_dim

    @property
    def missing_indices(self) -> np.ndarray:
        mask = np.ones(self.total_dim, dtype=bool)
        mask[self.observed_indices] = False
        return np.flatnonzero(mask)

    def selection_matrix(self) -> np.ndarray:
        A = np.zeros((self.num_observed, self.total_dim))
        A[np.arange(self.num_observed), self.observed_indices] = 1.0
        return A

    def __eq__(self, other):
        if not isinstance(other, SelectionPattern):
            return NotImplemented
        return self.total_dim == other.total_dim and np.array_equal(
            self.observed_indices, other.observed_indices
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PilotObservation:
    """Noisy pilot observations ``y = A h + n``; ``y`` has shape ``(M,)`` or ``(L, M)``."""

    y: np.ndarray
    pattern: SelectionPattern
    noise_var: float

    def __post_init__(self):
        if self.noise_var < 0:
            raise ValueError("noise variance must be nonnegative")
        if np.shape(self.y)[-1] != self.pattern.num_observed:
            raise ValueError("observation length does not match pattern")


# ---------------------------------------------------------------------------
# Spatial scenario
# ---------------------------------------------------------------------------


def steering_vectors(num_antennas: int, angles) -> np.ndarray:
    """Half-wavelength ULA responses, one column per angle."""
    n = np.arange(num_antennas)[:, None]
    return np.exp(1j * np.pi * n * np.sin(np.atleast_1d(angles))[None, :])


def laplacian_covariance(num_antennas, centers, angular_spread, grid_points=256):
    """Covariance of a ULA under a sum of equal-power Laplacian clusters.

    Each cluster's density is discretized on ``grid_points`` angles spanning
    ``center +- 10 * angular_spread``. The result is scaled to trace ``N``.
    """
    offsets = np.linspace(-10.0, 10.0, grid_points) * angular_spread
    weights = np.exp(-np.abs(offsets) / angular_spread)
    weights /= weights.sum()
    C = np.zeros((num_antennas, num_antennas), dtype=complex)
    for center in np.atleast_1d(centers):
        a = steering_vectors(num_antennas, center + offsets)
        C += (a * weights) @ a.conj().T
    C = 0.5 * (C + C.conj().T)
    return C * (num_antennas / np.trace(C).real)


def spatial_covariance(params: SpatialParams, rng: np.random.Generator) -> np.ndarray:
    centers = rng.uniform(-params.sector_halfwidth, params.sector_halfwidth, params.num_clusters)
    return laplacian_covariance(
        params.num_antennas, centers, params.angular_spread, params.grid_points
    )


def psd_sqrt(C: np.ndarray) -> np.ndarray:
    """Hermitian square root with negative eigenvalues clamped to zero.

    Eigenvalues below the numerical rank threshold are treated as zero so that
    rank-deficient covariances keep their exact support.
    """
    xi, V = np.linalg.eigh(0.5 * (C + C.conj().T))
    cutoff = C.shape[0] * np.finfo(float).eps * max(xi.max(initial=0.0), 0.0)
    xi = np.where(xi > cutoff, xi, 0.0)
    return (V * np.sqrt(xi)) @ V.conj().T


def sample_spatial_channel(C: np.ndarray, rng: np.random.Generator) -> ChannelSample:
    w = complex_normal(rng, C.shape[0])
    return ChannelSample(h=psd_sqrt(C) @ w, genie_cov=C, scenario=SCENARIO_SPATIAL)


def generate_spatial(params: SpatialParams, num_samples: int, seed: int, stream: int = 0,
                     keep_cov: bool = True):
    """Draw ``num_samples`` spatial channels.

    Returns ``(H, covs)`` with ``H`` of shape ``(L, N)``; ``covs`` is ``(L, N, N)``
    or ``None`` when ``keep_cov`` is false. Sample ``i`` only depends on
    ``(seed, stream, i)``.
    """
    N = params.num_antennas
    H = np.empty((num_samples, N), dtype=complex)
    covs = np.empty((num_samples, N, N), dtype=complex) if keep_cov else None
    for i in range(num_samples):
        rng = derive_rng(seed, stream, i)
        C = spatial_covariance(params, rng)
        H[i] = sample_spatial_channel(C, rng).h
        if keep_cov:
            covs[i] = C
    return H, covs


# ---------------------------------------------------------------------------
# OFDM scenario
# ---------------------------------------------------------------------------


def ofdm_grid(gains, delays, dopplers, params: OfdmParams) -> np.ndarray:
    """Time-frequency response ``H[c, t]`` of a set of paths."""
    c = np.arange(params.num_carriers)
    t = np.arange(params.num_timeslots)
    freq = np.exp(-2j * np.pi * params.subcarrier_spacing * np.outer(c, delays))  # (Nc, P)
    time = np.exp(2j * np.pi * params.symbol_duration * np.outer(dopplers, t))  # (P, Nt)
    return (freq * gains) @ time / math.sqrt(len(gains))


def vec(H: np.ndarray) -> np.ndarray:
    return H.reshape(-1, order="F")


def unvec(h: np.ndarray, dims) -> np.ndarray:
    return np.asarray(h).reshape(dims, order="F")


def sample_ofdm_channel(params: OfdmParams, rng: np.random.Generator) -> ChannelSample:
    P = params.num_paths
    speed = rng.uniform(*params.velocity_range) / 3.6
    delays = np.minimum(rng.exponential(params.delay_spread, P), 5.0 * params.delay_spread)
    aoa = rng.uniform(0.0, 2.0 * np.pi, P)
    dopplers = speed * params.carrier_freq / SPEED_OF_LIGHT * np.cos(aoa)
    gains = complex_normal(rng, P)
    H = ofdm_grid(gains, delays, dopplers, params)
    return ChannelSample(h=vec(H), scenario=SCENARIO_OFDM)


def generate_ofdm(params: OfdmParams, num_samples: int, seed: int, stream: int = 0) -> np.ndarray:
    H = np.empty((num_samples, params.dim), dtype=complex)
    for i in range(num_samples):
        H[i] = sample_ofdm_channel(params, derive_rng(seed, stream, i)).h
    return H


def make_diamond_pattern(num_carriers: int, num_timeslots: int, time_slots: int,
                         freqs_per_slot: int) -> SelectionPattern:
    """Staggered pilot lattice with ``time_slots * freqs_per_slot`` pilots.

    Pilot-bearing slots are spread evenly over the frame. Odd-numbered
    pilot slots shift their carriers by half the pilot spacing.
    """
    T, F = time_slots, freqs_per_slot
    if T < 1 or F < 1:
        raise ValueError("time_slots and freqs_per_slot must be >= 1")
    if T > num_timeslots or F > num_carriers:
        raise ValueError("pilot lattice does not fit into the grid")
    # round-half-up of ((i + 0.5) / T) * N_t - 0.5
    slots = [math.floor((i + 0.5) * num_timeslots / T) for i in range(T)]
    if len(set(slots)) != T:
        raise ValueError(f"duplicate pilot slots for T={T}, N_t={num_timeslots}")
    spacing = num_carriers // F
    indices = []
    for i, t in enumerate(slots):
        offset = 0 if i % 2 == 0 else spacing // 2
        carriers = offset + spacing * np.arange(F)
        indices.extend(carriers + num_carriers * t)
    indices = np.sort(np.asarray(indices))
    if np.unique(indices).size != indices.size:
        raise ValueError("pilot configuration produces duplicate indices")
    return SelectionPattern(indices, num_carriers * num_timeslots)


# ---------------------------------------------------------------------------
# Observation model
# ---------------------------------------------------------------------------


def observe(h, pattern: SelectionPattern, noise_var: float, rng: np.random.Generator) -> PilotObservation:
    """Select the observed entries of ``h`` (shape ``(N,)`` or ``(L, N)``) and add AWGN."""
    h = np.asarray(h)
    if h.shape[-1] != pattern.total_dim:
        raise ValueError("channel dimension does not match pattern")
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    y = h[..., pattern.observed_indices]
    noise = complex_normal(rng, y.shape, noise_var)
    return PilotObservation(y + noise, pattern, float(noise_var))


def snr_to_noise_var(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------

MAGIC = b"GMCE"
VERSION = 1
TAG_SPATIAL, TAG_OFDM, TAG_OBSERVATIONS = 0, 1, 2
_HEADER = struct.Struct("<4sHBIIIQ")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """In-memory content of a dataset file; ``data`` is ``(L, width)`` complex."""

    kind: int
    data: np.ndarray
    dims: tuple[int, int]
    pattern: SelectionPattern | None = None
    noise_var: float | None = None

    @property
    def total_dim(self) -> int:
        return self.dims[0] * self.dims[1]

    @property
    def is_observation(self) -> bool:
        return self.kind == TAG_OBSERVATIONS


def write_dataset(path, dataset: Dataset) -> None:
    data = np.asarray(dataset.data, dtype=complex)
    if data.ndim != 2:
        raise DatasetError("dataset payload must be two-dimensional")
    n_c, n_t = dataset.dims
    num_obs = 0
    if dataset.kind == TAG_OBSERVATIONS:
        if dataset.pattern is None or dataset.noise_var is None:
            raise DatasetError("observation datasets need a pattern and noise variance")
        if dataset.pattern.total_dim != n_c * n_t:
            raise DatasetError("pattern dimension does not match grid dimensions")
        width = dataset.pattern.num_observed
        num_obs = 0 if dataset.pattern.is_full else width
    elif dataset.kind in (TAG_SPATIAL, TAG_OFDM):
        width = n_c * n_t
    else:
        raise DatasetError(f"unknown scenario tag {dataset.kind}")
    if data.shape[1] != width and data.shape[0] > 0:
        raise DatasetError("record width does not match header dimensions")
    parts = [_HEADER.pack(MAGIC, VERSION, dataset.kind, n_c, n_t, num_obs, data.shape[0])]
    if dataset.kind == TAG_OBSERVATIONS:
        parts.append(struct.pack("<d", dataset.noise_var))
        parts.append(np.asarray(dataset.pattern.observed_indices[:num_obs], dtype="<u4").tobytes())
    parts.append(np.ascontiguousarray(data, dtype="<c16").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError("truncated header")
    magic, version, tag, n_c, n_t, num_obs, num_rec = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetError("bad magic bytes")
    if version != VERSION:
        raise DatasetError(f"unsupported version {version}")
    if tag not in (TAG_SPATIAL, TAG_OFDM, TAG_OBSERVATIONS):
        raise DatasetError(f"unknown scenario tag {tag}")
    pos = _HEADER.size
    total = n_c * n_t
    pattern = noise_var = None
    width = total
    if tag == TAG_OBSERVATIONS:
        if len(raw) < pos + 8 + 4 * num_obs:
            raise DatasetError("truncated observation header")
        (noise_var,) = struct.unpack_from("<d", raw, pos)
        pos += 8
        if num_obs:
            idx = np.frombuffer(raw, dtype="<u4", count=num_obs, offset=pos).astype(np.int64)
            pos += 4 * num_obs
            try:
                pattern = SelectionPattern(idx, total)
            except ValueError as err:
                raise DatasetError(f"invalid pattern: {err}") from None
        else:
            pattern = SelectionPattern.full(total)
        width = pattern.num_observed
    expected = num_rec * width * 16
    if len(raw) - pos != expected:
        raise DatasetError(
            f"payload size {len(raw) - pos} does not match {num_rec} records of width {width}"
        )
    data = np.frombuffer(raw, dtype="<c16", count=num_rec * width, offset=pos)
    data = data.astype(complex).reshape(num_rec, width)
    return Dataset(tag, data, (n_c, n_t), pattern, noise_var)
