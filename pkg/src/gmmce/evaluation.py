"""Experiment configuration, NMSE sweeps and CSV reports."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import adapted_em
from .channel_sim import (
    SCENARIO_OFDM,
    SCENARIO_SPATIAL,
    OfdmParams,
    SelectionPattern,
    SpatialParams,
    derive_rng,
    generate_ofdm,
    generate_spatial,
    make_diamond_pattern,
    observe,
    snr_to_noise_var,
)
from .estimators import (
    estimate_genie,
    estimate_gmm,
    estimate_lmmse,
    estimate_ls,
    fit_global_sample_cov,
    interpolation_matrix,
)
from .gmm_core import FitConfig, GmmParams, em_fit_classical

log = logging.getLogger(__name__)

ESTIMATORS = (
    "genie",
    "ls",
    "lin_int",
    "samp_cov_lin_int",
    "gmm_H",
    "gmm_mismatch",
    "gmm_lin_int",
    "gmm_Y",
    "gmm_Y_toep",
)
GMM_VARIANTS = ("gmm_H", "gmm_mismatch", "gmm_lin_int", "gmm_Y", "gmm_Y_toep")
# variants that produce a model file; the sample covariance is a one-component mixture
FITTABLE = GMM_VARIANTS + ("samp_cov_lin_int",)
CSV_HEADER = ("scenario", "estimator", "snr_db", "num_pilots", "nmse", "l_test", "seed")

# sub-seed streams; every stream owns a disjoint slice of the seed space
STREAM_TRAIN_CHANNELS = 1
STREAM_TEST_CHANNELS = 2
STREAM_TRAIN_NOISE = 3
STREAM_TEST_NOISE = 4


class ConfigError(ValueError):
    pass


def nmse(estimates, truths) -> float:
    """``sum ||h_hat - h||^2 / sum ||h||^2`` over all samples."""
    est = np.asarray(estimates)
    ref = np.asarray(truths)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    if ref.size == 0:
        raise ValueError("nmse of an empty set")
    return float(np.sum(np.abs(est - ref) ** 2) / np.sum(np.abs(ref) ** 2))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    spatial: SpatialParams | None = None
    ofdm: OfdmParams | None = None
    num_components: int = 64
    l_train: int = 100_000
    l_test: int = 10_000
    snr_list: tuple[float, ...] = (10.0,)
    pilot_configs: tuple[tuple[int, int], ...] = ()
    estimators: tuple[str, ...] = ("ls",)
    seed: int = 0
    max_iters: int = 200
    rel_loglik_tol: float = 1e-6
    train_snr_db: float | None = None
    output: str | None = None

    def __post_init__(self):
        if self.scenario == SCENARIO_SPATIAL:
            if self.spatial is None:
                raise ConfigError("spatial scenario needs spatial parameters")
        elif self.scenario == SCENARIO_OFDM:
            if self.ofdm is None:
                raise ConfigError("ofdm scenario needs ofdm parameters")
            if not self.pilot_configs:
                raise ConfigError("ofdm scenario needs at least one pilot configuration")
        else:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.l_test < 1:
            raise ConfigError("l_test must be >= 1")
        if not self.snr_list:
            raise ConfigError("snr list must not be empty")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ConfigError(f"unknown estimators: {', '.join(unknown)}")
        if not self.estimators:
            raise ConfigError("no estimators requested")
        if any(e in GMM_VARIANTS for e in self.estimators) and self.l_train < self.num_components:
            raise ConfigError("l_train must be >= num_components")
        if "samp_cov_lin_int" in self.estimators and self.l_train < 2:
            raise ConfigError("samp_cov_lin_int needs l_train >= 2")
        self._check_compatibility()

    @property
    def dims(self) -> tuple[int, int]:
        return self.spatial.dims if self.scenario == SCENARIO_SPATIAL else self.ofdm.dims

    @property
    def dim(self) -> int:
        n_c, n_t = self.dims
        return n_c * n_t

    def patterns(self) -> list[SelectionPattern]:
        if self.scenario == SCENARIO_SPATIAL:
            return [SelectionPattern.full(self.dim)]
        n_c, n_t = self.dims
        try:
            return [make_diamond_pattern(n_c, n_t, T, F) for T, F in self.pilot_configs]
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def fit_config(self) -> FitConfig:
        return FitConfig(
            self.num_components,
            max_iters=self.max_iters,
            rel_loglik_tol=self.rel_loglik_tol,
            seed=self.seed,
        )

    def _check_compatibility(self):
        ests = set(self.estimators)
        if "genie" in ests and self.scenario != SCENARIO_SPATIAL:
            raise ConfigError("genie needs per-sample covariances (spatial scenario only)")
        sparse = any(not p.is_full for p in self.patterns())
        for name in ("ls", "gmm_mismatch"):
            if name in ests and sparse:
                raise ConfigError(f"{name} needs a full observation pattern")


_INT_KEYS = {
    "num_antennas", "num_clusters", "grid_points", "num_carriers", "num_timeslots",
    "num_paths", "num_components", "l_train", "l_test", "seed", "max_iters",
}
_FLOAT_KEYS = {
    "sector_halfwidth_deg", "angular_spread_deg", "subcarrier_spacing", "symbol_duration",
    "carrier_freq", "delay_spread", "velocity_min", "velocity_max", "rel_loglik_tol",
    "train_snr_db",
}
_LIST_KEYS = {"snr_db", "pilots", "estimators"}
_STR_KEYS = {"scenario", "out"}
CONFIG_KEYS = _INT_KEYS | _FLOAT_KEYS | _LIST_KEYS | _STR_KEYS


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                out[key] = int(value)
            elif key in _FLOAT_KEYS:
                out[key] = float(value)
            elif key == "snr_db":
                out[key] = tuple(float(v) for v in value.split(",") if v.strip())
            elif key == "pilots":
                out[key] = tuple(
                    tuple(int(x) for x in v.lower().split("x")) for v in value.split(",") if v.strip()
                )
            elif key == "estimators":
                out[key] = tuple(v.strip() for v in value.split(",") if v.strip())
            else:
                out[key] = value
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
    if any(len(p) != 2 for p in out.get("pilots", ())):
        raise ConfigError("pilot configurations are written as TxF, e.g. 3x6")
    return out


def config_from_dict(values: dict) -> ExperimentConfig:
    scenario = values.get("scenario")
    if scenario is None:
        raise ConfigError("missing key 'scenario'")
    spatial = ofdm = None
    try:
        if scenario == SCENARIO_SPATIAL:
            if "num_antennas" not in values:
                raise ConfigError("missing key 'num_antennas'")
            kw = {"num_antennas": values["num_antennas"]}
            for key in ("num_clusters", "grid_points"):
                if key in values:
                    kw[key] = values[key]
            if "sector_halfwidth_deg" in values:
                kw["sector_halfwidth"] = math.radians(values["sector_halfwidth_deg"])
            if "angular_spread_deg" in values:
                kw["angular_spread"] = math.radians(values["angular_spread_deg"])
            spatial = SpatialParams(**kw)
        elif scenario == SCENARIO_OFDM:
            kw = {}
            for key in ("num_carriers", "num_timeslots", "subcarrier_spacing", "symbol_duration",
                        "carrier_freq", "num_paths", "delay_spread"):
                if key in values:
                    kw[key] = values[key]
            if "velocity_min" in values or "velocity_max" in values:
                lo, hi = OfdmParams().velocity_range
                kw["velocity_range"] = (values.get("velocity_min", lo), values.get("velocity_max", hi))
            ofdm = OfdmParams(**kw)
        kw = {}
        for src, dst in (("num_components", "num_components"), ("l_train", "l_train"),
                         ("l_test", "l_test"), ("snr_db", "snr_list"), ("pilots", "pilot_configs"),
                         ("estimators", "estimators"), ("seed", "seed"), ("max_iters", "max_iters"),
                         ("rel_loglik_tol", "rel_loglik_tol"), ("train_snr_db", "train_snr_db"),
                         ("out", "output")):
            if src in values:
                kw[dst] = values[src]
        return ExperimentConfig(scenario, spatial=spatial, ofdm=ofdm, **kw)
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return config_from_dict(parse_config_text(text))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


class ReportRow(NamedTuple):
    scenario: str
    estimator: str
    snr_db: float
    num_pilots: int
    nmse: float
    l_test: int
    seed: int

    def sort_key(self):
        return (self.scenario, self.estimator, self.snr_db, self.num_pilots)


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)

    def sorted(self) -> "EvalReport":
        return EvalReport(sorted(self.rows, key=ReportRow.sort_key))

    def lookup(self, estimator: str, snr_db: float | None = None, num_pilots: int | None = None):
        hits = [
            r for r in self.rows
            if r.estimator == estimator
            and (snr_db is None or r.snr_db == snr_db)
            and (num_pilots is None or r.num_pilots == num_pilots)
        ]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {estimator}, {snr_db}, {num_pilots}")
        return hits[0].nmse

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.sorted().rows:
            writer.writerow([r.scenario, r.estimator, repr(float(r.snr_db)), r.num_pilots,
                             repr(float(r.nmse)), r.l_test, r.seed])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "EvalReport":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if tuple(header or ()) != CSV_HEADER:
                raise ValueError(f"{path}: unexpected CSV header")
            rows = [
                ReportRow(s, e, float(snr), int(p), float(v), int(lt), int(sd))
                for s, e, snr, p, v, lt, sd in reader
            ]
        return cls(rows)

    @classmethod
    def merge(cls, reports) -> "EvalReport":
        rows = {}
        for rep in reports:
            for r in rep.rows:
                rows[r.sort_key()] = r
        return cls(list(rows.values())).sorted()


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def _snr_key(snr_db: float) -> int:
    return int(round((snr_db + 1000.0) * 1000.0))


@dataclass
class _Data:
    H_train: np.ndarray
    H_test: np.ndarray
    test_covs: np.ndarray | None


def generate_channels(config: ExperimentConfig, split: str, keep_cov: bool = False):
    """Channels ``(L, N)`` of the ``"train"`` or ``"test"`` split and, when
    ``keep_cov`` is set (spatial only), their covariances."""
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    stream = STREAM_TRAIN_CHANNELS if split == "train" else STREAM_TEST_CHANNELS
    count = config.l_train if split == "train" else config.l_test
    if config.scenario == SCENARIO_SPATIAL:
        return generate_spatial(config.spatial, count, config.seed, stream, keep_cov=keep_cov)
    return generate_ofdm(config.ofdm, count, config.seed, stream), None


def noise_rng(config: ExperimentConfig, split: str, pattern_index: int, snr_db: float):
    """Generator of the AWGN added to one split at one sweep point."""
    stream = STREAM_TRAIN_NOISE if split == "train" else STREAM_TEST_NOISE
    return derive_rng(config.seed, stream, pattern_index, _snr_key(snr_db))


def _generate(config: ExperimentConfig) -> _Data:
    H_train, _ = generate_channels(config, "train")
    H_test, covs = generate_channels(config, "test", keep_cov="genie" in config.estimators)
    return _Data(H_train, H_test, covs)


def fit_variant(name: str, Y_train: np.ndarray, H_train: np.ndarray | None,
                pattern: SelectionPattern, noise_var: float, dims, fit_config: FitConfig):
    """Train one model variant; returns the channel-domain mixture."""
    if name == "samp_cov_lin_int":
        mean, cov = fit_global_sample_cov(Y_train @ interpolation_matrix(pattern, dims).T)
        return GmmParams(np.ones(1), mean[None], cov[None])
    if name == "gmm_H":
        return em_fit_classical(H_train, fit_config)
    if name == "gmm_mismatch":
        if not pattern.is_full:
            raise ConfigError("gmm_mismatch needs a full observation pattern")
        return em_fit_classical(Y_train, fit_config)
    if name == "gmm_lin_int":
        P = interpolation_matrix(pattern, dims)
        # interpolated samples live in the range of P; fitting there is exact and far cheaper
        return em_fit_classical(Y_train @ P.T, fit_config, subspace=scipy.linalg.orth(P))
    if name == "gmm_Y":
        if pattern.is_full:
            return adapted_em.fit_noisy(Y_train, noise_var, fit_config)
        return adapted_em.fit_noisy_missing(Y_train, pattern, noise_var, fit_config,
                                            adapted_em.STRUCTURE_FULL, dims)
    if name == "gmm_Y_toep":
        return adapted_em.fit_noisy_missing(Y_train, pattern, noise_var, fit_config,
                                            adapted_em.STRUCTURE_TOEPLITZ, dims)
    raise ConfigError(f"{name} is not a trainable variant")


def run_experiment(config: ExperimentConfig) -> EvalReport:
    """NMSE of every requested estimator for every (pilot config, SNR) point.

    Models are retrained per point on observations at the training SNR,
    which equals the test SNR unless ``train_snr_db`` is set.
    """
    patterns = config.patterns()
    t0 = time.perf_counter()
    data = _generate(config)
    log.info("generated %d/%d channels in %.1fs", config.l_train, config.l_test,
             time.perf_counter() - t0)
    dims, fit_cfg = config.dims, config.fit_config()
    report = EvalReport()
    cache = {}
    for p_idx, pattern in enumerate(patterns):
        interp = interpolation_matrix(pattern, dims)
        for snr in config.snr_list:
            noise_var = snr_to_noise_var(snr)
            train_snr = snr if config.train_snr_db is None else config.train_snr_db
            train_var = snr_to_noise_var(train_snr)
            Y_train = observe(data.H_train, pattern, train_var,
                              noise_rng(config, "train", p_idx, train_snr)).y
            Y_test = observe(data.H_test, pattern, noise_var,
                             noise_rng(config, "test", p_idx, snr)).y
            for name in config.estimators:
                t1 = time.perf_counter()
                if name == "ls":
                    est = estimate_ls(Y_test, pattern)
                elif name == "genie":
                    est = estimate_genie(Y_test, pattern, noise_var, data.test_covs)
                elif name == "lin_int":
                    est = Y_test @ interp.T
                elif name == "samp_cov_lin_int":
                    mean, cov = fit_global_sample_cov(Y_train @ interp.T)
                    est = estimate_lmmse(Y_test, pattern, mean, cov, noise_var)
                else:
                    # gmm_H ignores the observations, so one fit serves every point
                    key = (name,) if name == "gmm_H" else (name, p_idx, train_snr)
                    if key not in cache:
                        cache[key] = fit_variant(name, Y_train, data.H_train, pattern,
                                                 train_var, dims, fit_cfg)
                    est = estimate_gmm(Y_test, pattern, noise_var, cache[key])
                value = nmse(est, data.H_test)
                log.info("%s snr=%g pilots=%d %s: nmse=%.4g (%.1f dB) in %.1fs", config.scenario,
                         snr, pattern.num_observed, name, value, 10 * math.log10(value),
                         time.perf_counter() - t1)
                report.rows.append(ReportRow(config.scenario, name, float(snr),
                                             pattern.num_observed, value, config.l_test,
                                             config.seed))
            cache = {k: v for k, v in cache.items() if k == ("gmm_H",)}
    return report.sorted()


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(config, **changes) if changes else config
