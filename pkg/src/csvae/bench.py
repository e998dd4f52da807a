"""Benchmark harness: MSE sweeps over measurement count and channel noise,
plus decode-latency measurement, for four recovery pipelines.

Methods:
  CsVae      power-constrained Gaussian matrix, generative recovery
  Lasso      the same power-constrained matrix, FISTA in the DCT basis
  LassoNoPt  unconstrained Gaussian matrix (no power budget), same solver
  Dip        direct transmission of selected features under the power
             budget, recovered by a generative model

The synthetic frames are sparse in the DCT domain, not in the standard
basis, so both Lasso baselines solve for DCT coefficients through the
composed matrix A @ Psi (Psi the orthonormal DCT synthesis basis) and map
back. Reports are deterministic given the spec except wall-time fields.
"""

import csv
import json
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from functools import lru_cache

import numpy as np
from scipy.fft import idct

from .channel import ChannelConfig, awgn_batch
from .errors import NumericalError
from .frames import (
    FrameSet,
    SourceStats,
    gen_synthetic,
    normalize_apply,
    normalize_fit,
    source_stats,
)
from .lasso import LassoConfig, fista_solve_batch, lipschitz_estimate
from .sensing import (
    FEATURES_PER_SENSOR,
    MeasurementMatrix,
    build_proposition_matrix,
    build_selection_matrix_for_m,
    build_unconstrained_matrix,
    measure,
)
from .vae import TrainConfig, VaeModel, recover, train

METHODS = ("CsVae", "Lasso", "LassoNoPt", "Dip")
CSV_COLUMNS = (
    "method", "m", "sigma_n", "seed",
    "mse_mean", "mse_std", "decode_seconds", "train_seconds",
)

# Evaluation noise must never collide with training noise, which is keyed
# by epoch index; any key above a plausible epoch count does it.
EVAL_NOISE_KEY = (1_000_003,)


@dataclass
class ExperimentSpec:
    methods: tuple = METHODS
    m_list: tuple = (48, 72, 96, 120, 144, 168, 192)
    sigma_list: tuple = (1e-4, 10e-4, 100e-4, 500e-4)
    sample_counts: tuple = (10_000, 30_000, 50_000, 70_000)
    seeds: tuple = (0, 1, 2)
    P_T: float = 0.1
    d: float = 2.0
    n_features: int = 204
    sparsity: int = 10
    train_frames: int = 20_000
    test_frames: int = 5_000
    lasso_eval_frames: int = 256
    sigma_fixed: float = 10e-4
    m_fixed: int = 168
    lasso_lambda: float = 1e-3
    latency_repetitions: int = 5
    data_seed: int = 1234
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.m_list = tuple(self.m_list)
        self.sigma_list = tuple(self.sigma_list)
        self.sample_counts = tuple(self.sample_counts)
        self.seeds = tuple(self.seeds)
        for name in ("methods", "m_list", "sigma_list", "seeds", "sample_counts"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        for m in (*self.m_list, self.m_fixed):
            if not 0 < m < self.n_features:
                raise ValueError(f"m={m} out of range (0, {self.n_features})")
        if any(s < 0 for s in self.sigma_list) or self.sigma_fixed < 0:
            raise ValueError("noise levels must be nonnegative")
        if self.latency_repetitions < 1:
            raise ValueError("latency_repetitions must be at least 1")
        if min(self.train_frames, self.test_frames, self.lasso_eval_frames) < 1:
            raise ValueError("frame counts must be positive")


@dataclass
class DataSplits:
    train: FrameSet
    test: FrameSet
    stats: SourceStats


def make_splits(spec: ExperimentSpec) -> DataSplits:
    """Fit normalization on the training split only; apply it to both."""
    train_raw = gen_synthetic(
        spec.train_frames, spec.n_features, spec.sparsity, spec.data_seed,
        normalize=False,
    )
    norm = normalize_fit(train_raw)
    test_raw = gen_synthetic(
        spec.test_frames, spec.n_features, spec.sparsity, spec.data_seed + 1,
        normalize=False,
    )
    train_set = normalize_apply(train_raw, norm)
    return DataSplits(
        train=train_set,
        test=normalize_apply(test_raw, norm),
        stats=source_stats(train_set),
    )


@dataclass
class ReportRow:
    method: str
    m: int
    sigma_n: float
    seed: int
    mse_mean: float
    mse_std: float
    decode_seconds: float
    train_seconds: float
    samples: int | None = None


@dataclass
class ExperimentReport:
    experiment: str
    spec: ExperimentSpec
    rows: list[ReportRow]
    environment: dict


def _environment() -> dict:
    return {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "platform": platform.platform(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
    }


def frame_mse(x_hat: np.ndarray, x_star: np.ndarray) -> np.ndarray:
    """Per-frame mean squared error, (1/n) sum_j (x_hat - x_star)^2."""
    x_hat = np.atleast_2d(x_hat)
    x_star = np.atleast_2d(x_star)
    if x_hat.shape != x_star.shape:
        raise ValueError("shape mismatch between estimate and truth")
    return np.mean((x_hat - x_star) ** 2, axis=1)


@lru_cache(maxsize=4)
def dct_synthesis_basis(n: int) -> np.ndarray:
    """Orthonormal basis with x = Psi @ s for DCT coefficients s."""
    return idct(np.eye(n), type=2, norm="ortho", axis=0)


def build_method_matrix(
    spec: ExperimentSpec, method: str, m: int, seed: int, stats: SourceStats
) -> MeasurementMatrix:
    if method in ("CsVae", "Lasso"):
        return build_proposition_matrix(m, spec.n_features, spec.P_T, spec.d, stats, seed)
    if method == "LassoNoPt":
        return build_unconstrained_matrix(m, spec.n_features, seed)
    if method == "Dip":
        if m % FEATURES_PER_SENSOR != 0:
            raise ValueError(
                f"Dip needs m divisible by {FEATURES_PER_SENSOR}, got {m}"
            )
        return build_selection_matrix_for_m(m, spec.n_features)
    raise ValueError(f"unknown method {method!r}")


def _noisy_measurements(
    spec: ExperimentSpec, method: str, A: MeasurementMatrix, frames: np.ndarray,
    sigma: float, seed: int,
) -> np.ndarray:
    normalize = method == "Dip"
    Y = measure(A, frames, power_normalize=normalize, P_T=spec.P_T if normalize else None)
    channel = ChannelConfig(sigma_n=sigma, seed=seed)
    return awgn_batch(Y, channel, key=EVAL_NOISE_KEY,
                      frame_indices=np.arange(Y.shape[0]))


def train_method_model(
    spec: ExperimentSpec, splits: DataSplits, method: str, m: int, sigma: float,
    seed: int,
) -> tuple[VaeModel, MeasurementMatrix, float]:
    """Train the generative model one of the VAE-family methods uses."""
    if method not in ("CsVae", "Dip"):
        raise ValueError(f"{method} does not use a trained model")
    A = build_method_matrix(spec, method, m, seed, splits.stats)
    channel = ChannelConfig(sigma_n=sigma, seed=seed)
    cfg = replace(spec.train_config, seed=seed)
    model, history = train(
        splits.train, A, channel, cfg,
        power_normalize=(method == "Dip"),
        P_T=spec.P_T if method == "Dip" else None,
    )
    return model, A, history.wall_time_seconds


def _eval_method(
    spec: ExperimentSpec, splits: DataSplits, method: str, m: int, sigma: float,
    seed: int,
) -> ReportRow:
    if method in ("CsVae", "Dip"):
        model, A, train_seconds = train_method_model(spec, splits, method, m, sigma, seed)
        truth = splits.test.frames
        noisy = _noisy_measurements(spec, method, A, truth, sigma, seed)
        t0 = time.perf_counter()
        x_hat = recover(model, noisy, matrix=A)
        decode_seconds = time.perf_counter() - t0
    else:
        A = build_method_matrix(spec, method, m, seed, splits.stats)
        truth = splits.test.frames[: spec.lasso_eval_frames]
        noisy = _noisy_measurements(spec, method, A, truth, sigma, seed)
        Psi = dct_synthesis_basis(spec.n_features)
        M = A.entries @ Psi
        cfg = LassoConfig(lam=spec.lasso_lambda)
        t0 = time.perf_counter()
        solution = fista_solve_batch(M, noisy, cfg)
        decode_seconds = time.perf_counter() - t0
        x_hat = solution.x @ Psi.T
        train_seconds = 0.0
    per_frame = frame_mse(x_hat, truth)
    return ReportRow(
        method=method, m=m, sigma_n=sigma, seed=seed,
        mse_mean=float(per_frame.mean()), mse_std=float(per_frame.std()),
        decode_seconds=decode_seconds, train_seconds=train_seconds,
    )


def run_mse_vs_m(spec: ExperimentSpec, splits: DataSplits) -> ExperimentReport:
    """Reconstruction error against measurement count at the fixed noise level."""
    rows = [
        _eval_method(spec, splits, method, m, spec.sigma_fixed, seed)
        for m in spec.m_list
        for seed in spec.seeds
        for method in spec.methods
    ]
    return ExperimentReport("mse_vs_m", spec, rows, _environment())


def run_mse_vs_noise(spec: ExperimentSpec, splits: DataSplits) -> ExperimentReport:
    """Reconstruction error against channel noise at the fixed m."""
    rows = [
        _eval_method(spec, splits, method, spec.m_fixed, sigma, seed)
        for sigma in spec.sigma_list
        for seed in spec.seeds
        for method in spec.methods
    ]
    return ExperimentReport("mse_vs_noise", spec, rows, _environment())


def _timer_resolution_ns() -> int:
    best = None
    for _ in range(512):
        a = time.perf_counter_ns()
        b = time.perf_counter_ns()
        while b == a:
            b = time.perf_counter_ns()
        delta = b - a
        if best is None or delta < best:
            best = delta
    return best


def _timed_median_seconds(fn, repetitions: int) -> float:
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    resolution = _timer_resolution_ns()
    durations = []
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        fn()
        durations.append(time.perf_counter_ns() - t0)
    median = float(np.median(durations))
    if median < 100 * resolution:
        raise NumericalError(
            f"timer resolution insufficient: median {median:.0f} ns is below "
            f"100 ticks of {resolution} ns; use a larger workload"
        )
    return median * 1e-9


def run_latency(
    spec: ExperimentSpec,
    splits: DataSplits,
    models: dict[str, tuple[VaeModel, MeasurementMatrix]],
) -> ExperimentReport:
    """Median wall time to decode batches sized to the requested sample counts.

    A batch of b frames at m measurements carries m*b scalar samples; b is
    the rounded count/m. VAE-family methods need pretrained models passed
    in; model load and matrix construction stay outside the timed section.
    """
    seed = spec.seeds[0]
    sigma = spec.sigma_fixed
    m = spec.m_fixed
    Psi = dct_synthesis_basis(spec.n_features)
    rows = []
    for method in spec.methods:
        if method in ("CsVae", "Dip"):
            if method not in models:
                raise ValueError(f"latency run needs a pretrained model for {method}")
            model, A = models[method]
            if model.m != m:
                raise ValueError(f"{method} model expects m={model.m}, spec has {m}")
            solver = None
        else:
            A = build_method_matrix(spec, method, m, seed, splits.stats)
            M = A.entries @ Psi
            L = lipschitz_estimate(M)
            cfg = LassoConfig(lam=spec.lasso_lambda)
            solver = (M, L, cfg)

        for count in spec.sample_counts:
            b = max(1, round(count / m))
            tiles = int(np.ceil(b / splits.test.n_frames))
            truth = np.tile(splits.test.frames, (tiles, 1))[:b]
            noisy = _noisy_measurements(spec, method, A, truth, sigma, seed)

            if solver is None:
                def run():
                    return recover(model, noisy)
            else:
                M, L, cfg = solver

                def run():
                    return fista_solve_batch(M, noisy, cfg, L=L)

            seconds = _timed_median_seconds(run, spec.latency_repetitions)
            out = run()
            x_hat = out if solver is None else out.x @ Psi.T
            per_frame = frame_mse(x_hat, truth)
            rows.append(
                ReportRow(
                    method=method, m=m, sigma_n=sigma, seed=seed,
                    mse_mean=float(per_frame.mean()),
                    mse_std=float(per_frame.std()),
                    decode_seconds=seconds, train_seconds=0.0,
                    samples=m * b,
                )
            )
    return ExperimentReport("latency", spec, rows, _environment())


def seed_mean_mse(report: ExperimentReport) -> dict:
    """(method, m, sigma_n) -> mean over seeds of the per-seed test means."""
    groups: dict = {}
    for row in report.rows:
        groups.setdefault((row.method, row.m, row.sigma_n), []).append(row.mse_mean)
    return {key: float(np.mean(vals)) for key, vals in groups.items()}


def report_to_dict(report: ExperimentReport) -> dict:
    rows = []
    for row in report.rows:
        d = asdict(row)
        if d["samples"] is None:
            del d["samples"]
        rows.append(d)
    return {
        "experiment": report.experiment,
        "environment": report.environment,
        "spec": asdict(report.spec),
        "rows": rows,
    }


def save_report_json(report: ExperimentReport, path):
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_report_csv(report: ExperimentReport, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow(
                [
                    row.method, row.m, repr(float(row.sigma_n)), row.seed,
                    repr(float(row.mse_mean)), repr(float(row.mse_std)),
                    repr(float(row.decode_seconds)), repr(float(row.train_seconds)),
                ]
            )
