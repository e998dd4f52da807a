"""Measurement matrices, linear measurement, and empirical constraint checks.

Three matrix kinds:
  * proposition   — i.i.d. Gaussian entries with variance chosen so the
                    per-channel-use transmit power (1/m)||Ax||^2 stays
                    under a budget P_T with probability >= 1 - 1/d^2
                    for sources with the given scalar stats,
  * unconstrained — i.i.d. N(0, 1/m), no power guarantee,
  * selection     — one sensor-feature per row (block structure of 12
                    features per sensor by default).
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .frames import FrameSet, SourceStats

MATRIX_MAGIC = b"CSM1"
KIND_PROPOSITION = "proposition"
KIND_UNCONSTRAINED = "unconstrained"
KIND_SELECTION = "selection"
_KIND_CODES = {KIND_PROPOSITION: 0, KIND_UNCONSTRAINED: 1, KIND_SELECTION: 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

FEATURES_PER_SENSOR = 12


class MatrixFormatError(Exception):
    """Raised when a matrix file is malformed."""


@dataclass
class MatrixMeta:
    """Construction metadata; meaningful for the proposition kind, zeros otherwise."""

    P_T: float = 0.0
    d: float = 0.0
    mu_x: float = 0.0
    sigma_x: float = 0.0
    sigma_a: float = 0.0
    seed: int = 0


@dataclass
class MeasurementMatrix:
    entries: np.ndarray
    kind: str
    meta: MatrixMeta = field(default_factory=MatrixMeta)
    selected_features: list[int] | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise ValueError("matrix entries must be 2-D")
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown matrix kind {self.kind!r}")
        if self.m >= self.n:
            raise ValueError(f"measurement count m={self.m} must be < n={self.n}")

    @property
    def m(self):
        return self.entries.shape[0]

    @property
    def n(self):
        return self.entries.shape[1]

    def digest(self) -> str:
        """Content hash binding trained models to the matrix they saw."""
        h = hashlib.sha256()
        h.update(self.kind.encode())
        h.update(struct.pack("<II", self.m, self.n))
        h.update(np.ascontiguousarray(self.entries, dtype="<f8").tobytes())
        return h.hexdigest()


def proposition_entry_variance(n: int, P_T: float, d: float, stats: SourceStats) -> float:
    """Entry variance P_T / (n^2 d^2 (d*sigma_x + |mu_x|)^2).

    |mu_x| keeps the bound valid for negative-mean sources; it reduces to
    the plain formula when mu_x >= 0.
    """
    if P_T <= 0:
        raise ValueError("P_T must be positive")
    if d <= 0:
        raise ValueError("d must be positive")
    if stats.sigma_x < 0:
        raise ValueError("sigma_x must be nonnegative")
    denom = d * stats.sigma_x + abs(stats.mu_x)
    if denom == 0:
        raise ValueError("degenerate source stats: sigma_x and mu_x both zero")
    return P_T / (n**2 * d**2 * denom**2)


def build_proposition_matrix(
    m: int, n: int, P_T: float, d: float, stats: SourceStats, seed: int
) -> MeasurementMatrix:
    """Power-constrained Gaussian matrix with entries N(0, sigma_a^2)."""
    if m >= n:
        raise ValueError(f"m={m} must be < n={n}")
    var = proposition_entry_variance(n, P_T, d, stats)
    sigma_a = float(np.sqrt(var))
    rng = np.random.default_rng(seed)
    entries = rng.normal(0.0, sigma_a, size=(m, n))
    meta = MatrixMeta(P_T, d, stats.mu_x, stats.sigma_x, sigma_a, seed)
    return MeasurementMatrix(entries, KIND_PROPOSITION, meta)


def build_unconstrained_matrix(m: int, n: int, seed: int) -> MeasurementMatrix:
    """Gaussian matrix with entries N(0, 1/m); no power guarantee."""
    if m >= n:
        raise ValueError(f"m={m} must be < n={n}")
    rng = np.random.default_rng(seed)
    entries = rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, n))
    return MeasurementMatrix(entries, KIND_UNCONSTRAINED, MatrixMeta(seed=seed))


def build_selection_matrix(
    sensor_indices: list[int], features_per_sensor: int, n: int
) -> MeasurementMatrix:
    """Row r extracts feature sensor_indices[r // fps] * fps + r % fps.

    Ax returns exactly the chosen sensors' feature blocks, in the order the
    sensors are listed.
    """
    if features_per_sensor < 1:
        raise ValueError("features_per_sensor must be positive")
    if len(sensor_indices) != len(set(sensor_indices)):
        raise ValueError("duplicate sensor indices")
    n_sensors = n // features_per_sensor
    for s in sensor_indices:
        if not 0 <= s < n_sensors:
            raise ValueError(f"sensor index {s} out of range [0, {n_sensors})")
    m = features_per_sensor * len(sensor_indices)
    if m >= n:
        raise ValueError(f"selection of {m} features must stay below n={n}")
    entries = np.zeros((m, n))
    features = []
    for r, s in enumerate(sensor_indices):
        for j in range(features_per_sensor):
            col = s * features_per_sensor + j
            entries[r * features_per_sensor + j, col] = 1.0
            features.append(col)
    return MeasurementMatrix(
        entries, KIND_SELECTION, MatrixMeta(), selected_features=features
    )


def build_selection_matrix_for_m(
    m: int, n: int, features_per_sensor: int = FEATURES_PER_SENSOR
) -> MeasurementMatrix:
    """Selection matrix with exactly m rows: first ceil(m/fps) sensor blocks,
    truncated to m features. Block-aligned m keeps whole sensors."""
    if m < 1:
        raise ValueError("m must be positive")
    if m >= n:
        raise ValueError(f"m={m} must be < n={n}")
    entries = np.zeros((m, n))
    entries[np.arange(m), np.arange(m)] = 1.0
    return MeasurementMatrix(
        entries, KIND_SELECTION, MatrixMeta(), selected_features=list(range(m))
    )


def measure(
    A: MeasurementMatrix,
    x: np.ndarray,
    power_normalize: bool = False,
    P_T: float | None = None,
) -> np.ndarray:
    """y = A x, optionally rescaled so (1/m)||y||^2 equals P_T exactly.

    The rescaling is the deep-learning baseline's l2 power normalization;
    it is nonlinear across frames and therefore off by default. A zero
    vector passes through unchanged. x may be a single frame (n,) or a
    batch (n_frames, n) measured row-wise.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xs = x[None, :] if single else x
    if xs.shape[1] != A.n:
        raise ValueError(f"frame dimension {xs.shape[1]} does not match n={A.n}")
    y = xs @ A.entries.T
    if power_normalize:
        if P_T is None or P_T <= 0:
            raise ValueError("power normalization requires a positive P_T")
        norms = np.linalg.norm(y, axis=1, keepdims=True)
        scale = np.divide(
            np.sqrt(A.m * P_T), norms, out=np.zeros_like(norms), where=norms > 0
        )
        y = y * scale
    return y[0] if single else y


def power_check(A: MeasurementMatrix, frames: FrameSet, P_T: float) -> float:
    """Fraction of frames with (1/m)||Ax||^2 <= P_T."""
    if frames.n_frames == 0:
        raise ValueError("empty frame set")
    y = measure(A, frames.frames)
    per_use = np.sum(y**2, axis=1) / A.m
    return float(np.mean(per_use <= P_T))


@dataclass
class SRecReport:
    """Empirical check of ||A(v1 - v2)|| >= gamma*||v1 - v2|| - kappa over pairs."""

    gamma: float
    kappa: float
    satisfied_fraction: float
    pair_count: int

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")


def _pair_norms(A: MeasurementMatrix, v1: np.ndarray, v2: np.ndarray):
    v1 = np.atleast_2d(np.asarray(v1, dtype=np.float64))
    v2 = np.atleast_2d(np.asarray(v2, dtype=np.float64))
    if v1.shape != v2.shape or v1.shape[1] != A.n:
        raise ValueError("pair shapes inconsistent with the matrix")
    if v1.shape[0] == 0:
        raise ValueError("empty pair set")
    diff = v1 - v2
    lhs = np.linalg.norm(diff @ A.entries.T, axis=1)
    rhs = np.linalg.norm(diff, axis=1)
    return lhs, rhs


def s_rec_estimate(
    A: MeasurementMatrix, v1: np.ndarray, v2: np.ndarray, gamma: float, kappa: float
) -> SRecReport:
    """Satisfied fraction of the set-restricted eigenvalue inequality at (gamma, kappa)."""
    lhs, rhs = _pair_norms(A, v1, v2)
    ok = lhs >= gamma * rhs - kappa
    return SRecReport(gamma, kappa, float(np.mean(ok)), len(ok))


def s_rec_fit(
    A: MeasurementMatrix,
    v1: np.ndarray,
    v2: np.ndarray,
    gamma: float | None = None,
    target_fraction: float = 0.99,
) -> SRecReport:
    """Fit the smallest slack kappa achieving the target satisfaction.

    When gamma is omitted it defaults to the median of ||A v|| / ||v|| over
    the nondegenerate pairs, so the fitted kappa reflects the spread of the
    contraction rather than a vacuous bound.
    """
    lhs, rhs = _pair_norms(A, v1, v2)
    if gamma is None:
        nz = rhs > 0
        if not np.any(nz):
            raise ValueError("all pairs are degenerate; supply gamma explicitly")
        gamma = float(np.median(lhs[nz] / rhs[nz]))
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    deficit = gamma * rhs - lhs
    kappa = max(0.0, float(np.quantile(deficit, target_fraction, method="higher")))
    ok = lhs >= gamma * rhs - kappa
    return SRecReport(gamma, kappa, float(np.mean(ok)), len(ok))


def save_matrix(A: MeasurementMatrix, path):
    """Write the binary matrix file (f64 entries, fixed meta block)."""
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<BII", _KIND_CODES[A.kind], A.m, A.n))
        fh.write(
            struct.pack(
                "<6d",
                A.meta.P_T,
                A.meta.d,
                A.meta.mu_x,
                A.meta.sigma_x,
                A.meta.sigma_a,
                float(A.meta.seed),
            )
        )
        fh.write(np.ascontiguousarray(A.entries, dtype="<f8").tobytes())
        if A.kind == KIND_SELECTION:
            feats = A.selected_features or []
            fh.write(struct.pack("<I", len(feats)))
            fh.write(np.asarray(feats, dtype="<u4").tobytes())


def load_matrix(path) -> MeasurementMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.calcsize("<4sBII6d")
    if len(blob) < head:
        raise MatrixFormatError(f"truncated header in {path}")
    magic, code, m, n, P_T, d, mu_x, sigma_x, sigma_a, seed_f = struct.unpack_from(
        "<4sBII6d", blob
    )
    if magic != MATRIX_MAGIC:
        raise MatrixFormatError(f"bad magic {magic!r} in {path}")
    if code not in _KIND_NAMES:
        raise MatrixFormatError(f"unknown kind code {code} in {path}")
    kind = _KIND_NAMES[code]
    payload = m * n * 8
    if len(blob) < head + payload:
        raise MatrixFormatError(f"truncated payload in {path}")
    entries = (
        np.frombuffer(blob, dtype="<f8", count=m * n, offset=head)
        .reshape(m, n)
        .copy()
    )
    meta = MatrixMeta(P_T, d, mu_x, sigma_x, sigma_a, int(seed_f))
    selected = None
    if kind == KIND_SELECTION:
        off = head + payload
        if len(blob) < off + 4:
            raise MatrixFormatError(f"truncated selection block in {path}")
        (count,) = struct.unpack_from("<I", blob, off)
        if len(blob) != off + 4 + count * 4:
            raise MatrixFormatError(f"truncated selection indices in {path}")
        selected = list(
            np.frombuffer(blob, dtype="<u4", count=count, offset=off + 4).astype(int)
        )
    elif len(blob) != head + payload:
        raise MatrixFormatError(f"trailing bytes in {path}")
    return MeasurementMatrix(entries, kind, meta, selected_features=selected)
