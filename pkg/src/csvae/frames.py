"""Source frames: normalization, statistics, synthetic generation, file I/O.

A frame is one n-dimensional sensor snapshot (default n=204 features).
All in-memory math is float64; the binary frame file stores float32.
"""

import csv
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, idct

FRAME_MAGIC = b"CSF1"
FRAME_FORMAT_VERSION = 1


class FrameFormatError(Exception):
    """Raised when a frame file is malformed or holds invalid values."""


@dataclass
class NormStats:
    """Per-feature extrema fitted on a training set."""

    per_feature_min: np.ndarray
    per_feature_max: np.ndarray

    def __post_init__(self):
        self.per_feature_min = np.asarray(self.per_feature_min, dtype=np.float64)
        self.per_feature_max = np.asarray(self.per_feature_max, dtype=np.float64)
        if self.per_feature_min.shape != self.per_feature_max.shape:
            raise ValueError("min/max shape mismatch")
        if np.any(self.per_feature_min > self.per_feature_max):
            raise ValueError("per-feature min exceeds max")

    @property
    def n_features(self):
        return self.per_feature_min.shape[0]


@dataclass
class SourceStats:
    """Scalar mean and standard deviation over all normalized entries."""

    mu_x: float
    sigma_x: float

    def __post_init__(self):
        if self.sigma_x < 0:
            raise ValueError("sigma_x must be nonnegative")


@dataclass
class FrameSet:
    """A batch of frames, shape (n_frames, n_features), every entry finite."""

    frames: np.ndarray
    normalized: bool = False
    norm: NormStats | None = field(default=None)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError("frames must be a 2-D array")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames contain non-finite entries")
        if self.normalized and self.frames.size and (
            self.frames.min() < -1.0 or self.frames.max() > 1.0
        ):
            raise ValueError("normalized frames must lie in [-1, 1]")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def n_features(self):
        return self.frames.shape[1]


def normalize_fit(frames: FrameSet) -> NormStats:
    """Fit per-feature min/max on a raw frame set."""
    if frames.n_frames == 0:
        raise ValueError("cannot fit normalization on an empty set")
    if frames.normalized:
        raise ValueError("frames are already normalized")
    return NormStats(frames.frames.min(axis=0), frames.frames.max(axis=0))


def normalize_apply(frames: FrameSet, stats: NormStats) -> FrameSet:
    """Map each feature affinely so fitted min -> -1 and max -> +1.

    Constant features (min == max) map to 0; entries outside the fitted
    range clamp to [-1, 1].
    """
    if frames.n_features != stats.n_features:
        raise ValueError(
            f"feature dimension mismatch: {frames.n_features} vs {stats.n_features}"
        )
    span = stats.per_feature_max - stats.per_feature_min
    safe = np.where(span > 0, span, 1.0)
    out = -1.0 + 2.0 * (frames.frames - stats.per_feature_min) / safe
    out[:, span == 0] = 0.0
    np.clip(out, -1.0, 1.0, out=out)
    return FrameSet(out, normalized=True, norm=stats)


def denormalize(frames: FrameSet, stats: NormStats) -> FrameSet:
    """Inverse affine map of normalize_apply (constant features -> min)."""
    if not frames.normalized:
        raise ValueError("frames are not normalized")
    if frames.n_features != stats.n_features:
        raise ValueError(
            f"feature dimension mismatch: {frames.n_features} vs {stats.n_features}"
        )
    span = stats.per_feature_max - stats.per_feature_min
    out = stats.per_feature_min + (frames.frames + 1.0) * 0.5 * span
    return FrameSet(out, normalized=False)


def source_stats(frames: FrameSet) -> SourceStats:
    """Scalar mean/std over all entries of a normalized set."""
    if frames.n_frames == 0:
        raise ValueError("empty frame set")
    if not frames.normalized:
        raise ValueError("source stats are defined on normalized frames")
    return SourceStats(float(frames.frames.mean()), float(frames.frames.std()))


def gen_synthetic(
    n_frames: int,
    n_features: int,
    k: int,
    seed: int,
    normalize: bool = True,
) -> FrameSet:
    """Generate nearly k-sparse frames in the DCT domain.

    Each frame is the inverse DCT of a coefficient vector whose k lowest
    frequencies carry Gaussian draws with magnitude decaying as 1/(1+i),
    plus a Gaussian residue on all other coefficients at 1% of the weakest
    dominant magnitude. Deterministic per seed.
    """
    if not 1 <= k <= n_features:
        raise ValueError(f"sparsity level k={k} out of range [1, {n_features}]")
    if n_frames < 1:
        raise ValueError("n_frames must be positive")
    rng = np.random.default_rng(seed)
    dominant_scale = 1.0 / (1.0 + np.arange(k))
    residue_scale = 0.01 * dominant_scale[-1]
    coeffs = np.empty((n_frames, n_features))
    coeffs[:, :k] = rng.standard_normal((n_frames, k)) * dominant_scale
    coeffs[:, k:] = rng.standard_normal((n_frames, n_features - k)) * residue_scale
    raw = idct(coeffs, type=2, norm="ortho", axis=1)
    out = FrameSet(raw, normalized=False)
    if normalize:
        out = normalize_apply(out, normalize_fit(out))
    return out


def dct_coefficients(frames: FrameSet) -> np.ndarray:
    """Forward orthonormal DCT of each frame (diagnostic for sparsity)."""
    return dct(frames.frames, type=2, norm="ortho", axis=1)


def save_frames(frames: FrameSet, path):
    """Write the binary frame file (f32 payload; f64 norm stats when present)."""
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(
            struct.pack(
                "<IIQB",
                FRAME_FORMAT_VERSION,
                frames.n_features,
                frames.n_frames,
                1 if frames.normalized else 0,
            )
        )
        fh.write(np.ascontiguousarray(frames.frames, dtype="<f4").tobytes())
        if frames.normalized:
            if frames.norm is None:
                raise ValueError("normalized frames require norm stats to save")
            fh.write(np.ascontiguousarray(frames.norm.per_feature_min, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(frames.norm.per_feature_max, dtype="<f8").tobytes())


def load_frames(path) -> FrameSet:
    """Read a binary frame file; rejects bad magic, truncation, non-finite data."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = struct.calcsize("<4sIIQB")
    if len(blob) < header:
        raise FrameFormatError(f"truncated header in {path}")
    magic, version, n_features, n_frames, normalized = struct.unpack_from("<4sIIQB", blob)
    if magic != FRAME_MAGIC:
        raise FrameFormatError(f"bad magic {magic!r} in {path}")
    if version != FRAME_FORMAT_VERSION:
        raise FrameFormatError(f"unsupported format version {version} in {path}")
    payload = n_frames * n_features * 4
    expected = header + payload + (2 * n_features * 8 if normalized else 0)
    if len(blob) != expected:
        raise FrameFormatError(
            f"truncated payload in {path}: expected {expected} bytes, found {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=n_frames * n_features, offset=header)
    data = data.reshape(n_frames, n_features).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FrameFormatError(f"non-finite entries in {path}")
    norm = None
    if normalized:
        off = header + payload
        lo = np.frombuffer(blob, dtype="<f8", count=n_features, offset=off)
        hi = np.frombuffer(blob, dtype="<f8", count=n_features, offset=off + n_features * 8)
        norm = NormStats(lo.copy(), hi.copy())
    return FrameSet(data, normalized=bool(normalized), norm=norm)


def load_csv(path) -> FrameSet:
    """Import frames from CSV (optional header row, one frame per row).

    Rows with missing or non-numeric fields are dropped, mirroring how
    corrupt samples are discarded at ingest.
    """
    rows = []
    n_features = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for i, rec in enumerate(reader):
            if not rec:
                continue
            try:
                vals = [float(v) for v in rec]
            except ValueError:
                if i == 0:
                    continue  # header row
                raise FrameFormatError(f"non-numeric row {i} in {path}")
            if n_features is None:
                n_features = len(vals)
            elif len(vals) != n_features:
                raise FrameFormatError(
                    f"row {i} in {path} has {len(vals)} columns, expected {n_features}"
                )
            rows.append(vals)
    if not rows:
        raise FrameFormatError(f"no data rows in {path}")
    data = np.asarray(rows, dtype=np.float64)
    keep = np.all(np.isfinite(data), axis=1)
    data = data[keep]
    if data.shape[0] == 0:
        raise FrameFormatError(f"all rows in {path} contain non-finite entries")
    return FrameSet(data, normalized=False)
