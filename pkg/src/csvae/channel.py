"""Additive white Gaussian noise channel with keyed, replayable noise streams.

Noise for a given (seed, key) is an independent stream: the same key always
replays the same noise, and distinct keys give uncorrelated draws. Training
keys noise by (epoch, frame index) so shuffled batches see the exact same
per-frame noise regardless of batch composition.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class ChannelConfig:
    sigma_n: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be nonnegative")


def awgn(y: np.ndarray, config: ChannelConfig, key: tuple[int, ...] = ()) -> np.ndarray:
    """y + eta with eta_i ~ N(0, sigma_n^2), drawn from the (seed, key) stream."""
    y = np.asarray(y, dtype=np.float64)
    if config.sigma_n == 0:
        return y.copy()
    rng = np.random.default_rng([config.seed, *key])
    return y + rng.normal(0.0, config.sigma_n, size=y.shape)


def awgn_batch(
    y: np.ndarray,
    config: ChannelConfig,
    key: tuple[int, ...],
    frame_indices: np.ndarray,
) -> np.ndarray:
    """Row-keyed AWGN for a batch of measurement vectors.

    Row i receives the noise slot frame_indices[i] of the (seed, key)
    stream, so a frame's noise depends only on its original index, never on
    how the batch is shuffled or sliced. One generator serves the whole
    batch: per-row generator construction is far too slow inside a
    training loop.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError("awgn_batch expects a 2-D batch")
    idx = np.asarray(frame_indices, dtype=np.int64)
    if idx.shape != (y.shape[0],):
        raise ValueError("frame_indices must have one entry per row")
    if np.any(idx < 0):
        raise ValueError("frame indices must be nonnegative")
    if config.sigma_n == 0:
        return y.copy()
    rng = np.random.default_rng([config.seed, *key])
    n_slots = int(idx.max()) + 1
    table = rng.normal(0.0, config.sigma_n, size=(n_slots, y.shape[1]))
    return y + table[idx]
