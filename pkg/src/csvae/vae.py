"""VAE-based signal recovery from noisy compressed measurements.

Encoder (trunk m->64 ReLU with linear mu / log-variance heads, 10 units
each) infers a latent code from the noisy measurement; the decoder
(10->64->64->n, ReLU hidden, Tanh output) generates the signal estimate.
Training minimizes, per batch,

    mean_i [ ||A x_hat_i - y_hat_i||^2 + lambda ||x_hat_i||_1
             + beta * KL(q(z|y_hat_i) || N(0, I)) ]

with reparameterized latent draws and Adam. Test-time recovery decodes
the posterior mean, so it is deterministic.
"""

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .channel import ChannelConfig, awgn_batch
from .errors import NumericalError
from .frames import FrameSet, NormStats
from .sensing import MeasurementMatrix, measure

LATENT_DIM = 10
HIDDEN_DIM = 64

CHECKPOINT_FORMAT = "csvae-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(Exception):
    """Raised when a checkpoint file is malformed."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 60
    lr: float = 1e-4
    lambda_l1: float = 1e-5
    kl_weight: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lr <= 0 or self.lambda_l1 < 0 or self.kl_weight < 0:
            raise ValueError("lr must be positive; loss weights nonnegative")


@dataclass
class TrainHistory:
    total: np.ndarray
    recon: np.ndarray
    l1: np.ndarray
    kl: np.ndarray
    wall_time_seconds: float


@dataclass
class VaeModel:
    trunk: nn.Mlp
    mu_head: nn.Mlp
    logvar_head: nn.Mlp
    decoder: nn.Mlp
    matrix_digest: str

    @property
    def m(self):
        return self.trunk.in_dim

    @property
    def n(self):
        return self.decoder.out_dim

    @property
    def latent_dim(self):
        return self.decoder.in_dim


def build_model(
    m: int,
    n: int = 204,
    latent_dim: int = LATENT_DIM,
    hidden: int = HIDDEN_DIM,
    seed: int = 0,
    matrix_digest: str = "",
) -> VaeModel:
    """Freshly initialized model; each component gets its own seed stream."""
    return VaeModel(
        trunk=nn.init_mlp([m, hidden], ["relu"], [seed, 0]),
        mu_head=nn.init_mlp([hidden, latent_dim], ["identity"], [seed, 1]),
        logvar_head=nn.init_mlp([hidden, latent_dim], ["identity"], [seed, 2]),
        decoder=nn.init_mlp(
            [latent_dim, hidden, hidden, n], ["relu", "relu", "tanh"], [seed, 3]
        ),
        matrix_digest=matrix_digest,
    )


def _entries(A) -> np.ndarray:
    return A.entries if isinstance(A, MeasurementMatrix) else np.asarray(A, np.float64)


def encode(model: VaeModel, y_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior parameters (mu, log_var) for one measurement or a batch."""
    h, _ = nn.forward(model.trunk, y_hat)
    mu, _ = nn.forward(model.mu_head, h)
    log_var, _ = nn.forward(model.logvar_head, h)
    return mu, log_var


def reparameterize(
    mu: np.ndarray, log_var: np.ndarray, epsilon: np.ndarray
) -> np.ndarray:
    """z = mu + exp(log_var / 2) * epsilon."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if mu.shape != log_var.shape or mu.shape != epsilon.shape:
        raise ValueError("mu, log_var, epsilon must share a shape")
    if not (
        np.all(np.isfinite(mu))
        and np.all(np.isfinite(log_var))
        and np.all(np.isfinite(epsilon))
    ):
        raise NumericalError("non-finite reparameterization inputs")
    return mu + np.exp(0.5 * log_var) * epsilon


def decode(model: VaeModel, z: np.ndarray) -> np.ndarray:
    """Deterministic generator forward; output lies in [-1, 1]^n (Tanh)."""
    x_hat, _ = nn.forward(model.decoder, z)
    return x_hat


def loss(
    A, y_hat: np.ndarray, x_hat: np.ndarray, mu: np.ndarray, log_var: np.ndarray,
    cfg: TrainConfig,
) -> tuple[float, float, float, float]:
    """(total, recon, l1, kl), each a mean of per-frame values.

    recon = ||A x_hat - y_hat||^2, l1 = lambda ||x_hat||_1,
    kl = kl_weight * 0.5 * sum(mu^2 + exp(log_var) - log_var - 1).
    """
    E = _entries(A)
    Y = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    X = np.atleast_2d(np.asarray(x_hat, dtype=np.float64))
    Mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    Lv = np.atleast_2d(np.asarray(log_var, dtype=np.float64))
    if X.shape[1] != E.shape[1] or Y.shape[1] != E.shape[0] or X.shape[0] != Y.shape[0]:
        raise ValueError("loss dimensions inconsistent with the matrix")
    with np.errstate(over="ignore", invalid="ignore"):
        r = X @ E.T - Y
        recon = np.sum(r**2, axis=1)
        l1 = cfg.lambda_l1 * np.sum(np.abs(X), axis=1)
        kl = cfg.kl_weight * 0.5 * np.sum(Mu**2 + np.exp(Lv) - Lv - 1.0, axis=1)
        total = recon + l1 + kl
    if not np.all(np.isfinite(total)):
        raise NumericalError("non-finite loss")
    return (
        float(total.mean()),
        float(recon.mean()),
        float(l1.mean()),
        float(kl.mean()),
    )


def _loss_total(model: VaeModel, E: np.ndarray, Yb: np.ndarray, eps: np.ndarray,
                cfg: TrainConfig) -> float:
    """Forward-only batch-mean loss, for finite-difference probes."""
    h, _ = nn.forward(model.trunk, Yb)
    mu, _ = nn.forward(model.mu_head, h)
    lv, _ = nn.forward(model.logvar_head, h)
    z = mu + np.exp(0.5 * lv) * eps
    x_hat, _ = nn.forward(model.decoder, z)
    r = x_hat @ E.T - Yb
    recon = np.sum(r**2, axis=1)
    l1 = cfg.lambda_l1 * np.sum(np.abs(x_hat), axis=1)
    kl = cfg.kl_weight * 0.5 * np.sum(mu**2 + np.exp(lv) - lv - 1.0, axis=1)
    total = float(np.mean(recon + l1 + kl))
    if not np.isfinite(total):
        raise NumericalError("non-finite loss")
    return total


def _loss_and_grads(model: VaeModel, E: np.ndarray, Yb: np.ndarray, eps: np.ndarray,
                    cfg: TrainConfig):
    """One training step's forward pass, loss parts, and parameter grads."""
    B = Yb.shape[0]
    h, cache_t = nn.forward(model.trunk, Yb)
    mu, cache_m = nn.forward(model.mu_head, h)
    lv, cache_v = nn.forward(model.logvar_head, h)
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    x_hat, cache_d = nn.forward(model.decoder, z)

    r = x_hat @ E.T - Yb
    recon = np.sum(r**2, axis=1)
    l1 = cfg.lambda_l1 * np.sum(np.abs(x_hat), axis=1)
    kl = cfg.kl_weight * 0.5 * np.sum(mu**2 + np.exp(lv) - lv - 1.0, axis=1)
    total = float(np.mean(recon + l1 + kl))
    if not np.isfinite(total):
        raise NumericalError("non-finite training loss")

    d_xhat = (2.0 * (r @ E) + cfg.lambda_l1 * np.sign(x_hat)) / B
    g_dec, d_z = nn.backward(model.decoder, cache_d, d_xhat)
    d_mu = d_z + (cfg.kl_weight * mu) / B
    d_lv = d_z * eps * 0.5 * std + (cfg.kl_weight * 0.5 * (np.exp(lv) - 1.0)) / B
    g_mu, d_h1 = nn.backward(model.mu_head, cache_m, d_mu)
    g_lv, d_h2 = nn.backward(model.logvar_head, cache_v, d_lv)
    g_trunk, _ = nn.backward(model.trunk, cache_t, d_h1 + d_h2)

    parts = (total, float(recon.mean()), float(l1.mean()), float(kl.mean()))
    return parts, {"trunk": g_trunk, "mu_head": g_mu, "logvar_head": g_lv,
                   "decoder": g_dec}


def train(
    data: FrameSet,
    A: MeasurementMatrix,
    channel: ChannelConfig,
    cfg: TrainConfig,
    power_normalize: bool = False,
    P_T: float | None = None,
) -> tuple[VaeModel, TrainHistory]:
    """Train on shuffled batches of noisy measurements of the given frames.

    Per-frame channel noise is keyed by (epoch, original frame index), so
    batch composition never changes what noise a frame sees. Deterministic
    per cfg.seed. power_normalize rescales each transmitted measurement to
    the power budget before noise, matching the direct-transmission setup.
    """
    if data.n_frames == 0:
        raise ValueError("empty training set")
    if not data.normalized:
        raise ValueError("training data must be normalized")
    if A.n != data.n_features:
        raise ValueError(f"matrix n={A.n} does not match data n={data.n_features}")

    start = time.perf_counter()
    model = build_model(A.m, data.n_features, seed=cfg.seed, matrix_digest=A.digest())
    states = {
        name: nn.adam_init(getattr(model, name), lr=cfg.lr)
        for name in ("trunk", "mu_head", "logvar_head", "decoder")
    }
    rng = np.random.default_rng([cfg.seed, 7])
    N = data.n_frames
    Y = measure(A, data.frames, power_normalize=power_normalize, P_T=P_T)
    all_idx = np.arange(N)
    hist = {k: [] for k in ("total", "recon", "l1", "kl")}

    for epoch in range(cfg.epochs):
        noisy = awgn_batch(Y, channel, key=(epoch,), frame_indices=all_idx)
        perm = rng.permutation(N)
        sums = np.zeros(4)
        for lo in range(0, N, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            eps = rng.standard_normal((len(idx), model.latent_dim))
            parts, grads = _loss_and_grads(model, A.entries, noisy[idx], eps, cfg)
            for name, g in grads.items():
                nn.adam_step(getattr(model, name), g, states[name])
            sums += np.array(parts) * len(idx)
        for key, val in zip(("total", "recon", "l1", "kl"), sums / N):
            hist[key].append(val)

    history = TrainHistory(
        total=np.array(hist["total"]),
        recon=np.array(hist["recon"]),
        l1=np.array(hist["l1"]),
        kl=np.array(hist["kl"]),
        wall_time_seconds=time.perf_counter() - start,
    )
    return model, history


def recover(model: VaeModel, y_hat: np.ndarray, matrix: MeasurementMatrix | None = None
            ) -> np.ndarray:
    """Deterministic recovery: decode the posterior mean.

    Pass the deployment matrix to enforce the digest pairing recorded at
    training time.
    """
    if matrix is not None and matrix.digest() != model.matrix_digest:
        raise ValueError("matrix digest does not match the model's training matrix")
    mu, _ = encode(model, y_hat)
    return decode(model, mu)


def recover_lipschitz_bound(model: VaeModel) -> float:
    """Product of spectral norms along the recovery path (all activations
    are 1-Lipschitz), an upper bound on recover's input sensitivity."""
    return nn.spectral_norm_product(model.trunk, model.mu_head, model.decoder)


def interpolate(
    model: VaeModel, y_hat_1: np.ndarray, y_hat_2: np.ndarray, steps: int
) -> np.ndarray:
    """Decode evenly spaced latent mixes between the two posterior means.

    Endpoints are decoded from exactly z1 and z2; every frame is decoded
    singly so the endpoints match single-frame recover calls bit for bit.
    """
    if steps < 2:
        raise ValueError("steps must be at least 2")
    z1, _ = encode(model, np.asarray(y_hat_1, dtype=np.float64))
    z2, _ = encode(model, np.asarray(y_hat_2, dtype=np.float64))
    if z1.ndim != 1 or z2.ndim != 1:
        raise ValueError("interpolation takes single frames")
    out = np.empty((steps, model.n))
    for i, rho in enumerate(np.linspace(0.0, 1.0, steps)):
        out[i] = decode(model, rho * z2 + (1.0 - rho) * z1)
    return out


def recovery_diagnostics(
    model: VaeModel,
    A: MeasurementMatrix,
    x_star: FrameSet,
    channel: ChannelConfig,
    key: tuple[int, ...] = (0,),
) -> dict:
    """Per-frame recovery l2 error logged next to the realized noise l2.

    The generative recovery bound ties these two quantities together with
    unknown constants, so they are reported, not asserted.
    """
    Y = measure(A, x_star.frames)
    noisy = awgn_batch(Y, channel, key=key, frame_indices=np.arange(x_star.n_frames))
    x_hat = recover(model, noisy, matrix=A)
    err = x_hat - x_star.frames
    return {
        "recovery_l2": np.linalg.norm(err, axis=1),
        "noise_l2": np.linalg.norm(noisy - Y, axis=1),
        "mse": np.mean(err**2, axis=1),
    }


def vae_grad_check(
    model: VaeModel, A, y_hat: np.ndarray, eps: np.ndarray, cfg: TrainConfig,
    h: float = 1e-5,
) -> float:
    """Central-difference check of the full loss over every parameter.

    Returns the max relative error |analytic - numeric| /
    max(|analytic|, |numeric|, 1e-12).

    Central differences at step h resolve gradients down to roughly
    eps_machine * |loss| / h, about 1e-11 for a unit-scale loss. Check
    with lambda_l1 and kl_weight large enough (1e-2 or so) that no term
    contributes gradients below that floor, otherwise the comparison
    measures rounding noise instead of the backward pass.
    """
    E = _entries(A)
    Yb = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
    eps_b = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    (_, *_), grads = _loss_and_grads(model, E, Yb, eps_b, cfg)

    worst = 0.0
    for name in ("trunk", "mu_head", "logvar_head", "decoder"):
        net = getattr(model, name)
        for layer, (gw, gb) in zip(net.layers, grads[name]):
            for arr, analytic in ((layer.weight, gw), (layer.bias, gb)):
                flat = arr.ravel()
                aflat = analytic.ravel()
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + h
                    lp = _loss_total(model, E, Yb, eps_b, cfg)
                    flat[j] = orig - h
                    lm = _loss_total(model, E, Yb, eps_b, cfg)
                    flat[j] = orig
                    numeric = (lp - lm) / (2.0 * h)
                    a = aflat[j]
                    rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
                    worst = max(worst, rel)
    return worst


@dataclass
class Checkpoint:
    model: VaeModel
    norm: NormStats | None = None
    train_config: TrainConfig | None = None
    sigma_n: float | None = None
    seed: int | None = None


def save_checkpoint(ckpt: Checkpoint, path):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": {
            "family": "mlp-vae",
            "m": ckpt.model.m,
            "n": ckpt.model.n,
            "latent_dim": ckpt.model.latent_dim,
        },
        "trunk": nn.mlp_to_dict(ckpt.model.trunk),
        "mu_head": nn.mlp_to_dict(ckpt.model.mu_head),
        "logvar_head": nn.mlp_to_dict(ckpt.model.logvar_head),
        "decoder": nn.mlp_to_dict(ckpt.model.decoder),
        "matrix_digest": ckpt.model.matrix_digest,
        "norm": None
        if ckpt.norm is None
        else {
            "per_feature_min": ckpt.norm.per_feature_min.tolist(),
            "per_feature_max": ckpt.norm.per_feature_max.tolist(),
        },
        "train_config": None if ckpt.train_config is None else asdict(ckpt.train_config),
        "sigma_n": ckpt.sigma_n,
        "seed": ckpt.seed,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"not a checkpoint file: {path} ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(f"missing checkpoint format tag in {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version in {path}")
    try:
        model = VaeModel(
            trunk=nn.mlp_from_dict(doc["trunk"]),
            mu_head=nn.mlp_from_dict(doc["mu_head"]),
            logvar_head=nn.mlp_from_dict(doc["logvar_head"]),
            decoder=nn.mlp_from_dict(doc["decoder"]),
            matrix_digest=doc["matrix_digest"],
        )
        norm = None
        if doc.get("norm") is not None:
            norm = NormStats(
                np.asarray(doc["norm"]["per_feature_min"], dtype=np.float64),
                np.asarray(doc["norm"]["per_feature_max"], dtype=np.float64),
            )
        tc = None
        if doc.get("train_config") is not None:
            tc = TrainConfig(**doc["train_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"malformed checkpoint {path}: {exc}") from exc
    return Checkpoint(
        model=model, norm=norm, train_config=tc,
        sigma_n=doc.get("sigma_n"), seed=doc.get("seed"),
    )
