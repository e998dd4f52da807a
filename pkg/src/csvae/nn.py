"""Dense networks with hand-written forward/backward passes and Adam.

The two architectures this package needs are small fixed MLPs, so there is
no graph autodiff here: each op is differentiated by hand and verified
against central finite differences. All math is float64. Inputs may be a
single vector or a batch with one row per sample; parameter gradients are
summed over the batch (loss functions own any averaging).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("layer weight/bias shapes inconsistent")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")


@dataclass
class Mlp:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weight.shape[1] != a.weight.shape[0]:
                raise ValueError("adjacent layer dimensions incompatible")

    @property
    def in_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self):
        return self.layers[-1].weight.shape[0]


@dataclass
class ForwardCache:
    """Per-layer (input, pre-activation, post-activation) from one forward call."""

    items: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    single: bool


def init_mlp(dims: list[int], activations: list[str], seed: int) -> Mlp:
    """Fan-scaled uniform weights, zero biases.

    ReLU layers draw from +-sqrt(6/fan_in); tanh and identity layers from
    +-sqrt(6/(fan_in + fan_out)).
    """
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims, dims[1:], activations):
        if act == "relu":
            bound = np.sqrt(6.0 / fan_in)
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return Mlp(layers)


def _activate(pre: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "tanh":
        return np.tanh(pre)
    return pre


def _activation_grad(pre: np.ndarray, post: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return (pre > 0.0).astype(np.float64)  # subgradient 0 at the kink
    if name == "tanh":
        return 1.0 - post**2
    return np.ones_like(pre)


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise ValueError(f"input dimension does not match network in_dim={net.in_dim}")
    items = []
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in net.layers:
            pre = h @ layer.weight.T + layer.bias
            post = _activate(pre, layer.activation)
            items.append((h, pre, post))
            h = post
    if not np.all(np.isfinite(h)):
        raise NumericalError("non-finite network output")
    return (h[0] if single else h), ForwardCache(items, single)


def backward(
    net: Mlp, cache: ForwardCache, output_grad: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Reverse-mode gradients; returns ([(dW, db) per layer], input_grad)."""
    if len(cache.items) != len(net.layers):
        raise ValueError("cache does not match this network")
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if g.shape != cache.items[-1][2].shape:
        raise ValueError("output_grad shape does not match the cached forward")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        inp, pre, post = cache.items[li]
        if inp.shape[1] != layer.weight.shape[1] or pre.shape[1] != layer.weight.shape[0]:
            raise ValueError("cache does not match this network")
        g_pre = g * _activation_grad(pre, post, layer.activation)
        grads[li] = (g_pre.T @ inp, g_pre.sum(axis=0))
        g = g_pre @ layer.weight
    return grads, (g[0] if cache.single else g)


@dataclass
class AdamState:
    first_moment: list[tuple[np.ndarray, np.ndarray]]
    second_moment: list[tuple[np.ndarray, np.ndarray]]
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(net: Mlp, lr: float = 1e-4) -> AdamState:
    zeros = lambda: [
        (np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers
    ]
    return AdamState(first_moment=zeros(), second_moment=zeros(), lr=lr)


def adam_step(
    net: Mlp, grads: list[tuple[np.ndarray, np.ndarray]], state: AdamState
) -> tuple[Mlp, AdamState]:
    """One in-place Adam update with bias correction."""
    if len(grads) != len(net.layers):
        raise ValueError("gradient list does not match network layers")
    state.step_count += 1
    c1 = 1.0 - state.beta1**state.step_count
    c2 = 1.0 - state.beta2**state.step_count
    for layer, (gw, gb), (mw, mb), (vw, vb) in zip(
        net.layers, grads, state.first_moment, state.second_moment
    ):
        for p, g, mom, vel in ((layer.weight, gw, mw, vw), (layer.bias, gb, mb, vb)):
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.shape:
                raise ValueError("gradient shape does not match parameter")
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite gradient in adam_step")
            mom *= state.beta1
            mom += (1.0 - state.beta1) * g
            vel *= state.beta2
            vel += (1.0 - state.beta2) * g**2
            p -= state.lr * (mom / c1) / (np.sqrt(vel / c2) + state.epsilon)
            if not np.all(np.isfinite(p)):
                raise NumericalError("non-finite parameter after adam_step")
    return net, state


def grad_check(net: Mlp, loss_fn, x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn maps the network output to (scalar loss, gradient w.r.t. the
    output) and must be deterministic; that is verified by a double
    evaluation before any differencing.
    """
    out, cache = forward(net, x)
    loss, gout = loss_fn(out)
    out2, _ = forward(net, x)
    loss2, _ = loss_fn(out2)
    if loss != loss2:
        raise ValueError("loss_fn is not deterministic")
    grads, _ = backward(net, cache, gout)

    worst = 0.0
    for layer, (gw, gb) in zip(net.layers, grads):
        for arr, analytic in ((layer.weight, gw), (layer.bias, gb)):
            flat = arr.ravel()
            aflat = analytic.ravel()
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                lp = loss_fn(forward(net, x)[0])[0]
                flat[j] = orig - h
                lm = loss_fn(forward(net, x)[0])[0]
                flat[j] = orig
                diff = (lp - lm) / (2.0 * h)
                a = aflat[j]
                rel = abs(a - diff) / max(abs(a), abs(diff), 1e-12)
                worst = max(worst, rel)
    return worst


def param_count(net: Mlp) -> int:
    return sum(l.weight.size + l.bias.size for l in net.layers)


def params_flat(net: Mlp) -> np.ndarray:
    """All parameters as one vector: per layer, row-major weights then bias."""
    return np.concatenate([np.r_[l.weight.ravel(), l.bias] for l in net.layers])


def set_params_flat(net: Mlp, vec: np.ndarray):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (param_count(net),):
        raise ValueError("flat parameter vector has the wrong length")
    pos = 0
    for layer in net.layers:
        w = layer.weight
        w[...] = vec[pos : pos + w.size].reshape(w.shape)
        pos += w.size
        layer.bias[...] = vec[pos : pos + layer.bias.size]
        pos += layer.bias.size


def spectral_norm_product(*nets: Mlp) -> float:
    """Product of layer spectral norms; a Lipschitz bound for the chained
    networks since every activation here is 1-Lipschitz."""
    out = 1.0
    for net in nets:
        for layer in net.layers:
            out *= float(np.linalg.norm(layer.weight, 2))
    return out


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "dims": [net.in_dim] + [l.weight.shape[0] for l in net.layers],
        "activations": [l.activation for l in net.layers],
        "params": params_flat(net).tolist(),
    }


def mlp_from_dict(d: dict) -> Mlp:
    dims = [int(v) for v in d["dims"]]
    acts = list(d["activations"])
    layers = [
        Layer(np.zeros((o, i)), np.zeros(o), a)
        for i, o, a in zip(dims, dims[1:], acts)
    ]
    net = Mlp(layers)
    set_params_flat(net, np.asarray(d["params"], dtype=np.float64))
    return net
