"""Dense networks, losses, optimizers and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, FormatError
from .kernels import ACTIVATIONS

CHECKPOINT_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray  # (din, dout)
    bias: np.ndarray  # (dout,)
    activation: str = "identity"

    @property
    def din(self) -> int:
        return self.weight.shape[0]

    @property
    def dout(self) -> int:
        return self.weight.shape[1]


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a DenseNet needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.dout,):
                raise ConfigError(f"layer {i}: bias shape {layer.bias.shape} != ({layer.dout},)")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.dout != b.din:
                raise ConfigError(f"layer {i} outputs {a.dout} but layer {i + 1} expects {b.din}")

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].din] + [l.dout for l in self.layers]

    @property
    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    @property
    def din(self) -> int:
        return self.layers[0].din

    @property
    def dout(self) -> int:
        return self.layers[-1].dout

    @property
    def param_count(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def parameters(self) -> list[np.ndarray]:
        """Flat ``[W0, b0, W1, b1, ...]`` list; arrays are the live parameters."""
        out = []
        for l in self.layers:
            out.extend((l.weight, l.bias))
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def param_bytes(self) -> bytes:
        return b"".join(p.tobytes() for p in self.parameters())

    def __call__(self, x) -> np.ndarray:
        return forward(self, x).data


def init_net(sizes: Sequence[int], activations: Sequence[str], seed) -> DenseNet:
    """Fan-in scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in)); zero biases.

    Args:
        sizes: ``[din, h1, ..., dout]``.
        activations: one tag per layer (``len(sizes) - 1``).
        seed: int seed or a ``numpy.random.Generator``.
    """
    if len(sizes) < 2:
        raise ConfigError("layer spec needs an input size and at least one layer")
    if len(activations) != len(sizes) - 1:
        raise ConfigError(f"{len(sizes) - 1} layers but {len(activations)} activations")
    if any(int(s) < 1 for s in sizes):
        raise ConfigError(f"layer sizes must be positive: {list(sizes)}")
    rng = np.random.default_rng(seed)
    layers = []
    for din, dout, act in zip(sizes, sizes[1:], activations):
        limit = np.sqrt(6.0 / din)
        w = rng.uniform(-limit, limit, size=(int(din), int(dout)))
        layers.append(Layer(w, np.zeros(int(dout)), act))
    return DenseNet(layers)


def mlp(din: int, hidden: Sequence[int], dout: int, seed, head: str = "identity") -> DenseNet:
    """ReLU hidden layers followed by a ``head`` output layer."""
    sizes = [din, *hidden, dout]
    return init_net(sizes, ["relu"] * len(hidden) + [head], seed)


def forward(net: DenseNet, batch, tape: Tape | None = None) -> Tensor:
    """Run ``net`` on a ``(B, din)`` batch.

    With a tape, the parameters become leaves on it (retrievable afterwards via
    ``tape.gradients(net)``); repeated calls on one tape share those leaves.
    ``batch`` may itself be a taped Tensor, which is how gradients reach a
    student through the discriminator.
    """
    x = ad.as_tensor(batch)
    if x.data.ndim != 2 or x.data.shape[1] != net.din:
        raise ConfigError(f"batch shape {x.data.shape} does not match net input width {net.din}")
    if tape is not None:
        leaves = tape.leaves_for(net)
        if leaves is None:
            leaves = [tape.leaf(p) for p in net.parameters()]
            tape.register(net, leaves)
    else:
        leaves = [Tensor(p) for p in net.parameters()]
    h = x
    for i, layer in enumerate(net.layers):
        h = ad.dense(h, leaves[2 * i], leaves[2 * i + 1], ACTIVATIONS[layer.activation])
    return h


def softmax(logits) -> np.ndarray:
    """Row-wise softmax of a ``(B, M)`` array (values, no tape)."""
    z = np.atleast_2d(np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64))
    if z.shape[1] < 2:
        raise ConfigError("softmax needs at least two classes")
    return ad.softmax(z).data


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    z = ad.as_tensor(logits)
    labels = np.asarray(labels)
    m = z.shape[1]
    if labels.shape != (z.shape[0],):
        raise ConfigError(f"{labels.shape[0] if labels.ndim else 0} labels for {z.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ValueError(f"labels must lie in [0, {m})")
    return ad.neg(ad.mean(ad.pick(ad.log_softmax(z), labels.astype(np.int64))))


# -- optimizers ----------------------------------------------------------------

@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}", key="optimizer")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}", key="lr")


def step(opt: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """Descend one step; parameters are updated in place and returned.

    To ascend an objective, pass the gradients of its negation.
    """
    if len(params) != len(grads):
        raise ConfigError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape}")
    if opt.kind == "sgd":
        for p, g in zip(params, grads):
            p -= opt.lr * g
        return params
    if not opt.m:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    elif [a.shape for a in opt.m] != [p.shape for p in params]:
        raise ConfigError("optimizer state does not match parameter shapes")
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


# -- checkpoints -----------------------------------------------------------

def net_to_dict(net: DenseNet) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "sizes": net.sizes,
        "activations": net.activations,
        "params": [p.ravel().tolist() for p in net.parameters()],
    }


def net_from_dict(d: dict) -> DenseNet:
    if d.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {d.get('format_version')!r}")
    try:
        sizes, acts, flat = d["sizes"], d["activations"], d["params"]
    except KeyError as exc:
        raise FormatError(f"checkpoint missing field {exc.args[0]!r}") from None
    if len(flat) != 2 * len(acts) or len(sizes) != len(acts) + 1:
        raise FormatError("checkpoint layer count mismatch")
    layers = []
    for i, act in enumerate(acts):
        din, dout = sizes[i], sizes[i + 1]
        w, b = np.asarray(flat[2 * i], dtype=np.float64), np.asarray(flat[2 * i + 1], dtype=np.float64)
        if w.size != din * dout or b.size != dout:
            raise FormatError(f"layer {i}: parameter count does not match sizes")
        layers.append(Layer(w.reshape(din, dout), b, act))
    return DenseNet(layers)


def save_net(net: DenseNet, path) -> None:
    Path(path).write_text(json.dumps(net_to_dict(net)) + "\n")


def load_net(path) -> DenseNet:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a JSON checkpoint ({exc})") from None
    return net_from_dict(d)
