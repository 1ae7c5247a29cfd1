"""Small dense network with exact backpropagation.

Everything is float64 numpy. A network is a stack of affine layers with a
hidden nonlinearity; the last hidden activation is exposed as the embedding
used by the contrastive term and by embedding export.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, TrainingDivergedError

CE_EPS = 1e-12
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("relu", "tanh")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    return 1.0 - a * a


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list        # pre-activations of the hidden layers
    hidden: list     # activations of the hidden layers
    logits: np.ndarray

    @property
    def embeddings(self):
        return self.hidden[-1] if self.hidden else self.inputs


class Mlp:
    """Fully connected network ``d -> hidden... -> C``.

    ``version`` counts applied optimizer steps; the trainer uses it to record
    which parameter snapshot of a peer was used for label correction.
    """

    def __init__(self, layer_sizes, activation="relu", seed=0):
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise ConfigError(f"invalid layer sizes {layer_sizes}")
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.layer_sizes = layer_sizes
        self.activation = activation
        self.version = 0
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def params(self):
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    @property
    def embedding_dim(self):
        return self.layer_sizes[-2]

    def copy(self):
        other = Mlp.__new__(Mlp)
        other.layer_sizes = list(self.layer_sizes)
        other.activation = self.activation
        other.version = self.version
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise DimensionError(
                f"expected batch of shape (n, {self.n_inputs}), got {X.shape}")
        pre, hidden = [], []
        a = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if i == last:
                return ForwardCache(X, pre, hidden, z)
            a = _act(self.activation, z)
            pre.append(z)
            hidden.append(a)
        raise AssertionError("unreachable")

    def backward(self, cache, dlogits, dembed=None):
        """Gradients of a scalar loss given its gradient w.r.t. the outputs.

        ``dlogits`` is dL/dlogits; ``dembed`` optionally adds dL/d(embeddings)
        for losses defined on the last hidden layer. Returns a list congruent
        to :attr:`params`.
        """
        dlogits = np.asarray(dlogits, dtype=np.float64)
        if dlogits.shape != cache.logits.shape:
            raise DimensionError(
                f"logit gradient shape {dlogits.shape} != {cache.logits.shape}")
        n_layers = len(self.weights)
        grads = [None] * (2 * n_layers)
        delta = dlogits
        for i in range(n_layers - 1, -1, -1):
            a_in = cache.hidden[i - 1] if i > 0 else cache.inputs
            grads[2 * i] = a_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i == 0:
                break
            da = delta @ self.weights[i].T
            if i == n_layers - 1 and dembed is not None:
                dembed = np.asarray(dembed, dtype=np.float64)
                if dembed.shape != da.shape:
                    raise DimensionError(
                        f"embedding gradient shape {dembed.shape} != {da.shape}")
                da = da + dembed
            delta = da * _act_grad(self.activation, cache.pre[i - 1], cache.hidden[i - 1])
        return grads

    def predict_proba(self, X):
        return softmax(self.forward(X).logits)


def add_grads(acc, grads):
    if acc is None:
        return [g.copy() for g in grads]
    for a, g in zip(acc, grads):
        a += g
    return acc


# -- losses ------------------------------------------------------------------

def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy_soft(pred, target):
    """Batch mean of ``-sum_c t_c log(p_c + eps)``."""
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    return float(np.mean(-np.sum(target * np.log(pred + CE_EPS), axis=1)))


def soft_ce_with_logits(logits, target, weights=None):
    """Soft-target cross-entropy on logits and its exact gradient.

    ``weights`` are per-row multipliers; by default each row has weight 1/n.
    The eps inside the log is differentiated through, so the gradient is
    exact for the value returned, not the usual ``p - t`` approximation.
    """
    p = softmax(logits)
    n = p.shape[0]
    if weights is None:
        weights = np.full(n, 1.0 / n)
    per_row = -np.sum(target * np.log(p + CE_EPS), axis=1)
    loss = float(np.dot(weights, per_row))
    g = -target / (p + CE_EPS) * weights[:, None]
    dlogits = p * (g - np.sum(p * g, axis=1, keepdims=True))
    return loss, dlogits


# -- optimisation ------------------------------------------------------------

@dataclass
class LrSchedule:
    kind: str = "cosine"
    total_epochs: int = 60
    milestones: tuple = ()
    decay: float = 0.1

    def __post_init__(self):
        if self.kind not in ("cosine", "multistep"):
            raise ConfigError(f"unknown lr schedule {self.kind!r}")
        if self.total_epochs < 1:
            raise ConfigError("schedule total_epochs must be >= 1")
        self.milestones = tuple(int(m) for m in self.milestones)


def lr_at(epoch, schedule, base_lr):
    if epoch < 0 or epoch > schedule.total_epochs:
        raise ConfigError(
            f"epoch {epoch} outside schedule range [0, {schedule.total_epochs}]")
    if schedule.kind == "cosine":
        return base_lr * (1.0 + math.cos(math.pi * epoch / schedule.total_epochs)) / 2.0
    passed = sum(1 for m in schedule.milestones if m <= epoch)
    return base_lr * schedule.decay ** passed


@dataclass
class OptimizerState:
    """SGD state; weight decay is folded into the momentum buffer."""
    velocity: list
    momentum: float = 0.9
    weight_decay: float = 5e-4
    base_lr: float = 0.05
    schedule: LrSchedule = field(default_factory=LrSchedule)

    @classmethod
    def for_network(cls, net, **kwargs):
        return cls(velocity=[np.zeros_like(p) for p in net.params], **kwargs)


def sgd_step(net, grads, opt, lr):
    """``v <- mu v + g + wd theta``; ``theta <- theta - lr v`` (in place)."""
    params = net.params
    if len(grads) != len(params):
        raise DimensionError("gradient list does not match parameters")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")
    for g, p, v in zip(grads, params, opt.velocity):
        v *= opt.momentum
        v += g
        if opt.weight_decay:
            v += opt.weight_decay * p
        p -= lr * v
    net.version += 1
    return net, opt


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, net, opt=None):
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "layer_sizes": np.array(net.layer_sizes, dtype=np.int64),
        "activation": np.array(net.activation),
        "step": np.array(net.version),
    }
    for i, p in enumerate(net.params):
        arrays[f"param_{i}"] = p
    if opt is not None:
        arrays["opt_scalars"] = np.array([opt.momentum, opt.weight_decay, opt.base_lr])
        arrays["opt_schedule"] = np.array(
            [opt.schedule.kind, str(opt.schedule.total_epochs),
             ",".join(map(str, opt.schedule.milestones)), repr(opt.schedule.decay)])
        for i, v in enumerate(opt.velocity):
            arrays[f"velocity_{i}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(net, opt)``; ``opt`` is None when none was saved."""
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {int(data['version'])}")
        net = Mlp(data["layer_sizes"].tolist(), activation=str(data["activation"]))
        net.version = int(data["step"])
        for i, p in enumerate(net.params):
            p[...] = data[f"param_{i}"]
        opt = None
        if "opt_scalars" in data:
            momentum, wd, base_lr = data["opt_scalars"].tolist()
            kind, total, milestones, decay = data["opt_schedule"].tolist()
            schedule = LrSchedule(kind, int(total),
                                  tuple(int(m) for m in milestones.split(",") if m),
                                  float(decay))
            velocity = [data[f"velocity_{i}"].copy() for i in range(len(net.params))]
            opt = OptimizerState(velocity, momentum, wd, base_lr, schedule)
    return net, opt
