"""Two-network training loop.

The loop only ever receives features and assigned labels. Diagnostics that
need ground truth are computed by a ``monitor`` callback supplied by the
caller (see :mod:`crosssplit.metrics`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .correction import CorrectionOptions, GammaSchedule, correct_labels
from .datasets import split_dataset
from .errors import ConfigError, TrainingDivergedError
from .nn import LrSchedule, Mlp, OptimizerState, lr_at, one_hot, soft_ce_with_logits, sgd_step
from .ssl import SslConfig, ssl_step

ABLATIONS = ("full", "no_split", "no_class_norm", "no_correction", "no_contrastive", "ce_baseline")

# stream tags keep rng streams for different purposes independent
_INIT, _WARM, _EPOCH, _BATCH, _BASE = 11, 23, 37, 41, 53


@dataclass(frozen=True)
class TrainConfig:
    e_warm: int = 5
    e_max: int = 60
    batch_size: int = 64
    hidden: tuple = (128, 128)
    activation: str = "relu"
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    milestones: tuple = ()
    lr_decay: float = 0.1
    delta: int = 10
    gamma_stages: tuple = (0.6, 0.8, 1.0)
    unlabeled_ratio: float = 1.0
    ssl: SslConfig = field(default_factory=SslConfig)
    ablation: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.e_warm < 0 or self.e_max < 1:
            raise ConfigError("e_warm must be >= 0 and e_max >= 1")
        if self.e_warm > self.e_max:
            raise ConfigError("e_warm must not exceed e_max")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.base_lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("learning rate, momentum and weight decay must be >= 0")
        if self.unlabeled_ratio < 0:
            raise ConfigError("unlabeled_ratio must be >= 0")
        if any(int(h) < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be >= 1")
        # validates the remaining fields
        self.lr_schedule()
        self.gamma_schedule()

    def lr_schedule(self):
        return LrSchedule(self.schedule, self.e_max, tuple(self.milestones), self.lr_decay)

    def gamma_schedule(self):
        return GammaSchedule(self.e_warm, self.delta, tuple(self.gamma_stages))

    def effective_ssl(self):
        if self.ablation == "no_contrastive":
            return replace(self.ssl, lambda_c=0.0)
        return self.ssl

    def correction_options(self):
        return CorrectionOptions(enabled=self.ablation != "no_correction",
                                 class_norm=self.ablation != "no_class_norm")

    def lr_for_epoch(self, epoch):
        # epochs are 1-based; epoch 1 runs at base_lr
        return lr_at(epoch - 1, self.lr_schedule(), self.base_lr)


@dataclass
class NetworkPair:
    nets: list
    opts: list

    @property
    def net1(self):
        return self.nets[0]

    @property
    def net2(self):
        return self.nets[1]

    @property
    def shared(self):
        """True for the single-network baseline, where both slots alias one net."""
        return self.nets[0] is self.nets[1]


def init_pair(n_inputs, num_classes, config, single=False):
    sizes = [n_inputs, *map(int, config.hidden), num_classes]
    nets, opts = [], []
    for k in range(1 if single else 2):
        net = Mlp(sizes, config.activation, seed=[config.seed, k, _INIT])
        nets.append(net)
        opts.append(OptimizerState.for_network(
            net, momentum=config.momentum, weight_decay=config.weight_decay,
            base_lr=config.base_lr, schedule=config.lr_schedule()))
    if single:
        nets.append(nets[0])
        opts.append(opts[0])
    return NetworkPair(nets, opts)


@dataclass
class NetEpochStats:
    sup_loss: float = 0.0
    unsup_loss: float = 0.0
    con_loss: float = 0.0
    mask_fraction: float = 0.0
    n_batches: int = 0
    labeled_ids: np.ndarray | None = None
    beta: np.ndarray | None = None
    peer_version: int = -1


@dataclass
class EpochStats:
    """Label-blind record of one epoch, handed to the monitor."""
    epoch: int
    phase: str          # "warmup", "crosssplit" or "baseline"
    gamma: float
    lr: float
    per_net: list

    def _mean(self, name):
        vals = [getattr(s, name) for s in self.per_net]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def sup_loss(self):
        return self._mean("sup_loss")

    @property
    def unsup_loss(self):
        return self._mean("unsup_loss")

    @property
    def con_loss(self):
        return self._mean("con_loss")

    @property
    def mask_fraction(self):
        return self._mean("mask_fraction")

    def beta_by_id(self):
        """``(ids, beta)`` concatenated over networks; empty outside correction."""
        parts = [(s.labeled_ids, s.beta) for s in self.per_net if s.beta is not None]
        if not parts:
            return np.empty(0, dtype=np.int64), np.empty(0)
        return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def _batches(order, batch_size):
    n = order.shape[0]
    n_batches = max(1, math.ceil(n / batch_size))
    return [order[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)]


def _ce_epoch(net, opt, X, y, num_classes, lr, rng, batch_size):
    stats = NetEpochStats()
    total = 0.0
    for idx in _batches(rng.permutation(X.shape[0]), batch_size):
        cache = net.forward(X[idx])
        loss, dlogits = soft_ce_with_logits(cache.logits, one_hot(y[idx], num_classes))
        if not np.isfinite(loss):
            raise TrainingDivergedError("non-finite cross-entropy")
        sgd_step(net, net.backward(cache, dlogits), opt, lr)
        total += loss * idx.shape[0]
        stats.n_batches += 1
    stats.sup_loss = total / X.shape[0]
    return stats


def warmup_epoch(pair, X, y, num_classes, epoch, config):
    """Plain CE on the whole dataset for each network, independent shuffles."""
    lr = config.lr_for_epoch(epoch)
    per_net = []
    for k in range(2):
        rng = np.random.default_rng([config.seed, epoch, k, _WARM])
        per_net.append(_ce_epoch(pair.nets[k], pair.opts[k], X, y, num_classes, lr, rng,
                                 config.batch_size))
    return EpochStats(epoch, "warmup", math.nan, lr, per_net)


def warmup(pair, X, y, num_classes, config, monitor=None):
    history = []
    for epoch in range(1, config.e_warm + 1):
        try:
            stats = warmup_epoch(pair, X, y, num_classes, epoch, config)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(str(exc), epoch=epoch) from None
        history.append(monitor(stats, pair) if monitor else stats)
    return pair, history


def split_indices(n, config):
    """``(own, unlabeled)`` index arrays for each network under the ablation."""
    if config.ablation == "no_split":
        everything = np.arange(n)
        return [(everything, everything), (everything, everything)]
    first, second = split_dataset(n, config.seed).halves()
    return [(first, second), (second, first)]


def train_epoch_for(k, pair, X, y, own, unlabeled, epoch, config):
    """Correct labels of network ``k``'s split with its peer, then run SSL minibatches."""
    net, opt = pair.nets[k], pair.opts[k]
    peer = pair.nets[1 - k]
    soft = correct_labels(X[own], y[own], peer, epoch, config.gamma_schedule(),
                          config.correction_options(), ids=own)
    cfg = config.effective_ssl()
    lr = config.lr_for_epoch(epoch)
    rng = np.random.default_rng([config.seed, epoch, k, _EPOCH])
    order = rng.permutation(own.shape[0])
    u_order = rng.permutation(unlabeled.shape[0])
    u_size = int(round(config.batch_size * config.unlabeled_ratio))
    stats = NetEpochStats(labeled_ids=own, beta=soft.beta, peer_version=soft.peer_version)
    sums = np.zeros(4)
    u_pos = 0
    for b, pos in enumerate(_batches(order, config.batch_size)):
        brng = np.random.default_rng([config.seed, epoch, b, k, _BATCH])
        if u_size and u_order.shape[0]:
            take = np.arange(u_pos, u_pos + u_size) % u_order.shape[0]
            u_pos = (u_pos + u_size) % u_order.shape[0]
            ux = X[unlabeled[u_order[take]]]
        else:
            ux = X[:0]
        losses, grads = ssl_step(net, X[own[pos]], soft.soft_labels[pos], ux, cfg, brng)
        sgd_step(net, grads, opt, lr)
        sums += (losses.sup, losses.unsup, losses.con, losses.mask_fraction)
        stats.n_batches += 1
    stats.sup_loss, stats.unsup_loss, stats.con_loss, stats.mask_fraction = sums / stats.n_batches
    return stats, soft.gamma


def crosssplit_epoch(pair, X, y, splits, epoch, config):
    """Network 1 then network 2; the second correction sees the updated first net."""
    per_net = []
    gamma = math.nan
    for k in range(2):
        own, unlabeled = splits[k]
        stats, gamma = train_epoch_for(k, pair, X, y, own, unlabeled, epoch, config)
        per_net.append(stats)
    return EpochStats(epoch, "crosssplit", gamma, config.lr_for_epoch(epoch), per_net)


def baseline_epoch(pair, X, y, num_classes, epoch, config):
    lr = config.lr_for_epoch(epoch)
    rng = np.random.default_rng([config.seed, epoch, _BASE])
    stats = _ce_epoch(pair.net1, pair.opts[0], X, y, num_classes, lr, rng, config.batch_size)
    return EpochStats(epoch, "baseline", math.nan, lr, [stats])


def fit_pair(X, y, num_classes, config, monitor=None, on_epoch_end=None):
    """Train according to ``config``; returns ``(pair, history)``.

    ``monitor(stats, pair)`` turns each :class:`EpochStats` into the history
    entry (defaults to the stats themselves). ``on_epoch_end(epoch, pair)``
    is called after the entry is recorded, e.g. for checkpointing.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ConfigError("X must be 2-D with one label per row")
    if X.shape[0] < 2:
        raise ConfigError("need at least 2 training examples")
    baseline = config.ablation == "ce_baseline"
    pair = init_pair(X.shape[1], num_classes, config, single=baseline)
    history = []

    def record(stats):
        history.append(monitor(stats, pair) if monitor else stats)
        if on_epoch_end:
            on_epoch_end(stats.epoch, pair)

    if baseline:
        for epoch in range(1, config.e_max + 1):
            try:
                record(baseline_epoch(pair, X, y, num_classes, epoch, config))
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(str(exc), epoch=epoch) from None
        return pair, history

    for epoch in range(1, config.e_warm + 1):
        try:
            record(warmup_epoch(pair, X, y, num_classes, epoch, config))
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(str(exc), epoch=epoch) from None
    splits = split_indices(X.shape[0], config)
    for epoch in range(config.e_warm + 1, config.e_max + 1):
        try:
            record(crosssplit_epoch(pair, X, y, splits, epoch, config))
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(str(exc), epoch=epoch) from None
    return pair, history


def ensemble_proba(pair, X):
    p1 = pair.net1.predict_proba(X)
    if pair.shared:
        return p1
    return 0.5 * (p1 + pair.net2.predict_proba(X))


def evaluate(pair, X, y):
    """Accuracy of each network and of the mean-softmax ensemble.

    ``np.argmax`` breaks ties towards the lowest class index.
    """
    y = np.asarray(y)
    p1 = pair.net1.predict_proba(X)
    p2 = p1 if pair.shared else pair.net2.predict_proba(X)
    if p1.shape[1] <= int(y.max(initial=0)):
        raise ConfigError("test labels exceed the network's class count")
    ens = 0.5 * (p1 + p2)
    return {
        "acc_net1": float(np.mean(p1.argmax(1) == y)),
        "acc_net2": float(np.mean(p2.argmax(1) == y)),
        "acc_ensemble": float(np.mean(ens.argmax(1) == y)),
    }
