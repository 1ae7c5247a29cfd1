"""Peer-network label correction.

Each example's one-hot label is blended with the peer network's softmax
output. The blend weight grows with the Jensen-Shannon divergence between
the two, rescaled to [0, 1] within each assigned class and then squeezed
towards 0.5 by a staged relaxation factor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .nn import one_hot


def _xlog2_ratio(a, b):
    # a * log2(a / b) with 0 log 0 := 0
    out = np.zeros(np.broadcast(a, b).shape)
    a, b = np.broadcast_arrays(a, b)
    pos = a > 0
    out[pos] = a[pos] * np.log2(a[pos] / b[pos])
    return out


def jsd(p, q):
    """Base-2 Jensen-Shannon divergence, rowwise over the last axis.

    Bounded by 1 and zero iff ``p == q``. Returns a float for 1-D input.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)
    value = 0.5 * _xlog2_ratio(p, m).sum(axis=-1) + 0.5 * _xlog2_ratio(q, m).sum(axis=-1)
    # rounding can leave tiny excursions outside the bounds
    value = np.clip(value, 0.0, 1.0)
    return float(value) if value.ndim == 0 else value


@dataclass
class ClassJsdStats:
    jsd_min: dict
    jsd_max: dict
    counts: dict

    def __contains__(self, c):
        return int(c) in self.counts


def class_jsd_stats(peer_probs, labels, num_classes=None, jsd_values=None):
    """Per-class min/max of JSD(peer prediction, one-hot label)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ConfigError("cannot compute class statistics for an empty split")
    if jsd_values is None:
        peer_probs = np.asarray(peer_probs, dtype=np.float64)
        if peer_probs.shape[0] != labels.shape[0]:
            raise ContractError("peer_probs and labels differ in length")
        C = num_classes or peer_probs.shape[1]
        jsd_values = jsd(peer_probs, one_hot(labels, C))
    jsd_min, jsd_max, counts = {}, {}, {}
    for c in np.unique(labels):
        vals = jsd_values[labels == c]
        jsd_min[int(c)] = float(vals.min())
        jsd_max[int(c)] = float(vals.max())
        counts[int(c)] = int(vals.size)
    return ClassJsdStats(jsd_min, jsd_max, counts)


def normalize_jsd(jsd_value, stats, c):
    """Shift/scale into [0, 1] using the class range; degenerate range -> 0."""
    c = int(c)
    if c not in stats:
        raise KeyError(f"class {c} has no JSD statistics")
    lo, hi = stats.jsd_min[c], stats.jsd_max[c]
    if hi <= lo:
        return 0.0
    return float(np.clip((jsd_value - lo) / (hi - lo), 0.0, 1.0))


def _normalize_all(jsd_values, labels, stats):
    lo = np.array([stats.jsd_min[int(c)] for c in labels])
    hi = np.array([stats.jsd_max[int(c)] for c in labels])
    span = hi - lo
    out = np.zeros_like(jsd_values)
    ok = span > 0
    out[ok] = (jsd_values[ok] - lo[ok]) / span[ok]
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class GammaSchedule:
    e_warm: int = 5
    delta: int = 10
    stages: tuple = (0.6, 0.8, 1.0)

    def __post_init__(self):
        if self.delta < 1:
            raise ConfigError("gamma schedule delta must be >= 1")
        if len(self.stages) != 3:
            raise ConfigError("gamma schedule needs exactly three stage values")
        if any(not 0.0 < s <= 1.0 for s in self.stages):
            raise ConfigError("gamma stage values must lie in (0, 1]")
        if any(a > b for a, b in zip(self.stages, self.stages[1:])):
            raise ConfigError("gamma stage values must be nondecreasing")


def gamma_at(epoch, sched):
    """Staged relaxation factor.

    The first two stages share the endpoint ``e_warm + 2*delta``; the first
    stage wins there.
    """
    if epoch < sched.e_warm:
        raise ContractError(f"gamma undefined before warmup ends (epoch {epoch} < {sched.e_warm})")
    if epoch <= sched.e_warm + 2 * sched.delta:
        return sched.stages[0]
    if epoch <= sched.e_warm + 3 * sched.delta:
        return sched.stages[1]
    return sched.stages[2]


def beta(jsd_norm, gamma):
    return gamma * (np.asarray(jsd_norm, dtype=np.float64) - 0.5) + 0.5


@dataclass
class SoftLabelBatch:
    ids: np.ndarray
    soft_labels: np.ndarray
    beta: np.ndarray
    jsd_raw: np.ndarray
    jsd_norm: np.ndarray
    gamma: float
    peer_version: int = -1


@dataclass(frozen=True)
class CorrectionOptions:
    enabled: bool = True
    class_norm: bool = True


def soft_labels_from_peer(peer_probs, labels, num_classes, gamma,
                          options=CorrectionOptions(), ids=None):
    """Build soft targets from precomputed peer probabilities."""
    labels = np.asarray(labels, dtype=np.int64)
    peer_probs = np.asarray(peer_probs, dtype=np.float64)
    if peer_probs.shape != (labels.shape[0], num_classes):
        raise ContractError(
            f"peer_probs shape {peer_probs.shape} != ({labels.shape[0]}, {num_classes})")
    if ids is None:
        ids = np.arange(labels.shape[0])
    y = one_hot(labels, num_classes)
    raw = jsd(peer_probs, y)
    if not options.enabled:
        zeros = np.zeros_like(raw)
        return SoftLabelBatch(ids, y, zeros, raw, zeros, gamma)
    if options.class_norm:
        stats = class_jsd_stats(None, labels, jsd_values=raw)
        norm = _normalize_all(raw, labels, stats)
    else:
        norm = raw
    b = beta(norm, gamma)
    soft = b[:, None] * peer_probs + (1.0 - b[:, None]) * y
    return SoftLabelBatch(ids, soft, b, raw, norm, gamma)


def correct_labels(features, labels, peer_net, epoch, sched,
                   options=CorrectionOptions(), ids=None):
    """Soft labels for one split using the peer network's current parameters."""
    if peer_net.n_outputs < int(np.max(labels)) + 1:
        raise ContractError("peer network has fewer outputs than label classes")
    gamma = gamma_at(epoch, sched)
    probs = peer_net.predict_proba(features)
    batch = soft_labels_from_peer(probs, labels, peer_net.n_outputs, gamma, options, ids)
    batch.peer_version = peer_net.version
    return batch

