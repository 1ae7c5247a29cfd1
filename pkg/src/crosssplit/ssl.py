"""Semi-supervised losses for one network.

The labeled branch is MixUp + soft cross-entropy on the network's own
split. The unlabeled branch uses FixMatch-style pseudo-labels (confident
predictions on a weak view become targets for a strong view) and NT-Xent
on the embeddings of two strong views.

Loss functions return ``(value, grads)`` where ``grads`` is congruent to
``net.params``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, TrainingDivergedError
from .nn import add_grads, one_hot, soft_ce_with_logits

NORM_EPS = 1e-12


@dataclass(frozen=True)
class SslConfig:
    tau: float = 0.95
    lambda_u: float = 1.0
    lambda_c: float = 0.025
    mixup_alpha: float = 4.0
    temperature: float = 0.5
    weak_noise_sigma: float = 0.1
    strong_noise_sigma: float = 0.5
    strong_dropout_p: float = 0.2
    pl_average: str = "batch"

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("ssl.tau must lie in (0, 1]")
        if self.lambda_u < 0 or self.lambda_c < 0:
            raise ConfigError("ssl loss weights must be >= 0")
        if self.mixup_alpha <= 0:
            raise ConfigError("ssl.mixup_alpha must be > 0")
        if self.temperature <= 0:
            raise ConfigError("ssl.temperature must be > 0")
        if self.weak_noise_sigma < 0 or self.strong_noise_sigma < 0:
            raise ConfigError("augmentation noise sigmas must be >= 0")
        if not 0.0 <= self.strong_dropout_p <= 1.0:
            raise ConfigError("ssl.strong_dropout_p must lie in [0, 1]")
        if self.pl_average not in ("batch", "kept"):
            raise ConfigError("ssl.pl_average must be 'batch' or 'kept'")


# -- augmentation --------------------------------------------------------------

def weak_augment(x, rng, sigma):
    x = np.asarray(x, dtype=np.float64)
    return x + sigma * rng.standard_normal(x.shape)


def strong_augment(x, rng, sigma, dropout_p):
    """Gaussian jitter, then independent coordinate dropout."""
    x = np.asarray(x, dtype=np.float64)
    noisy = x + sigma * rng.standard_normal(x.shape)
    keep = rng.random(x.shape) >= dropout_p
    return np.where(keep, noisy, 0.0)


def sample_mixup_lambda(alpha, rng):
    lam = rng.beta(alpha, alpha)
    return max(lam, 1.0 - lam)


def mixup(features, targets, perm, lam):
    """Convex mix of a batch with a permutation of itself."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if features.shape[0] != targets.shape[0] or perm.shape[0] != features.shape[0]:
        raise ContractError("mixup batch, targets and permutation differ in length")
    x = lam * features + (1.0 - lam) * features[perm]
    t = lam * targets + (1.0 - lam) * targets[perm]
    return x, t


# -- losses ----------------------------------------------------------------------

def supervised_loss(net, features, soft_targets, cfg, rng, lam=None, perm=None):
    """MixUp on ``(features, soft_targets)`` then soft cross-entropy.

    ``lam``/``perm`` may be fixed by the caller; otherwise they are drawn
    from ``rng``.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != np.shape(soft_targets)[0]:
        raise ContractError("soft labels are not aligned with the batch")
    if perm is None:
        perm = rng.permutation(features.shape[0])
    if lam is None:
        lam = sample_mixup_lambda(cfg.mixup_alpha, rng)
    x, t = mixup(features, soft_targets, perm, lam)
    cache = net.forward(x)
    loss, dlogits = soft_ce_with_logits(cache.logits, t)
    return loss, net.backward(cache, dlogits)


def _pseudo_label_terms(net, weak, strong_logits, tau, average="batch"):
    probs = net.predict_proba(weak)
    conf = probs.max(axis=1)
    targets = one_hot(probs.argmax(axis=1), probs.shape[1])
    mask = conf >= tau
    kept = int(mask.sum())
    n = weak.shape[0]
    if kept == 0:
        return 0.0, np.zeros_like(strong_logits), 0.0
    weights = mask / (n if average == "batch" else kept)
    loss, dlogits = soft_ce_with_logits(strong_logits, targets, weights)
    return loss, dlogits, kept / n


def pseudo_label_loss(net, weak, strong, tau, average="batch"):
    """CE of strong-view predictions against confident weak-view argmaxes.

    Rows below ``tau`` contribute nothing. ``average="batch"`` divides by the
    batch size (FixMatch); ``"kept"`` divides by the number of kept rows,
    which lets a handful of confident rows carry the whole term. The loss
    is zero when nothing passes. Returns ``(loss, grads, mask_fraction)``.
    """
    cache = net.forward(strong)
    loss, dlogits, frac = _pseudo_label_terms(net, np.asarray(weak, dtype=np.float64),
                                              cache.logits, tau, average)
    return loss, net.backward(cache, dlogits), frac


def unsupervised_loss(net, features, cfg, rng):
    """Augment an unlabeled batch and apply :func:`pseudo_label_loss`."""
    weak = weak_augment(features, rng, cfg.weak_noise_sigma)
    strong = strong_augment(features, rng, cfg.strong_noise_sigma, cfg.strong_dropout_p)
    return pseudo_label_loss(net, weak, strong, cfg.tau, cfg.pl_average)


def nt_xent(emb1, emb2, temperature):
    """NT-Xent over ``2B`` views; returns ``(loss, d_emb1, d_emb2)``.

    Embeddings are L2-normalised here. For view ``i`` the positive is its
    sibling and every other view except itself is a negative.
    """
    emb1 = np.asarray(emb1, dtype=np.float64)
    emb2 = np.asarray(emb2, dtype=np.float64)
    B = emb1.shape[0]
    if B < 2:
        raise ContractError("contrastive loss needs a batch of at least 2")
    if emb2.shape != emb1.shape:
        raise ContractError("the two views must have identical shapes")
    E = np.concatenate([emb1, emb2])
    n = 2 * B
    norms = np.maximum(np.linalg.norm(E, axis=1), NORM_EPS)
    Z = E / norms[:, None]
    S = Z @ Z.T / temperature
    np.fill_diagonal(S, -np.inf)
    pos = (np.arange(n) + B) % n
    row_max = S.max(axis=1, keepdims=True)
    expS = np.exp(S - row_max)
    denom = expS.sum(axis=1)
    lse = row_max[:, 0] + np.log(denom)
    loss = float(np.mean(lse - S[np.arange(n), pos]))

    G = expS / denom[:, None]
    G[np.arange(n), pos] -= 1.0
    G /= n
    dZ = (G + G.T) @ Z / temperature
    radial = np.sum(Z * dZ, axis=1, keepdims=True)
    dE = (dZ - Z * radial) / norms[:, None]
    # below the norm floor the map is linear: E / NORM_EPS
    tiny = np.linalg.norm(E, axis=1) < NORM_EPS
    dE[tiny] = dZ[tiny] / NORM_EPS
    return loss, dE[:B], dE[B:]


def contrastive_loss(net, view1, view2, temperature):
    """NT-Xent on the network's embeddings of two views; ``(loss, grads)``."""
    c1 = net.forward(view1)
    c2 = net.forward(view2)
    loss, d1, d2 = nt_xent(c1.embeddings, c2.embeddings, temperature)
    zero = np.zeros_like(c1.logits)
    grads = add_grads(net.backward(c1, zero, d1), net.backward(c2, zero, d2))
    return loss, grads


def total_loss(sup, unsup, con, cfg):
    values = (sup, unsup, con)
    if not all(np.isfinite(v) for v in values):
        raise TrainingDivergedError(f"non-finite loss component {values}")
    return sup + cfg.lambda_u * unsup + cfg.lambda_c * con


@dataclass
class StepLosses:
    sup: float
    unsup: float
    con: float
    total: float
    mask_fraction: float


def ssl_step(net, labeled_x, soft_targets, unlabeled_x, cfg, rng, lam=None, perm=None):
    """All three loss components for one minibatch and their summed gradient.

    The first strong view feeds both the pseudo-label term and the
    contrastive term, so it is backpropagated once with both gradients.
    The contrastive term is skipped (zero) when ``lambda_c == 0`` or the
    unlabeled batch has fewer than two rows.
    """
    sup, grads = supervised_loss(net, labeled_x, soft_targets, cfg, rng, lam, perm)
    unlabeled_x = np.asarray(unlabeled_x, dtype=np.float64)
    if unlabeled_x.shape[0] == 0 or (cfg.lambda_u == 0 and cfg.lambda_c == 0):
        total = total_loss(sup, 0.0, 0.0, cfg)
        return StepLosses(sup, 0.0, 0.0, total, 0.0), grads
    weak = weak_augment(unlabeled_x, rng, cfg.weak_noise_sigma)
    strong1 = strong_augment(unlabeled_x, rng, cfg.strong_noise_sigma, cfg.strong_dropout_p)
    c1 = net.forward(strong1)
    unsup, dlogits, frac = _pseudo_label_terms(net, weak, c1.logits, cfg.tau, cfg.pl_average)
    dlogits = cfg.lambda_u * dlogits
    con = 0.0
    if cfg.lambda_c > 0 and unlabeled_x.shape[0] >= 2:
        strong2 = strong_augment(unlabeled_x, rng, cfg.strong_noise_sigma, cfg.strong_dropout_p)
        c2 = net.forward(strong2)
        con, d1, d2 = nt_xent(c1.embeddings, c2.embeddings, cfg.temperature)
        grads = add_grads(grads, net.backward(c1, dlogits, cfg.lambda_c * d1))
        grads = add_grads(grads, net.backward(c2, np.zeros_like(c2.logits), cfg.lambda_c * d2))
    else:
        grads = add_grads(grads, net.backward(c1, dlogits))
    total = total_loss(sup, unsup, con, cfg)
    return StepLosses(sup, unsup, con, total, frac), grads
