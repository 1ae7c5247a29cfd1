"""scikit-learn compatible front end."""
from __future__ import annotations

from dataclasses import asdict

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .errors import ConfigError
from .ssl import SslConfig
from .trainer import TrainConfig, ensemble_proba, fit_pair

_SSL_FIELDS = tuple(SslConfig.__dataclass_fields__)
_TRAIN_FIELDS = tuple(f for f in TrainConfig.__dataclass_fields__ if f not in ("ssl", "seed"))


class CrossSplitClassifier(ClassifierMixin, BaseEstimator):
    """Two peer MLPs trained on disjoint halves with peer label correction.

    Parameters mirror :class:`~crosssplit.trainer.TrainConfig` and
    :class:`~crosssplit.ssl.SslConfig` field by field; ``random_state``
    seeds initialisation, the split and every shuffle/augmentation stream
    (``None`` means 0, so fits are always reproducible).

    ``n_classes`` fixes the label space to ``0..n_classes-1`` instead of
    inferring it from ``y``; useful when a noisy split may miss a class.

    After ``fit``: ``pair_`` holds both networks, ``history_`` one entry per
    epoch (whatever the monitor returned), ``classes_`` the label values.
    Predictions average the two networks' softmax outputs.
    """

    def __init__(self, hidden=(128, 128), activation="relu", e_warm=5, e_max=60,
                 batch_size=64, base_lr=0.05, momentum=0.9, weight_decay=5e-4,
                 schedule="cosine", milestones=(), lr_decay=0.1, delta=10,
                 gamma_stages=(0.6, 0.8, 1.0), unlabeled_ratio=1.0, tau=0.95,
                 lambda_u=1.0, lambda_c=0.025, mixup_alpha=4.0, temperature=0.5,
                 weak_noise_sigma=0.1, strong_noise_sigma=0.5, strong_dropout_p=0.2,
                 pl_average="batch", ablation="full", n_classes=None, random_state=None):
        self.hidden = hidden
        self.activation = activation
        self.e_warm = e_warm
        self.e_max = e_max
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.milestones = milestones
        self.lr_decay = lr_decay
        self.delta = delta
        self.gamma_stages = gamma_stages
        self.unlabeled_ratio = unlabeled_ratio
        self.tau = tau
        self.lambda_u = lambda_u
        self.lambda_c = lambda_c
        self.mixup_alpha = mixup_alpha
        self.temperature = temperature
        self.weak_noise_sigma = weak_noise_sigma
        self.strong_noise_sigma = strong_noise_sigma
        self.strong_dropout_p = strong_dropout_p
        self.pl_average = pl_average
        self.ablation = ablation
        self.n_classes = n_classes
        self.random_state = random_state

    @classmethod
    def from_config(cls, config, **extra):
        params = {k: v for k, v in asdict(config).items() if k in _TRAIN_FIELDS}
        params.update({k: getattr(config.ssl, k) for k in _SSL_FIELDS})
        params["random_state"] = config.seed
        params.update(extra)
        return cls(**params)

    def to_config(self):
        ssl = SslConfig(**{k: getattr(self, k) for k in _SSL_FIELDS})
        train = {k: getattr(self, k) for k in _TRAIN_FIELDS}
        train["hidden"] = tuple(int(h) for h in train["hidden"])
        train["milestones"] = tuple(train["milestones"])
        train["gamma_stages"] = tuple(train["gamma_stages"])
        seed = 0 if self.random_state is None else self.random_state
        if not isinstance(seed, (int, np.integer)):
            raise ConfigError("random_state must be an int or None")
        return TrainConfig(ssl=ssl, seed=int(seed), **train)

    def fit(self, X, y, monitor=None, on_epoch_end=None):
        """Fit both networks.

        ``monitor(stats, pair)`` and ``on_epoch_end(epoch, pair)`` are passed
        through to :func:`crosssplit.trainer.fit_pair`.
        """
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        config = self.to_config()
        if self.n_classes is not None:
            y = np.asarray(y)
            if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= self.n_classes:
                raise ConfigError(f"labels must be integers in [0, {self.n_classes})")
            self.classes_ = np.arange(self.n_classes)
            encoded = y.astype(np.int64)
        else:
            self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ConfigError("need at least two classes")
        self.config_ = config
        self.pair_, self.history_ = fit_pair(X, encoded, self.classes_.shape[0], config,
                                             monitor=monitor, on_epoch_end=on_epoch_end)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "pair_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return ensemble_proba(self.pair_, X)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def embed(self, X, network=0):
        """Penultimate-layer activations of one network."""
        check_is_fitted(self, "pair_")
        X = check_array(X, dtype=np.float64)
        return self.pair_.nets[network].forward(X).embeddings
