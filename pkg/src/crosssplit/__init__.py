"""Noisy-label training with two peer networks on disjoint data halves."""

__version__ = "0.1.0"

from .correction import beta, class_jsd_stats, correct_labels, gamma_at, jsd, normalize_jsd  # noqa: E402
from .datasets import (  # noqa: E402
    NoisyDataset,
    generate_blobs,
    inject_asymmetric_noise,
    inject_symmetric_noise,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .errors import (  # noqa: E402
    ConfigError,
    ContractError,
    DatasetParseError,
    DimensionError,
    TrainingDivergedError,
)
from .estimator import CrossSplitClassifier  # noqa: E402
from .trainer import ABLATIONS, TrainConfig  # noqa: E402
