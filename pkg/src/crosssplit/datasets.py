"""Synthetic blobs, controlled label noise, disjoint splitting and file IO.

Datasets are immutable values. Every generator is a pure function of its
arguments and seed.

Training code is meant to see only ``features`` and ``assigned_labels``
(see :meth:`NoisyDataset.training_view`); the true labels and the noise
flags exist for diagnostics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DatasetParseError

FORMAT_VERSION = 1
NOISE_KINDS = ("none", "symmetric", "asymmetric")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    ratio: float = 0.0
    seed: int = 0
    flip_map: tuple | None = None
    realized_flips: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"noise ratio {self.ratio} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class NoisyDataset:
    features: np.ndarray
    true_labels: np.ndarray
    assigned_labels: np.ndarray
    num_classes: int
    noise_spec: NoiseSpec = field(default_factory=NoiseSpec)
    data_seed: int = 0

    def __post_init__(self):
        for name in ("features", "true_labels", "assigned_labels"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        n = self.features.shape[0]
        if self.true_labels.shape != (n,) or self.assigned_labels.shape != (n,):
            raise ConfigError("label arrays must have one entry per example")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("features must be finite")
        for name in ("true_labels", "assigned_labels"):
            labels = getattr(self, name)
            if n and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ConfigError(f"{name} outside [0, {self.num_classes})")

    @property
    def n_examples(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def ids(self):
        return np.arange(self.n_examples)

    @property
    def is_noisy(self):
        return self.assigned_labels != self.true_labels

    def training_view(self):
        """``(features, assigned_labels)``, all a learner is allowed to see."""
        return self.features, self.assigned_labels

    def __eq__(self, other):
        if not isinstance(other, NoisyDataset):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and self.noise_spec == other.noise_spec
                and self.data_seed == other.data_seed
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.true_labels, other.true_labels)
                and np.array_equal(self.assigned_labels, other.assigned_labels))


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    """``in_first[i]`` is True when example ``i`` belongs to the first half."""
    in_first: np.ndarray
    seed: int

    @property
    def first(self):
        return np.flatnonzero(self.in_first)

    @property
    def second(self):
        return np.flatnonzero(~self.in_first)

    def halves(self):
        return self.first, self.second

    def __eq__(self, other):
        return (isinstance(other, SplitAssignment) and self.seed == other.seed
                and np.array_equal(self.in_first, other.in_first))


def blob_means(num_classes, dim, class_separation, geometry_seed=0):
    """Deterministic class centres.

    Directions are drawn once from ``geometry_seed`` and orthonormalised when
    ``dim >= num_classes`` (otherwise just unit-normalised). Each centre has
    norm ``sqrt(2) * class_separation`` (scalar or one value per class), so
    with orthonormal directions and equal separations the separation is half
    the distance between two centres, in units of the noise std.
    """
    sep = np.broadcast_to(np.asarray(class_separation, dtype=np.float64), (num_classes,))
    if np.any(sep <= 0):
        raise ConfigError("class_separation must be > 0")
    rng = np.random.default_rng([geometry_seed, num_classes, dim])
    raw = rng.standard_normal((max(dim, num_classes), dim))[:num_classes]
    if dim >= num_classes:
        q, _ = np.linalg.qr(raw.T)
        directions = q.T[:num_classes]
    else:
        directions = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return directions * (math.sqrt(2.0) * sep[:, None])


def generate_blobs(num_classes, per_class, dim, class_separation, seed, geometry_seed=0):
    """Isotropic unit-variance Gaussian blobs, ``per_class`` examples each.

    Class centres depend only on ``(num_classes, dim, class_separation,
    geometry_seed)``, so a test set drawn with another ``seed`` shares them.
    Examples are interleaved in a seeded random order.
    """
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    if dim < 2:
        raise ConfigError("dim must be >= 2")
    means = blob_means(num_classes, dim, class_separation, geometry_seed)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    labels = labels[rng.permutation(labels.shape[0])]
    X = means[labels] + rng.standard_normal((labels.shape[0], dim))
    return NoisyDataset(X, labels.copy(), labels.copy(), num_classes,
                        NoiseSpec("none", 0.0, 0), data_seed=seed)


def _flip_count(ratio, n):
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"noise ratio {ratio} outside [0, 1]")
    # round-half-even would make 0.5*N ambiguous across languages; use half-up
    return int(math.floor(ratio * n + 0.5))


def _require_clean(ds):
    if ds.noise_spec.kind != "none":
        raise ConfigError("noise can only be injected into a clean dataset")


def inject_symmetric_noise(ds, ratio, seed):
    """Flip exactly ``round(ratio*N)`` labels to a uniformly chosen wrong class."""
    _require_clean(ds)
    n_flip = _flip_count(ratio, ds.n_examples)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(ds.n_examples, size=n_flip, replace=False)
    offsets = rng.integers(1, ds.num_classes, size=n_flip)
    assigned = ds.true_labels.copy()
    assigned[chosen] = (ds.true_labels[chosen] + offsets) % ds.num_classes
    spec = NoiseSpec("symmetric", float(ratio), int(seed), None, n_flip)
    return replace(ds, assigned_labels=assigned, noise_spec=spec)


def circular_flip_map(num_classes, groups=None):
    """Map each class to the next class of its group (cyclically)."""
    if groups is None:
        groups = [list(range(num_classes))]
    mapping = list(range(num_classes))
    seen = set()
    for group in groups:
        group = [int(c) for c in group]
        if len(group) < 2:
            raise ConfigError(f"class group {group} needs at least two classes")
        for c in group:
            if not 0 <= c < num_classes or c in seen:
                raise ConfigError(f"class {c} invalid or listed in two groups")
            seen.add(c)
        for a, b in zip(group, group[1:] + group[:1]):
            mapping[a] = b
    if len(seen) != num_classes:
        raise ConfigError("class groups must cover every class")
    return tuple(mapping)


def inject_asymmetric_noise(ds, ratio, seed, flip_map=None, groups=None):
    """Flip exactly ``round(ratio*N)`` labels through ``flip_map``.

    ``flip_map`` defaults to :func:`circular_flip_map` over ``groups`` (one
    group with every class when both are None).
    """
    _require_clean(ds)
    if flip_map is None:
        flip_map = circular_flip_map(ds.num_classes, groups)
    flip_map = tuple(int(c) for c in flip_map)
    if len(flip_map) != ds.num_classes or any(not 0 <= c < ds.num_classes for c in flip_map):
        raise ConfigError("flip_map must map every class into [0, C)")
    fixed = [c for c, m in enumerate(flip_map) if c == m]
    if fixed:
        raise ConfigError(f"flip_map has fixed point(s) {fixed}")
    n_flip = _flip_count(ratio, ds.n_examples)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(ds.n_examples, size=n_flip, replace=False)
    table = np.asarray(flip_map)
    assigned = ds.true_labels.copy()
    assigned[chosen] = table[ds.true_labels[chosen]]
    spec = NoiseSpec("asymmetric", float(ratio), int(seed), flip_map, n_flip)
    return replace(ds, assigned_labels=assigned, noise_spec=spec)


def split_dataset(ds, seed):
    """Random halves; the first ``ceil(N/2)`` of a seeded permutation go to D1."""
    n = ds.n_examples if isinstance(ds, NoisyDataset) else int(ds)
    if n < 2:
        raise ConfigError("need at least 2 examples to split")
    perm = np.random.default_rng(seed).permutation(n)
    in_first = np.zeros(n, dtype=bool)
    in_first[perm[: (n + 1) // 2]] = True
    in_first.setflags(write=False)
    return SplitAssignment(in_first, int(seed))


# -- file format ---------------------------------------------------------------
#
#   crosssplit-dataset v=1 N=.. C=.. d=.. kind=.. ratio=.. noise_seed=.. data_seed=.. flips=.. flip_map=..
#   id,f_1,...,f_d,true_label,assigned_label

_HEADER_TAG = "crosssplit-dataset"


def save_dataset(ds, path):
    spec = ds.noise_spec
    flip_map = "-" if spec.flip_map is None else ",".join(map(str, spec.flip_map))
    header = (f"{_HEADER_TAG} v={FORMAT_VERSION} N={ds.n_examples} C={ds.num_classes} "
              f"d={ds.dim} kind={spec.kind} ratio={spec.ratio!r} noise_seed={spec.seed} "
              f"data_seed={ds.data_seed} flips={spec.realized_flips} flip_map={flip_map}")
    lines = [header]
    for i in range(ds.n_examples):
        feats = ",".join(repr(float(v)) for v in ds.features[i])
        lines.append(f"{i},{feats},{int(ds.true_labels[i])},{int(ds.assigned_labels[i])}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_header(line):
    parts = line.split()
    if not parts or parts[0] != _HEADER_TAG:
        raise DatasetParseError("missing dataset header", line=1)
    fields = {}
    for item in parts[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise DatasetParseError(f"malformed header item {item!r}", line=1)
        fields[key] = value
    required = ("v", "N", "C", "d", "kind", "ratio", "noise_seed", "data_seed", "flips", "flip_map")
    for key in required:
        if key not in fields:
            raise DatasetParseError("missing header field", line=1, field=key)
    try:
        if int(fields["v"]) != FORMAT_VERSION:
            raise DatasetParseError(f"unsupported version {fields['v']}", line=1, field="v")
        out = {
            "N": int(fields["N"]), "C": int(fields["C"]), "d": int(fields["d"]),
            "kind": fields["kind"], "ratio": float(fields["ratio"]),
            "noise_seed": int(fields["noise_seed"]), "data_seed": int(fields["data_seed"]),
            "flips": int(fields["flips"]),
            "flip_map": None if fields["flip_map"] == "-"
            else tuple(int(c) for c in fields["flip_map"].split(",")),
        }
    except ValueError as exc:
        raise DatasetParseError(str(exc), line=1) from None
    return out


def load_dataset(path):
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetParseError("empty file", line=1)
    h = _parse_header(lines[0])
    n, c, d = h["N"], h["C"], h["d"]
    if len(lines) - 1 != n:
        raise DatasetParseError(f"expected {n} example lines, found {len(lines) - 1}",
                                line=len(lines) + 1)
    X = np.empty((n, d))
    true = np.empty(n, dtype=np.int64)
    assigned = np.empty(n, dtype=np.int64)
    for i, raw in enumerate(lines[1:]):
        lineno = i + 2
        cells = raw.split(",")
        if len(cells) != d + 3:
            raise DatasetParseError(f"expected {d + 3} fields, found {len(cells)}", line=lineno)
        try:
            ident = int(cells[0])
        except ValueError:
            raise DatasetParseError(f"bad id {cells[0]!r}", line=lineno, field="id") from None
        if ident != i:
            raise DatasetParseError(f"id {ident} out of order (expected {i})", line=lineno, field="id")
        try:
            X[i] = [float(v) for v in cells[1:d + 1]]
        except ValueError as exc:
            raise DatasetParseError(str(exc), line=lineno, field="features") from None
        for name, value, target in (("true_label", cells[d + 1], true),
                                    ("assigned_label", cells[d + 2], assigned)):
            try:
                label = int(value)
            except ValueError:
                raise DatasetParseError(f"bad label {value!r}", line=lineno, field=name) from None
            if not 0 <= label < c:
                raise DatasetParseError(
                    f"example id {ident}: {name} {label} outside [0, {c})",
                    line=lineno, field=name)
            target[i] = label
    if not np.all(np.isfinite(X)):
        raise DatasetParseError("non-finite feature value", field="features")
    spec = NoiseSpec(h["kind"], h["ratio"], h["noise_seed"], h["flip_map"], h["flips"])
    flips = int(np.count_nonzero(true != assigned))
    if flips != spec.realized_flips:
        raise DatasetParseError(
            f"header records {spec.realized_flips} flips, labels show {flips}", field="flips")
    return NoisyDataset(X, true, assigned, c, spec, data_seed=h["data_seed"])
