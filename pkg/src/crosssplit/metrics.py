"""Memorization diagnostics, per-epoch logs and CSV/plot-data export.

This is the only module that reads true labels and noise flags.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import ContractError, DatasetParseError

METRICS_HEADER = (
    "epoch", "gamma", "lr",
    "train_acc_clean_n1", "train_acc_noisy_n1", "train_acc_clean_n2", "train_acc_noisy_n2",
    "test_acc_n1", "test_acc_n2", "test_acc_ens",
    "beta_mean_clean", "beta_mean_noisy",
    "sup_loss", "unsup_loss", "con_loss", "mask_fraction",
)

# curve file -> metrics columns, one file per panel of the memorization figure
PLOT_CURVES = {
    "clean_acc": ("train_acc_clean_n1", "train_acc_clean_n2"),
    "noisy_acc": ("train_acc_noisy_n1", "train_acc_noisy_n2"),
    "test_acc": ("test_acc_n1", "test_acc_n2", "test_acc_ens"),
}


@dataclass
class EpochMetrics:
    epoch: int
    gamma: float
    lr: float
    train_acc_clean_n1: float
    train_acc_noisy_n1: float
    train_acc_clean_n2: float
    train_acc_noisy_n2: float
    test_acc_n1: float
    test_acc_n2: float
    test_acc_ens: float
    beta_mean_clean: float
    beta_mean_noisy: float
    sup_loss: float
    unsup_loss: float
    con_loss: float
    mask_fraction: float

    def row(self):
        return [getattr(self, name) for name in METRICS_HEADER]


assert tuple(f.name for f in fields(EpochMetrics)) == METRICS_HEADER


@dataclass
class MemorizationCounts:
    """Integer counts behind the clean/noisy training accuracies of one network."""
    correct_clean: int
    n_clean: int
    correct_noisy: int
    n_noisy: int

    @property
    def acc_clean(self):
        return self.correct_clean / self.n_clean if self.n_clean else math.nan

    @property
    def acc_noisy(self):
        return self.correct_noisy / self.n_noisy if self.n_noisy else math.nan

    @property
    def acc_overall(self):
        return (self.correct_clean + self.correct_noisy) / (self.n_clean + self.n_noisy)


def memorization_counts(net, dataset):
    """Agreement with the assigned label, split by the noise flag."""
    is_noisy = getattr(dataset, "is_noisy", None)
    if is_noisy is None:
        raise ContractError("dataset carries no noise flags")
    pred = net.predict_proba(dataset.features).argmax(axis=1)
    hit = pred == dataset.assigned_labels
    return MemorizationCounts(
        correct_clean=int(np.count_nonzero(hit & ~is_noisy)),
        n_clean=int(np.count_nonzero(~is_noisy)),
        correct_noisy=int(np.count_nonzero(hit & is_noisy)),
        n_noisy=int(np.count_nonzero(is_noisy)),
    )


def memorization_metrics(pair, dataset):
    """``[(train_acc_clean, train_acc_noisy)]`` for net 1 and net 2."""
    return [(c.acc_clean, c.acc_noisy)
            for c in (memorization_counts(net, dataset) for net in pair.nets)]


class MemorizationMonitor:
    """Trainer callback producing one :class:`EpochMetrics` per epoch.

    Holds the full training dataset (with flags) and a clean test set; the
    trainer only hands it label-blind :class:`~crosssplit.trainer.EpochStats`.
    """

    def __init__(self, train_ds, X_test=None, y_test=None):
        self.train_ds = train_ds
        self.X_test = X_test
        self.y_test = y_test
        self.counts = []

    def __call__(self, stats, pair):
        from .trainer import evaluate

        c1 = memorization_counts(pair.net1, self.train_ds)
        c2 = c1 if pair.shared else memorization_counts(pair.net2, self.train_ds)
        self.counts.append((c1, c2))
        if self.X_test is not None:
            acc = evaluate(pair, self.X_test, self.y_test)
        else:
            acc = dict.fromkeys(("acc_net1", "acc_net2", "acc_ensemble"), math.nan)
        ids, betas = stats.beta_by_id()
        noisy = self.train_ds.is_noisy[ids]
        beta_clean = float(betas[~noisy].mean()) if np.any(~noisy) else math.nan
        beta_noisy = float(betas[noisy].mean()) if np.any(noisy) else math.nan
        return EpochMetrics(
            epoch=stats.epoch, gamma=float(stats.gamma), lr=float(stats.lr),
            train_acc_clean_n1=c1.acc_clean, train_acc_noisy_n1=c1.acc_noisy,
            train_acc_clean_n2=c2.acc_clean, train_acc_noisy_n2=c2.acc_noisy,
            test_acc_n1=acc["acc_net1"], test_acc_n2=acc["acc_net2"],
            test_acc_ens=acc["acc_ensemble"],
            beta_mean_clean=beta_clean, beta_mean_noisy=beta_noisy,
            sup_loss=stats.sup_loss, unsup_loss=stats.unsup_loss, con_loss=stats.con_loss,
            mask_fraction=stats.mask_fraction,
        )


class MetricsLog:
    """Append-only sequence of :class:`EpochMetrics` with increasing epochs."""

    def __init__(self, entries=()):
        self.entries = []
        for e in entries:
            self.append(e)

    def append(self, metrics):
        if self.entries and metrics.epoch <= self.entries[-1].epoch:
            raise ContractError(
                f"epoch {metrics.epoch} does not follow {self.entries[-1].epoch}")
        self.entries.append(metrics)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def column(self, name):
        return np.array([getattr(e, name) for e in self.entries], dtype=np.float64)


def append_epoch(log, metrics):
    log.append(metrics)
    return log


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def export_csv(log, path):
    lines = [",".join(METRICS_HEADER)]
    lines += [",".join(_fmt(v) for v in e.row()) for e in log]
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def import_csv(path):
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or tuple(lines[0].split(",")) != METRICS_HEADER:
        raise DatasetParseError(f"{path}: unexpected metrics header", line=1)
    log = MetricsLog()
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(METRICS_HEADER):
            raise DatasetParseError(f"{path}: expected {len(METRICS_HEADER)} fields",
                                    line=lineno)
        try:
            values = [int(cells[0])] + [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise DatasetParseError(f"{path}: {exc}", line=lineno) from None
        try:
            log.append(EpochMetrics(*values))
        except ContractError as exc:
            raise DatasetParseError(f"{path}: {exc}", line=lineno) from None
    return log


def export_plotdata(log, out_dir, prefix=""):
    """Write one CSV per curve (``clean_acc``, ``noisy_acc``, ``test_acc``)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for curve, columns in PLOT_CURVES.items():
        path = os.path.join(out_dir, f"{curve}.csv")
        header = ["epoch"] + [f"{prefix}{c}" for c in columns]
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for e in log:
                fh.write(",".join([str(e.epoch)] + [_fmt(getattr(e, c)) for c in columns]) + "\n")
        paths.append(path)
    return paths


def merge_plotdata(logs, out_dir):
    """Per-curve files for several runs; columns are ``<run>:<metric>``.

    Epochs are outer-joined; a run without an epoch leaves its cells empty.
    """
    os.makedirs(out_dir, exist_ok=True)
    epochs = sorted({e.epoch for log in logs.values() for e in log})
    paths = []
    for curve, columns in PLOT_CURVES.items():
        header = ["epoch"] + [f"{run}:{c}" for run in logs for c in columns]
        by_run = {run: {e.epoch: e for e in log} for run, log in logs.items()}
        path = os.path.join(out_dir, f"{curve}.csv")
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for ep in epochs:
                cells = [str(ep)]
                for run in logs:
                    e = by_run[run].get(ep)
                    cells += ["" if e is None else _fmt(getattr(e, c)) for c in columns]
                fh.write(",".join(cells) + "\n")
        paths.append(path)
    return paths


def export_embeddings(net, dataset, path):
    """``id,true_label,assigned_label,e_0..e_k`` with penultimate activations."""
    emb = net.forward(dataset.features).embeddings
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        cols = [f"e_{j}" for j in range(emb.shape[1])]
        fh.write(",".join(["id", "true_label", "assigned_label", *cols]) + "\n")
        for i in range(emb.shape[0]):
            vals = ",".join(repr(float(v)) for v in emb[i])
            fh.write(f"{i},{int(dataset.true_labels[i])},{int(dataset.assigned_labels[i])},{vals}\n")


def write_correction_diagnostics(path, batch, labels, is_noisy=None):
    """CSV of ``id,class,jsd_raw,jsd_norm,beta,is_noisy`` for one corrected split."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("id,class,jsd_raw,jsd_norm,beta,is_noisy\n")
        for k, i in enumerate(batch.ids):
            flag = "" if is_noisy is None else str(int(is_noisy[k]))
            fh.write(f"{int(i)},{int(labels[k])},{float(batch.jsd_raw[k])!r},"
                     f"{float(batch.jsd_norm[k])!r},{float(batch.beta[k])!r},{flag}\n")

def best_and_last(log, column="test_acc_ens", last=10):
    """Best value and mean of the final ``last`` epochs of one column."""
    values = log.column(column)
    if values.size == 0:
        return math.nan, math.nan
    return float(np.nanmax(values)), float(np.mean(values[-last:]))
