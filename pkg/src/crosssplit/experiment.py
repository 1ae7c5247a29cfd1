"""End-to-end runs on a :class:`~crosssplit.datasets.NoisyDataset`.

Wires the label-blind estimator to the memorization monitor and takes care
of run directories: manifest, metrics.csv and checkpoints.
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .datasets import generate_blobs, inject_asymmetric_noise, inject_symmetric_noise, load_dataset
from .errors import TrainingDivergedError
from .estimator import CrossSplitClassifier
from .metrics import MemorizationMonitor, MetricsLog, best_and_last, export_csv
from .nn import save_checkpoint
from .trainer import ABLATIONS


@dataclass
class RunResult:
    variant: str
    metrics: MetricsLog
    classifier: CrossSplitClassifier
    config: object
    wall_clock: float
    counts: list

    @property
    def pair(self):
        return self.classifier.pair_

    @property
    def final(self):
        return self.metrics[-1]


def build_datasets(cfg):
    """Training set (with the configured noise) and a clean test set."""
    data, noise = cfg.data, cfg.noise
    if data.path:
        train = load_dataset(data.path)
    else:
        train = generate_blobs(data.classes, data.per_class, data.dim, data.separation,
                               data.seed, data.geometry_seed)
    if noise.kind == "symmetric":
        train = inject_symmetric_noise(train, noise.ratio, noise.seed)
    elif noise.kind == "asymmetric":
        train = inject_asymmetric_noise(train, noise.ratio, noise.seed,
                                        groups=[list(g) for g in noise.groups] or None)
    test = None
    if data.test_per_class:
        test = generate_blobs(train.num_classes, data.test_per_class, train.dim,
                              data.separation, data.test_seed, data.geometry_seed)
    return train, test


def _write_manifest(run_dir, manifest):
    with open(os.path.join(run_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, tuple):
        return list(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


def run_crosssplit(dataset, config, test=None, run_dir=None, checkpoint_every=0,
                   manifest_extra=None):
    """Train on ``dataset`` under ``config`` (a TrainConfig) and log every epoch.

    With ``run_dir`` the manifest is written first and updated on completion
    or divergence; metrics.csv and checkpoints are written alongside.
    """
    clf = CrossSplitClassifier.from_config(config, n_classes=dataset.num_classes)
    monitor = MemorizationMonitor(dataset, *(test.training_view() if test else (None, None)))
    log = MetricsLog()

    def track(stats, pair):
        entry = monitor(stats, pair)
        log.append(entry)
        return entry

    manifest = None
    on_epoch_end = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        ckpt_dir = os.path.join(run_dir, "checkpoints")
        manifest = {
            "version": f"crosssplit {__version__}",
            "variant": config.ablation,
            "seeds": {"train": config.seed, "data": dataset.data_seed,
                      "noise": dataset.noise_spec.seed},
            "noise": {"kind": dataset.noise_spec.kind, "ratio": dataset.noise_spec.ratio,
                      "realized_flips": dataset.noise_spec.realized_flips},
            "config": clf.get_params(),
            "status": "running",
            **(manifest_extra or {}),
        }
        _write_manifest(run_dir, manifest)

        def on_epoch_end(epoch, pair):
            if checkpoint_every and epoch % checkpoint_every == 0:
                _save_pair(ckpt_dir, pair, f"epoch{epoch:04d}")

    start = time.perf_counter()
    try:
        clf.fit(*dataset.training_view(), monitor=track, on_epoch_end=on_epoch_end)
    except TrainingDivergedError as exc:
        if run_dir is not None:
            export_csv(log, os.path.join(run_dir, "metrics.csv"))
            manifest.update(status="diverged", error=str(exc), epochs_completed=len(log))
            _write_manifest(run_dir, manifest)
        raise
    elapsed = time.perf_counter() - start
    if run_dir is not None:
        export_csv(log, os.path.join(run_dir, "metrics.csv"))
        _save_pair(os.path.join(run_dir, "checkpoints"), clf.pair_, "final")
        manifest.update(status="success", epochs_completed=len(log), wall_clock_s=elapsed)
        _write_manifest(run_dir, manifest)
    return RunResult(config.ablation, log, clf, config, elapsed, monitor.counts)


def _save_pair(ckpt_dir, pair, tag):
    os.makedirs(ckpt_dir, exist_ok=True)
    for k in range(1 if pair.shared else 2):
        save_checkpoint(os.path.join(ckpt_dir, f"net{k + 1}_{tag}.npz"), pair.nets[k], pair.opts[k])


@dataclass
class AblationRow:
    variant: str
    status: str
    best: float = math.nan
    last: float = math.nan
    final_test_acc: float = math.nan
    final_noisy_acc: float = math.nan
    error: str = ""


def run_ablation_suite(dataset, base_config, test=None, variants=ABLATIONS, out_dir=None,
                       checkpoint_every=0):
    """One run per variant sharing data, noise and seed; failures are recorded.

    Returns ``(rows, results)`` where ``results`` maps variant to RunResult
    for the variants that finished.
    """
    rows, results = [], {}
    for variant in variants:
        config = replace(base_config, ablation=variant)
        run_dir = os.path.join(out_dir, variant) if out_dir else None
        try:
            res = run_crosssplit(dataset, config, test, run_dir, checkpoint_every)
        except (TrainingDivergedError, ValueError, FloatingPointError) as exc:
            rows.append(AblationRow(variant, "failed", error=str(exc)))
            continue
        results[variant] = res
        best, last = best_and_last(res.metrics)
        final = res.final
        rows.append(AblationRow(variant, "ok", best, last, final.test_acc_ens,
                                0.5 * (final.train_acc_noisy_n1 + final.train_acc_noisy_n2)))
    return rows, results


ABLATION_COLUMNS = ("variant", "status", "best", "last", "final_test_acc", "final_noisy_acc", "error")


def write_ablation_table(rows, csv_path=None, md_path=None):
    """Best / Last (mean of the final 10 epochs) of ensemble test accuracy per variant."""
    def cell(v):
        if isinstance(v, float):
            return "" if math.isnan(v) else repr(v)
        return str(v).replace(",", ";").replace("\n", " ")

    if csv_path:
        with open(csv_path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(ABLATION_COLUMNS) + "\n")
            for r in rows:
                fh.write(",".join(cell(getattr(r, c)) for c in ABLATION_COLUMNS) + "\n")
    if md_path:
        def pct(v):
            return "-" if math.isnan(v) else f"{100 * v:.2f}"
        lines = ["| Variant | Best | Last | Noisy-label train acc | Status |",
                 "|---|---|---|---|---|"]
        for r in rows:
            status = r.status if not r.error else f"{r.status}: {r.error}"
            lines.append(f"| {r.variant} | {pct(r.best)} | {pct(r.last)} | "
                         f"{pct(r.final_noisy_acc)} | {status.replace('|', '/')} |")
        with open(md_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
