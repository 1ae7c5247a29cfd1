"""Command-line entry point: ``crosssplit <subcommand> [flags]``.

Global flags (accepted after the subcommand): ``--seed``, ``--out-dir``,
``--config``. Values given as flags override the config file, which
overrides the built-in defaults. Every output path is resolved inside
``--out-dir``; anything that would escape it is rejected.

Exit codes: 0 ok, 2 config or usage error, 3 training diverged, 4 IO error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .config import ExperimentConfig, NoiseConfig, config_to_dict, format_config, parse_config
from .datasets import (
    generate_blobs,
    inject_asymmetric_noise,
    inject_symmetric_noise,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, DatasetParseError, TrainingDivergedError
from .experiment import build_datasets, run_ablation_suite, run_crosssplit, write_ablation_table
from .metrics import import_csv, merge_plotdata
from .trainer import ABLATIONS

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _inside(out_dir, name):
    """Resolve ``name`` under ``out_dir``; refuse paths that leave it."""
    root = os.path.realpath(out_dir)
    path = os.path.realpath(os.path.join(root, name))
    if os.path.commonpath([root, path]) != root:
        raise CliError(f"refusing to write {name!r} outside --out-dir {out_dir!r}")
    return path


def _load_config(args):
    if not args.config:
        return ExperimentConfig()
    if not os.path.isfile(args.config):
        raise CliError(f"config file not found: {args.config}", EXIT_IO)
    return parse_config(args.config)


def _ensure_out_dir(args):
    try:
        os.makedirs(args.out_dir, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create --out-dir {args.out_dir!r}: {exc}", EXIT_IO) from None


# -- subcommands -----------------------------------------------------------------

def cmd_gen_data(args):
    data = _load_config(args).data
    overrides = {k: v for k, v in (("classes", args.classes), ("per_class", args.per_class),
                                   ("dim", args.dim), ("separation", args.separation),
                                   ("seed", args.seed), ("geometry_seed", args.geometry_seed))
                 if v is not None}
    data = replace(data, **overrides)
    _ensure_out_dir(args)
    path = _inside(args.out_dir, args.out)
    ds = generate_blobs(data.classes, data.per_class, data.dim, data.separation, data.seed,
                        data.geometry_seed)
    save_dataset(ds, path)
    print(f"wrote {path}: N={ds.n_examples} C={ds.num_classes} d={ds.dim}")
    return EXIT_OK


def cmd_inject_noise(args):
    noise = _load_config(args).noise
    groups = noise.groups
    if args.groups is not None:
        groups = tuple(tuple(int(c) for c in g.split(",")) for g in args.groups.split(";") if g)
    noise = NoiseConfig(args.kind or noise.kind,
                        noise.ratio if args.ratio is None else args.ratio,
                        noise.seed if args.seed is None else args.seed, groups)
    clean = load_dataset(args.input)
    if noise.kind == "symmetric":
        ds = inject_symmetric_noise(clean, noise.ratio, noise.seed)
    elif noise.kind == "asymmetric":
        ds = inject_asymmetric_noise(clean, noise.ratio, noise.seed,
                                     groups=[list(g) for g in groups] or None)
    else:
        raise CliError("inject-noise needs --kind symmetric or asymmetric")
    _ensure_out_dir(args)
    path = _inside(args.out_dir, args.out)
    save_dataset(ds, path)
    print(f"wrote {path}: kind={noise.kind} ratio={noise.ratio} flips={ds.noise_spec.realized_flips}")
    return EXIT_OK


def _experiment(args):
    cfg = _load_config(args)
    if getattr(args, "data", None):
        cfg = replace(cfg, data=replace(cfg.data, path=args.data))
    cfg = cfg.with_overrides(seed=args.seed, ablation=getattr(args, "ablation", None),
                             e_max=args.e_max, e_warm=args.e_warm)
    if args.checkpoint_every is not None:
        if args.checkpoint_every < 0:
            raise ConfigError("--checkpoint-every must be >= 0")
        cfg = replace(cfg, checkpoint_every=args.checkpoint_every)
    return cfg


def _summary(name, final):
    noisy = 0.5 * (final.train_acc_noisy_n1 + final.train_acc_noisy_n2)
    return (f"{name}: epoch={final.epoch} test_acc_ens={final.test_acc_ens:.4f} "
            f"test_acc_n1={final.test_acc_n1:.4f} test_acc_n2={final.test_acc_n2:.4f} "
            f"train_acc_noisy={noisy:.4f}")


def cmd_run(args):
    cfg = _experiment(args)
    _ensure_out_dir(args)
    run_dir = _inside(args.out_dir, args.name)
    train, test = build_datasets(cfg)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.ini"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_config(cfg))
    res = run_crosssplit(train, cfg.train, test, run_dir, cfg.checkpoint_every,
                         manifest_extra={"experiment": config_to_dict(cfg)})
    print(_summary(cfg.train.ablation, res.final))
    return EXIT_OK


def cmd_ablate(args):
    cfg = _experiment(args)
    variants = cfg.ablation.variants
    if args.variants:
        variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
        for v in variants:
            if v not in ABLATIONS:
                raise ConfigError(f"unknown variant {v!r}; expected one of {ABLATIONS}")
    _ensure_out_dir(args)
    suite_dir = _inside(args.out_dir, args.name)
    os.makedirs(suite_dir, exist_ok=True)
    with open(os.path.join(suite_dir, "config.ini"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_config(cfg))
    train, test = build_datasets(cfg)
    rows, results = run_ablation_suite(train, cfg.train, test, variants, suite_dir,
                                       cfg.checkpoint_every)
    write_ablation_table(rows, os.path.join(suite_dir, "ablation.csv"),
                         os.path.join(suite_dir, "ablation.md"))
    for row in rows:
        if row.status == "ok":
            print(_summary(row.variant, results[row.variant].final))
        else:
            print(f"{row.variant}: FAILED {row.error}")
    if not results:
        print("all variants failed", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _run_names(run_dirs):
    names, seen = [], {}
    for d in run_dirs:
        base = os.path.basename(os.path.normpath(d)) or "run"
        seen[base] = seen.get(base, 0) + 1
        names.append(base if seen[base] == 1 else f"{base}{seen[base]}")
    return names


def cmd_report(args):
    logs = {}
    for name, run_dir in zip(_run_names(args.runs), args.runs):
        path = os.path.join(run_dir, "metrics.csv")
        if not os.path.isfile(path):
            raise CliError(f"missing metrics.csv: {path}", EXIT_IO)
        try:
            logs[name] = import_csv(path)
        except (DatasetParseError, UnicodeDecodeError) as exc:
            raise CliError(f"corrupt metrics file {path}: {exc}") from None
    _ensure_out_dir(args)
    out = _inside(args.out_dir, args.name)
    for path in merge_plotdata(logs, out):
        print(f"wrote {path}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="seed for the subcommand (data, noise or training)")
    common.add_argument("--out-dir", default=".", help="every output goes under this directory")
    common.add_argument("--config", default=None, help="INI config file")

    parser = argparse.ArgumentParser(prog="crosssplit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", parents=[common], help="generate a clean Gaussian-blob dataset")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--geometry-seed", type=int)
    p.add_argument("--out", required=True, help="file name under --out-dir")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("inject-noise", parents=[common], help="add label noise to a clean dataset")
    p.add_argument("--in", dest="input", required=True, help="clean dataset file")
    p.add_argument("--kind", choices=("symmetric", "asymmetric"))
    p.add_argument("--ratio", type=float)
    p.add_argument("--groups", help="asymmetric class groups, e.g. '0,1;2,3'")
    p.add_argument("--out", required=True, help="file name under --out-dir")
    p.set_defaults(func=cmd_inject_noise)

    for name, func, default_dir, what in (
            ("run", cmd_run, "run", "train one variant and write a run directory"),
            ("ablate", cmd_ablate, "ablation", "train every ablation variant and tabulate")):
        p = sub.add_parser(name, parents=[common], help=what)
        p.add_argument("--data", help="dataset file (overrides [data] generation)")
        p.add_argument("--e-max", type=int)
        p.add_argument("--e-warm", type=int)
        p.add_argument("--checkpoint-every", type=int)
        p.add_argument("--name", default=default_dir, help="directory name under --out-dir")
        if name == "run":
            p.add_argument("--ablation", choices=ABLATIONS)
        else:
            p.add_argument("--variants", help="comma-separated subset of " + ",".join(ABLATIONS))
        p.set_defaults(func=func)

    p = sub.add_parser("report", parents=[common], help="merge run curves into plot data")
    p.add_argument("runs", nargs="+", help="run directories containing metrics.csv")
    p.add_argument("--name", default="report", help="directory name under --out-dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"crosssplit {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, DatasetParseError) as exc:
        print(f"crosssplit {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"crosssplit {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"crosssplit {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
