"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as D
from . import synthetic as S
from .config import ExperimentConfig, load_dataset, parse_setting, synthetic_spec
from .exceptions import ConfigError, ConfigInvalid, DataError, MissingResults, RevnormError
from .experiment import prepare_setting, run_experiment
from .report import emit_report
from .shift import shift_report
from .training import NormalizedForecaster, evaluate, train

log = logging.getLogger("revnorm")


def _load_config(args, required=True):
    if args.config is None:
        if required:
            raise ConfigInvalid("--config is required for this command")
        return None
    return ExperimentConfig.load(args.config)


def _out_dir(args, config, default="results") -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif config is not None:
        out = config.resolve(config.out)
    else:
        out = Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setting(args, config):
    if args.setting is None:
        return config.settings[0]
    return parse_setting(args.setting)


def _cell(args, config):
    if args.cell is None:
        return config.cells[0]
    strategy, _, bp = args.cell.partition(":")
    return strategy, bp or "data"


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #

def cmd_generate(args):
    config = _load_config(args, required=False)
    if config is not None and "synthetic" in config.dataset:
        spec = synthetic_spec(config.dataset["synthetic"], seed=args.seed)
    else:
        section = {"kind": args.kind, "length": args.length}
        if args.kind == "two_cluster":
            section["users_per_cluster"] = args.users
        else:
            section["n_users"] = args.users
        spec = synthetic_spec(section, seed=args.seed if args.seed is not None else 0)
    out = _out_dir(args, None, "data")
    dataset, labels = S.generate_dataset(spec)
    D.write_csv(dataset, out / "data.csv")
    S.write_labels(labels, out / "labels.csv")
    _write_json(out / "synthetic.json", spec.to_dict())
    print(out / "data.csv")


def cmd_split(args):
    config = _load_config(args)
    out = _out_dir(args, config)
    dataset, _ = load_dataset(config)
    for L, H in config.settings:
        _, split, removals = prepare_setting(config, dataset, L, H)
        _write_json(out / f"split_{L}-{H}.json", split.to_dict())
        removals.to_csv(out / f"removals_{L}-{H}.csv")
    print(out)


def cmd_train(args):
    config = _load_config(args)
    out = _out_dir(args, config)
    L, H = _setting(args, config)
    strategy, bp = _cell(args, config)
    seed = args.seed if args.seed is not None else config.seeds[0]
    cfg = config.train_config(L, H, strategy, bp, seed)
    dataset, labels = load_dataset(config)
    cleaned, split, _ = prepare_setting(config, dataset, L, H)
    result = train(cfg, cleaned, split, labels if strategy == "cmin" else None)
    result.model.save(out / "model.json")
    result.history_to_csv(out / "history.csv")
    _write_json(out / "split.json", split.to_dict())
    _write_json(out / "metrics.json", {"train_config": cfg.to_dict(), "metrics": result.metrics.to_dict(),
                                       "best_epoch": result.best_epoch})
    print(out / "metrics.json")


def cmd_eval(args):
    config = _load_config(args)
    out = _out_dir(args, config)
    try:
        model = NormalizedForecaster.load(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise D.DataUnreadable(f"cannot load model {args.model}: {exc}") from None
    L, H = model.n_features_in_, model.n_outputs_
    dataset, labels = load_dataset(config)
    cleaned, split, _ = prepare_setting(config, dataset, L, H)
    metrics = evaluate(model, cleaned, split, D.WindowSpec(L, H),
                       labels=labels if model.strategy == "cmin" else None, epsilon=model.epsilon)
    _write_json(out / "eval_metrics.json", metrics.to_dict())
    print(out / "eval_metrics.json")


def cmd_shift_report(args):
    config = _load_config(args)
    out = _out_dir(args, config)
    L, H = _setting(args, config)
    dataset, _ = load_dataset(config)
    cleaned, split, _ = prepare_setting(config, dataset, L, H)
    n = args.n if args.n is not None else int(config.shift.get("n", 2000))
    seed = args.seed if args.seed is not None else int(config.shift.get("seed", 0))
    report = shift_report(cleaned, split, D.WindowSpec(L, H), name=config.name, n=n, seed=seed,
                          export_dir=out / "features" if args.export_features else None)
    report.write(out)
    print(out / "shift_report.json")


def cmd_run(args):
    config = _load_config(args)
    if args.seed is not None:
        config.seeds = [args.seed]
    out = run_experiment(config, out=args.out, jobs=args.jobs)
    print(out / "results.json")


def cmd_report(args):
    config = _load_config(args, required=False)
    if args.out is not None:
        results_dir = Path(args.out)
    elif config is not None:
        results_dir = config.resolve(config.out)
    else:
        raise ConfigInvalid("report needs --out RESULTS_DIR or --config")
    for p in emit_report(results_dir):
        print(p)


# --------------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="revnorm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, default=None, help="experiment YAML file")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "write a synthetic dataset (data.csv, labels.csv)")
    p.add_argument("--kind", choices=("two_cluster", "heterogeneous"), default="two_cluster")
    p.add_argument("--users", type=int, default=20, help="users per cluster (two_cluster) or in total")
    p.add_argument("--length", type=int, default=2000)
    add("split", cmd_split, "clean and split the dataset for every setting")
    for name, func, help_ in (("train", cmd_train, "train one (setting, cell, seed)"),
                              ("shift-report", cmd_shift_report, "energy-distance shift tables")):
        p = add(name, func, help_)
        p.add_argument("--setting", default=None, help="L-H, default: first in config")
        if name == "train":
            p.add_argument("--cell", default=None, help="strategy:bp_space, default: first in config")
        else:
            p.add_argument("--n", type=int, default=None, help="windows sampled per split")
            p.add_argument("--export-features", action="store_true")
    p = add("eval", cmd_eval, "evaluate a saved model on every split")
    p.add_argument("--model", type=Path, required=True)
    add("run", cmd_run, "run the full grid (resumable)")
    add("report", cmd_report, "tables and plots from a results directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, MissingResults) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except RevnormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
