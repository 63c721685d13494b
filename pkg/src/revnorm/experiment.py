"""Grid runner: every (setting, cell, seed) of an :class:`ExperimentConfig`.

Output directory layout::

    results.json                  aggregated metrics (byte-deterministic)
    runs/<L>-<H>_<strategy>_<bp>_seed<s>.json        per-run record
    runs/<L>-<H>_<strategy>_<bp>_seed<s>.history.csv
    runs/<L>-<H>_<strategy>_<bp>_seed<s>.model.json
    splits/<L>-<H>.json, splits/<L>-<H>_removals.csv
    artifacts/overlay_<L>-<H>.json, artifacts/user_stats.csv   (inputs of the plots)

A run whose record exists, parses, and matches both the training config and
the data fingerprint is not retrained.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as D
from .config import ExperimentConfig, load_dataset
from .training import NormalizedForecaster, train

log = logging.getLogger(__name__)
RESULTS_VERSION = 1


def run_stem(L, H, strategy, bp_space, seed) -> str:
    return f"{L}-{H}_{strategy}_{bp_space}_seed{seed}"


def run_key(name, L, H, strategy, bp_space, seed) -> str:
    return f"{name}|{L}-{H}|{strategy}|{bp_space}|{seed}"


def prepare_setting(config: ExperimentConfig, dataset, L, H):
    """Clean for window length ``L`` and split; returns ``(dataset, split, removal_report)``."""
    spec = D.WindowSpec(L, H)
    frac = float(config.dataset.get("min_usable_fraction", 0.5))
    cleaned, removals = D.clean_dataset(dataset, spec, frac)
    split = D.six_way_split(cleaned, spec=spec, **config.split_kwargs())
    return cleaned, split, removals


def fingerprint(dataset, split, labels) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.values).tobytes())
    h.update(np.ascontiguousarray(dataset.mask).tobytes())
    h.update(json.dumps([list(dataset.user_ids), split.to_dict(), labels], sort_keys=True).encode())
    return h.hexdigest()


def _load_valid_record(path: Path, train_config: dict, fp: str):
    try:
        record = json.loads(path.read_text())
    except (OSError, ValueError):
        return None
    if record.get("train_config") != train_config or record.get("fingerprint") != fp:
        return None
    if "metrics" not in record:
        return None
    return record


def _execute(task):
    cfg, dataset, split, labels, run_dir, stem, fp = task
    result = train(cfg, dataset, split, labels if cfg.strategy == "cmin" else None)
    run_dir = Path(run_dir)
    result.history_to_csv(run_dir / f"{stem}.history.csv")
    result.model.save(run_dir / f"{stem}.model.json")
    record = {
        "train_config": cfg.to_dict(),
        "fingerprint": fp,
        "metrics": result.metrics.to_dict(),
        "best_epoch": result.best_epoch,
    }
    (run_dir / f"{stem}.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    return record


def _aggregate(values):
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "values": [float(v) for v in arr]}


def run_experiment(config: ExperimentConfig, out=None, jobs=1) -> Path:
    """Run (or resume) the full grid and write ``results.json``; returns the output directory."""
    out = Path(out if out is not None else config.resolve(config.out))
    run_dir = out / "runs"
    for sub in ("runs", "splits", "artifacts"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    dataset, labels = load_dataset(config)

    tasks, pending, records, prepared = [], [], {}, {}
    for L, H in config.settings:
        cleaned, split, removals = prepare_setting(config, dataset, L, H)
        prepared[(L, H)] = (cleaned, split)
        (out / "splits" / f"{L}-{H}.json").write_text(json.dumps(split.to_dict(), indent=2, sort_keys=True))
        removals.to_csv(out / "splits" / f"{L}-{H}_removals.csv")
        fp = fingerprint(cleaned, split, labels)
        for strategy, bp in config.cells:
            for seed in config.seeds:
                cfg = config.train_config(L, H, strategy, bp, seed)
                stem = run_stem(L, H, strategy, bp, seed)
                key = run_key(config.name, L, H, strategy, bp, seed)
                record = _load_valid_record(run_dir / f"{stem}.json", cfg.to_dict(), fp)
                if record is not None:
                    log.info("skip %s (complete)", key)
                    records[key] = record
                else:
                    tasks.append((cfg, cleaned, split, labels, str(run_dir), stem, fp))
                    pending.append(key)

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_execute, tasks))
    else:
        done = [_execute(t) for t in tasks]
    records.update(zip(pending, done))

    _write_results(config, records, out)
    _write_artifacts(config, prepared, labels, out)
    return out


def _write_results(config, records, out):
    runs, entries = {}, []
    for L, H in config.settings:
        for strategy, bp in config.cells:
            per_seed = []
            for seed in config.seeds:
                key = run_key(config.name, L, H, strategy, bp, seed)
                rec = records[key]
                runs[key] = {"metrics": rec["metrics"], "best_epoch": rec["best_epoch"]}
                per_seed.append(rec["metrics"])
            metrics = {}
            for split_name in sorted(per_seed[0]):
                metrics[split_name] = {
                    m: _aggregate([s[split_name][m] for s in per_seed])
                    for m in ("MSE", "nMSE")
                }
            entries.append({"dataset": config.name, "L": L, "H": H, "strategy": strategy,
                            "bp_space": bp, "seeds": list(config.seeds), "metrics": metrics})
    doc = {
        "schema_version": RESULTS_VERSION,
        "config": config.to_dict(),
        "runs": runs,
        "entries": entries,
    }
    (out / "results.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_artifacts(config, prepared, labels, out):
    """Small plot inputs: one Test2 window with every cell's prediction, and per-user statistics."""
    seed = config.seeds[0]
    for (L, H), (dataset, split) in prepared.items():
        spec = D.WindowSpec(L, H)
        try:
            pair = D.enumerate_windows(dataset, split, "Test2", spec)[0]
        except D.NoUsableWindows:
            continue
        doc = {"user": pair.user, "start": pair.start, "x": pair.x.tolist(), "y": pair.y.tolist(),
               "predictions": {}}
        cluster = None if labels is None else np.array([labels.get(pair.user)], dtype=object)
        for strategy, bp in config.cells:
            model = NormalizedForecaster.load(out / "runs" / f"{run_stem(L, H, strategy, bp, seed)}.model.json")
            users = np.array([pair.user], dtype=object)
            pred = model.predict(pair.x[None, :], users=users,
                                 clusters=cluster if strategy == "cmin" else None)[0]
            doc["predictions"][f"{strategy}:{bp}"] = pred.tolist()
        (out / "artifacts" / f"overlay_{L}-{H}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))

    (L, H), (dataset, split) = next(iter(prepared.items()))
    lo, hi = split.period("Train")
    with open(out / "artifacts" / "user_stats.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "group", "mean", "std"])
        for group, users in (("in", split.users_in), ("out", split.users_out)):
            for u in users:
                i = dataset.user_index(u)
                vals = dataset.values[i, lo:hi][dataset.mask[i, lo:hi]]
                if len(vals) > 1:
                    writer.writerow([u, group, repr(float(vals.mean())), repr(float(vals.std(ddof=1)))])
