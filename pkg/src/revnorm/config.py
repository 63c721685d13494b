"""YAML experiment configuration.

Schema (version 1)::

    schema_version: 1
    name: synthetic                 # dataset name used in tables
    dataset:
      path: data.csv                # wide or long CSV, relative to this file
      labels: labels.csv            # optional user,cluster CSV (needed by cmin)
      # ...or instead of path:
      synthetic: {kind: two_cluster, users_per_cluster: 20, length: 2000, seed: 0, slope: 0.1}
      exclude_users: []
      min_usable_fraction: 0.5
    split: {user_out_fraction: 0.2, period_fractions: [0.6, 0.2, 0.2], seed: 0}
    settings: ["40-10", "100-20"]   # or [[40, 10], ...]
    cells:
      - {strategy: none, bp_space: data}
      - {strategy: instance, bp_space: normalized}
    seeds: [0, 1, 2]
    training: {epochs: 200, batch_size: 64, lr: 0.001, model: linear}
    shift: {n: 2000, seed: 0}
    out: results

``synthetic.kind`` is ``two_cluster`` (two clusters), ``heterogeneous`` (one
cluster, user scales spread log-uniformly) or ``custom`` with an explicit
``clusters`` list as written by :meth:`SyntheticSpec.to_dict`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from . import data as D
from . import synthetic as S
from .exceptions import ConfigInvalid
from .normalization import INSTANCE_KINDS, KINDS
from .training import BP_SPACES, TrainConfig

SCHEMA_VERSION = 1
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"strategy", "bp_space", "L", "H", "seed"}


def parse_setting(item):
    if isinstance(item, str):
        parts = item.replace(" ", "").split("-")
    elif isinstance(item, (list, tuple)):
        parts = list(item)
    elif isinstance(item, dict):
        parts = [item.get("L"), item.get("H")]
    else:
        raise ConfigInvalid(f"cannot read setting {item!r}")
    try:
        L, H = (int(p) for p in parts)
    except (TypeError, ValueError):
        raise ConfigInvalid(f"setting {item!r} must be 'L-H'") from None
    if L < 2 or H < 1:
        raise ConfigInvalid(f"setting {item!r} needs L >= 2 and H >= 1")
    return L, H


@dataclass
class ExperimentConfig:
    name: str = "dataset"
    dataset: dict = field(default_factory=lambda: {"synthetic": {"kind": "two_cluster"}})
    split: dict = field(default_factory=dict)
    settings: list = field(default_factory=lambda: [(40, 10)])
    cells: list = field(default_factory=lambda: [("instance", "normalized")])
    seeds: list = field(default_factory=lambda: [0])
    training: dict = field(default_factory=dict)
    shift: dict = field(default_factory=dict)
    out: str = "results"
    base_dir: str = "."
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigInvalid(f"unsupported schema_version {self.schema_version!r}")
        if not self.settings:
            raise ConfigInvalid("settings must not be empty")
        if not self.cells:
            raise ConfigInvalid("cells must not be empty")
        if not self.seeds:
            raise ConfigInvalid("seeds must not be empty")
        self.settings = [parse_setting(s) for s in self.settings]
        cells = []
        for c in self.cells:
            strategy, bp = (c.get("strategy"), c.get("bp_space", "data")) if isinstance(c, dict) else c
            if strategy not in KINDS:
                raise ConfigInvalid(f"unknown strategy {strategy!r}")
            if bp not in BP_SPACES:
                raise ConfigInvalid(f"unknown bp_space {bp!r}")
            if bp == "normalized" and strategy not in INSTANCE_KINDS:
                raise ConfigInvalid(f"normalized BP needs an instance strategy, got {strategy!r}")
            cells.append((str(strategy), str(bp)))
        if len(set(cells)) != len(cells):
            raise ConfigInvalid("duplicate cells")
        self.cells = cells
        try:
            self.seeds = [int(s) for s in self.seeds]
        except (TypeError, ValueError):
            raise ConfigInvalid("seeds must be integers") from None
        unknown = set(self.training) - _TRAIN_KEYS
        if unknown:
            raise ConfigInvalid(f"unknown training keys: {sorted(unknown)}")
        if ("path" in self.dataset) == ("synthetic" in self.dataset):
            raise ConfigInvalid("dataset needs exactly one of 'path' or 'synthetic'")
        if "cmin" in (c[0] for c in self.cells) and "path" in self.dataset and "labels" not in self.dataset:
            raise ConfigInvalid("cmin cells need dataset.labels for a CSV dataset")
        frac = self.split.get("period_fractions", (0.6, 0.2, 0.2))
        if len(frac) != 3 or any(f <= 0 for f in frac) or abs(sum(frac) - 1.0) > 1e-9:
            raise ConfigInvalid("split.period_fractions must be three positive numbers summing to 1")
        if not 0.0 < float(self.split.get("user_out_fraction", 0.2)) < 1.0:
            raise ConfigInvalid("split.user_out_fraction must be in (0, 1)")

    # ------------------------------------------------------------------ #

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigInvalid("config must be a mapping")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d, base_dir=str(base_dir))
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigInvalid(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
        try:
            d = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigInvalid(f"invalid YAML in {path}: {exc}") from None
        return cls.from_dict(d or {}, base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version, "name": self.name, "dataset": self.dataset,
            "split": self.split, "settings": [f"{L}-{H}" for L, H in self.settings],
            "cells": [{"strategy": s, "bp_space": b} for s, b in self.cells],
            "seeds": list(self.seeds), "training": self.training, "shift": self.shift, "out": self.out,
        }

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def train_config(self, L, H, strategy, bp_space, seed) -> TrainConfig:
        opts = dict(self.training)
        if "eval_splits" in opts:
            opts["eval_splits"] = tuple(opts["eval_splits"])
        try:
            return TrainConfig(strategy=strategy, bp_space=bp_space, L=L, H=H, seed=seed, **opts)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from None

    def split_kwargs(self) -> dict:
        return {
            "user_out_fraction": float(self.split.get("user_out_fraction", 0.2)),
            "period_fractions": tuple(float(f) for f in self.split.get("period_fractions", (0.6, 0.2, 0.2))),
            "seed": int(self.split.get("seed", 0)),
        }


def synthetic_spec(d: dict, seed=None) -> S.SyntheticSpec:
    """Build a :class:`SyntheticSpec` from the ``dataset.synthetic`` section."""
    d = dict(d)
    kind = d.pop("kind", "two_cluster")
    if seed is not None:
        d["seed"] = seed
    try:
        if kind == "two_cluster":
            return S.two_cluster_spec(**d)
        if kind == "heterogeneous":
            return S.heterogeneous_spec(**d)
        if kind == "custom":
            return S.SyntheticSpec.from_dict(d)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigInvalid(f"bad synthetic dataset section: {exc}") from None
    raise ConfigInvalid(f"unknown synthetic kind {kind!r}")


def load_dataset(config: ExperimentConfig):
    """Read or generate the dataset; returns ``(dataset, labels or None)`` with exclusions applied."""
    ds_cfg = config.dataset
    if "synthetic" in ds_cfg:
        dataset, labels = S.generate_dataset(synthetic_spec(ds_cfg["synthetic"]))
    else:
        dataset = D.read_csv(config.resolve(ds_cfg["path"]))
        labels = None
        if "labels" in ds_cfg:
            try:
                labels = S.read_labels(config.resolve(ds_cfg["labels"]))
            except (OSError, KeyError) as exc:
                raise D.DataUnreadable(f"cannot read labels: {exc}") from None
    exclude = [str(u) for u in ds_cfg.get("exclude_users", [])]
    if exclude:
        dataset = dataset.exclude_users(exclude)
    return dataset, labels
