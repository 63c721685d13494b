"""Training and evaluation of normalized forecasting pipelines.

Pipeline for a look-back ``x``::

    z    = (x - shift) / scale                 # strategy-specific
    x~   = gamma * z + nu                      # input affine (revin / cmin)
    f    = model(x~)
    out  = alpha * (f - nu) / gamma + beta     # output affine
    y^   = scale * out + shift                 # denormalization

revin ties ``gamma, nu`` to its ``alpha, beta`` and uses an identity output
layer; cmin keeps four parameters per cluster. Losses are computed either on
``y^`` against ``y`` ("data" space, standard backpropagation) or on ``out``
against ``(y - shift) / scale`` ("normalized" space). Gradients reach every
occurrence of the affine parameters (input and output side).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import data as D
from .exceptions import ConfigInvalid, InconsistentPipeline, MissingContext
from .forecaster import (
    AdamState,
    _array_from_json,
    _array_to_json,
    adam_step,
    backward,
    forward,
    init_params,
    moving_average_matrix,
)
from .normalization import (
    DEFAULT_EPSILON,
    INSTANCE_KINDS,
    KINDS,
    AffineParams,
    CminParams,
    InstanceStats,
    NormStrategy,
    WindowNormalizer,
    _cluster_params,
    _shift_scale,
    denormalize,
)

BP_SPACES = ("data", "normalized")
EVAL_SPLITS = ("Valid1", "Valid2", "Valid3", "Test1", "Test2")


def compute_loss(y_model, y, stats: InstanceStats | None, strategy: NormStrategy, bp_space: str,
                 context=None, cluster=None) -> float:
    """Squared-error loss of one window in the chosen space.

    ``context`` defaults to ``stats`` (instance kinds). In the normalized space
    the prediction is taken after the inverse affine layer and compared with
    the target expressed through the same shift/scale.
    """
    if bp_space not in BP_SPACES:
        raise InconsistentPipeline(f"unknown bp_space {bp_space!r}")
    context = stats if context is None else context
    if strategy.kind in INSTANCE_KINDS and not isinstance(context, InstanceStats):
        raise InconsistentPipeline(f"{strategy.kind} needs the look-back's InstanceStats")
    y = np.asarray(y, dtype=float)
    y_hat = denormalize(y_model, strategy, context, cluster)
    if bp_space == "data":
        return float(np.mean((y_hat - y) ** 2))
    shift, scale = _shift_scale(strategy, context)
    return float(np.mean(((y_hat - shift) / scale - (y - shift) / scale) ** 2))


# --------------------------------------------------------------------------- #
# Estimator
# --------------------------------------------------------------------------- #

class NormalizedForecaster(RegressorMixin, BaseEstimator):
    """Normalization strategy + linear forecaster trained end to end.

    Parameters
    ----------
    strategy : str, default="instance"
        Normalization kind (see :mod:`revnorm.normalization`).
    bp_space : {"data", "normalized"}, default="normalized"
        Where the training loss is computed. ``"normalized"`` requires an
        instance kind (instance, revin, cmin).
    model : {"linear", "dlinear"}, default="linear"
    ma_kernel : int, default=25
        DLinear moving-average width (clipped to the largest odd value <= L).
    epsilon : float, default=1e-6
    lr, beta1, beta2, eps_opt : float
        Adam settings.
    batch_size : int, default=64
    epochs : int, default=200
        Passes over the training windows in :meth:`fit`.
    cmin_init : bool, default=True
        Initialize cmin output affines from training modulations.
    learn_affine : bool, default=True
        Train revin / cmin affine parameters.
    seed : int, default=0
    """

    def __init__(self, strategy="instance", bp_space="normalized", model="linear", ma_kernel=25,
                 epsilon=DEFAULT_EPSILON, lr=1e-3, beta1=0.9, beta2=0.999, eps_opt=1e-8,
                 batch_size=64, epochs=200, cmin_init=True, learn_affine=True, seed=0):
        self.strategy = strategy
        self.bp_space = bp_space
        self.model = model
        self.ma_kernel = ma_kernel
        self.epsilon = epsilon
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps_opt = eps_opt
        self.batch_size = batch_size
        self.epochs = epochs
        self.cmin_init = cmin_init
        self.learn_affine = learn_affine
        self.seed = seed

    # -- setup --------------------------------------------------------------

    def _validate(self):
        if self.strategy not in KINDS:
            raise ConfigInvalid(f"unknown strategy {self.strategy!r}")
        if self.bp_space not in BP_SPACES:
            raise ConfigInvalid(f"unknown bp_space {self.bp_space!r}")
        if self.bp_space == "normalized" and self.strategy not in INSTANCE_KINDS:
            raise InconsistentPipeline("normalized backpropagation needs an instance strategy "
                                       f"(instance, revin, cmin), got {self.strategy!r}")
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size must be >= 1")

    def initialize(self, X, Y, users=None, clusters=None, stats_X=None, stats_users=None):
        """Fit normalization statistics and draw initial weights without training.

        ``stats_X`` / ``stats_users`` override the windows used for global or
        per-user statistics (defaults to ``X`` / ``users``).
        """
        self._validate()
        X = check_array(X)
        Y = check_array(Y, ensure_2d=False).reshape(len(X), -1)
        L, H = X.shape[1], Y.shape[1]
        self.normalizer_ = WindowNormalizer(self.strategy, self.epsilon, cmin_init=self.cmin_init)
        sx = X if stats_X is None else check_array(stats_X)
        su = users if stats_users is None else stats_users
        if self.strategy == "cmin":
            self.normalizer_.fit(X, Y, clusters=clusters)
        else:
            self.normalizer_.fit(sx, users=su)
        rng = np.random.default_rng([self.seed, 0])
        params = init_params(self.model, L, H, rng)
        if self.strategy == "revin":
            params["revin_alpha"] = np.asarray(1.0)
            params["revin_beta"] = np.asarray(0.0)
        elif self.strategy == "cmin":
            table = self.normalizer_.strategy_.clusters
            self.clusters_ = tuple(sorted(table))
            params["cmin_gamma"] = np.array([table[c].gamma for c in self.clusters_])
            params["cmin_nu"] = np.array([table[c].nu for c in self.clusters_])
            params["cmin_alpha"] = np.array([table[c].alpha for c in self.clusters_])
            params["cmin_beta"] = np.array([table[c].beta for c in self.clusters_])
        self.params_ = params
        self.ma_matrix_ = (moving_average_matrix(L, min(self.ma_kernel, L - (L + 1) % 2))
                           if self.model == "dlinear" else None)
        self.adam_ = AdamState(self.lr, self.beta1, self.beta2, self.eps_opt)
        self.n_features_in_ = L
        self.n_outputs_ = H
        self.loss_curve_ = []
        self._sync_normalizer()
        return self

    def _cluster_index(self, clusters, n):
        if clusters is None:
            raise MissingContext("cmin needs cluster labels")
        lookup = {c: i for i, c in enumerate(self.clusters_)}
        try:
            return np.array([lookup[str(c)] for c in clusters], dtype=int)
        except KeyError as exc:
            raise MissingContext(f"no cmin parameters for cluster {exc.args[0]!r}") from None

    def _affine(self, n, clusters):
        p = self.params_
        ones, zeros = np.ones((n, 1)), np.zeros((n, 1))
        if self.strategy == "revin":
            return p["revin_alpha"] * ones, p["revin_beta"] * ones, ones, zeros, None
        if self.strategy == "cmin":
            idx = self._cluster_index(clusters, n)
            return (p["cmin_gamma"][idx, None], p["cmin_nu"][idx, None],
                    p["cmin_alpha"][idx, None], p["cmin_beta"][idx, None], idx)
        return ones, zeros, ones, zeros, None

    def _sync_normalizer(self):
        p = self.params_
        if self.strategy == "revin":
            self.normalizer_.set_affine(float(p["revin_alpha"]), float(p["revin_beta"]))
        elif self.strategy == "cmin":
            table = {
                c: CminParams(AffineParams(float(p["cmin_gamma"][i]), float(p["cmin_nu"][i])),
                              AffineParams(float(p["cmin_alpha"][i]), float(p["cmin_beta"][i])), c)
                for i, c in enumerate(self.clusters_)
            }
            self.normalizer_.set_affine(clusters=table)

    # -- forward / backward --------------------------------------------------

    def _forward(self, X, users, clusters):
        shift, scale = self.normalizer_.shift_scale(X, users)
        gamma, nu, alpha, beta, idx = self._affine(X.shape[0], clusters)
        z = (X - shift) / scale
        Xt = gamma * z + nu
        F = forward(self.params_, Xt, self.ma_matrix_)
        out = alpha * (F - nu) / gamma + beta
        return dict(shift=shift, scale=scale, gamma=gamma, nu=nu, alpha=alpha, beta=beta,
                    idx=idx, z=z, Xt=Xt, F=F, out=out)

    def loss_and_gradients(self, X, Y, users=None, clusters=None):
        """Training loss and gradients of every trainable parameter."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        c = self._forward(X, users, clusters)
        n_el = Y.size
        if self.bp_space == "data":
            resid = c["scale"] * c["out"] + c["shift"] - Y
            G_out = 2.0 * resid * c["scale"] / n_el
        else:
            resid = c["out"] - (Y - c["shift"]) / c["scale"]
            G_out = 2.0 * resid / n_el
        loss = float(np.mean(resid ** 2))
        gamma, nu, alpha = c["gamma"], c["nu"], c["alpha"]
        G_F = G_out * alpha / gamma
        grads, dXt = backward(self.params_, c["Xt"], G_F, self.ma_matrix_)
        if self.strategy in ("revin", "cmin") and self.learn_affine:
            centred = c["F"] - nu
            d_gamma = -(G_out * alpha * centred).sum(axis=1) / gamma[:, 0] ** 2 + (dXt * c["z"]).sum(axis=1)
            d_nu = -(G_out * alpha).sum(axis=1) / gamma[:, 0] + dXt.sum(axis=1)
            if self.strategy == "revin":
                grads["revin_alpha"] = np.asarray(d_gamma.sum())
                grads["revin_beta"] = np.asarray(d_nu.sum())
            else:
                k = len(self.clusters_)
                d_alpha = (G_out * centred).sum(axis=1) / gamma[:, 0]
                d_beta = G_out.sum(axis=1)
                for name, g in (("cmin_gamma", d_gamma), ("cmin_nu", d_nu),
                                ("cmin_alpha", d_alpha), ("cmin_beta", d_beta)):
                    grads[name] = np.bincount(c["idx"], weights=g, minlength=k)
        return loss, grads

    # -- sklearn API ----------------------------------------------------------

    def fit(self, X, Y, users=None, clusters=None):
        self.initialize(X, Y, users, clusters)
        for _ in range(self.epochs):
            self.partial_fit(X, Y, users, clusters)
        return self

    def partial_fit(self, X, Y, users=None, clusters=None):
        """One shuffled pass of minibatch Adam steps over ``(X, Y)``."""
        if not hasattr(self, "params_"):
            self.initialize(X, Y, users, clusters)
        X = check_array(X)
        Y = check_array(Y, ensure_2d=False).reshape(len(X), -1)
        users = None if users is None else np.asarray(users, dtype=object)
        clusters = None if clusters is None else np.asarray(clusters, dtype=object)
        order = np.random.default_rng([self.seed, 1, self.adam_.step_count]).permutation(len(X))
        losses = []
        for i in range(0, len(X), self.batch_size):
            idx = order[i: i + self.batch_size]
            loss, grads = self.loss_and_gradients(
                X[idx], Y[idx],
                None if users is None else users[idx],
                None if clusters is None else clusters[idx],
            )
            self.params_, self.adam_ = adam_step(self.params_, grads, self.adam_)
            losses.append(loss)
        self.loss_curve_.append(float(np.mean(losses)) if losses else float("nan"))
        self._sync_normalizer()
        return self

    def predict(self, X, users=None, clusters=None):
        """Denormalized forecasts."""
        check_is_fitted(self, "params_")
        X = check_array(X)
        c = self._forward(X, users, clusters)
        return c["scale"] * c["out"] + c["shift"]

    def predict_normalized(self, X, users=None, clusters=None):
        """Forecasts after the inverse affine layer, before denormalization."""
        check_is_fitted(self, "params_")
        return self._forward(check_array(X), users, clusters)["out"]

    # -- persistence ------------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self, "params_")
        return {
            "hyperparameters": self.get_params(),
            "shapes": {"L": self.n_features_in_, "H": self.n_outputs_},
            "params": {k: _array_to_json(v) for k, v in sorted(self.params_.items())},
            "adam": self.adam_.to_dict(),
            "normalizer": self.normalizer_.to_dict(),
            "clusters": list(getattr(self, "clusters_", ())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizedForecaster":
        self = cls(**d["hyperparameters"])
        self._validate()
        L, H = d["shapes"]["L"], d["shapes"]["H"]
        self.params_ = {k: _array_from_json(v) for k, v in d["params"].items()}
        self.adam_ = AdamState.from_dict(d["adam"])
        self.normalizer_ = WindowNormalizer.from_dict(d["normalizer"])
        self.ma_matrix_ = (moving_average_matrix(L, min(self.ma_kernel, L - (L + 1) % 2))
                           if self.model == "dlinear" else None)
        if d.get("clusters"):
            self.clusters_ = tuple(d["clusters"])
        self.n_features_in_, self.n_outputs_ = L, H
        self.loss_curve_ = []
        return self

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "NormalizedForecaster":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------- #
# Metrics
# --------------------------------------------------------------------------- #

@dataclass
class MetricTable:
    """``values[(split, metric)]`` with metric in {"MSE", "nMSE"}, plus window counts."""

    values: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        out = {}
        for (split, metric), v in sorted(self.values.items()):
            out.setdefault(split, {})[metric] = v
        for split, n in sorted(self.counts.items()):
            out.setdefault(split, {})["n_windows"] = n
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricTable":
        table = cls()
        for split, metrics in d.items():
            for metric, v in metrics.items():
                if metric == "n_windows":
                    table.counts[split] = v
                else:
                    table.values[(split, metric)] = v
        return table


def window_errors(model, X, Y, users=None, clusters=None, epsilon=DEFAULT_EPSILON):
    """Per-window data-space and normalized-space squared errors plus the look-back scale."""
    Y_hat = model.predict(X, users=users, clusters=clusters)
    mu = X.mean(axis=1, keepdims=True)
    scale = X.std(axis=1, ddof=1, keepdims=True) + epsilon
    mse = np.mean((Y_hat - Y) ** 2, axis=1)
    nmse = np.mean(((Y_hat - mu) / scale - (Y - mu) / scale) ** 2, axis=1)
    return mse, nmse, scale[:, 0]


def _split_arrays(dataset, split, name, spec, labels=None, stride=None):
    pairs = D.enumerate_windows(dataset, split, name, spec, stride)
    X, Y, users = D.stack_pairs(pairs)
    clusters = None if labels is None else np.array([labels.get(u) for u in users], dtype=object)
    return X, Y, users, clusters


def evaluate(model, dataset, split, spec, splits=EVAL_SPLITS, labels=None,
             epsilon=DEFAULT_EPSILON) -> MetricTable:
    """MSE / nMSE over every non-overlapping (stride H) usable window of each split."""
    table = MetricTable()
    for name in splits:
        X, Y, users, clusters = _split_arrays(dataset, split, name, spec, labels)
        mse, nmse, _ = window_errors(model, X, Y, users, clusters, epsilon)
        table.values[(name, "MSE")] = float(mse.mean())
        table.values[(name, "nMSE")] = float(nmse.mean())
        table.counts[name] = int(len(X))
    return table


# --------------------------------------------------------------------------- #
# Training loop
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "instance"
    bp_space: str = "normalized"
    L: int = 40
    H: int = 10
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    model: str = "linear"
    ma_kernel: int = 25
    epsilon: float = DEFAULT_EPSILON
    samples_per_epoch: int = 1024
    validate_every: int = 0
    selection_split: str = "Valid1"
    eval_splits: tuple = EVAL_SPLITS
    cmin_init: bool = True
    learn_affine: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigInvalid("epochs must be >= 0")
        if self.strategy not in KINDS:
            raise ConfigInvalid(f"unknown strategy {self.strategy!r}")
        if self.bp_space not in BP_SPACES:
            raise ConfigInvalid(f"unknown bp_space {self.bp_space!r}")
        if self.bp_space == "normalized" and self.strategy not in INSTANCE_KINDS:
            raise InconsistentPipeline(f"normalized backpropagation needs an instance strategy, "
                                       f"got {self.strategy!r}")
        if self.strategy == "cmin" and self.H < 2:
            raise ConfigInvalid("cmin initialization needs a horizon of at least 2 steps")

    @property
    def spec(self) -> D.WindowSpec:
        return D.WindowSpec(self.L, self.H)

    @property
    def cadence(self) -> int:
        return self.validate_every or max(1, self.epochs // 20)

    @classmethod
    def reference_settings(cls, **overrides) -> "TrainConfig":
        """Full-scale optimization settings (1200 epochs, lr 1e-5, batch 256)."""
        base = dict(epochs=1200, lr=1e-5, batch_size=256)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_splits"] = list(self.eval_splits)
        return d

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass
class TrainResult:
    model: NormalizedForecaster
    metrics: MetricTable
    history: list
    best_epoch: int = 0

    def history_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "val_mse", "val_nmse"])
            for row in self.history:
                writer.writerow([row["epoch"]] + ["" if row[k] is None else repr(row[k])
                                                  for k in ("loss", "val_mse", "val_nmse")])


def _labels_for(users, labels):
    if labels is None:
        return None
    try:
        return np.array([labels[u] for u in users], dtype=object)
    except KeyError as exc:
        raise ConfigInvalid(f"no cluster label for user {exc.args[0]!r}") from None


def _stats_windows(dataset, split, spec):
    """Windows used for global / per-user statistics: training dates of every user."""
    stride = spec.L
    pairs = D.enumerate_windows(dataset, split, "Train", spec, stride)
    try:
        pairs += D.enumerate_windows(dataset, split, "Valid2", spec, stride)
    except D.NoUsableWindows:
        pass
    return pairs


def train(config: TrainConfig, dataset, split, labels=None) -> TrainResult:
    """Train one pipeline; returns the model restored at its best validation checkpoint."""
    spec = config.spec
    if config.strategy == "cmin" and labels is None:
        raise ConfigInvalid("cmin needs cluster labels")
    est = NormalizedForecaster(
        config.strategy, config.bp_space, config.model, config.ma_kernel, config.epsilon,
        config.lr, batch_size=config.batch_size, epochs=config.epochs,
        cmin_init=config.cmin_init, learn_affine=config.learn_affine, seed=config.seed,
    )
    init_pairs = D.sample_windows(dataset, split, "Train", spec, config.samples_per_epoch,
                                  seed=[config.seed, 2 ** 31])
    X0, Y0, u0 = D.stack_pairs(init_pairs)
    # statistics for global strategies only ever see training dates; for
    # per-user statistics the new users' own training-date history is included
    stats_pairs = _stats_windows(dataset, split, spec)
    SX, _, SU = D.stack_pairs(stats_pairs)
    if config.strategy in ("standard", "relative", "minmax"):
        train_rows = np.isin(SU, np.asarray(split.users_in, dtype=object))
        SX, SU = SX[train_rows], SU[train_rows]
    est.initialize(X0, Y0, u0, _labels_for(u0, labels), stats_X=SX, stats_users=SU)

    sel_metric = "nMSE" if config.bp_space == "normalized" else "MSE"
    val = _split_arrays(dataset, split, config.selection_split, spec, labels)
    history = []
    best = (math.inf, 0, _snapshot(est))
    for epoch in range(1, config.epochs + 1):
        pairs = D.sample_windows(dataset, split, "Train", spec, config.samples_per_epoch,
                                 seed=[config.seed, epoch])
        X, Y, users = D.stack_pairs(pairs)
        est.partial_fit(X, Y, users, _labels_for(users, labels))
        row = {"epoch": epoch, "loss": est.loss_curve_[-1], "val_mse": None, "val_nmse": None}
        if epoch % config.cadence == 0 or epoch == config.epochs:
            mse, nmse, _ = window_errors(est, *val, epsilon=config.epsilon)
            row["val_mse"], row["val_nmse"] = float(mse.mean()), float(nmse.mean())
            score = row["val_nmse"] if sel_metric == "nMSE" else row["val_mse"]
            if score < best[0]:
                best = (score, epoch, _snapshot(est))
        history.append(row)
    _restore(est, best[2])
    metrics = evaluate(est, dataset, split, spec, config.eval_splits, labels, config.epsilon)
    return TrainResult(est, metrics, history, best[1])


def _snapshot(est):
    return {k: np.array(v, copy=True) for k, v in est.params_.items()}


def _restore(est, params):
    est.params_ = {k: np.array(v, copy=True) for k, v in params.items()}
    est._sync_normalizer()
