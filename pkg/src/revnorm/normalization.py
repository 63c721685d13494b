"""Reversible normalization strategies for univariate forecasting windows.

Every strategy maps a look-back ``x`` to ``(x - shift) / scale``, optionally
followed by an input affine layer, and inverts that map on the model output:

=================  ==================  ================  =====================
kind               shift               scale             affine
=================  ==================  ================  =====================
none               0                   1                 -
standard           mu (train)          sigma + eps       -
per_user_standard  mu_user             sigma_user + eps  -
minmax             m (train)           M - m + eps       -
relative           0                   mu + eps          -
instance           mu_x                sigma_x + eps     -
revin              mu_x                sigma_x + eps     alpha * z + beta
cmin               mu_x                sigma_x + eps     gamma * z + nu (in),
                                                         alpha, beta (out)
=================  ==================  ================  =====================

Variances use the unbiased ``n - 1`` denominator. Denormalization multiplies
by the same ``scale`` used on the way in, so round trips are exact.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateDataWarning, EmptyCluster, MissingContext, ZeroScale

KINDS = ("none", "standard", "minmax", "relative", "per_user_standard", "instance", "revin", "cmin")
INSTANCE_KINDS = ("instance", "revin", "cmin")
DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class GlobalStats:
    mu: float
    sigma: float


@dataclass(frozen=True)
class InstanceStats:
    mu_x: float
    sigma_x: float


@dataclass(frozen=True)
class MinMaxParams:
    m: float
    M: float

    def __post_init__(self):
        if self.M < self.m:
            raise ValueError("MinMaxParams requires M >= m")


@dataclass(frozen=True)
class AffineParams:
    alpha: float = 1.0
    beta: float = 0.0


@dataclass(frozen=True)
class CminParams:
    """Per-cluster parameters: ``input_affine`` holds (gamma, nu), ``output_affine`` (alpha, beta)."""

    input_affine: AffineParams = AffineParams()
    output_affine: AffineParams = AffineParams()
    cluster: str = ""

    @property
    def gamma(self):
        return self.input_affine.alpha

    @property
    def nu(self):
        return self.input_affine.beta

    @property
    def alpha(self):
        return self.output_affine.alpha

    @property
    def beta(self):
        return self.output_affine.beta


@dataclass(frozen=True)
class Modulations:
    delta: float
    lam: float


@dataclass(frozen=True)
class NormStrategy:
    kind: str = "instance"
    epsilon: float = DEFAULT_EPSILON
    learnable_affine: bool = False
    affine: AffineParams = AffineParams()
    clusters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown normalization kind {self.kind!r}; expected one of {KINDS}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be strictly positive")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "learnable_affine": self.learnable_affine,
            "alpha": self.affine.alpha,
            "beta": self.affine.beta,
            "clusters": {
                str(c): {"gamma": p.gamma, "nu": p.nu, "alpha": p.alpha, "beta": p.beta}
                for c, p in sorted(self.clusters.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStrategy":
        clusters = {
            str(c): CminParams(AffineParams(p["gamma"], p["nu"]), AffineParams(p["alpha"], p["beta"]), str(c))
            for c, p in d.get("clusters", {}).items()
        }
        return cls(d["kind"], float(d.get("epsilon", DEFAULT_EPSILON)), bool(d.get("learnable_affine", False)),
                   AffineParams(float(d.get("alpha", 1.0)), float(d.get("beta", 0.0))), clusters)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NormStrategy":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------- #
# Statistics
# --------------------------------------------------------------------------- #

def _lookbacks(windows):
    return [np.asarray(getattr(w, "x", w), dtype=float) for w in windows]


def fit_global_stats(train_windows, epsilon=DEFAULT_EPSILON) -> GlobalStats:
    """Grand mean and ``(NL - 1)``-denominator std over all look-back points."""
    values = np.concatenate([x.ravel() for x in _lookbacks(train_windows)]) if len(train_windows) else np.zeros(0)
    if values.size < 2:
        raise ValueError("fit_global_stats needs at least 2 points")
    mu = float(values.mean())
    sigma = float(np.sqrt(np.sum((values - mu) ** 2) / (values.size - 1)))
    if sigma == 0.0:
        warnings.warn("all training points are identical; sigma set to epsilon", DegenerateDataWarning)
        sigma = epsilon
    return GlobalStats(mu, sigma)


def fit_minmax(train_windows) -> MinMaxParams:
    values = np.concatenate([x.ravel() for x in _lookbacks(train_windows)])
    return MinMaxParams(float(values.min()), float(values.max()))


def instance_stats(x) -> InstanceStats:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("instance statistics need at least 2 points")
    return InstanceStats(float(x.mean()), float(x.std(ddof=1)))


def batch_instance_stats(X):
    """Row-wise ``(mu_x, sigma_x)`` for a ``(n, L)`` array."""
    X = np.asarray(X, dtype=float)
    return X.mean(axis=1), X.std(axis=1, ddof=1)


# --------------------------------------------------------------------------- #
# Single-window transforms
# --------------------------------------------------------------------------- #

def _shift_scale(strategy: NormStrategy, context):
    eps = strategy.epsilon
    kind = strategy.kind
    if kind == "none":
        return 0.0, 1.0
    if context is None:
        raise MissingContext(f"strategy {kind!r} requires statistics")
    if kind in ("standard", "per_user_standard"):
        if not isinstance(context, GlobalStats):
            raise MissingContext(f"{kind} needs GlobalStats, got {type(context).__name__}")
        return context.mu, context.sigma + eps
    if kind == "minmax":
        if not isinstance(context, MinMaxParams):
            raise MissingContext(f"minmax needs MinMaxParams, got {type(context).__name__}")
        return context.m, context.M - context.m + eps
    if kind == "relative":
        if not isinstance(context, GlobalStats):
            raise MissingContext(f"relative needs GlobalStats, got {type(context).__name__}")
        if context.mu <= 0:
            warnings.warn("relative normalization with non-positive mean", RuntimeWarning)
        return 0.0, context.mu + eps
    if not isinstance(context, InstanceStats):
        raise MissingContext(f"{kind} needs InstanceStats, got {type(context).__name__}")
    return context.mu_x, context.sigma_x + eps


def _cluster_params(strategy: NormStrategy, cluster) -> CminParams:
    try:
        return strategy.clusters[str(cluster)]
    except KeyError:
        raise MissingContext(f"no cmin parameters for cluster {cluster!r}") from None


def normalize(x, strategy: NormStrategy, context=None, cluster=None) -> np.ndarray:
    """Normalize a look-back window.

    For instance kinds a missing ``context`` is computed from ``x`` itself.
    """
    x = np.asarray(x, dtype=float)
    if context is None and strategy.kind in INSTANCE_KINDS:
        context = instance_stats(x)
    shift, scale = _shift_scale(strategy, context)
    z = (x - shift) / scale
    if strategy.kind == "revin":
        return strategy.affine.alpha * z + strategy.affine.beta
    if strategy.kind == "cmin":
        p = _cluster_params(strategy, cluster)
        return p.gamma * z + p.nu
    return z


def denormalize(y_model, strategy: NormStrategy, context=None, cluster=None) -> np.ndarray:
    """Map a model output back to data space using the look-back's context."""
    y_model = np.asarray(y_model, dtype=float)
    shift, scale = _shift_scale(strategy, context)
    out = y_model
    if strategy.kind == "revin":
        if strategy.affine.alpha == 0:
            raise ZeroScale("revin alpha is zero")
        out = (y_model - strategy.affine.beta) / strategy.affine.alpha
    elif strategy.kind == "cmin":
        p = _cluster_params(strategy, cluster)
        if p.gamma == 0:
            raise ZeroScale("cmin gamma is zero")
        out = p.alpha * (y_model - p.nu) / p.gamma + p.beta
    return scale * out + shift


def normalize_target(y, stats: InstanceStats, epsilon=DEFAULT_EPSILON) -> np.ndarray:
    """Horizon in the look-back's normalized frame (stats must come from the paired x)."""
    return (np.asarray(y, dtype=float) - stats.mu_x) / (stats.sigma_x + epsilon)


def modulations(x, y, epsilon=DEFAULT_EPSILON, ddof=1) -> Modulations:
    """Horizon statistics relative to the look-back: ``(delta, lambda)``.

    ``delta = (mu_y - mu_x) / (sigma_x + eps)`` and
    ``lambda = sigma_y / (sigma_x + eps)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or y.size < 2:
        raise ValueError("modulations need at least 2 points in x and y")
    sx = x.std(ddof=ddof) + epsilon
    return Modulations(float((y.mean() - x.mean()) / sx), float(y.std(ddof=ddof) / sx))


def batch_modulations(X, Y, epsilon=DEFAULT_EPSILON, ddof=1):
    """Row-wise ``(delta, lambda)`` arrays."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[-1] < 2 or Y.shape[-1] < 2:
        raise ValueError("modulations need at least 2 points in x and y")
    sx = X.std(axis=1, ddof=ddof) + epsilon
    return (Y.mean(axis=1) - X.mean(axis=1)) / sx, Y.std(axis=1, ddof=ddof) / sx


def cmin_init(cluster_pairs: dict, epsilon=DEFAULT_EPSILON) -> dict:
    """Initial cmin parameters per cluster from training pairs.

    ``(gamma, nu) = (1, 0)`` and ``(beta, alpha)`` are the cluster means of
    the modulations ``(delta, lambda)``.
    """
    params = {}
    for cluster, pairs in cluster_pairs.items():
        if len(pairs) == 0:
            raise EmptyCluster(f"cluster {cluster!r} has no training pairs")
        X = np.stack([np.asarray(p.x, dtype=float) for p in pairs])
        Y = np.stack([np.asarray(p.y, dtype=float) for p in pairs])
        delta, lam = batch_modulations(X, Y, epsilon)
        params[str(cluster)] = CminParams(
            AffineParams(1.0, 0.0), AffineParams(float(lam.mean()), float(delta.mean())), str(cluster)
        )
    return params


# --------------------------------------------------------------------------- #
# Estimator
# --------------------------------------------------------------------------- #

class WindowNormalizer(TransformerMixin, BaseEstimator):
    """Batch transformer over look-back windows (rows of ``X``).

    Parameters
    ----------
    kind : str, default="instance"
        One of ``none, standard, minmax, relative, per_user_standard,
        instance, revin, cmin``.
    epsilon : float, default=1e-6
        Added to every denominator.
    alpha, beta : float
        Initial revin affine parameters.
    cmin_init : bool, default=True
        Initialize cmin output affines from cluster modulations when ``fit``
        receives horizons; identity parameters otherwise.

    Attributes
    ----------
    stats_ : GlobalStats
        Fitted for ``standard`` and ``relative``.
    user_stats_ : dict
        Fitted for ``per_user_standard``.
    minmax_ : MinMaxParams
    strategy_ : NormStrategy
        Current strategy including learned affine / cluster parameters.
    """

    def __init__(self, kind="instance", epsilon=DEFAULT_EPSILON, alpha=1.0, beta=0.0, cmin_init=True):
        self.kind = kind
        self.epsilon = epsilon
        self.alpha = alpha
        self.beta = beta
        self.cmin_init = cmin_init

    def fit(self, X, y=None, users=None, clusters=None):
        X = check_array(X)
        if self.kind not in KINDS:
            raise ValueError(f"unknown normalization kind {self.kind!r}")
        self.n_features_in_ = X.shape[1]
        if self.kind in ("standard", "relative"):
            self.stats_ = fit_global_stats(X, self.epsilon)
        elif self.kind == "minmax":
            self.minmax_ = fit_minmax(X)
        elif self.kind == "per_user_standard":
            if users is None:
                raise MissingContext("per_user_standard needs user labels")
            users = np.asarray(users).astype(str)
            self.user_stats_ = {u: fit_global_stats(X[users == u], self.epsilon) for u in sorted(set(users))}
        clusters_table = {}
        if self.kind == "cmin":
            if clusters is None:
                raise MissingContext("cmin needs cluster labels")
            clusters = np.asarray(clusters).astype(str)
            if y is not None and self.cmin_init:
                from .data import WindowPair

                Y = check_array(y)
                grouped = {
                    c: [WindowPair(X[i], Y[i], "", 0) for i in np.flatnonzero(clusters == c)]
                    for c in sorted(set(clusters))
                }
                clusters_table = cmin_init(grouped, self.epsilon)
            else:
                clusters_table = {c: CminParams(cluster=c) for c in sorted(set(clusters))}
        self.strategy_ = NormStrategy(self.kind, self.epsilon, self.kind == "revin",
                                      AffineParams(self.alpha, self.beta), clusters_table)
        return self

    def update_user_stats(self, X, users):
        """Add per-user statistics for users not seen in ``fit`` (e.g. new users' history)."""
        check_is_fitted(self, "strategy_")
        users = np.asarray(users).astype(str)
        for u in sorted(set(users)):
            self.user_stats_[u] = fit_global_stats(X[users == u], self.epsilon)
        return self

    # -- internals shared with the training pipeline --------------------------

    def shift_scale(self, X, users=None):
        """Per-row ``(shift, scale)`` arrays of shape ``(n, 1)``."""
        check_is_fitted(self, "strategy_")
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        eps = self.epsilon
        kind = self.kind
        if kind == "none":
            shift, scale = np.zeros(n), np.ones(n)
        elif kind in ("standard",):
            shift, scale = np.full(n, self.stats_.mu), np.full(n, self.stats_.sigma + eps)
        elif kind == "relative":
            if self.stats_.mu <= 0:
                warnings.warn("relative normalization with non-positive mean", RuntimeWarning)
            shift, scale = np.zeros(n), np.full(n, self.stats_.mu + eps)
        elif kind == "minmax":
            m, M = self.minmax_.m, self.minmax_.M
            shift, scale = np.full(n, m), np.full(n, M - m + eps)
        elif kind == "per_user_standard":
            if users is None:
                raise MissingContext("per_user_standard needs user labels")
            try:
                st = [self.user_stats_[str(u)] for u in users]
            except KeyError as exc:
                raise MissingContext(f"no statistics for user {exc.args[0]!r}") from None
            shift = np.array([s.mu for s in st])
            scale = np.array([s.sigma for s in st]) + eps
        else:
            shift, sigma = batch_instance_stats(X)
            scale = sigma + eps
        return shift[:, None], scale[:, None]

    def affine_rows(self, n, clusters=None):
        """Per-row ``(gamma, nu, alpha, beta)`` arrays of shape ``(n, 1)``.

        The input layer is ``gamma * z + nu`` and the output layer
        ``alpha * (f - nu) / gamma + beta``; revin uses ``gamma = alpha`` and
        ``nu = beta`` with output ``(f - beta) / alpha``.
        """
        s = self.strategy_
        ones, zeros = np.ones((n, 1)), np.zeros((n, 1))
        if s.kind == "revin":
            a, b = s.affine.alpha, s.affine.beta
            return a * ones, b * ones, ones, zeros
        if s.kind == "cmin":
            if clusters is None:
                raise MissingContext("cmin needs cluster labels")
            ps = [_cluster_params(s, c) for c in clusters]
            col = lambda v: np.array(v, dtype=float)[:, None]  # noqa: E731
            return (col([p.gamma for p in ps]), col([p.nu for p in ps]),
                    col([p.alpha for p in ps]), col([p.beta for p in ps]))
        return ones, zeros, ones, zeros

    # -- public transforms ------------------------------------------------------

    def transform(self, X, users=None, clusters=None):
        X = check_array(X)
        shift, scale = self.shift_scale(X, users)
        gamma, nu, _, _ = self.affine_rows(X.shape[0], clusters)
        return gamma * (X - shift) / scale + nu

    def inverse_transform(self, F, X, users=None, clusters=None):
        """Denormalize model outputs ``F`` using their paired look-backs ``X``."""
        F = check_array(F)
        X = check_array(X)
        shift, scale = self.shift_scale(X, users)
        gamma, nu, alpha, beta = self.affine_rows(X.shape[0], clusters)
        if np.any(gamma == 0):
            raise ZeroScale("input affine scale is zero")
        if self.kind == "revin":
            out = (F - nu) / gamma
        else:
            out = alpha * (F - nu) / gamma + beta
        return scale * out + shift

    def transform_target(self, Y, X):
        """Horizons in the look-back's instance-normalized frame."""
        Y = check_array(Y)
        mu, sigma = batch_instance_stats(check_array(X))
        return (Y - mu[:, None]) / (sigma[:, None] + self.epsilon)

    def set_affine(self, alpha=None, beta=None, clusters=None):
        """Replace learned affine parameters (used by the trainer after each step)."""
        s = self.strategy_
        affine = AffineParams(s.affine.alpha if alpha is None else float(alpha),
                              s.affine.beta if beta is None else float(beta))
        self.strategy_ = NormStrategy(s.kind, s.epsilon, s.learnable_affine, affine,
                                      s.clusters if clusters is None else clusters)
        return self

    def to_dict(self) -> dict:
        check_is_fitted(self, "strategy_")
        d = {"strategy": self.strategy_.to_dict(), "params": self.get_params()}
        if hasattr(self, "stats_"):
            d["stats"] = asdict(self.stats_)
        if hasattr(self, "minmax_"):
            d["minmax"] = asdict(self.minmax_)
        if hasattr(self, "user_stats_"):
            d["user_stats"] = {u: asdict(s) for u, s in sorted(self.user_stats_.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WindowNormalizer":
        self = cls(**d["params"])
        self.strategy_ = NormStrategy.from_dict(d["strategy"])
        if "stats" in d:
            self.stats_ = GlobalStats(**d["stats"])
        if "minmax" in d:
            self.minmax_ = MinMaxParams(**d["minmax"])
        if "user_stats" in d:
            self.user_stats_ = {u: GlobalStats(**s) for u, s in d["user_stats"].items()}
        return self
