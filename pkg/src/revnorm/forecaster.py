"""Direct multi-step linear forecasters with analytic gradients and Adam.

``linear``:  F = X W_s^T + b
``dlinear``: F = trend(X) W_t^T + (X - trend(X)) W_s^T + b

where ``trend`` is a centred moving average with edge replication. Both are
linear in X, so the trend is applied as a fixed ``(L, L)`` matrix.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import BadKernel, ShapeMismatch

PARAM_NAMES = ("W_seasonal", "W_trend", "bias")


def _check_kernel(kernel, L):
    if kernel < 1 or kernel % 2 == 0 or kernel > L:
        raise BadKernel(f"moving-average kernel must be odd and in [1, {L}], got {kernel}")


def moving_average_decompose(x, kernel: int):
    """Split ``x`` into ``(trend, residual)`` with an edge-replicated moving average."""
    x = np.asarray(x, dtype=float)
    _check_kernel(kernel, x.shape[-1])
    half = kernel // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    padded = np.pad(x, pad, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel, axis=-1)
    trend = windows.mean(axis=-1)
    return trend, x - trend


def moving_average_matrix(L: int, kernel: int) -> np.ndarray:
    """Matrix ``M`` with ``trend = M @ x`` for the decomposition above."""
    _check_kernel(kernel, L)
    half = kernel // 2
    M = np.zeros((L, L))
    for i in range(L):
        for j in range(i - half, i + half + 1):
            M[i, min(max(j, 0), L - 1)] += 1.0 / kernel
    return M


def init_params(kind: str, L: int, H: int, rng) -> dict:
    """Weights i.i.d. uniform in +/- 1/L, zero bias."""
    if kind not in ("linear", "dlinear"):
        raise ValueError(f"unknown forecaster kind {kind!r}")
    params = {"W_seasonal": rng.uniform(-1.0 / L, 1.0 / L, size=(H, L))}
    if kind == "dlinear":
        params["W_trend"] = rng.uniform(-1.0 / L, 1.0 / L, size=(H, L))
    params["bias"] = np.zeros(H)
    return params


def _check_shapes(params, X):
    L = params["W_seasonal"].shape[1]
    if X.ndim != 2 or X.shape[1] != L:
        raise ShapeMismatch(f"expected inputs of length {L}, got shape {X.shape}")


def forward(params: dict, X, ma_matrix=None) -> np.ndarray:
    """Model output for a batch ``X`` of shape ``(n, L)`` (a single vector also works)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    _check_shapes(params, X)
    if "W_trend" in params:
        trend = X @ ma_matrix.T
        F = trend @ params["W_trend"].T + (X - trend) @ params["W_seasonal"].T
    else:
        F = X @ params["W_seasonal"].T
    F = F + params["bias"]
    return F[0] if single else F


def backward(params: dict, X, G, ma_matrix=None):
    """Parameter and input gradients given the upstream gradient ``G = dLoss/dF``."""
    X = np.asarray(X, dtype=float)
    grads = {"bias": G.sum(axis=0)}
    if "W_trend" in params:
        trend = X @ ma_matrix.T
        grads["W_trend"] = G.T @ trend
        grads["W_seasonal"] = G.T @ (X - trend)
        g_s = G @ params["W_seasonal"]
        dX = (G @ params["W_trend"] - g_s) @ ma_matrix + g_s
    else:
        grads["W_seasonal"] = G.T @ X
        dX = G @ params["W_seasonal"]
    return grads, dX


def mse_loss(F, T) -> float:
    return float(np.mean((F - T) ** 2))


def gradients(params: dict, X, T, ma_matrix=None):
    """Loss and exact gradients of the mean (over batch and horizon) squared error."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    F = forward(params, X, ma_matrix)
    G = 2.0 * (F - T) / F.size
    grads, _ = backward(params, X, G, ma_matrix)
    return mse_loss(F, T), grads


# --------------------------------------------------------------------------- #
# Adam
# --------------------------------------------------------------------------- #

@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps_opt": self.eps_opt,
            "step_count": self.step_count,
            "m": {k: _array_to_json(a) for k, a in sorted(self.m.items())},
            "v": {k: _array_to_json(a) for k, a in sorted(self.v.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(d["lr"], d["beta1"], d["beta2"], d["eps_opt"], int(d["step_count"]),
                   {k: _array_from_json(a) for k, a in d["m"].items()},
                   {k: _array_from_json(a) for k, a in d["v"].items()})


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are not modified."""
    t = state.step_count + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            if name in state.m:
                m_new[name], v_new[name] = state.m[name], state.v[name]
            continue
        if np.shape(g) != np.shape(p):
            raise ShapeMismatch(f"gradient for {name} has shape {np.shape(g)}, expected {np.shape(p)}")
        m = state.beta1 * state.m.get(name, np.zeros_like(p)) + (1.0 - state.beta1) * g
        v = state.beta2 * state.v.get(name, np.zeros_like(p)) + (1.0 - state.beta2) * g * g
        new_params[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps_opt)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(state.lr, state.beta1, state.beta2, state.eps_opt, t, m_new, v_new)


# --------------------------------------------------------------------------- #
# Serialization helpers
# --------------------------------------------------------------------------- #

def _array_to_json(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}


def _array_from_json(d) -> np.ndarray:
    if isinstance(d, (int, float)):
        return np.asarray(float(d))
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


# --------------------------------------------------------------------------- #
# Estimator
# --------------------------------------------------------------------------- #

class LinearForecaster(RegressorMixin, BaseEstimator):
    """Linear / DLinear direct multi-step regressor trained with Adam on MSE.

    ``fit(X, Y)`` takes look-backs ``(n, L)`` and horizons ``(n, H)`` in
    whatever space the caller chooses; no normalization happens here (see
    :class:`revnorm.training.NormalizedForecaster`).
    """

    def __init__(self, kind="linear", ma_kernel=25, lr=1e-3, epochs=200, batch_size=64,
                 beta1=0.9, beta2=0.999, eps_opt=1e-8, seed=0):
        self.kind = kind
        self.ma_kernel = ma_kernel
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps_opt = eps_opt
        self.seed = seed

    def _init(self, L, H):
        rng = np.random.default_rng(self.seed)
        self.params_ = init_params(self.kind, L, H, rng)
        self.ma_matrix_ = moving_average_matrix(L, min(self.ma_kernel, L - (L + 1) % 2)) \
            if self.kind == "dlinear" else None
        self.adam_ = AdamState(self.lr, self.beta1, self.beta2, self.eps_opt)
        self.n_features_in_ = L
        self.n_outputs_ = H
        self.loss_curve_ = []

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y, multi_output=True)
        Y = Y.reshape(len(Y), -1)
        self._init(X.shape[1], Y.shape[1])
        for _ in range(self.epochs):
            self.partial_fit(X, Y)
        return self

    def partial_fit(self, X, Y):
        """One pass of shuffled minibatch Adam steps over ``(X, Y)``."""
        X, Y = check_X_y(X, Y, multi_output=True)
        Y = Y.reshape(len(Y), -1)
        if not hasattr(self, "params_"):
            self._init(X.shape[1], Y.shape[1])
        rng = np.random.default_rng([self.seed, self.adam_.step_count])
        order = rng.permutation(len(X))
        losses = []
        for i in range(0, len(X), self.batch_size):
            idx = order[i: i + self.batch_size]
            loss, grads = gradients(self.params_, X[idx], Y[idx], self.ma_matrix_)
            self.params_, self.adam_ = adam_step(self.params_, grads, self.adam_)
            losses.append(loss)
        self.loss_curve_.append(float(np.mean(losses)))
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return forward(self.params_, check_array(X), self.ma_matrix_)

    def to_dict(self) -> dict:
        check_is_fitted(self, "params_")
        return {
            "kind": self.kind,
            "shapes": {"L": self.n_features_in_, "H": self.n_outputs_},
            "ma_kernel": self.ma_kernel,
            "params": {k: _array_to_json(v) for k, v in sorted(self.params_.items())},
            "adam": self.adam_.to_dict(),
            "hyperparameters": self.get_params(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LinearForecaster":
        self = cls(**d["hyperparameters"])
        L, H = d["shapes"]["L"], d["shapes"]["H"]
        self._init(L, H)
        self.params_ = {k: _array_from_json(v) for k, v in d["params"].items()}
        self.adam_ = AdamState.from_dict(d["adam"])
        return self
