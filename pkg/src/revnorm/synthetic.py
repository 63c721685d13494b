"""Two-cluster sinusoidal datasets with (approximately) constant modulations.

Each user follows ``X_t = a*t + b + A*sin(2*pi*t/T) + eps_t`` with
``eps_t ~ N(0, sigma_noise)``.

Noise is drawn from NumPy's Philox4x64 counter-based bit generator, keyed by
a per-user seed, and turned into normals by NumPy's ziggurat transform
(``Generator.standard_normal``). The same seed gives bit-identical output.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import TimeSeriesDataset
from .normalization import DEFAULT_EPSILON, Modulations


@dataclass(frozen=True)
class SyntheticUserParams:
    T: int = 10
    A: float = 1.0
    a: float = 0.1
    b: float = 10.0
    sigma_noise: float = 0.05
    cluster: str = "0"

    def __post_init__(self):
        if int(self.T) < 1:
            raise ValueError("cyclicity T must be >= 1")
        if self.A < 0 or self.sigma_noise < 0:
            raise ValueError("amplitude and noise level must be non-negative")


@dataclass(frozen=True)
class ClusterSpec:
    """``count`` users around ``params``.

    ``a`` and ``b`` are drawn uniformly in ``params.a +/- a_jitter`` and
    ``params.b +/- b_jitter``. Each whole series is then multiplied by a
    log-uniform factor from ``scale_range`` (``(1, 1)`` disables it).
    """

    count: int
    params: SyntheticUserParams
    a_jitter: float = 0.0
    b_jitter: float = 0.0
    scale_range: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("each cluster needs at least one user")


@dataclass(frozen=True)
class SyntheticSpec:
    clusters: tuple
    length: int = 2000
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "seed": self.seed,
            "clusters": [
                {
                    "count": c.count, "a_jitter": c.a_jitter, "b_jitter": c.b_jitter,
                    "scale_range": list(c.scale_range),
                    "T": c.params.T, "A": c.params.A, "a": c.params.a, "b": c.params.b,
                    "sigma_noise": c.params.sigma_noise, "cluster": c.params.cluster,
                }
                for c in self.clusters
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        clusters = []
        for i, c in enumerate(d["clusters"]):
            params = SyntheticUserParams(
                int(c.get("T", 10)), float(c.get("A", 1.0)), float(c.get("a", 0.0)),
                float(c.get("b", 0.0)), float(c.get("sigma_noise", 0.05)), str(c.get("cluster", i)),
            )
            clusters.append(ClusterSpec(int(c["count"]), params, float(c.get("a_jitter", 0.0)),
                                        float(c.get("b_jitter", 0.0)),
                                        tuple(float(v) for v in c.get("scale_range", (1.0, 1.0)))))
        return cls(tuple(clusters), int(d.get("length", 2000)), int(d.get("seed", 0)))


def two_cluster_spec(users_per_cluster=20, length=2000, seed=0, slope=0.1) -> SyntheticSpec:
    """Cluster 1: a=+slope, b=10+/-1. Cluster 2: a=-slope, b=100+/-10. A=1, T=10, sigma=0.05."""
    c1 = SyntheticUserParams(T=10, A=1.0, a=slope, b=10.0, sigma_noise=0.05, cluster="1")
    c2 = SyntheticUserParams(T=10, A=1.0, a=-slope, b=100.0, sigma_noise=0.05, cluster="2")
    return SyntheticSpec((ClusterSpec(users_per_cluster, c1, b_jitter=1.0),
                          ClusterSpec(users_per_cluster, c2, b_jitter=10.0)), length, seed)


def heterogeneous_spec(n_users=40, length=2000, seed=0, scale_span=10.0) -> SyntheticSpec:
    """Single-shape users whose overall scale spans ``scale_span`` x (log-uniform)."""
    params = SyntheticUserParams(T=10, A=1.0, a=0.01, b=5.0, sigma_noise=0.2, cluster="0")
    return SyntheticSpec((ClusterSpec(n_users, params, a_jitter=0.005, b_jitter=2.0,
                                      scale_range=(1.0, float(scale_span))),), length, seed)


def user_seed(seed, index) -> np.random.SeedSequence:
    """Seed sequence of the ``index``-th user of a dataset generated with ``seed``."""
    return np.random.SeedSequence([int(seed), int(index)])


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def generate_user(params: SyntheticUserParams, length: int, seed=0) -> np.ndarray:
    if length < 1:
        raise ValueError("length must be >= 1")
    t = np.arange(length, dtype=float)
    x = params.a * t + params.b + params.A * np.sin(2.0 * np.pi * t / params.T)
    if params.sigma_noise > 0:
        x = x + params.sigma_noise * _rng(seed).standard_normal(length)
    return x


def generate_dataset(spec: SyntheticSpec):
    """Generate all clusters. Returns ``(dataset, labels)`` with ``labels`` mapping user -> cluster.

    Per-user draws (jitter, then scale) come from a Philox stream seeded by
    ``SeedSequence([seed, k, 1])``; noise uses :func:`user_seed` itself, so a
    jitter-free single user equals ``generate_user(params, length, user_seed(seed, 0))``.
    """
    rows, ids, labels = [], [], {}
    k = 0
    for cluster in spec.clusters:
        base = cluster.params
        for _ in range(cluster.count):
            ss = user_seed(spec.seed, k)
            draw = _rng(np.random.SeedSequence([int(spec.seed), k, 1]))
            a = base.a + (draw.uniform(-cluster.a_jitter, cluster.a_jitter) if cluster.a_jitter else 0.0)
            b = base.b + (draw.uniform(-cluster.b_jitter, cluster.b_jitter) if cluster.b_jitter else 0.0)
            lo, hi = cluster.scale_range
            scale = math.exp(draw.uniform(math.log(lo), math.log(hi))) if hi > lo else lo
            params = SyntheticUserParams(base.T, base.A, a, b, base.sigma_noise, base.cluster)
            rows.append(scale * generate_user(params, spec.length, ss))
            uid = f"u{k:04d}"
            ids.append(uid)
            labels[uid] = str(base.cluster)
            k += 1
    values = np.vstack(rows)
    return TimeSeriesDataset(values, np.ones_like(values, dtype=bool), tuple(ids), "1"), labels


def _window_variance(a, A, s, n, ddof):
    if ddof is None:
        return a * a * n * n / 12.0 + A * A / 2.0 + s * s
    if ddof == 0:
        return a * a * (n * n - 1) / 12.0 + A * A / 2.0 + s * s * (n - 1) / n
    if ddof == 1:
        return a * a * n * (n + 1) / 12.0 + A * A * n / (2.0 * (n - 1)) + s * s
    raise ValueError("ddof must be None, 0 or 1")


def closed_form_modulations(params: SyntheticUserParams, L: int, H: int,
                            epsilon=DEFAULT_EPSILON, ddof=None) -> Modulations:
    """Approximate modulations of a noisy linear-plus-sinusoid user.

    Parameters
    ----------
    params : SyntheticUserParams
    L, H : int
        Look-back and horizon lengths.
    epsilon : float
    ddof : {None, 0, 1}
        ``None`` uses the textbook approximation ``a^2 n^2 / 12 + A^2 / 2 + sigma^2``
        (continuous trend). ``0`` and ``1`` give the expected discrete
        population and unbiased window variances respectively, assuming whole
        sinusoid periods and ignoring the trend/sinusoid cross term.

    Notes
    -----
    ``delta`` is the ratio of expectations, so the mean of per-window
    ``delta`` differs from it by a small Jensen term.
    """
    a, A, s = params.a, params.A, params.sigma_noise
    sx = math.sqrt(_window_variance(a, A, s, L, ddof))
    sy = math.sqrt(_window_variance(a, A, s, H, ddof))
    return Modulations(a * (L + H) / 2.0 / (sx + epsilon), sy / (sx + epsilon))


def write_labels(labels: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "cluster"])
        for user in sorted(labels):
            writer.writerow([user, labels[user]])


def read_labels(path) -> dict:
    with open(path, newline="") as fh:
        return {row["user"]: row["cluster"] for row in csv.DictReader(fh)}
