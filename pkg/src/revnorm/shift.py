"""Energy distances between window distributions of different splits.

The energy distance is the squared MMD with kernel ``k(x, y) = -||x - y||``::

    d2(P, Q) = 2 E|X - Y| - E|X - X'| - E|Y - Y'|

estimated as a U-statistic: within-sample means exclude ``i == j`` pairs and,
when both samples have the same size, so does the cross term. With that
convention ``d2(P, P) == 0`` exactly; estimates near zero may be negative.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from . import data as D
from .exceptions import DimensionMismatch, MissingContext, TooFewSamples
from .normalization import DEFAULT_EPSILON, GlobalStats, batch_modulations, fit_global_stats

SPACES = ("inputs", "windows", "statistics", "modulations")
NORMALIZATIONS = ("none", "standard", "instance")
SHIFTS = {"temporal": ("Train", "Test1"), "spatial": ("Train", "Valid2")}


def _as_points(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2:
        raise DimensionMismatch("points must be a 1-D or 2-D array")
    return P


def _offdiag_mean(Dm: np.ndarray) -> float:
    n, m = Dm.shape
    return float((Dm.sum() - np.trace(Dm)) / (n * (m - 1))) if n == m else float(Dm.sum() / (n * m))


def energy_distance(P, Q) -> float:
    """Unbiased squared energy distance between two point clouds.

    Parameters
    ----------
    P, Q : array-like of shape (n, d) or (n,)
        At least two points each, same dimension.

    Returns
    -------
    float
        ``d2``; symmetric in ``(P, Q)`` bit for bit.
    """
    P, Q = _as_points(P), _as_points(Q)
    if P.shape[1] != Q.shape[1]:
        raise DimensionMismatch(f"dimension {P.shape[1]} != {Q.shape[1]}")
    if len(P) < 2 or len(Q) < 2:
        raise TooFewSamples("energy distance needs at least 2 points per sample")
    # canonical argument order so that swapping P and Q repeats the same arithmetic
    if (Q.shape, Q.tobytes()) < (P.shape, P.tobytes()):
        P, Q = Q, P
    within_p = _offdiag_mean(cdist(P, P))
    within_q = _offdiag_mean(cdist(Q, Q))
    cross = _offdiag_mean(cdist(P, Q))
    # kernel values are the negated distances
    return (-within_p) + (-within_q) - 2.0 * (-cross)


def feature_map(pairs, space: str, normalization: str = "none", context: GlobalStats | None = None,
                epsilon=DEFAULT_EPSILON) -> np.ndarray:
    """Normalize each window pair, then extract the features of ``space``.

    ``statistics`` is ``(mean, std)`` of the (normalized) look-back and
    ``modulations`` is ``(delta, lambda)``; both features use no epsilon so
    that per-window affine maps leave the modulations unchanged.
    """
    if space not in SPACES:
        raise ValueError(f"unknown feature space {space!r}")
    X, Y, _ = D.stack_pairs(pairs)
    if normalization == "standard":
        if context is None:
            raise MissingContext("standard normalization needs GlobalStats")
        X = (X - context.mu) / (context.sigma + epsilon)
        Y = (Y - context.mu) / (context.sigma + epsilon)
    elif normalization == "instance":
        mu = X.mean(axis=1, keepdims=True)
        scale = X.std(axis=1, ddof=1, keepdims=True) + epsilon
        X, Y = (X - mu) / scale, (Y - mu) / scale
    elif normalization != "none":
        raise ValueError(f"unknown normalization {normalization!r}")
    if space == "inputs":
        return X
    if space == "windows":
        return np.hstack([X, Y])
    if space == "statistics":
        return np.column_stack([X.mean(axis=1), X.std(axis=1, ddof=1)])
    delta, lam = batch_modulations(X, Y, epsilon=0.0)
    return np.column_stack([delta, lam])


@dataclass
class ShiftReport:
    """``cells[(dataset, space, normalization, shift)] = {"d2", "d", "n_p", "n_q"}``."""

    cells: dict = field(default_factory=dict)

    def value(self, dataset, space, normalization, shift) -> float:
        return self.cells[(dataset, space, normalization, shift)]["d2"]

    def to_dict(self) -> dict:
        out = {}
        for (ds, space, norm, shift), cell in sorted(self.cells.items()):
            out.setdefault(ds, {}).setdefault(space, {}).setdefault(norm, {})[shift] = cell
        return out

    def write(self, out_dir) -> None:
        """``shift_report.json`` plus one table CSV per feature space (d2 clamped at 0)."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "shift_report.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        datasets = sorted({k[0] for k in self.cells})
        for space in sorted({k[1] for k in self.cells}):
            cols = [(n, s) for n in NORMALIZATIONS for s in SHIFTS
                    if any(k[1:] == (space, n, s) for k in self.cells)]
            with open(out_dir / f"shift_{space}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["dataset"] + [f"{n}_{s}" for n, s in cols])
                for ds in datasets:
                    row = [ds]
                    for n, s in cols:
                        cell = self.cells.get((ds, space, n, s))
                        row.append("" if cell is None else f"{max(cell['d2'], 0.0):.6g}")
                    writer.writerow(row)


def _write_features(path, feats, pairs):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "start"] + [f"f{i}" for i in range(feats.shape[1])])
        for p, row in zip(pairs, feats):
            writer.writerow([p.user, p.start] + [repr(float(v)) for v in row])


def shift_report(dataset, split, spec, name="dataset", n=2000, seed=0, spaces=SPACES,
                 normalizations=NORMALIZATIONS, epsilon=DEFAULT_EPSILON, export_dir=None,
                 report: ShiftReport | None = None) -> ShiftReport:
    """Temporal (Train vs Test1) and spatial (Train vs Valid2) distances for every space and normalization.

    The same sampled windows are reused across spaces and normalizations.
    When ``export_dir`` is given, feature matrices are written there as CSV.
    """
    report = ShiftReport() if report is None else report
    samples = {s: D.sample_windows(dataset, split, s, spec, n, seed=[seed, i])
               for i, s in enumerate(("Train", "Test1", "Valid2"))}
    context = fit_global_stats(samples["Train"], epsilon) if "standard" in normalizations else None
    if export_dir is not None:
        export_dir = Path(export_dir)
        export_dir.mkdir(parents=True, exist_ok=True)
    for space in spaces:
        for norm in normalizations:
            feats = {s: feature_map(p, space, norm, context, epsilon) for s, p in samples.items()}
            if export_dir is not None:
                for s, f in feats.items():
                    _write_features(export_dir / f"{name}_{space}_{norm}_{s}.csv", f, samples[s])
            for shift, (a, b) in SHIFTS.items():
                d2 = energy_distance(feats[a], feats[b])
                report.cells[(name, space, norm, shift)] = {
                    "d2": d2, "d": math.sqrt(max(d2, 0.0)), "n_p": len(feats[a]), "n_q": len(feats[b]),
                }
    return report
