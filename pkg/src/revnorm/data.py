"""Dataset container, cleaning, 6-way splitting and window sampling.

A dataset is a ``(n_users, n_steps)`` grid of scalar readings. Windows are
sampled per user from one of six (users, period) splits::

    Train   users_in   t_train
    Valid1  users_in   t_valid
    Valid2  users_out  t_train
    Valid3  users_out  t_valid
    Test1   users_in   t_test
    Test2   users_out  t_test

A window pair never crosses a period boundary.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataUnreadable, NoUsableWindows, PeriodTooShort, TooFewUsers

SPLITS = ("Train", "Valid1", "Valid2", "Valid3", "Test1", "Test2")

_SPLIT_TABLE = {
    "Train": ("in", "train"),
    "Valid1": ("in", "valid"),
    "Valid2": ("out", "train"),
    "Valid3": ("out", "valid"),
    "Test1": ("in", "test"),
    "Test2": ("out", "test"),
}


@dataclass(frozen=True)
class WindowSpec:
    L: int
    H: int

    def __post_init__(self):
        if int(self.L) < 2:
            raise ValueError(f"look-back L must be >= 2, got {self.L}")
        if int(self.H) < 1:
            raise ValueError(f"horizon H must be >= 1, got {self.H}")

    @property
    def total(self) -> int:
        return self.L + self.H


@dataclass(frozen=True)
class WindowPair:
    x: np.ndarray
    y: np.ndarray
    user: str
    start: int


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    """Users x time grid of readings.

    Parameters
    ----------
    values : ndarray of shape (n_users, n_steps)
        Readings. Missing entries hold 0.
    mask : ndarray of bool, same shape
        True where the value was observed.
    user_ids : sequence of str
    frequency : str
        Informational sampling label such as ``"1h"``.
    index : sequence of str, optional
        Time labels (one per step), kept for round-tripping CSV files.
    """

    values: np.ndarray
    mask: np.ndarray
    user_ids: tuple
    frequency: str = ""
    index: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2:
            raise ValueError("values must be a 2-D (users, steps) array")
        if mask.shape != values.shape:
            raise ValueError(f"mask shape {mask.shape} != values shape {values.shape}")
        if len(self.user_ids) != values.shape[0]:
            raise ValueError("one user id per row is required")
        values[~mask] = 0.0
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "user_ids", tuple(str(u) for u in self.user_ids))
        index = tuple(str(i) for i in self.index) or tuple(str(i) for i in range(values.shape[1]))
        if len(index) != values.shape[1]:
            raise ValueError("index length must equal the number of steps")
        object.__setattr__(self, "index", index)

    @classmethod
    def from_array(cls, values, user_ids=None, frequency=""):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        mask = np.isfinite(values)
        values = np.where(mask, values, 0.0)
        if user_ids is None:
            user_ids = [f"u{i}" for i in range(values.shape[0])]
        return cls(values, mask, tuple(user_ids), frequency)

    @property
    def n_users(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def user_index(self, user) -> int:
        return self.user_ids.index(str(user))

    def series(self, user) -> np.ndarray:
        return self.values[self.user_index(user)]

    def subset_users(self, users: Iterable) -> "TimeSeriesDataset":
        rows = [self.user_index(u) for u in users]
        return TimeSeriesDataset(
            self.values[rows], self.mask[rows], tuple(self.user_ids[r] for r in rows),
            self.frequency, self.index,
        )

    def exclude_users(self, users: Iterable) -> "TimeSeriesDataset":
        drop = {str(u) for u in users}
        return self.subset_users([u for u in self.user_ids if u not in drop])


# --------------------------------------------------------------------------- #
# Constant-window detection
# --------------------------------------------------------------------------- #

def constant_window_starts(series: np.ndarray, L: int) -> np.ndarray:
    """Boolean array over window starts ``0..n-L``: True where all L values are equal."""
    series = np.asarray(series, dtype=float)
    n = series.shape[0]
    if n < L:
        return np.zeros(0, dtype=bool)
    changes = np.concatenate([[0], np.cumsum(np.diff(series) != 0)])
    # window [s, s+L) is constant iff no value change between s and s+L-1
    return changes[L - 1:] - changes[: n - L + 1] == 0


def _ranges(flags: np.ndarray) -> list[tuple[int, int]]:
    idx = np.flatnonzero(flags)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    stops = np.concatenate([idx[breaks], [idx[-1]]])
    return [(int(a), int(b)) for a, b in zip(starts, stops)]


@dataclass
class RemovalReport:
    rows: list = field(default_factory=list)
    empty: bool = False

    def add(self, user, start, end, reason):
        self.rows.append((str(user), int(start), int(end), reason))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user", "start", "end", "reason"])
            writer.writerows(self.rows)


def clean_dataset(dataset: TimeSeriesDataset, spec: WindowSpec, min_usable_fraction: float = 0.5):
    """Flag constant look-back windows and drop mostly-constant users.

    Returns the cleaned dataset and a :class:`RemovalReport`. Ranges in the
    report are time spans ``[start, end)`` covered by removed windows.
    Constant windows themselves are excluded again at sampling time.
    """
    report = RemovalReport()
    keep = []
    for row, user in enumerate(dataset.user_ids):
        const = constant_window_starts(dataset.values[row], spec.L)
        usable = 1.0 - const.mean() if const.size else 0.0
        if usable < min_usable_fraction:
            report.add(user, 0, dataset.n_steps, "user_dropped")
            continue
        keep.append(user)
        for a, b in _ranges(const):
            report.add(user, a, b + spec.L, "constant_window")
    cleaned = dataset.subset_users(keep)
    report.empty = cleaned.n_users == 0
    return cleaned, report


# --------------------------------------------------------------------------- #
# Splitting
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SplitAssignment:
    users_in: tuple
    users_out: tuple
    t_train: tuple
    t_valid: tuple
    t_test: tuple

    def users(self, split: str) -> tuple:
        return self.users_in if _SPLIT_TABLE[split][0] == "in" else self.users_out

    def period(self, split: str) -> tuple:
        return getattr(self, "t_" + _SPLIT_TABLE[split][1])

    def to_dict(self) -> dict:
        return {
            "users_in": list(self.users_in),
            "users_out": list(self.users_out),
            "t_train": list(self.t_train),
            "t_valid": list(self.t_valid),
            "t_test": list(self.t_test),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(
            tuple(d["users_in"]), tuple(d["users_out"]),
            tuple(d["t_train"]), tuple(d["t_valid"]), tuple(d["t_test"]),
        )


def six_way_split(dataset, user_out_fraction=0.2, period_fractions=(0.6, 0.2, 0.2),
                  seed=0, spec: WindowSpec | None = None) -> SplitAssignment:
    """Partition users into in/out sets and time into train/valid/test periods.

    Users are shuffled with ``seed`` and the first ``floor(fraction * n)``
    (clamped to ``[1, n-1]``) become ``users_out``. Period boundaries are
    floors of the cumulative fractions; the remainder goes to the test period.
    """
    if not 0 < user_out_fraction < 1:
        raise ValueError("user_out_fraction must lie in (0, 1)")
    if len(period_fractions) != 3 or abs(sum(period_fractions) - 1.0) > 1e-9:
        raise ValueError("period_fractions must be three numbers summing to 1")
    n = dataset.n_users
    if n < 2:
        raise TooFewUsers(f"need at least 2 users, got {n}")
    n_out = min(max(int(math.floor(user_out_fraction * n + 1e-9)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    out_rows = set(order[:n_out].tolist())
    users_out = tuple(u for i, u in enumerate(dataset.user_ids) if i in out_rows)
    users_in = tuple(u for i, u in enumerate(dataset.user_ids) if i not in out_rows)

    T = dataset.n_steps
    b1 = int(math.floor(period_fractions[0] * T + 1e-9))
    b2 = int(math.floor((period_fractions[0] + period_fractions[1]) * T + 1e-9))
    periods = {"train": (0, b1), "valid": (b1, b2), "test": (b2, T)}
    min_len = spec.total if spec is not None else 1
    for name, (a, b) in periods.items():
        if b - a < min_len:
            raise PeriodTooShort(f"{name} period has {b - a} steps, need >= {min_len}")
    return SplitAssignment(users_in, users_out, periods["train"], periods["valid"], periods["test"])


# --------------------------------------------------------------------------- #
# Sampling
# --------------------------------------------------------------------------- #

def usable_starts(dataset, user, period, spec: WindowSpec) -> np.ndarray:
    """Start indices whose pair fits inside ``period`` and whose look-back is not constant."""
    a, b = period
    last = b - spec.total
    if last < a:
        return np.zeros(0, dtype=int)
    series = dataset.series(user)
    const = constant_window_starts(series[a: last + spec.L], spec.L)
    return a + np.flatnonzero(~const)


def _pair(dataset, user, start, spec) -> WindowPair:
    series = dataset.series(user)
    x = series[start: start + spec.L].copy()
    y = series[start + spec.L: start + spec.total].copy()
    return WindowPair(x, y, str(user), int(start))


def sample_windows(dataset, split: SplitAssignment, name: str, spec: WindowSpec,
                   n: int, seed=0) -> list[WindowPair]:
    """Draw ``n`` window pairs from split ``name``.

    Users are visited round-robin (users without usable windows are skipped);
    each user's start dates are drawn uniformly, without replacement until the
    user's usable starts are exhausted, with replacement beyond that.
    """
    if n == 0:
        return []
    period = split.period(name)
    candidates = [(u, usable_starts(dataset, u, period, spec)) for u in split.users(name)]
    candidates = [(u, s) for u, s in candidates if s.size]
    if not candidates:
        raise NoUsableWindows(f"split {name} has no usable windows for L={spec.L}, H={spec.H}")
    k = len(candidates)
    rng = np.random.default_rng(seed)
    per_user = []
    for j, (user, starts) in enumerate(candidates):
        count = n // k + (1 if j < n % k else 0)
        per_user.append(rng.choice(starts, size=count, replace=count > starts.size))
    pairs = []
    for i in range(n):
        user, _ = candidates[i % k]
        pairs.append(_pair(dataset, user, per_user[i % k][i // k], spec))
    return pairs


def enumerate_windows(dataset, split: SplitAssignment, name: str, spec: WindowSpec,
                      stride: int | None = None) -> list[WindowPair]:
    """All usable pairs of a split, start dates stepping by ``stride`` (default H)."""
    stride = spec.H if stride is None else int(stride)
    a, b = split.period(name)
    pairs = []
    for user in split.users(name):
        ok = set(usable_starts(dataset, user, (a, b), spec).tolist())
        for start in range(a, b - spec.total + 1, stride):
            if start in ok:
                pairs.append(_pair(dataset, user, start, spec))
    if not pairs:
        raise NoUsableWindows(f"split {name} has no usable windows for L={spec.L}, H={spec.H}")
    return pairs


def stack_pairs(pairs: Sequence[WindowPair]):
    """Stack pairs into ``(X, Y, users)`` arrays."""
    if not pairs:
        return np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0, dtype=object)
    X = np.stack([p.x for p in pairs])
    Y = np.stack([p.y for p in pairs])
    users = np.array([p.user for p in pairs], dtype=object)
    return X, Y, users


# --------------------------------------------------------------------------- #
# CSV I/O
# --------------------------------------------------------------------------- #

def read_csv(path) -> TimeSeriesDataset:
    """Read a wide (time, user1, user2, ...) or long (time, user, value) CSV."""
    try:
        frame = pd.read_csv(path, dtype={0: str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataUnreadable(f"cannot read {path}: {exc}") from exc
    cols = [str(c).strip().lower() for c in frame.columns]
    if len(cols) == 3 and cols == ["time", "user", "value"]:
        frame.columns = ["time", "user", "value"]
        frame["user"] = frame["user"].astype(str)
        frame = frame.pivot_table(index="time", columns="user", values="value",
                                  aggfunc="first", sort=False, dropna=False)
        frame = frame.reset_index()
    if frame.shape[1] < 2:
        raise DataUnreadable(f"{path}: expected a time column plus at least one user column")
    index = frame.iloc[:, 0].astype(str).tolist()
    try:
        raw = frame.iloc[:, 1:].apply(pd.to_numeric, errors="raise").to_numpy(dtype=float).T
    except (ValueError, TypeError) as exc:
        raise DataUnreadable(f"{path}: non-numeric value: {exc}") from exc
    mask = np.isfinite(raw)
    return TimeSeriesDataset(np.where(mask, raw, 0.0), mask,
                             tuple(str(c) for c in frame.columns[1:]),
                             _infer_frequency(index), tuple(index))


def _infer_frequency(index) -> str:
    if len(index) < 3 or all(i.lstrip("-").isdigit() for i in index):
        return ""
    try:
        return pd.infer_freq(pd.DatetimeIndex(pd.to_datetime(index))) or ""
    except (ValueError, TypeError):
        return ""


def write_csv(dataset: TimeSeriesDataset, path) -> None:
    """Write the wide CSV layout; missing entries become empty cells."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", *dataset.user_ids])
        for t, label in enumerate(dataset.index):
            row = [label]
            for u in range(dataset.n_users):
                row.append(repr(float(dataset.values[u, t])) if dataset.mask[u, t] else "")
            writer.writerow(row)
