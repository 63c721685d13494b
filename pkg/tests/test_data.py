import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revnorm import data as D
from revnorm.exceptions import DataUnreadable, NoUsableWindows, PeriodTooShort, TooFewUsers


def brute_force_constant(series, L):
    return np.array([len(set(series[s:s + L])) == 1 for s in range(len(series) - L + 1)])


class TestDataset:
    def test_missing_entries_hold_zero(self):
        ds = D.TimeSeriesDataset.from_array([[1.0, np.nan, 3.0]])
        assert ds.values.tolist() == [[1.0, 0.0, 3.0]]
        assert ds.mask.tolist() == [[True, False, True]]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            D.TimeSeriesDataset(np.zeros((2, 3)), np.ones((2, 4), bool), ("a", "b"))

    def test_immutable(self):
        ds = D.TimeSeriesDataset.from_array(np.arange(6.0).reshape(2, 3))
        with pytest.raises(ValueError):
            ds.values[0, 0] = 5

    def test_window_spec_bounds(self):
        with pytest.raises(ValueError):
            D.WindowSpec(1, 1)
        with pytest.raises(ValueError):
            D.WindowSpec(2, 0)


class TestSplit:
    def test_floor_boundaries(self):
        ds = D.TimeSeriesDataset.from_array(np.random.default_rng(0).normal(size=(10, 1000)))
        sp = D.six_way_split(ds, 0.2, (0.6, 0.2, 0.2), seed=0)
        assert len(sp.users_out) == 2 and len(sp.users_in) == 8
        assert (sp.t_train, sp.t_valid, sp.t_test) == ((0, 600), (600, 800), (800, 1000))

    def test_floor_oracle_enumeration(self):
        # independent floor arithmetic over a grid of lengths and fractions
        for n, fr in itertools.product((97, 100, 1001), ((0.6, 0.2, 0.2), (0.7, 0.15, 0.15), (0.5, 0.25, 0.25))):
            ds = D.TimeSeriesDataset.from_array(np.random.default_rng(n).normal(size=(3, n)))
            sp = D.six_way_split(ds, 0.34, fr, seed=1)
            b1 = int(np.floor(fr[0] * n + 1e-9))
            b2 = int(np.floor((fr[0] + fr[1]) * n + 1e-9))
            assert sp.t_train == (0, b1) and sp.t_valid == (b1, b2) and sp.t_test == (b2, n)

    def test_two_users(self):
        ds = D.TimeSeriesDataset.from_array(np.random.default_rng(0).normal(size=(2, 100)))
        sp = D.six_way_split(ds, 0.5, seed=3)
        assert len(sp.users_in) == 1 and len(sp.users_out) == 1

    def test_degenerate_period(self):
        ds = D.TimeSeriesDataset.from_array(np.random.default_rng(0).normal(size=(4, 100)))
        with pytest.raises(PeriodTooShort):
            D.six_way_split(ds, 0.5, (1.0, 0.0, 0.0))

    def test_period_shorter_than_window(self):
        ds = D.TimeSeriesDataset.from_array(np.random.default_rng(0).normal(size=(4, 100)))
        with pytest.raises(PeriodTooShort):
            D.six_way_split(ds, 0.5, (0.6, 0.2, 0.2), spec=D.WindowSpec(15, 10))

    def test_too_few_users(self):
        ds = D.TimeSeriesDataset.from_array(np.zeros((1, 100)))
        with pytest.raises(TooFewUsers):
            D.six_way_split(ds)

    def test_six_splits_cover_grid(self, small_synthetic, small_split):
        ds, _ = small_synthetic
        sp = small_split
        assert set(sp.users_in).isdisjoint(sp.users_out)
        assert set(sp.users_in) | set(sp.users_out) == set(ds.user_ids)
        cells = set()
        for name in D.SPLITS:
            a, b = sp.period(name)
            for u in sp.users(name):
                cell = (u, a, b)
                assert cell not in cells
                cells.add(cell)
        assert len(cells) == 3 * len(ds.user_ids)  # each user: three periods
        assert sp.t_train[1] == sp.t_valid[0] and sp.t_valid[1] == sp.t_test[0]

    def test_deterministic(self, small_synthetic):
        ds, _ = small_synthetic
        assert D.six_way_split(ds, seed=5) == D.six_way_split(ds, seed=5)

    def test_round_trip_dict(self, small_split):
        assert D.SplitAssignment.from_dict(small_split.to_dict()) == small_split


class TestCleaning:
    def test_constant_prefix(self):
        series = np.array([5, 5, 5, 5, 5, 1, 2, 3], dtype=float)
        flags = D.constant_window_starts(series, 3)
        assert flags.tolist() == brute_force_constant(series, 3).tolist()
        assert flags[:4].tolist() == [True, True, True, False]

    @given(st.lists(st.integers(0, 2), min_size=1, max_size=40), st.integers(2, 6))
    @settings(max_examples=200, deadline=None)
    def test_constancy_matches_brute_force(self, values, L):
        series = np.asarray(values, dtype=float)
        if len(series) < L:
            assert D.constant_window_starts(series, L).size == 0
        else:
            assert D.constant_window_starts(series, L).tolist() == brute_force_constant(series, L).tolist()

    def test_report_ranges(self):
        ds = D.TimeSeriesDataset.from_array([[5, 5, 5, 5, 5, 1, 2, 3, 4, 6]], ["a"])
        cleaned, report = D.clean_dataset(ds, D.WindowSpec(3, 1))
        assert cleaned.n_users == 1
        assert report.rows == [("a", 0, 5, "constant_window")]

    def test_distinct_nothing_removed(self):
        ds = D.TimeSeriesDataset.from_array(np.arange(20.0).reshape(2, 10))
        cleaned, report = D.clean_dataset(ds, D.WindowSpec(3, 1))
        assert cleaned.n_users == 2 and report.rows == []

    def test_constant_user_dropped(self):
        ds = D.TimeSeriesDataset.from_array(np.vstack([np.full(10, 4.0), np.arange(10.0)]), ["c", "d"])
        cleaned, report = D.clean_dataset(ds, D.WindowSpec(3, 1), 0.5)
        assert cleaned.user_ids == ("d",)
        assert report.rows == [("c", 0, 10, "user_dropped")]

    def test_empty_after_cleaning_is_reported(self, tmp_path):
        ds = D.TimeSeriesDataset.from_array(np.full((2, 10), 1.0))
        cleaned, report = D.clean_dataset(ds, D.WindowSpec(3, 1))
        assert cleaned.n_users == 0 and report.empty
        report.to_csv(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "user,start,end,reason"


class TestSampling:
    def test_zero(self, small_synthetic, small_split):
        assert D.sample_windows(small_synthetic[0], small_split, "Train", D.WindowSpec(40, 10), 0) == []

    def test_forced_start(self):
        ds = D.TimeSeriesDataset.from_array(np.random.default_rng(0).normal(size=(2, 50)))
        sp = D.SplitAssignment(("u0",), ("u1",), (0, 30), (30, 40), (40, 50))
        pairs = D.sample_windows(ds, sp, "Valid1", D.WindowSpec(6, 4), 7, seed=1)
        assert {p.start for p in pairs} == {30}

    def test_round_robin(self):
        ds = D.TimeSeriesDataset.from_array(np.random.default_rng(0).normal(size=(4, 100)))
        sp = D.SplitAssignment(("u0", "u1", "u2"), ("u3",), (0, 60), (60, 80), (80, 100))
        pairs = D.sample_windows(ds, sp, "Train", D.WindowSpec(5, 5), 6, seed=0)
        counts = {u: sum(p.user == u for p in pairs) for u in ("u0", "u1", "u2")}
        assert counts == {"u0": 2, "u1": 2, "u2": 2}

    def test_pairs_contiguous_and_inside_period(self, small_synthetic, small_split):
        ds, _ = small_synthetic
        spec = D.WindowSpec(40, 10)
        for name in D.SPLITS:
            a, b = small_split.period(name)
            for p in D.sample_windows(ds, small_split, name, spec, 50, seed=2):
                raw = ds.series(p.user)
                assert a <= p.start and p.start + spec.total <= b
                np.testing.assert_array_equal(raw[p.start:p.start + 40], p.x)
                np.testing.assert_array_equal(raw[p.start + 40:p.start + 50], p.y)
                assert p.user in small_split.users(name)

    def test_skips_constant_lookbacks(self):
        series = np.concatenate([np.full(30, 2.0), np.arange(30.0)])
        ds = D.TimeSeriesDataset.from_array(np.vstack([series, series]))
        sp = D.SplitAssignment(("u0",), ("u1",), (0, 40), (40, 50), (50, 60))
        for p in D.sample_windows(ds, sp, "Train", D.WindowSpec(5, 2), 100, seed=0):
            assert len(set(p.x)) > 1

    def test_no_usable(self):
        ds = D.TimeSeriesDataset.from_array(np.full((2, 60), 1.0))
        sp = D.SplitAssignment(("u0",), ("u1",), (0, 40), (40, 50), (50, 60))
        with pytest.raises(NoUsableWindows):
            D.sample_windows(ds, sp, "Train", D.WindowSpec(5, 2), 3)

    def test_deterministic(self, small_synthetic, small_split):
        ds, _ = small_synthetic
        a = D.sample_windows(ds, small_split, "Train", D.WindowSpec(40, 10), 30, seed=9)
        b = D.sample_windows(ds, small_split, "Train", D.WindowSpec(40, 10), 30, seed=9)
        assert [(p.user, p.start) for p in a] == [(p.user, p.start) for p in b]

    def test_enumerate_stride(self, small_synthetic, small_split):
        ds, _ = small_synthetic
        pairs = D.enumerate_windows(ds, small_split, "Test1", D.WindowSpec(40, 10))
        a, b = small_split.period("Test1")
        starts = sorted({p.start for p in pairs})
        assert starts == list(range(a, b - 50 + 1, 10))


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = D.TimeSeriesDataset.from_array([[0.1, np.nan, 1e-17], [3.0, 4.0, 5.5]], ["a", "b"])
        D.write_csv(ds, tmp_path / "d.csv")
        back = D.read_csv(tmp_path / "d.csv")
        assert back.user_ids == ("a", "b")
        np.testing.assert_array_equal(back.values, ds.values)
        np.testing.assert_array_equal(back.mask, ds.mask)

    def test_long_format(self, tmp_path):
        (tmp_path / "l.csv").write_text("time,user,value\n0,a,1\n0,b,2\n1,a,3\n1,b,\n")
        ds = D.read_csv(tmp_path / "l.csv")
        assert ds.user_ids == ("a", "b")
        assert ds.values.tolist() == [[1.0, 3.0], [2.0, 0.0]]
        assert ds.mask.tolist() == [[True, True], [True, False]]

    def test_timestamps(self, tmp_path):
        (tmp_path / "t.csv").write_text(
            "date,x\n2020-01-01 00:00,1\n2020-01-01 01:00,2\n2020-01-01 02:00,3\n")
        ds = D.read_csv(tmp_path / "t.csv")
        assert ds.frequency.lower() == "h"
        assert ds.index[0] == "2020-01-01 00:00"

    def test_unreadable(self, tmp_path):
        with pytest.raises(DataUnreadable):
            D.read_csv(tmp_path / "missing.csv")
        (tmp_path / "bad.csv").write_text("time,a\n0,hello\n")
        with pytest.raises(DataUnreadable):
            D.read_csv(tmp_path / "bad.csv")
