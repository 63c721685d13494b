import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from revnorm import normalization as N
from revnorm.data import WindowPair
from revnorm.exceptions import DegenerateDataWarning, EmptyCluster, MissingContext, ZeroScale

EPS0 = 1e-300  # effectively zero epsilon (NormStrategy requires epsilon > 0)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
window = arrays(np.float64, st.integers(2, 30), elements=finite)


def strat(kind, alpha=1.0, beta=0.0, eps=EPS0, clusters=None):
    return N.NormStrategy(kind, eps, kind == "revin", N.AffineParams(alpha, beta), clusters or {})


class TestStatistics:
    def test_global_stats_hand_sum(self):
        gs = N.fit_global_stats([WindowPair(np.array([1.0, 2, 3]), np.zeros(1), "a", 0),
                                 WindowPair(np.array([3.0, 4, 5]), np.zeros(1), "a", 3)])
        assert gs.mu == 3.0
        assert gs.sigma == pytest.approx(math.sqrt(2), abs=1e-15)

    def test_global_stats_degenerate(self):
        with pytest.warns(DegenerateDataWarning):
            gs = N.fit_global_stats([np.full(4, 7.0)], epsilon=1e-6)
        assert gs.sigma == 1e-6

    def test_global_stats_idempotent(self, rng):
        X = rng.normal(size=(50, 20))
        X = (X - X.mean()) / X.std(ddof=1)
        gs = N.fit_global_stats(X)
        assert gs.mu == pytest.approx(0, abs=1e-12) and gs.sigma == pytest.approx(1, abs=1e-12)

    @pytest.mark.parametrize("x,expected", [([1, 2, 3], (2, 1)), ([5, 5, 5, 5], (5, 0)),
                                            ([0, 10], (5, math.sqrt(50)))])
    def test_instance_stats(self, x, expected):
        s = N.instance_stats(x)
        assert (s.mu_x, s.sigma_x) == pytest.approx(expected, abs=1e-12)


class TestTransforms:
    def test_instance(self):
        np.testing.assert_allclose(N.normalize([1, 2, 3], strat("instance")), [-1, 0, 1], atol=1e-12)

    def test_revin(self):
        np.testing.assert_allclose(N.normalize([1, 2, 3], strat("revin", 2, 1)), [-1, 1, 3], atol=1e-12)

    def test_minmax(self):
        out = N.normalize([2, 4, 6], strat("minmax"), N.MinMaxParams(2, 6))
        np.testing.assert_allclose(out, [0, 0.5, 1], atol=1e-12)

    def test_revin_denormalize(self):
        out = N.denormalize([1.0], strat("revin", 2, 1), N.InstanceStats(10, 3))
        np.testing.assert_allclose(out, [10.0], atol=1e-12)

    def test_cmin_identity_equals_instance(self, rng):
        x, f = rng.normal(size=12), rng.normal(size=4)
        ctx = N.instance_stats(x)
        s_cmin = strat("cmin", clusters={"k": N.CminParams(cluster="k")})
        np.testing.assert_array_equal(N.denormalize(f, s_cmin, ctx, "k"), N.denormalize(f, strat("instance"), ctx))
        np.testing.assert_array_equal(N.normalize(x, s_cmin, ctx, "k"), N.normalize(x, strat("instance"), ctx))

    def test_cmin_output_map(self):
        p = N.CminParams(N.AffineParams(2.0, 0.5), N.AffineParams(3.0, -1.0), "k")
        out = N.denormalize([2.5], strat("cmin", eps=1e-12, clusters={"k": p}), N.InstanceStats(4.0, 2.0), "k")
        # (sigma+eps) * (alpha (f - nu) / gamma + beta) + mu = 2 * (3*2/2 - 1) + 4
        assert out[0] == pytest.approx(8.0, abs=1e-10)

    def test_missing_context(self):
        with pytest.raises(MissingContext):
            N.normalize([1, 2], strat("standard"))
        with pytest.raises(MissingContext):
            N.normalize([1, 2], strat("minmax"), N.GlobalStats(0, 1))
        with pytest.raises(MissingContext):
            N.denormalize([1, 2], strat("instance"), None)

    def test_zero_scale(self):
        with pytest.raises(ZeroScale):
            N.denormalize([1.0], strat("revin", 0.0, 1.0), N.InstanceStats(0, 1))
        p = N.CminParams(N.AffineParams(0.0, 0.0), N.AffineParams(), "k")
        with pytest.raises(ZeroScale):
            N.denormalize([1.0], strat("cmin", clusters={"k": p}), N.InstanceStats(0, 1), "k")

    def test_relative_warns_on_nonpositive_mean(self):
        with pytest.warns(RuntimeWarning):
            N.normalize([1, 2], strat("relative"), N.GlobalStats(-1.0, 1.0))

    def test_normalize_target(self):
        np.testing.assert_allclose(N.normalize_target([4, 6], N.InstanceStats(4, 2), 0.0), [0, 1])

    def test_constant_series_target_is_large_not_error(self):
        out = N.normalize_target([5.0, 6.0], N.instance_stats([5.0, 5.0, 5.0]), 1e-6)
        assert np.all(np.isfinite(out)) and abs(out[1]) > 1e5

    def test_strategy_json_round_trip(self):
        s = strat("cmin", clusters={"a": N.CminParams(N.AffineParams(1.5, 0.1), N.AffineParams(0.9, 0.7), "a")})
        assert N.NormStrategy.from_json(s.to_json()) == s
        with pytest.raises(ValueError):
            N.NormStrategy("bogus")
        with pytest.raises(ValueError):
            N.NormStrategy("instance", 0.0)


class TestModulations:
    def test_identity(self, rng):
        x = rng.normal(size=8)
        m = N.modulations(x, x, 0.0)
        assert (m.delta, m.lam) == pytest.approx((0, 1), abs=1e-12)

    def test_hand_example(self):
        m = N.modulations([0, 2], [3, 5], 0.0)
        assert (m.delta, m.lam) == pytest.approx((3 / math.sqrt(2), 1), abs=1e-12)

    def test_target_identity(self, rng):
        x, y = rng.normal(size=20), rng.normal(2, 3, size=6)
        yt = N.normalize_target(y, N.instance_stats(x), 0.0)
        m = N.modulations(x, y, 0.0)
        assert yt.mean() == pytest.approx(m.delta, abs=1e-12)
        assert yt.std(ddof=1) == pytest.approx(m.lam, abs=1e-12)

    def test_cmin_init(self):
        x = np.array([0.0, 2.0])
        pairs = {"c": [WindowPair(x, x + 1 * math.sqrt(2), "u", 0)]}
        p = N.cmin_init(pairs, 0.0)["c"]
        assert (p.gamma, p.nu) == (1.0, 0.0)
        assert (p.beta, p.alpha) == pytest.approx((1.0, 1.0), abs=1e-12)

    def test_cmin_init_identity_pairs(self, rng):
        xs = [rng.normal(size=6) for _ in range(3)]
        p = N.cmin_init({"c": [WindowPair(x, x, "u", 0) for x in xs]}, 0.0)["c"]
        assert (p.gamma, p.nu, p.beta, p.alpha) == pytest.approx((1, 0, 0, 1), abs=1e-12)

    def test_cmin_init_mean(self):
        # pair 1: delta=1, lambda=2 ; pair 2: delta=3, lambda=4  (x has mean 0, std 1)
        x = np.array([-1.0, 1.0]) / math.sqrt(2)
        y1 = 1 + 2 * x
        y2 = 3 + 4 * x
        p = N.cmin_init({"c": [WindowPair(x, y1, "u", 0), WindowPair(x, y2, "u", 0)]}, 0.0)["c"]
        assert (p.beta, p.alpha) == pytest.approx((2, 3), abs=1e-12)

    def test_cmin_init_empty(self):
        with pytest.raises(EmptyCluster):
            N.cmin_init({"c": []})


class TestProperties:
    @given(window)
    @settings(max_examples=200, deadline=None)
    def test_instance_stationarity(self, x):
        s = N.instance_stats(x)
        assume(s.sigma_x > 1e-6 * (1 + abs(s.mu_x)))
        for alpha, beta in ((1.0, 0.0), (2.5, -0.75)):
            z = N.normalize(x, strat("revin", alpha, beta))
            assert abs(z.mean() - beta) < 1e-9
            assert abs(z.std(ddof=1) - alpha) < 1e-9

    @given(window, st.floats(1e-6, 1e-2))
    @settings(max_examples=100, deadline=None)
    def test_epsilon_bound(self, x, eps):
        s = N.instance_stats(x)
        assume(s.sigma_x > 1e-3)
        z = N.normalize(x, strat("instance", eps=eps))
        assert abs(z.std(ddof=1) - 1.0) <= eps / s.sigma_x + 1e-12

    @given(window, st.floats(0.01, 100), st.floats(-100, 100))
    @settings(max_examples=200, deadline=None)
    def test_scale_offset_invariance(self, x, a, b):
        s = N.instance_stats(x)
        assume(s.sigma_x > 1e-3 * (1 + abs(s.mu_x)))
        np.testing.assert_allclose(N.normalize(a * x + b, strat("instance")), N.normalize(x, strat("instance")),
                                   atol=1e-8)

    @given(window, window, st.floats(0.01, 100), st.floats(-100, 100))
    @settings(max_examples=200, deadline=None)
    def test_modulation_affine_invariance(self, x, y, a, b):
        s = N.instance_stats(x)
        assume(s.sigma_x > 1e-3 * (1 + abs(s.mu_x)))
        m1 = N.modulations(x, y, 0.0)
        m2 = N.modulations(a * x + b, a * y + b, 0.0)
        scale = 1 + abs(m1.delta) + abs(m1.lam)
        assert m2.delta == pytest.approx(m1.delta, abs=1e-7 * scale)
        assert m2.lam == pytest.approx(m1.lam, abs=1e-7 * scale)
        assert m1.lam >= 0

    @given(window, arrays(np.float64, 5, elements=finite))
    @settings(max_examples=200, deadline=None)
    def test_cmin_identity_equals_revin_without_affine(self, x, f):
        ctx = N.instance_stats(x)
        s_cmin = strat("cmin", eps=1e-6, clusters={"k": N.CminParams(cluster="k")})
        s_revin = strat("revin", eps=1e-6)
        np.testing.assert_array_equal(N.denormalize(f, s_cmin, ctx, "k"), N.denormalize(f, s_revin, ctx))


class TestEstimator:
    def test_per_kind_round_trip(self, rng):
        X = rng.normal(5, 2, size=(40, 12))
        users = np.array([f"u{i % 4}" for i in range(40)], dtype=object)
        clusters = np.array([f"c{i % 2}" for i in range(40)], dtype=object)
        for kind in N.KINDS:
            est = N.WindowNormalizer(kind, alpha=1.5, beta=0.2).fit(X, X[:, :3], users=users, clusters=clusters)
            Z = est.transform(X, users, clusters)
            if kind != "cmin":
                back = est.inverse_transform(Z, X, users, clusters)
                np.testing.assert_allclose(back, X, rtol=1e-10)

    def test_transform_matches_single_window(self, rng):
        X = rng.normal(size=(5, 10))
        est = N.WindowNormalizer("standard").fit(X)
        for row, z in zip(X, est.transform(X)):
            np.testing.assert_allclose(z, N.normalize(row, est.strategy_, est.stats_), rtol=1e-14)

    def test_cmin_init_from_fit(self, rng):
        X = rng.normal(size=(30, 10))
        Y = 2 + X[:, :4]
        est = N.WindowNormalizer("cmin").fit(X, Y, clusters=["a"] * 30)
        p = est.strategy_.clusters["a"]
        d, lam = N.batch_modulations(X, Y)
        assert p.beta == pytest.approx(d.mean()) and p.alpha == pytest.approx(lam.mean())

    def test_per_user_needs_users(self, rng):
        with pytest.raises(MissingContext):
            N.WindowNormalizer("per_user_standard").fit(rng.normal(size=(4, 5)))

    def test_unseen_user(self, rng):
        est = N.WindowNormalizer("per_user_standard").fit(rng.normal(size=(4, 5)), users=["a"] * 4)
        with pytest.raises(MissingContext):
            est.transform(rng.normal(size=(1, 5)), users=["b"])
        est.update_user_stats(rng.normal(size=(2, 5)), ["b", "b"])
        est.transform(rng.normal(size=(1, 5)), users=["b"])

    def test_serialization(self, rng):
        X = rng.normal(size=(10, 6))
        est = N.WindowNormalizer("minmax").fit(X)
        back = N.WindowNormalizer.from_dict(est.to_dict())
        np.testing.assert_array_equal(back.transform(X), est.transform(X))

    def test_get_params(self):
        assert N.WindowNormalizer("revin", alpha=2.0).get_params()["alpha"] == 2.0
