"""Market economy: pricing equation, payoffs, reference trajectories."""

import math
import random

import pytest

from bubblelab.errors import InvalidInputError, InvalidParamsError
from bubblelab.market import (
    MarketParams,
    earnings,
    fundamental_price,
    re_trajectory,
    realized_price,
)
from bubblelab.prompts import payoff_table_rows


@pytest.fixture
def params():
    return MarketParams()


class TestMarketParams:
    def test_defaults(self, params):
        assert params.r == 0.05
        assert params.growth_factor == 1.05
        assert params.fundamental == 60.0

    @pytest.mark.parametrize("kwargs", [
        {"r": 0.0},
        {"r": -0.1},
        {"mean_dividend": -1.0},
        {"cap": 59.0},          # below the fundamental price
        {"horizon": 2},
        {"n_agents": 0},
        {"guidance_range": (100.0, 0.0)},
    ])
    def test_invariants_rejected(self, kwargs):
        with pytest.raises(InvalidParamsError):
            MarketParams(**kwargs)


class TestRealizedPrice:
    def test_fixed_point_at_fundamental(self, params):
        assert realized_price([60.0] * 6, params) == pytest.approx(60.0, abs=1e-12)

    def test_hand_evaluated(self, params):
        assert realized_price([102.0] * 6, params) == pytest.approx(100.0, abs=1e-12)

    def test_at_the_cap(self, params):
        assert realized_price([1000.0] * 6, params) == pytest.approx(1003.0 / 1.05, rel=1e-12)

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), -1.0])
    def test_rejects_bad_predictions(self, params, bad):
        with pytest.raises(InvalidInputError):
            realized_price([60.0, bad, 60.0, 60.0, 60.0, 60.0], params)

    def test_empty_rejected(self, params):
        with pytest.raises(InvalidInputError):
            realized_price([], params)

    def test_monotone_in_each_prediction(self, params):
        rng = random.Random(7)
        for _ in range(50):
            preds = [rng.uniform(0, 1000) for _ in range(6)]
            base = realized_price(preds, params)
            idx = rng.randrange(6)
            bumped = list(preds)
            bumped[idx] += rng.uniform(0.1, 50)
            assert realized_price(bumped, params) > base


class TestEarnings:
    def test_zero_error_maximal(self):
        assert earnings(60.0, 60.0) == 1300.0

    def test_error_three(self):
        assert earnings(60.0, 63.0) == pytest.approx(1061.2244897959183)

    @pytest.mark.parametrize("err", [7.0, 7.5, 100.0])
    def test_zero_beyond_seven(self, err):
        assert earnings(60.0, 60.0 + err) == 0.0

    def test_symmetric_in_error_sign(self):
        rng = random.Random(3)
        for _ in range(50):
            base = rng.uniform(0, 1000)
            err = rng.uniform(0, 10)
            assert earnings(base, base + err) == pytest.approx(earnings(base, base - err))

    def test_bounds(self):
        rng = random.Random(11)
        for _ in range(200):
            value = earnings(rng.uniform(0, 1000), rng.uniform(0, 1000))
            assert 0.0 <= value <= 1300.0

    def test_not_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            earnings(float("nan"), 60.0)

    def test_published_table_agreement(self):
        rows = payoff_table_rows()
        assert len(rows) == 136  # plus the ">= 7 -> 0" row
        for err, points in rows:
            assert abs(round(earnings(0.0, err)) - points) <= 1, f"error {err}"


class TestFundamentalPrice:
    def test_default_sixty(self, params):
        assert fundamental_price(params) == 60.0

    def test_zero_dividend(self):
        assert fundamental_price(MarketParams(mean_dividend=0.0)) == 0.0

    def test_direct_division(self):
        assert fundamental_price(MarketParams(mean_dividend=5.0)) == 100.0


class TestReTrajectory:
    def test_constant_solution(self, params):
        assert re_trajectory(0.0, params) == [60.0] * 50

    def test_c400_values(self, params):
        path = re_trajectory(400.0, params)
        assert path[0] == pytest.approx(480.0)
        assert path[16] == pytest.approx(976.8073, abs=5e-4)
        assert path[17:] == [60.0] * 33

    def test_c400_peak_matches_published_rdmax(self, params):
        path = re_trajectory(400.0, params)
        rdmax = max((p - 60.0) / 60.0 for p in path)
        assert rdmax == pytest.approx(15.28, abs=0.005)

    def test_growth_recursion_pre_collapse(self, params):
        for c in (25.0, 400.0, 575.0):
            path = re_trajectory(c, params)
            pf = 60.0
            for prev, cur in zip(path, path[1:]):
                if cur == pf or prev == pf:
                    break
                assert (cur - pf) == pytest.approx(1.05 * (prev - pf), rel=1e-9)

    def test_negative_constant_rejected(self, params):
        with pytest.raises(InvalidInputError):
            re_trajectory(-1.0, params)
