import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from kscp import autodiff as ad
from kscp.scores import invert, quantile_levels, score, set_size

finite = st.floats(-50, 50, allow_nan=False)
positive = st.floats(0.01, 20)


def test_score_examples():
    assert score("residual", np.array([1.0]), np.array([3.0])).tolist() == [2.0]
    assert score("normalized", np.array([1.0]), np.array([3.0]), np.array([2.0])).tolist() == [1.0]
    band = np.array([[1.0, 3.0]] * 3)
    assert score("quantile", band, np.array([0.0, 2.0, 4.0])).tolist() == [1.0, -1.0, 1.0]


def test_score_errors():
    with pytest.raises(ValueError):
        score("chr", np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        score("normalized", np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        score("normalized", np.zeros(1), np.zeros(1), np.zeros(1))


def test_invert_examples():
    iv = invert("residual", np.array([2.0]), 1.5)
    assert (iv.lo[0], iv.hi[0], set_size(iv)[0]) == (0.5, 3.5, 3.0)
    iv = invert("quantile", np.array([[1.0, 3.0]]), 0.5)
    assert (iv.lo[0], iv.hi[0], set_size(iv)[0]) == (0.5, 3.5, 3.0)
    iv = invert("normalized", np.array([0.0]), 1.0, np.array([2.0]))
    assert (iv.lo[0], iv.hi[0]) == (-2.0, 2.0)


def test_empty_and_full_line_sets():
    iv = invert("quantile", np.array([[1.0, 3.0]]), -1.5)
    assert iv.empty[0] and set_size(iv)[0] == 0.0 and not iv.contains(2.0)[0]
    iv = invert("residual", np.array([0.0, 1.0]), math.inf)
    assert iv.full_line.all() and np.isposinf(set_size(iv)).all() and iv.contains([1e300, -1e300]).all()


def test_quantile_levels_split_alpha_evenly():
    assert quantile_levels(0.1) == pytest.approx((0.05, 0.95))


def test_score_works_on_graph_tensors():
    def fn(th):
        return ad.tsum(score("quantile", ad.reshape(th, (2, 2)), np.array([0.0, 5.0])))

    val, g = ad.value_and_grad(fn, np.array([1.0, 3.0, 1.0, 3.0]))
    assert val == 3.0 and g.tolist() == [1.0, 0.0, 0.0, -1.0]


def _ctx(kind, f, width, sig):
    if kind == "quantile":
        pred = np.array([[f, f + width]])
    else:
        pred = np.array([f])
    return pred, (np.array([sig]) if kind == "normalized" else None)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["residual", "normalized", "quantile"]), finite, st.floats(0, 10), positive, finite,
       st.floats(-5, 30))
def test_round_trip_membership(kind, f, width, sig, y, q):
    pred, sigma = _ctx(kind, f, width, sig)
    s = float(score(kind, pred, np.array([y]), sigma)[0])
    assume(abs(s - q) > 1e-9 * (1 + abs(q)))
    assert bool(invert(kind, pred, q, sigma).contains(y)[0]) == (s <= q)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["residual", "normalized"]), finite, positive, st.floats(0, 30))
def test_symmetric_about_point_prediction(kind, f, sig, q):
    pred, sigma = _ctx(kind, f, 0.0, sig)
    iv = invert(kind, pred, q, sigma)
    assert (iv.lo[0] + iv.hi[0]) / 2 == pytest.approx(f, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["residual", "normalized", "quantile"]), finite, st.floats(0, 10), positive,
       st.floats(-5, 30), st.floats(0, 10))
def test_intervals_grow_with_threshold(kind, f, width, sig, q, dq):
    pred, sigma = _ctx(kind, f, width, sig)
    a, b = invert(kind, pred, q, sigma), invert(kind, pred, q + dq, sigma)
    assert a.empty[0] or (b.lo[0] <= a.lo[0] and a.hi[0] <= b.hi[0])
    assert set_size(b)[0] >= set_size(a)[0]
