import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kscp import autodiff as ad


def fd_check(fn, theta, h=1e-6, tol=1e-6):
    _, g = ad.value_and_grad(fn, theta)
    num = ad.finite_difference(fn, theta, np.arange(theta.size), h)
    assert np.allclose(g, num, rtol=tol, atol=tol), (g, num)


def rand(shape, seed=0, lo=-2.0, hi=2.0):
    return np.random.default_rng(seed).uniform(lo, hi, shape)


UNARY = {
    "sigmoid": ad.sigmoid,
    "softplus": ad.softplus,
    "exp": ad.exp,
    "square": ad.square,
    "leaky_relu": lambda t: ad.leaky_relu(t, 0.1),
    "abs": ad.absolute,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_finite_differences(name):
    w = rand(6, 1)
    fd_check(lambda th: ad.tsum(UNARY[name](th) * w), rand(6) + 0.05)


def test_log_and_sqrt_gradients():
    w = rand(5, 1)
    fd_check(lambda th: ad.tsum(ad.log(th) * w), rand(5, lo=0.5, hi=2.0))
    fd_check(lambda th: ad.tsum(ad.sqrt(th) * w), rand(5, lo=0.5, hi=2.0))


def test_broadcast_add_mul_div_unbroadcast():
    b = rand((4, 3), 2)

    def fn(th):
        row = ad.reshape(th[:3], (1, 3))
        col = ad.reshape(th[3:], (4, 1))
        return ad.tsum((b + row) * col / (ad.square(row) + 1.0))

    fd_check(fn, rand(7, 3))


def test_matmul_and_reductions():
    a = rand((5, 4), 4)

    def fn(th):
        w = ad.reshape(th, (4, 2))
        out = ad.matmul(a, w)
        return ad.mean(ad.logsumexp(out, axis=1)) + ad.tsum(ad.tmax(out, axis=0))

    fd_check(fn, rand(8, 5))


def test_getitem_scatter_adds_repeated_indices():
    idx = np.array([0, 2, 2, 1])

    def fn(th):
        return ad.tsum(ad.square(ad.getitem(th, idx)))

    _, g = ad.value_and_grad(fn, np.array([1.0, 2.0, 3.0]))
    assert np.allclose(g, [2.0, 4.0, 12.0])


def test_stack_and_minimum_maximum_away_from_ties():
    def fn(th):
        a, b = th[:3], th[3:]
        s = ad.stack([ad.minimum(a, b), ad.maximum(b, a)], axis=1)
        return ad.tsum(s * np.array([[1.0, 3.0]]))

    fd_check(fn, np.array([0.1, 2.0, -1.0, 0.5, 1.0, 3.0]))


def test_tie_conventions():
    _, g = ad.value_and_grad(lambda th: ad.maximum(th[0], th[1]), np.array([1.0, 1.0]))
    assert g.tolist() == [1.0, 0.0]
    _, g = ad.value_and_grad(lambda th: ad.minimum(th[0], th[1]), np.array([1.0, 1.0]))
    assert g.tolist() == [1.0, 0.0]
    _, g = ad.value_and_grad(lambda th: ad.tmax(th), np.array([2.0, 5.0, 5.0]))
    assert g.tolist() == [0.0, 1.0, 0.0]
    _, g = ad.value_and_grad(lambda th: ad.tsum(ad.absolute(th)), np.array([0.0, -2.0]))
    assert g.tolist() == [0.0, -1.0]


def test_sigmoid_cdf_matches_unfused_graph():
    v0 = rand((3, 7), 6)
    t = np.linspace(-2, 2, 9)
    w = rand((3, 9), 7)

    def fused(th):
        return ad.tsum(ad.sigmoid_cdf(ad.reshape(th, (3, 7)), t, 3.0) * w)

    def unfused(th):
        v = ad.reshape(ad.reshape(th, (3, 7)), (3, 7, 1))
        return ad.tsum(ad.mean(ad.sigmoid(3.0 * (t - v)), axis=-2) * w)

    a, ga = ad.value_and_grad(fused, v0.ravel())
    b, gb = ad.value_and_grad(unfused, v0.ravel())
    assert a == pytest.approx(b, abs=1e-12)
    assert np.allclose(ga, gb, atol=1e-12)


def test_plain_arrays_pass_through_as_numpy():
    x = np.array([-1.0, 0.0, 2.0])
    assert isinstance(ad.sigmoid(x), np.ndarray)
    assert np.allclose(ad.absolute(x), np.abs(x))
    assert ad.tmax(x) == 2.0


def test_non_finite_values_name_the_node():
    with pytest.raises(ad.NonFiniteError, match="log"):
        ad.value_and_grad(lambda th: ad.tsum(ad.log(th)), np.array([-1.0]))


def test_constant_objective_has_zero_gradient():
    val, g = ad.value_and_grad(lambda th: 3.0, np.ones(4))
    assert val == 3.0 and not g.any()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=8))
def test_logsumexp_is_stable_and_exact(values):
    x = np.array(values)
    assert float(ad.logsumexp(x + 800.0)) == pytest.approx(np.log(np.exp(x).sum()) + 800.0, rel=1e-12)
