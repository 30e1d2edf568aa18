import json
import math

import numpy as np
import pytest
from scipy import stats

from kscp import cde
from kscp.cde import MdnModel, NwCde, fit_mdn, fit_nw, load_cde, mdn_nll, mixture_std, default_mdn_optimizer
from kscp.data import Dataset, gen_setting_one, gen_setting_two

ENTROPY_N01 = 0.5 * math.log(2 * math.pi * math.e)


def hand_mdn(n_comp=1, mus=(0.0,), slope_mu=0.0, sigma=1.0, logits=None):
    """Linear MDN on one feature with no hidden layer and identity standardization."""
    k = n_comp
    raw = math.log(math.expm1(sigma - cde.SIGMA_FLOOR))
    W = np.zeros((1, 3 * k))
    W[0, k:2 * k] = slope_mu
    b = np.concatenate([np.zeros(k) if logits is None else np.asarray(logits, float), mus, np.full(k, raw)])
    return MdnModel(k, (1, 3 * k), np.concatenate([W.ravel(), b]), np.zeros(1), np.ones(1), 0.0, 1.0)


def test_single_standard_normal_nll_at_zero():
    mdn = hand_mdn()
    assert mdn_nll(mdn, Dataset(np.zeros((1, 1)), np.zeros(1))) == pytest.approx(0.5 * math.log(2 * math.pi))


def test_duplicate_components_collapse():
    rng = np.random.default_rng(0)
    batch = Dataset(rng.normal(size=(50, 1)), rng.normal(size=50))
    one = hand_mdn(1, (0.3,), 0.5)
    two = hand_mdn(2, (0.3, 0.3), 0.5)
    assert mdn_nll(two, batch) == pytest.approx(mdn_nll(one, batch), abs=1e-12)


def test_nll_is_translation_invariant():
    rng = np.random.default_rng(1)
    batch = Dataset(rng.normal(size=(30, 1)), rng.normal(size=30))
    shifted = Dataset(batch.x, batch.y + 4.0)
    assert mdn_nll(hand_mdn(2, (-1.0, 1.0)), batch) == pytest.approx(mdn_nll(hand_mdn(2, (3.0, 5.0)), shifted))


def test_mdn_nll_rejects_empty_batch():
    with pytest.raises(ValueError):
        mdn_nll(hand_mdn(), Dataset(np.zeros((0, 1)), np.zeros(0)))


def test_mixture_invariants():
    mdn = fit_mdn(gen_setting_two(200, 0), 3, default_mdn_optimizer(epochs=5), hidden=(8,))
    w, mu, sig = mdn.mixture(np.linspace(-2, 3, 11))
    assert np.allclose(w.sum(1), 1) and np.all(w >= 0)
    assert np.all(sig >= cde.SIGMA_FLOOR)


def test_setting_two_fit_reaches_noise_entropy():
    mdn = fit_mdn(gen_setting_two(2000, 0), 3, default_mdn_optimizer(epochs=60))
    held_out = gen_setting_two(20_000, 1)
    assert mdn.nll(held_out.x, held_out.y) == pytest.approx(ENTROPY_N01, abs=0.05)


def test_setting_one_fit_tracks_group_means():
    mdn = fit_mdn(gen_setting_one(2000, 0), 3, default_mdn_optimizer(epochs=200))
    assert mdn.sample(2.1, 4000, seed=0).mean() == pytest.approx(0.0, abs=0.25)
    assert mdn.sample(0.0, 4000, seed=0).mean() == pytest.approx(2.0, abs=0.25)


def test_more_components_fit_bimodal_data_better():
    rng = np.random.default_rng(3)
    y = np.where(rng.random(1500) < 0.5, -3.0, 3.0) + rng.normal(0, 0.5, 1500)
    data = Dataset(rng.uniform(size=(1500, 1)), y)
    cfg = default_mdn_optimizer(epochs=40)
    one = fit_mdn(data, 1, cfg, hidden=(16,))
    two = fit_mdn(data, 2, cfg, hidden=(16,))
    assert mdn_nll(two, data) < mdn_nll(one, data) - 0.3


def test_sample_mean_of_shifted_component():
    mdn = hand_mdn(1, (0.0,), 1.0)
    assert mdn.sample(5.0, 10_000, seed=2).mean() == pytest.approx(5.0, abs=0.05)


def test_sampling_is_seeded():
    mdn = hand_mdn(2, (-1.0, 1.0))
    assert mdn.sample(0.3, 1, seed=9).tolist() == mdn.sample(0.3, 1, seed=9).tolist()
    batch = mdn.sample(np.zeros(3), 4, seed=1)
    assert batch.shape == (3, 4)
    with pytest.raises(ValueError):
        mdn.sample(0.0, 0)


def test_cond_std_examples():
    assert mdn_std(hand_mdn(1, (0.0,), sigma=2.0)) == pytest.approx(2.0)
    w = np.array([[0.5, 0.5]])
    assert mixture_std(w, np.array([[-1.0, 1.0]]), np.zeros((1, 2)))[0] == pytest.approx(1.0)


def mdn_std(mdn):
    return float(mdn.cond_std(np.zeros(1))[0])


def test_mixture_moments_match_samples():
    mdn = hand_mdn(3, (-2.0, 0.5, 3.0), 0.4, sigma=0.7, logits=(0.2, -0.5, 1.0))
    x = np.array([0.8])
    draws = mdn.sample(x, 100_000, seed=4)[0]
    m, s = mdn.cond_mean(x)[0], mdn.cond_std(x)[0]
    se = s / math.sqrt(draws.size)
    assert abs(draws.mean() - m) < 3 * se
    # std of the sample std is about s * sqrt((kurtosis - 1) / 4n); bimodal draws keep kurtosis small
    assert abs(draws.std() - s) < 3 * s * math.sqrt((stats.kurtosis(draws, fisher=False) - 1) / (4 * draws.size))
    w, mu, sig = mdn.mixture(x)
    var = s ** 2
    assert var >= float((w * sig ** 2).sum()) - 1e-12


def test_nw_single_row_degenerates():
    nw = NwCde(np.array([[1.0]]), np.array([3.0]), 1e-9, 1.0)
    assert np.allclose(nw.sample(1.0, 100, seed=0), 3.0, atol=1e-6)
    dens = NwCde(np.array([[1.0]]), np.array([3.0]), 0.5, 1.0).density(1.0, np.array([2.0, 3.5]))
    assert np.allclose(dens, stats.norm(3.0, 0.5).pdf([2.0, 3.5]))


def test_nw_density_symmetry_and_normalization():
    nw = NwCde(np.array([[-1.0], [1.0]]), np.array([-2.0, 2.0]), 0.4, 0.8)
    ys = np.linspace(-6, 6, 2001)
    d = nw.density(0.0, ys)
    assert np.allclose(d, d[::-1])
    data = gen_setting_one(500, 0)
    nw = fit_nw(data)
    assert np.trapezoid(nw.density(0.5, ys), ys) == pytest.approx(1.0, abs=0.01)
    assert np.all(d >= 0)


def test_nw_outside_support_raises():
    nw = NwCde(np.array([[0.0]]), np.array([0.0]), 0.1, 0.01)
    with pytest.raises(ValueError, match="outside data support"):
        nw.density(50.0, np.zeros(1))
    with pytest.raises(ValueError):
        NwCde(np.zeros((1, 1)), np.zeros(1), 0.0, 1.0)


def _nw_ks_at_zero(n, seed):
    nw = fit_nw(gen_setting_one(n, seed))
    return stats.kstest(nw.sample(0.0, 10_000, seed=seed), stats.norm(2.0, 1.0).cdf).statistic


@pytest.mark.xfail(reason="about 180 effective rows near x=0 at n=5000; expected KS is near 0.06", strict=False)
def test_nw_ks_threshold_at_five_thousand_rows():
    assert _nw_ks_at_zero(5000, 0) <= 0.05


def test_nw_is_consistent_on_setting_one():
    small = np.mean([_nw_ks_at_zero(1000, s) for s in range(3)])
    large = [_nw_ks_at_zero(50_000, s) for s in range(3)]
    assert max(large) <= 0.05 and np.mean(large) < small


def test_nw_cond_std_closed_form_matches_samples():
    nw = fit_nw(gen_setting_two(400, 0))
    s = nw.cond_std(np.array([0.3]))[0]
    assert nw.sample(0.3, 50_000, seed=5).std() == pytest.approx(s, rel=0.02)


@pytest.mark.parametrize("make", [lambda: hand_mdn(2, (-1.0, 1.0), 0.3), lambda: fit_nw(gen_setting_two(30, 0))])
def test_checkpoint_round_trip(tmp_path, make):
    model = make()
    path = tmp_path / "cde.json"
    model.save(path)
    back = load_cde(json.loads(path.read_text()))
    x = np.linspace(-1, 2, 7)
    assert np.array_equal(back.sample(x, 5, seed=3), model.sample(x, 5, seed=3))
    assert np.array_equal(back.cond_std(x), model.cond_std(x))
