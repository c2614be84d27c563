import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pernn.metrics import kl_divergence, mmd, r2_score, wasserstein_1d

finite_floats = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
sample_lists = st.lists(finite_floats, min_size=2, max_size=40)


# -- MMD ---------------------------------------------------------------------

def test_mmd_identical_sets_near_zero():
    a = np.array([0.3, -1.2, 4.0, 2.2, 0.3])
    assert mmd(a, a.copy()) <= 1e-9


def test_mmd_separated_masses_detected():
    a = np.zeros(12)
    b = np.full(12, 10.0)
    assert mmd(a, b) > mmd(a, a)


def test_mmd_matches_double_loop_oracle():
    rng = np.random.default_rng(0)
    a = rng.normal(0, 1, 7)
    b = rng.normal(0.5, 2, 9)
    # independent brute-force kernel sums
    pooled = np.concatenate([a, b])
    ds = [abs(pooled[i] - pooled[j]) for i in range(len(pooled))
          for j in range(i + 1, len(pooled))]
    sigma = float(np.median(ds))
    k = lambda x, y: math.exp(-((x - y) ** 2) / (2 * sigma * sigma))
    s_aa = sum(k(x, y) for i, x in enumerate(a) for j, y in enumerate(a) if i != j)
    s_bb = sum(k(x, y) for i, x in enumerate(b) for j, y in enumerate(b) if i != j)
    s_ab = sum(k(x, y) for x in a for y in b)
    m2 = s_aa / (len(a) * (len(a) - 1)) + s_bb / (len(b) * (len(b) - 1)) \
        - 2 * s_ab / (len(a) * len(b))
    expected = math.sqrt(max(m2, 0.0))
    assert mmd(a, b) == pytest.approx(expected, abs=1e-12)


def test_mmd_empty_rejected():
    with pytest.raises(ValueError):
        mmd([], [1.0])


# -- Wasserstein ---------------------------------------------------------------

def test_wasserstein_identity_and_shift():
    a = np.array([0.0, 0.0])
    b = np.array([1.0, 1.0])
    assert wasserstein_1d(a, a) == 0.0
    assert wasserstein_1d(a, b) == pytest.approx(1.0)


def _quantile_integral_oracle(a, b):
    """Integrate |Qa - Qb| exactly over the merged quantile breakpoints."""
    sa, sb = np.sort(a), np.sort(b)
    breaks = np.unique(np.concatenate([
        np.arange(len(a) + 1) / len(a), np.arange(len(b) + 1) / len(b)]))
    total = 0.0
    for q0, q1 in zip(breaks[:-1], breaks[1:]):
        mid = 0.5 * (q0 + q1)
        qa = sa[min(int(math.ceil(mid * len(a))) - 1, len(a) - 1)]
        qb = sb[min(int(math.ceil(mid * len(b))) - 1, len(b) - 1)]
        total += (q1 - q0) * abs(qa - qb)
    return total


def test_wasserstein_quantile_integral_oracle_unequal_sizes():
    rng = np.random.default_rng(3)
    a = rng.normal(0, 1, 13)
    b = rng.normal(1, 0.5, 29)
    assert wasserstein_1d(a, b) == pytest.approx(_quantile_integral_oracle(a, b), abs=1e-9)
    c = rng.normal(-2, 3, 8)
    assert wasserstein_1d(a, c) == pytest.approx(_quantile_integral_oracle(a, c), abs=1e-9)


@given(sample_lists, st.floats(-10, 10, allow_nan=False))
@settings(max_examples=50, deadline=None)
def test_wasserstein_translation_invariant_under_joint_shift(xs, c):
    a = np.array(xs)
    b = a[::-1] * 1.1
    d0 = wasserstein_1d(a, b)
    d1 = wasserstein_1d(a + c, b + c)
    assert d1 == pytest.approx(d0, abs=1e-9)


def test_wasserstein_point_mass_shift_exact():
    a = np.full(5, 2.0)
    c = 7.5
    assert wasserstein_1d(a, a + c) == pytest.approx(c)


# -- KL ------------------------------------------------------------------------

def test_kl_identical_sets_near_zero():
    a = np.array([0.0, 1.0, 2.0, 3.0, 4.5])
    assert kl_divergence(a, a.copy()) <= 1e-6


def test_kl_two_bin_hand_case():
    # p = (0.5, 0.5), q = (0.25, 0.75): 0.5 log 2 + 0.5 log(2/3)
    a = np.array([0.1, 0.2, 0.7, 0.8])
    b = np.array([0.1, 0.6, 0.7, 0.9])
    expected = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
    assert kl_divergence(a, b, bins=2) == pytest.approx(expected, abs=1e-6)


@given(sample_lists, sample_lists)
@settings(max_examples=50, deadline=None)
def test_kl_non_negative(xs, ys):
    assert kl_divergence(np.array(xs), np.array(ys)) >= -1e-12


def test_kl_is_asymmetric():
    a = np.array([0.0] * 9 + [1.0])
    b = np.array([0.0] * 5 + [1.0] * 5)
    assert kl_divergence(a, b, bins=2) != pytest.approx(kl_divergence(b, a, bins=2))


def test_kl_bins_validated():
    with pytest.raises(ValueError):
        kl_divergence([1.0, 2.0], [1.0, 2.0], bins=1)


# -- R2 --------------------------------------------------------------------------

def test_r2_perfect_and_mean_predictor():
    truth = np.array([1.0, 2.0, 3.0, 4.0])
    assert r2_score(truth, truth) == pytest.approx(1.0)
    assert r2_score(np.full(4, truth.mean()), truth) == pytest.approx(0.0)


def test_r2_matches_loop_oracle():
    rng = np.random.default_rng(5)
    truth = rng.normal(0, 2, 40)
    pred = truth + rng.normal(0, 1, 40)
    mean_t = sum(truth) / len(truth)
    ss_tot = sum((t - mean_t) ** 2 for t in truth)
    ss_res = sum((t - p) ** 2 for t, p in zip(truth, pred))
    assert r2_score(pred, truth) == pytest.approx(1 - ss_res / ss_tot, abs=1e-12)


def test_r2_zero_variance_rejected():
    with pytest.raises(ValueError):
        r2_score([1.0, 2.0], [3.0, 3.0])


# -- shared properties -------------------------------------------------------------

@given(sample_lists)
@settings(max_examples=40, deadline=None)
def test_symmetric_zero_on_identical_inputs(xs):
    a = np.array(xs)
    assert mmd(a, a.copy()) <= 1e-9
    assert wasserstein_1d(a, a.copy()) == 0.0
    assert kl_divergence(a, a.copy()) <= 1e-6


def test_mmd_and_wasserstein_symmetric_in_arguments():
    rng = np.random.default_rng(11)
    a, b = rng.normal(0, 1, 15), rng.normal(1, 1, 9)
    assert mmd(a, b) == pytest.approx(mmd(b, a), abs=1e-12)
    assert wasserstein_1d(a, b) == pytest.approx(wasserstein_1d(b, a), abs=1e-12)


def test_permutation_invariance():
    rng = np.random.default_rng(13)
    a, b = rng.normal(0, 1, 12), rng.normal(1, 2, 12)
    pa, pb = rng.permutation(a), rng.permutation(b)
    assert mmd(a, b) == pytest.approx(mmd(pa, pb), abs=1e-12)
    assert wasserstein_1d(a, b) == pytest.approx(wasserstein_1d(pa, pb), abs=1e-12)
    assert kl_divergence(a, b) == pytest.approx(kl_divergence(pa, pb), abs=1e-12)
