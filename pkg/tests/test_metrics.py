import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqsal import metrics as mt
from seqsal.salmap import center_prior

# ---------------------------------------------------------------------------
# independent oracles: plain loops over pixels, no shared helpers


def kl_oracle(pred, gt, eps=1e-7):
    ps, gs = sum(pred.ravel()), sum(gt.ravel())
    total = 0.0
    for p, g in zip(pred.ravel(), gt.ravel()):
        p, g = p / ps, g / gs
        total += g * math.log(eps + g / (eps + p))
    return total


def cc_oracle(a, b):
    a, b = list(a.ravel()), list(b.ravel())
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b)) / n
    va = sum((x - ma) ** 2 for x in a) / n
    vb = sum((y - mb) ** 2 for y in b) / n
    return cov / math.sqrt(va * vb)


def sim_oracle(a, b):
    sa, sb = sum(a.ravel()), sum(b.ravel())
    return sum(min(x / sa, y / sb) for x, y in zip(a.ravel(), b.ravel()))


def nss_oracle(pred, fix):
    vals = list(pred.ravel())
    n = len(vals)
    mean = sum(vals) / n
    sd = math.sqrt(sum((v - mean) ** 2 for v in vals) / n)
    z = [(v - mean) / sd for v, f in zip(vals, fix.ravel()) if f]
    return sum(z) / len(z)


def sweep_auc_oracle(pos, neg):
    pos, neg = list(pos), list(neg)
    pts = [(0.0, 0.0)]
    for t in sorted(set(pos), reverse=True):
        tpr = sum(1 for v in pos if v >= t) / len(pos)
        fpr = sum(1 for v in neg if v >= t) / len(neg)
        pts.append((fpr, tpr))
    pts.append((1.0, 1.0))
    return sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(pts, pts[1:]))


def ig_oracle(pred, fix, base, eps=1e-7):
    ps, bs = sum(pred.ravel()), sum(base.ravel())
    gains = [math.log2(p / ps + eps) - math.log2(b / bs + eps)
             for p, b, f in zip(pred.ravel(), base.ravel(), fix.ravel()) if f]
    return sum(gains) / len(gains)


def _fixture(seed, shape, n_fix, ties=False):
    rng = np.random.default_rng(seed)
    pred = rng.random(shape)
    if ties:
        pred = np.round(pred * 4) / 4 + 0.01
    fix = np.zeros(shape, bool)
    fix.flat[rng.choice(pred.size, n_fix, replace=False)] = True
    return pred, fix


# ---------------------------------------------------------------------------
# KL


def test_kl_identity():
    p = np.random.default_rng(0).random((8, 8)) + 0.1
    assert abs(mt.kl(p, p)) < 1e-5


def test_kl_three_by_three_hand_sum():
    gt = np.array([[0.5, 0.5, 0], [0, 0, 0], [0, 0, 0]])
    pred = np.ones((3, 3))
    eps = 1e-7
    expected = 2 * 0.5 * math.log(eps + 0.5 / (eps + 1 / 9))
    assert mt.kl(pred, gt) == pytest.approx(expected, abs=1e-12)
    assert mt.kl(pred, gt) == pytest.approx(math.log(4.5), abs=1e-5)


def test_kl_grows_as_eps_shrinks():
    gt = np.zeros((4, 4)); gt[0, 0] = 1
    pred = np.ones((4, 4)); pred[0, 0] = 0
    values = [mt.kl(pred, gt, eps) for eps in (1e-3, 1e-5, 1e-7, 1e-9)]
    assert values[0] > 1 and all(b > a for a, b in zip(values, values[1:]))


def test_kl_errors():
    with pytest.raises(mt.MetricError):
        mt.kl(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(mt.MetricError):
        mt.kl(np.ones((2, 2)), np.ones((2, 3)))


# ---------------------------------------------------------------------------
# CC / SIM


def test_cc_identity_and_negation():
    a = np.random.default_rng(1).random((6, 6))
    assert mt.cc(a, a) == pytest.approx(1.0, abs=1e-12)
    assert mt.cc(a, -a + 3) == pytest.approx(-1.0, abs=1e-12)


def test_cc_constant_raises():
    with pytest.raises(mt.MetricError):
        mt.cc(np.ones((3, 3)), np.random.default_rng(0).random((3, 3)))


def test_sim_cases():
    a = np.random.default_rng(2).random((5, 5))
    assert mt.sim(a, a) == pytest.approx(1.0, abs=1e-12)
    left = np.zeros((2, 4)); left[:, :2] = 1
    assert mt.sim(left, 1 - left) == 0.0
    assert mt.sim(np.array([[0.7, 0.3], [0, 0]]), np.array([[0.4, 0.6], [0, 0]])) == pytest.approx(0.7, abs=1e-12)
    with pytest.raises(mt.MetricError):
        mt.sim(a, np.zeros((5, 5)))


# ---------------------------------------------------------------------------
# NSS


def test_nss_single_peak_equals_its_zscore():
    p = np.ones((5, 5)); p[2, 3] = 10
    fix = np.zeros((5, 5), bool); fix[2, 3] = True
    assert mt.nss(p, fix) == pytest.approx((10 - p.mean()) / p.std(), abs=1e-12)


def test_nss_at_mean_is_zero():
    p = np.array([[0.0, 1.0], [2.0, 1.0]])
    fix = np.array([[False, True], [False, True]])
    assert mt.nss(p, fix) == 0.0


def test_nss_errors():
    with pytest.raises(mt.MetricError):
        mt.nss(np.random.default_rng(0).random((3, 3)), np.zeros((3, 3), bool))
    with pytest.raises(mt.MetricError):
        mt.nss(np.ones((3, 3)), np.ones((3, 3), bool))


# ---------------------------------------------------------------------------
# AUC family


def test_auc_judd_perfect_and_constant():
    p = np.zeros((4, 4)); p[1, 1] = p[2, 3] = 1
    assert mt.auc_judd(p, p > 0) == 1.0
    assert mt.auc_judd(np.full((4, 4), 0.3), p > 0) == 0.5


@pytest.mark.parametrize("seed", range(10))
def test_auc_judd_sweep_oracle(seed):
    pred, fix = _fixture(seed, (6, 6), 5, ties=seed % 2 == 0)
    assert abs(mt.auc_judd(pred, fix) - sweep_auc_oracle(pred[fix], pred[~fix])) < 1e-9


def test_auc_borji_matches_oracle_on_same_draws():
    pred, fix = _fixture(3, (7, 7), 6)
    neg_pool = pred[~fix]
    rng = np.random.default_rng(11)
    idx = rng.integers(0, neg_pool.size, size=(20, fix.sum()))
    oracle = np.mean([sweep_auc_oracle(pred[fix], neg_pool[row]) for row in idx])
    assert abs(mt.auc_borji(pred, fix, 20, seed=11) - oracle) < 1e-9


def test_sauc_matches_oracle_on_same_draws():
    pred, fix = _fixture(4, (8, 8), 5)
    _, other = _fixture(5, (8, 8), 9)
    pool = pred[other]
    idx = np.random.default_rng(2).integers(0, pool.size, size=(15, fix.sum()))
    oracle = np.mean([sweep_auc_oracle(pred[fix], pool[row]) for row in idx])
    assert abs(mt.sauc(pred, fix, other, 15, seed=2) - oracle) < 1e-9


def test_split_aucs_deterministic_and_seed_sensitive():
    pred, fix = _fixture(6, (8, 8), 6)
    assert mt.auc_borji(pred, fix, seed=3) == mt.auc_borji(pred, fix, seed=3)
    assert mt.auc_borji(pred, fix, seed=3) != mt.auc_borji(pred, fix, seed=4)
    _, other = _fixture(7, (8, 8), 10)
    assert mt.sauc(pred, fix, other, seed=1) == mt.sauc(pred, fix, other, seed=1)


def test_sauc_perfect_separation():
    pred = np.zeros((6, 6)); pred[0, :] = 1
    fix = pred > 0
    other = np.zeros((6, 6), bool); other[3:, :] = True
    assert mt.sauc(pred, fix, other) == pytest.approx(1.0)
    with pytest.raises(mt.MetricError, match="empty"):
        mt.sauc(pred, fix, np.zeros((6, 6), bool))


def test_center_bias_fools_borji_not_sauc():
    # fixations and the other-image pool both follow the same centre prior,
    # which is also the prediction; pools are kept sparse so that collapsing
    # repeated pixels does not flatten the negative distribution
    shape = (80, 80)
    prior = center_prior(shape, sigma=10)
    borji, shuffled = [], []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        fix = np.zeros(shape, bool); fix.flat[rng.choice(prior.size, 60, p=prior.ravel())] = True
        other = np.zeros(shape, bool); other.flat[rng.choice(prior.size, 150, p=prior.ravel())] = True
        borji.append(mt.auc_borji(prior, fix, seed=seed))
        shuffled.append(mt.sauc(prior, fix, other, seed=seed))
    assert min(borji) > 0.85
    assert abs(np.mean(shuffled) - 0.5) < 0.05


@given(st.integers(0, 2**31 - 1), st.sampled_from(["exp", "cube", "log", "affine"]))
def test_auc_monotone_invariance(seed, kind):
    pred, fix = _fixture(seed, (8, 8), 6, ties=seed % 3 == 0)
    _, other = _fixture(seed + 1, (8, 8), 12)
    f = {"exp": np.exp, "cube": lambda x: x ** 3 + x, "log": lambda x: np.log(x + 1e-3),
         "affine": lambda x: 3 * x - 7}[kind]
    g = f(pred)
    assert mt.auc_judd(g, fix) == pytest.approx(mt.auc_judd(pred, fix), abs=1e-12)
    assert mt.auc_borji(g, fix, 10, 1) == pytest.approx(mt.auc_borji(pred, fix, 10, 1), abs=1e-12)
    assert mt.sauc(g, fix, other, 10, 1) == pytest.approx(mt.sauc(pred, fix, other, 10, 1), abs=1e-12)


# ---------------------------------------------------------------------------
# IG


def test_ig_self_is_zero():
    b = center_prior((9, 9))
    fix = np.zeros((9, 9), bool); fix[4, 4] = fix[0, 0] = True
    assert mt.info_gain(b, fix, b) == 0.0


def test_ig_one_bit_construction():
    base = np.full((4, 4), 1 / 16)
    fix = np.zeros((4, 4), bool); fix[0, :] = True
    pred = np.full((4, 4), 8 / 16 / 12); pred[0, :] = 2 / 16
    assert pred.sum() == pytest.approx(1.0)
    assert mt.info_gain(pred, fix, base) == pytest.approx(1.0, abs=1e-5)


# ---------------------------------------------------------------------------
# formula oracles on small fixtures


@pytest.mark.parametrize("seed", range(8))
def test_formula_oracles(seed):
    rng = np.random.default_rng(100 + seed)
    shape = tuple(rng.integers(5, 9, size=2))
    pred, fix = _fixture(seed, shape, 4)
    gt = rng.random(shape) + 0.01
    base = rng.random(shape) + 0.05
    assert abs(mt.kl(pred, gt) - kl_oracle(pred, gt)) < 1e-10
    assert abs(mt.cc(pred, gt) - cc_oracle(pred, gt)) < 1e-10
    assert abs(mt.sim(pred, gt) - sim_oracle(pred, gt)) < 1e-10
    assert abs(mt.nss(pred, fix) - nss_oracle(pred, fix)) < 1e-10
    assert abs(mt.info_gain(pred, fix, base) - ig_oracle(pred, fix, base)) < 1e-10
    assert abs(mt.auc_judd(pred, fix) - sweep_auc_oracle(pred[fix], pred[~fix])) < 1e-9


# ---------------------------------------------------------------------------
# invariances


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100), st.floats(-10, 10))
def test_nss_affine_invariance(seed, scale, shift):
    pred, fix = _fixture(seed, (6, 6), 4)
    assert abs(mt.nss(scale * pred + shift, fix) - mt.nss(pred, fix)) < 1e-9


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
def test_sum_normalized_metrics_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    a, b = rng.random((6, 6)) + 0.01, rng.random((6, 6)) + 0.01
    assert abs(mt.sim(scale * a, b) - mt.sim(a, b)) < 1e-12
    assert abs(mt.kl(scale * a, b) - mt.kl(a, b)) < 1e-9
    assert abs(mt.kl(a, scale * b) - mt.kl(a, b)) < 1e-9


@given(st.integers(0, 2**31 - 1))
def test_report_ranges(seed):
    rng = np.random.default_rng(seed)
    pred, fix = _fixture(seed, (8, 8), 5)
    gt = rng.random((8, 8))
    _, other = _fixture(seed + 7, (8, 8), 9)
    r = mt.evaluate(pred, gt, fix, other_fix=other, baseline=center_prior((8, 8)), n_splits=5, seed=seed)
    assert -1 <= r.cc <= 1 and 0 <= r.sim <= 1
    assert all(0 <= v <= 1 for v in (r.auc_judd, r.auc_borji, r.sauc))
    assert r.kl >= -1e-5


# ---------------------------------------------------------------------------
# report serialization


def test_report_rows_and_mean():
    a = mt.MetricReport(kl=0.1, cc=0.5, sim=0.4, nss=1.0)
    b = mt.MetricReport(kl=0.3, cc=0.7, sim=0.6, nss=2.0, ig=1.0)
    m = mt.MetricReport.mean([a, b])
    assert m.kl == pytest.approx(0.2) and m.ig == 1.0 and m.sauc is None
    assert a.csv_row("x", digits=2) == "x,0.10,0.50,0.40,1.00,,,,"
    assert list(json.loads(b.to_json())) == list(mt.METRIC_NAMES)


def test_evaluate_skips_optional_metrics():
    pred, fix = _fixture(0, (6, 6), 3)
    r = mt.evaluate(pred, pred, fix, n_splits=3)
    assert r.sauc is None and r.ig is None
    assert r.cc == pytest.approx(1.0)
