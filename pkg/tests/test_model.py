import numpy as np
import pytest

from seqsal.recnet import NetMode, ToyConfig, ToyNet
from seqsal.recnet.gradcheck import block_checks, rollout_checks
from seqsal.recnet.tensor import Tensor

PARAM_COUNTS = {NetMode.BASE: 44764, NetMode.INCREMENTAL: 48101, NetMode.NON_INCREMENTAL: 50477}


def _image(n=1, size=32, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 3, size, size))


def test_base_shapes():
    out = ToyNet(ToyConfig()).eval()(_image())
    assert out.X.shape == (1, 16, 32, 32)
    assert len(out.S) == 4 and all(s.shape == (1, 1, 32, 32) for s in out.S)
    assert out.O == []


def test_saliency_maps_range_normalized():
    out = ToyNet(ToyConfig(seed=2)).eval()(_image(2))
    for s in out.S:
        for n in range(2):
            assert s.data[n].min() == pytest.approx(0.0, abs=1e-12)
            assert s.data[n].max() == pytest.approx(1.0, abs=1e-9)


def test_batch_independence_in_eval_mode():
    net = ToyNet(ToyConfig(mode="non-incremental", seed=1)).eval()
    img = _image(1)
    single = net(img)
    double = net(np.concatenate([img, img]))
    for a, b in zip(single.S + single.O, double.S + double.O):
        np.testing.assert_allclose(b.data[0], a.data[0], atol=1e-12)
        np.testing.assert_allclose(b.data[1], a.data[0], atol=1e-12)


def test_indivisible_input_rejected():
    with pytest.raises(ValueError, match="divisible by 32"):
        ToyNet(ToyConfig())(_image(size=48)[:, :, :40])


@pytest.mark.parametrize("mode", list(NetMode))
def test_parameter_counts_are_stable(mode):
    net = ToyNet(ToyConfig(mode=mode))
    assert net.n_params() == PARAM_COUNTS[mode]
    assert ToyNet(ToyConfig(mode=mode, seed=9)).n_params() == PARAM_COUNTS[mode]


def test_config_validation():
    with pytest.raises(ValueError, match="5 stages"):
        ToyConfig(encoder_stages=(8, 16, 24, 32))
    with pytest.raises(ValueError):
        ToyConfig(mode="incremental", T=1)
    with pytest.raises(ValueError):
        ToyConfig(mode="non-incremental", T=0)
    with pytest.raises(ValueError):
        ToyConfig(mode="sideways")


def test_init_is_seeded_uniform():
    a, b = ToyNet(ToyConfig(seed=4)), ToyNet(ToyConfig(seed=4))
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    w = a.params["enc1.conv.w"].data
    bound = 1 / np.sqrt(8 * 9)
    assert np.abs(w).max() <= bound and np.abs(w).max() > 0.9 * bound
    assert not np.array_equal(w, ToyNet(ToyConfig(seed=5)).params["enc1.conv.w"].data)


def test_base_forward_needs_base_mode():
    with pytest.raises(ValueError):
        ToyNet(ToyConfig(mode="incremental")).base_forward(_image())


def _recurrent(mode="incremental", T=3, seed=0):
    return ToyNet(ToyConfig(mode=mode, T=T, seed=seed)).eval()


def test_rb_step_from_zero_state():
    net = _recurrent()
    X = Tensor(np.random.default_rng(0).normal(size=(2, 16, 8, 8)))
    h1 = net.rb_step(X, net._zero_state(X))
    assert h1.shape == (2, 8, 8, 8) and np.all(np.isfinite(h1.data))
    h2 = net.rb_step(X, h1)
    assert h2.shape == h1.shape


def test_rb_step_shape_mismatch():
    net = _recurrent()
    with pytest.raises(ValueError):
        net.rb_step(np.zeros((1, 16, 8, 8)), np.zeros((1, 8, 4, 4)))


def test_hsab_step():
    net = _recurrent("non-incremental")
    h = Tensor(np.random.default_rng(1).normal(size=(1, 8, 8, 8)))
    k1 = net.hsab_step(h, net._zero_state(h))
    assert k1.shape == h.shape and np.all(np.isfinite(k1.data))
    with pytest.raises(ValueError):
        net.hsab_step(h, np.zeros((1, 8, 4, 4)))


def test_asb_zero_input_is_bias():
    net = _recurrent()
    o = net.asb(np.zeros((1, 8, 5, 5)))
    assert o.shape == (1, 1, 5, 5)
    np.testing.assert_allclose(o.data, net.params["ASB.b"].data[0])


def test_rb_step_is_not_additively_separable():
    # rb(X, h) + rb(X', h') == rb(X, h') + rb(X', h) for all inputs iff rb = f(X) + g(h)
    net = _recurrent(seed=3)
    rng = np.random.default_rng(0)
    X, X2 = (Tensor(rng.normal(size=(1, 16, 8, 8))) for _ in range(2))
    h, h2 = (Tensor(rng.normal(size=(1, 8, 8, 8))) for _ in range(2))
    rb = lambda a, b: net.rb_step(a, b).data
    gap = rb(X, h) + rb(X2, h2) - rb(X, h2) - rb(X2, h)
    assert np.abs(gap).max() > 1e-2


@pytest.mark.parametrize("T", [2, 3, 5])
def test_incremental_emits_T_minus_one(T):
    out = _recurrent("incremental", T)(_image())
    assert len(out.O) == T - 1
    assert all(o.shape == (1, 1, 32, 32) for o in out.O)
    assert len(out.S) == 4


@pytest.mark.parametrize("T", [1, 2, 4])
def test_nonincremental_emits_T(T):
    out = _recurrent("non-incremental", T)(_image())
    assert len(out.O) == T and len(out.S) == 4


def test_incremental_rollout_needs_two_steps():
    net = _recurrent()
    object.__setattr__(net.cfg, "T", 1)
    with pytest.raises(ValueError):
        net.rollout_incremental(np.zeros((1, 16, 32, 32)))


def test_rollout_deterministic():
    a = _recurrent("incremental", seed=7)(_image(seed=2))
    b = _recurrent("incremental", seed=7)(_image(seed=2))
    for x, y in zip(a.S + a.O, b.S + b.O):
        np.testing.assert_array_equal(x.data, y.data)


@pytest.mark.parametrize("check", block_checks(), ids=lambda c: c.name)
def test_block_gradients(check):
    assert check.passed, check.row()


@pytest.mark.parametrize("check", rollout_checks(), ids=lambda c: c.name)
def test_rollout_gradients(check):
    assert check.passed, check.row()
    assert check.n_checked >= 20
