from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hkt import nn
from hkt.errors import ConfigError, ShapeError
from hkt.transfer import (
    LossWeights, Pipeline, SourceSnapshot, TransferModel, apply_transfer, combined_loss,
    concat_weights, pipeline_step, transfer_objective_l1,
)

from conftest import assert_grad_close, central_diff


def make_target(net, source_id=1, lr=0.1):
    idx = net.hosted_index
    pipe = Pipeline(source_id, idx, TransferModel.selector(net.layers[idx].n_in, lr))
    return SimpleNamespace(model=net, pipelines={source_id: pipe})


def toy(seed, sizes=(4, 3, 3, 2), batch=6):
    rng = np.random.default_rng(seed)
    target = nn.DenseNet.init(list(sizes), rng)
    source = nn.DenseNet.init(list(sizes), rng)
    x = rng.normal(size=(batch, sizes[0]))
    y = rng.integers(0, sizes[-1], size=batch)
    return target, source, (x, y)


def fused_objective(net, idx, concat, tm, batch, teacher, w):
    """The scalar the pipeline minimizes, evaluated from scratch."""
    trial = net.copy()
    trial.layers[idx].weights = concat @ tm.m + tm.bias
    logits, _ = nn.forward(trial, batch[0])
    l1 = nn.cross_entropy(logits, batch[1])[0]
    l2 = nn.kl_divergence(teacher, nn.softmax(logits))[0]
    return combined_loss(l1, l2, w)


def test_concat_shapes_and_blocks(rng):
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    c = concat_weights(a, b)
    assert c.shape == (3, 6)
    assert np.array_equal(concat_weights(np.zeros((3, 3)), b)[:, 3:], b)
    for i in range(3):
        for j in range(3):
            assert c[i, j] == a[i, j] and c[i, 3 + j] == b[i, j]


def test_concat_rejects_mismatch():
    with pytest.raises(ShapeError):
        concat_weights(np.ones((3, 3)), np.ones((2, 2)))
    with pytest.raises(ShapeError):
        concat_weights(np.ones((2, 3)), np.ones((2, 3)))


def test_selector_blocks(rng):
    a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    tm = TransferModel.selector(4, 0.1)
    assert np.array_equal(apply_transfer(tm, concat_weights(a, b)), b)
    tm.m = np.vstack([np.eye(4), np.zeros((4, 4))])
    assert np.array_equal(apply_transfer(tm, concat_weights(a, b)), a)


def test_apply_transfer_2x2_scalar_loop(rng):
    tm = TransferModel(rng.normal(size=(4, 2)), rng.normal(size=2), nn.SgdState(0.1))
    c = rng.normal(size=(2, 4))
    expected = [[sum(c[i][k] * tm.m[k][j] for k in range(4)) + tm.bias[j] for j in range(2)]
                for i in range(2)]
    np.testing.assert_allclose(apply_transfer(tm, c), expected, atol=1e-12)


def test_apply_transfer_rejects_wrong_concat():
    with pytest.raises(ShapeError):
        apply_transfer(TransferModel.selector(3, 0.1), np.ones((3, 4)))


def test_transfer_model_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        TransferModel(np.zeros((5, 3)), np.zeros(3), nn.SgdState(0.1))


@given(arrays(np.float64, (3, 6), elements=st.floats(-10, 10)),
       arrays(np.float64, (3, 6), elements=st.floats(-10, 10)),
       arrays(np.float64, (3,), elements=st.floats(-10, 10)))
def test_apply_transfer_is_linear(a, b, bias):
    tm = TransferModel(np.random.default_rng(0).normal(size=(6, 3)), bias, nn.SgdState(0.1))
    lhs = apply_transfer(tm, a + b)
    rhs = apply_transfer(tm, a) + apply_transfer(tm, b) - bias
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(lhs).max()) * 100)


def test_l1_diagnostic_examples(rng):
    w = rng.normal(size=(2, 2))
    x = rng.normal(size=(5, 2))
    assert transfer_objective_l1(w, w, w, x, rng.normal(size=2)) == 0.0
    assert transfer_objective_l1(w, rng.normal(size=(2, 2)), rng.normal(size=(2, 2)),
                                 np.zeros((5, 2)), rng.normal(size=2)) == 0.0


def test_l1_diagnostic_elementwise_oracle(rng):
    ws, wa, wb = (rng.normal(size=(2, 2)) for _ in range(3))
    x = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    da = db = 0.0
    for r in range(3):
        for j in range(2):
            out = sum(x[r][k] * ws[k][j] for k in range(2)) + b[j]
            da += abs(out - (sum(x[r][k] * wa[k][j] for k in range(2)) + b[j]))
            db += abs(out - (sum(x[r][k] * wb[k][j] for k in range(2)) + b[j]))
    assert transfer_objective_l1(ws, wa, wb, x, b) == pytest.approx(da / 6 + db / 6, abs=1e-12)


def test_l1_shape_errors(rng):
    with pytest.raises(ShapeError):
        transfer_objective_l1(np.eye(2), np.eye(2), np.eye(3), np.ones((1, 2)), np.zeros(2))
    with pytest.raises(ShapeError):
        transfer_objective_l1(np.eye(2), np.eye(2), np.eye(2), np.ones((1, 3)), np.zeros(2))


def test_combined_loss_reductions():
    assert combined_loss(2.0, 4.0, LossWeights(0.5, 0.5)) == 1.5
    assert combined_loss(3.0, 7.0, LossWeights(1.0, 0.0)) == 1.5
    assert combined_loss(3.0, 7.0, LossWeights(0.0, 1.0)) == 3.5


@pytest.mark.parametrize("alpha,beta", [(0.5, 0.6), (0.3, 0.3), (1.2, -0.2), (0.5, 0.5 + 1e-9)])
def test_loss_weights_rejects_bad_sum(alpha, beta):
    with pytest.raises(ConfigError):
        LossWeights(alpha, beta)


def test_loss_weights_accepts_rounding_noise():
    w = LossWeights.from_alpha(0.7)
    assert w.beta == pytest.approx(0.3)
    LossWeights(0.1, 0.9 + 1e-13)


def test_step_on_identical_models_has_zero_kl_and_zero_kl_gradient(rng):
    net = nn.DenseNet.init([4, 3, 3, 2], rng)
    target = make_target(net.copy(), lr=1.0)
    batch = (rng.normal(size=(5, 4)), np.array([0, 1, 1, 0, 1]))
    before = target.pipelines[1].model.m.copy()
    out = pipeline_step(target, SourceSnapshot.take(1, net), batch, LossWeights(0.0, 1.0))
    assert out.loss2 == 0.0
    assert np.array_equal(target.pipelines[1].model.m, before)
    assert not target.pipelines[1].model.bias.any()


@pytest.mark.parametrize("seed", range(5))
def test_m_gradient_matches_finite_differences(seed):
    net, src, batch = toy(seed)
    w = LossWeights(0.5, 0.5)
    target = make_target(net, lr=1.0)
    tm = target.pipelines[1].model
    tm.m = tm.m + np.random.default_rng(seed).normal(scale=0.1, size=tm.m.shape)
    snap = SourceSnapshot.take(1, src)
    idx = net.hosted_index
    concat = concat_weights(snap.hosted_weights, net.layers[idx].weights)
    teacher = snap.distribution(batch[0])
    m0, b0 = tm.m.copy(), tm.bias.copy()
    probe = TransferModel(m0.copy(), b0.copy(), nn.SgdState(1.0))
    numeric_m = central_diff(lambda: fused_objective(net, idx, concat, probe, batch, teacher, w), probe.m)
    numeric_b = central_diff(lambda: fused_objective(net, idx, concat, probe, batch, teacher, w), probe.bias)
    pipeline_step(target, snap, batch, w)
    # with learning rate 1 and no momentum the step subtracts the gradient itself
    assert_grad_close(m0 - tm.m, numeric_m)
    assert_grad_close(b0 - tm.bias, numeric_b)


def test_beta_zero_descent_matches_finite_difference_descent():
    net, src, batch = toy(3, sizes=(4, 3, 3, 2), batch=8)
    w = LossWeights(1.0, 0.0)
    lr = 0.5
    target = make_target(net.copy(), lr=lr)
    snap = SourceSnapshot.take(1, src)
    idx = net.hosted_index
    concat = concat_weights(snap.hosted_weights, net.layers[idx].weights)
    teacher = snap.distribution(batch[0])
    oracle = TransferModel.selector(3, lr)
    traj, ref = [], []
    for _ in range(50):
        traj.append(pipeline_step(target, snap, batch, w, base=concat[:, 3:]).combined)
        f = lambda: fused_objective(net, idx, concat, oracle, batch, teacher, w)  # noqa: E731
        ref.append(f())
        gm, gb = central_diff(f, oracle.m), central_diff(f, oracle.bias)
        oracle.m, oracle.bias = oracle.m - lr * gm, oracle.bias - lr * gb
    assert all(b <= a + 1e-12 for a, b in zip(traj, traj[1:]))
    assert traj[-1] < traj[0]
    np.testing.assert_allclose(traj, ref, rtol=1e-6)


def test_step_only_touches_hosted_layer_and_transfer_model():
    net, src, batch = toy(7)
    target = make_target(net)
    snap = SourceSnapshot.take(1, src)
    src_before = [p.copy() for p in snap.net.parameters()]
    tgt_before = [p.copy() for p in net.parameters()]
    for _ in range(3):
        pipeline_step(target, snap, batch, LossWeights())
    assert all(np.array_equal(a, b) for a, b in zip(src_before, snap.net.parameters()))
    idx = net.hosted_index
    after = net.parameters()
    for k, (a, b) in enumerate(zip(tgt_before, after)):
        if k == 2 * idx:
            assert not np.array_equal(a, b)
        else:
            assert np.array_equal(a, b), f"parameter {k} changed"


def test_step_leaves_post_update_fusion_installed():
    net, src, batch = toy(8)
    target = make_target(net)
    snap = SourceSnapshot.take(1, src)
    idx = net.hosted_index
    base = net.layers[idx].weights.copy()
    pipeline_step(target, snap, batch, LossWeights(), base=base)
    expected = apply_transfer(target.pipelines[1].model, concat_weights(snap.hosted_weights, base))
    assert np.array_equal(net.layers[idx].weights, expected)


def test_loss2_objective_ignores_labels():
    net, src, (x, y) = toy(9)
    snap = SourceSnapshot.take(1, src)
    a, b = make_target(net.copy()), make_target(net.copy())
    pipeline_step(a, snap, (x, y), LossWeights(), objective="loss2")
    pipeline_step(b, snap, (x, 1 - y), LossWeights(), objective="loss2")
    assert np.array_equal(a.pipelines[1].model.m, b.pipelines[1].model.m)


def test_step_errors(rng):
    net, src, batch = toy(10)
    target = make_target(net)
    with pytest.raises(ConfigError):
        pipeline_step(target, SourceSnapshot.take(2, src), batch, LossWeights())
    with pytest.raises(ConfigError):
        pipeline_step(target, SourceSnapshot.take(1, src), batch, LossWeights(), objective="mse")
    wide = nn.DenseNet.init([4, 5, 5, 2], rng)
    with pytest.raises(ShapeError):
        pipeline_step(target, SourceSnapshot.take(1, wide), batch, LossWeights())


def test_snapshot_is_a_copy(rng):
    net = nn.DenseNet.init([3, 4, 4, 2], rng)
    snap = SourceSnapshot.take(0, net)
    net.layers[0].weights[:] = 0.0
    assert snap.net.layers[0].weights.any()
    assert not hasattr(snap, "features")
