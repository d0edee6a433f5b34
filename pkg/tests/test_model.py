import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from affordance.errors import EmptyDataset, ShapeMismatch
from affordance.extract import TrainingSample
from affordance.model import (
    AffordanceModel,
    ModelConfig,
    TrainConfig,
    backward,
    build_net,
    finite_difference_check,
    forward,
    infer_full,
    load_checkpoint,
    loss_contact,
    loss_traj,
    predict_crops,
    save_checkpoint,
    total_loss,
    train,
)


def random_batch(rng, n=4, size=38):
    return [TrainingSample(rng.random((size, size)), np.zeros(2), rng.uniform(0, size - 1, (5, 2)),
                           rng.normal(0, 2, (5, 2))) for _ in range(n)]


def zero_net(config=None):
    net = build_net(config or ModelConfig())
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    return net


def center_tap_net(config, gain=4.0):
    """Every kernel keeps only its center tap: logits[8i, 8j] follow input[8i, 8j]."""
    net = zero_net(config)
    with torch.no_grad():
        for m in list(net.encoder) + list(net.decoder):
            if isinstance(m, (torch.nn.Conv2d, torch.nn.ConvTranspose2d)):
                m.weight[:, :, 1, 1] = gain
    return net


# -------------------------------------------------------------------------- forward


def test_zero_network_uniform():
    pred = forward(zero_net(), np.random.default_rng(0).random((38, 38)))
    np.testing.assert_allclose(pred.heatmaps, 1.0 / 38**2)
    np.testing.assert_allclose(pred.means, 18.5)
    np.testing.assert_allclose(pred.waypoints, 0.0)


def test_forward_deterministic():
    net = build_net(ModelConfig(), 3)
    x = np.random.default_rng(1).random((38, 38))
    a, b = forward(net, x), forward(net, x)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.waypoints, b.waypoints)


def test_forward_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        forward(build_net(ModelConfig()), np.zeros((30, 30)))


def test_shift_equivariance():
    net = center_tap_net(ModelConfig())
    a = np.full((38, 38), 0.5)
    a[16, 8] = 1.0
    b = np.full((38, 38), 0.5)
    b[24, 16] = 1.0
    ma, mb = forward(net, a).means, forward(net, b).means
    np.testing.assert_allclose(ma, [[8.0, 16.0]] * 5, atol=0.01)
    np.testing.assert_allclose(mb - ma, [[8.0, 8.0]] * 5, atol=0.01)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_property_heatmaps_normalized(seed):
    net = build_net(ModelConfig(), seed)
    pred = forward(net, np.random.default_rng(seed).random((38, 38)))
    np.testing.assert_allclose(pred.heatmaps.sum(axis=(1, 2)), 1.0, atol=1e-6)
    assert np.all((pred.means >= 0) & (pred.means <= 37))


def test_attention_variant_runs():
    net = build_net(ModelConfig(attention=True), 0)
    means, wps = predict_crops(net, np.random.default_rng(0).random((2, 38, 38)))
    assert means.shape == (2, 5, 2) and wps.shape == (2, 5, 2)


# -------------------------------------------------------------------------- losses


def test_contact_loss_permutation_zero():
    t = np.random.default_rng(0).uniform(0, 30, (5, 2))
    assert loss_contact(t[[3, 1, 4, 0, 2]], t) == pytest.approx(0.0, abs=1e-12)


def test_contact_loss_345():
    t = np.random.default_rng(1).uniform(0, 30, (5, 2))
    p = t.copy()
    p[2] += [3.0, 4.0]
    assert loss_contact(p, t) == pytest.approx(1.0)


def test_contact_loss_fewer_targets():
    p = np.array([[0.0, 0], [10, 0], [20, 0], [30, 0], [40, 0]])
    assert loss_contact(p, p[[1, 3]]) == pytest.approx(0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_property_contact_loss_brute_force(seed):
    rng = np.random.default_rng(seed)
    p, t = rng.uniform(0, 38, (5, 2)), rng.uniform(0, 38, (5, 2))
    # the matching minimizes squared cost; report the matched mean distance for that assignment
    best = min(itertools.permutations(range(5)), key=lambda perm: sum(np.sum((p[list(perm)] - t) ** 2, axis=1)))
    expect = np.mean(np.linalg.norm(p[list(best)] - t, axis=1))
    assert loss_contact(p, t) == pytest.approx(expect, rel=1e-12)
    assert loss_contact(p[rng.permutation(5)], t[rng.permutation(5)]) == pytest.approx(loss_contact(p, t))


def test_traj_loss_cases():
    w = np.random.default_rng(0).normal(size=(5, 2))
    assert loss_traj(w, w) == 0.0
    v = w.copy()
    v[3, 0] += 1.0
    assert loss_traj(v, w) == pytest.approx(1.0)
    u = np.random.default_rng(1).normal(size=(5, 2))
    assert loss_traj(u, w) == pytest.approx(np.sqrt(np.sum((u.reshape(-1) - w.reshape(-1)) ** 2)))


# -------------------------------------------------------------------------- gradients


def test_zero_loss_zero_gradient():
    net = build_net(ModelConfig(), 0)
    crop = np.random.default_rng(0).random((38, 38))
    pred = forward(net, crop)
    sample = TrainingSample(crop, np.zeros(2), pred.means.copy(), pred.waypoints.copy())
    assert float(total_loss(net, [sample]).detach()) == pytest.approx(0.0, abs=1e-12)
    g = backward(net, [sample])
    assert all(np.all(np.isfinite(v)) for v in g.values())
    assert max(np.abs(v).max() for v in g.values()) < 1e-9


def test_finite_differences():
    rng = np.random.default_rng(11)
    net = build_net(ModelConfig(), 11)
    _, _, rel = finite_difference_check(net, random_batch(rng), 100, 1e-4, rng=11)
    assert rel.max() < 1e-4


def test_lambda_linearity():
    rng = np.random.default_rng(2)
    net = build_net(ModelConfig(), 2)
    batch = random_batch(rng)
    g1 = backward(net, batch, 1.0)
    g2 = backward(net, batch, 2.0)
    for name in g1:
        if name.startswith("traj_head"):
            np.testing.assert_array_equal(g2[name], 2.0 * g1[name])


def test_backward_empty():
    with pytest.raises(EmptyDataset):
        backward(build_net(ModelConfig()), [])


# -------------------------------------------------------------------------- training


def test_train_empty():
    with pytest.raises(EmptyDataset):
        train([])


def test_train_deterministic():
    rng = np.random.default_rng(0)
    batch = random_batch(rng, 8)
    _, ca = train(batch, TrainConfig(epochs=3, batch_size=4, seed=5))
    _, cb = train(batch, TrainConfig(epochs=3, batch_size=4, seed=5))
    assert ca.contact == cb.contact and ca.traj == cb.traj


def test_train_zero_lr():
    rng = np.random.default_rng(0)
    batch = random_batch(rng, 4)
    net = build_net(ModelConfig(), 1)
    before = {k: v.clone() for k, v in net.state_dict().items()}
    train(batch, TrainConfig(learning_rate=0.0, epochs=2), net=net)
    for k, v in net.state_dict().items():
        torch.testing.assert_close(v, before[k], rtol=0, atol=0)


def test_single_sample_windows_nonincreasing():
    rng = np.random.default_rng(3)
    sample = random_batch(rng, 1)
    losses = []
    train(sample, TrainConfig(epochs=1, max_steps=200, seed=0), callback=lambda s, c, t: losses.append(c + t))
    w = np.array(losses[10:]).reshape(-1, 10).mean(axis=1)
    assert np.all(np.diff(w) <= 1e-9)


def test_loss_curve_csv(tmp_path):
    _, curve = train(random_batch(np.random.default_rng(0), 4), TrainConfig(epochs=2))
    curve.to_csv(tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,contact_loss,traj_loss" and len(lines) == 3


# -------------------------------------------------------------------------- inference and checkpoints


def test_infer_single_full_crop():
    net = build_net(ModelConfig(crop_size=64), 0)
    img = np.random.default_rng(0).random((64, 64))
    gmm, wps = infer_full(net, img, n_queries=1, rng=0)
    pred = forward(net, img)
    np.testing.assert_allclose(gmm.centroid(), pred.means.mean(axis=0), atol=1e-6)
    np.testing.assert_allclose(wps, pred.waypoints)


def test_infer_deterministic():
    net = build_net(ModelConfig(), 0)
    img = np.random.default_rng(0).random((64, 64))
    a, wa = infer_full(net, img, 8, rng=3)
    b, wb = infer_full(net, img, 8, rng=3)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(wa, wb)


def test_infer_delta_model():
    net = center_tap_net(ModelConfig(crop_size=64))
    img = np.full((64, 64), 0.5)
    img[24, 40] = 1.0
    gmm, _ = infer_full(net, img, 4, rng=0)
    assert np.abs(gmm.means - [40.0, 24.0]).max() <= 1.0


def test_checkpoint_round_trip(tmp_path):
    net = build_net(ModelConfig(), 4)
    save_checkpoint(tmp_path / "m.ckpt", net, {"note": "x"})
    back, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert extra == {"note": "x"}
    for k, v in net.state_dict().items():
        np.testing.assert_array_equal(back.state_dict()[k].numpy(), v.numpy().astype(np.float32).astype(np.float64))
    raw = (tmp_path / "m.ckpt").read_bytes()
    save_checkpoint(tmp_path / "n.ckpt", net, {"note": "x"})
    assert raw == (tmp_path / "n.ckpt").read_bytes()


def test_estimator_facade():
    rng = np.random.default_rng(0)
    m = AffordanceModel(epochs=1).fit(random_batch(rng, 4))
    means, wps = m.predict(np.zeros((3, 38, 38)))
    assert means.shape == (3, 5, 2)
    assert m.get_params()["epochs"] == 1
    with pytest.raises(ShapeMismatch):
        AffordanceModel(crop_size=30).fit(random_batch(rng, 2))


def test_single_sample_overfit():
    sample = random_batch(np.random.default_rng(4), 1)
    net, curve = train(sample, TrainConfig(epochs=400, learning_rate=3e-3, seed=0))
    assert curve.contact[-1] < 0.5 and curve.traj[-1] < 0.5
    assert curve.contact[-1] < 0.1 * curve.contact[0]
