import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlcurv.neuralnet import (Adam, ArtifactMismatch, MlpModel, Schedule, TrainConfig, check_fingerprint, forward,
                              glorot_limit, gradient_check, init_model, load_model, loss_and_grads, mae,
                              model_to_json, save_model, train)
from mlcurv.preprocess import fit_stats

seeds = st.integers(0, 2 ** 32 - 1)


def zero_model(m=4, n_h=3, dtype=np.float32):
    model = init_model(m, n_h, 0.0, 0, dtype=dtype)
    for p in model.params:
        p[...] = 0
    return model


def test_init_biases_and_glorot_bounds():
    model = init_model(72, 140, 2e-6, 3)
    assert all(np.all(b == 0) for b in model.biases)
    for W in model.weights:
        assert np.abs(W).max() <= glorot_limit(*W.shape)
    assert [W.shape for W in model.weights] == [(72, 140), (140, 140), (140, 140), (140, 140), (140, 1)]
    again = init_model(72, 140, 2e-6, 3)
    assert all(np.array_equal(a, b) for a, b in zip(model.params, again.params))


def test_zero_network_is_identity_on_hk():
    model = zero_model()
    hk = np.array([-0.3, 0.1, 0.0], dtype=np.float32)
    np.testing.assert_array_equal(forward(model, np.ones((3, 4)), hk), hk)


def test_bias_only_network_adds_constant():
    model = zero_model()
    model.biases[4][0] = 0.25
    out = forward(model, np.random.default_rng(0).normal(size=(5, 4)), np.full(5, -0.1))
    np.testing.assert_allclose(out, np.full(5, 0.15), atol=1e-7)


def test_forward_matches_independent_evaluation():
    rng = np.random.default_rng(1)
    model = init_model(6, 5, 0.0, 9)
    for b in model.biases:
        b[...] = rng.normal(size=b.shape).astype(np.float32) * 0.1
    R = rng.normal(size=(8, 6)).astype(np.float32)
    hk = rng.uniform(-0.5, 0, 8).astype(np.float32)
    a = R.astype(np.float64)
    for W, b in zip(model.weights[:4], model.biases[:4]):
        a = np.maximum(a @ W.astype(np.float64) + b, 0.0)
    ref = (a @ model.weights[4].astype(np.float64)).ravel() + model.biases[4][0] + hk
    np.testing.assert_allclose(forward(model, R, hk), ref, atol=1e-6)
    np.testing.assert_allclose(forward(model, R[0], hk[0]), ref[0], atol=1e-6)
    with pytest.raises(ValueError):
        forward(model, np.ones((2, 5)), np.zeros(2))


@given(seeds, st.floats(0.1, 4.0))
def test_output_layer_scaling(seed, alpha):
    rng = np.random.default_rng(seed)
    model = init_model(4, 6, 0.0, seed % 1000, dtype=np.float64)
    R = rng.normal(size=(7, 4))
    hk = rng.uniform(-0.5, 0, 7)
    base = forward(model, R, hk) - hk
    model.weights[4] *= alpha
    np.testing.assert_allclose(forward(model, R, hk) - hk, alpha * base, rtol=1e-12, atol=1e-15)


def test_gradient_check_tiny_net():
    rng = np.random.default_rng(2)
    model = init_model(4, 3, 1e-3, 5, dtype=np.float64)
    for b in model.biases:
        b[...] = rng.normal(size=b.shape) * 0.1
    R = rng.normal(size=(8, 4))
    assert gradient_check(model, R, rng.uniform(-0.5, 0, 8), rng.normal(size=8) * 0.1) < 1e-4


def test_gradient_at_zero_network():
    model = zero_model(dtype=np.float64)
    rng = np.random.default_rng(3)
    R, hk, y = rng.normal(size=(8, 4)), rng.uniform(-0.5, 0, 8), rng.uniform(-0.5, 0, 8)
    _, rmse, grads = loss_and_grads(model, R, hk, y)
    err = hk - y
    # d RMSE / d b5 = mean(err) / rmse
    assert grads[9][0] == pytest.approx(np.mean(err) / rmse, rel=1e-12)
    assert gradient_check(model, R, hk, y) < 1e-4


def test_duplicated_sample_gradient():
    model = init_model(4, 3, 0.0, 5, dtype=np.float64)
    rng = np.random.default_rng(4)
    R, hk, y = rng.normal(size=(1, 4)), np.array([-0.2]), np.array([-0.1])
    _, _, g1 = loss_and_grads(model, R, hk, y)
    _, _, g2 = loss_and_grads(model, np.repeat(R, 2, 0), np.repeat(hk, 2), np.repeat(y, 2))
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_adam_zero_gradient_is_noop():
    model = init_model(4, 3, 0.0, 1)
    before = [p.copy() for p in model.params]
    opt = Adam(model.params, TrainConfig())
    opt.update(model.params, [np.zeros_like(p) for p in model.params], 1e-3)
    assert all(np.array_equal(a, b) for a, b in zip(before, model.params))


def test_schedule_rules_on_stagnation():
    cfg = TrainConfig(lr=1.5e-4, lr_floor=1e-5, plateau_patience=15, stop_patience=50)
    s = Schedule(cfg)
    assert s.step(1.0) == (True, False)
    lrs, stops = [], []
    for _ in range(60):
        _, stop = s.step(1.0)
        lrs.append(s.lr)
        stops.append(stop)
    # the rate halves after every 15 epochs without improvement and never drops below the floor
    assert lrs[13] == 1.5e-4 and lrs[14] == 7.5e-5 and lrs[29] == 3.75e-5 and lrs[44] == 1.875e-5
    assert min(lrs) >= 1e-5
    assert stops.index(True) == 49
    s.step(0.5)
    assert s.since_best == 0 and s.best == 0.5


def test_training_stops_exactly_after_patience():
    rng = np.random.default_rng(0)
    model = zero_model(4, 3)
    R = rng.normal(size=(10, 4)).astype(np.float32)
    hk = np.zeros(10, np.float32)
    # zero learning signal: the validation MAE never changes
    cfg = TrainConfig(max_epochs=500, stop_patience=50, lr=1e-12, lr_floor=1e-12)
    best, hist = train(model, (R, hk, hk), (R, hk, hk + 1), cfg)
    assert len(hist["val_mae"]) == 51


def test_linear_target_is_learned():
    """Full-batch fit of a correction equal to twice the first input."""
    rng = np.random.default_rng(0)
    R = rng.uniform(-1, 1, size=(256, 4))
    hk = rng.uniform(-0.6, 0, 256)
    y = hk + 2 * R[:, 0]
    model = init_model(4, 140, 0.0, 1, dtype=np.float64)
    cfg = TrainConfig(max_epochs=1000, lr=1e-3, lr_floor=1e-7, plateau_patience=40, stop_patience=10 ** 6,
                      batch_size=32)
    best, _ = train(model, (R, hk, y), (R, hk, y), cfg)
    assert mae(best, R, hk, y) < 1e-5


def test_full_batch_loss_is_monotone():
    rng = np.random.default_rng(5)
    R = rng.normal(size=(64, 4))
    hk = np.zeros(64)
    y = 0.5 * R[:, 0] - 0.2 * R[:, 1]
    model = init_model(4, 16, 0.0, 2, dtype=np.float64)
    # small steps far from the optimum: every full-batch Adam step lowers the loss
    cfg = TrainConfig(max_epochs=100, lr=1e-4, batch_size=64, stop_patience=10 ** 6)
    _, hist = train(model, (R, hk, y), (R, hk, y), cfg)
    assert np.all(np.diff(hist["train_rmse"]) < 0)


def test_training_is_deterministic():
    rng = np.random.default_rng(6)
    R = rng.normal(size=(200, 8)).astype(np.float32)
    hk = rng.uniform(-0.5, 0, 200).astype(np.float32)
    y = (hk + 0.01 * np.tanh(R[:, 0])).astype(np.float32)
    cfg = TrainConfig(max_epochs=5, seed=3)
    a, ha = train(init_model(8, 20, 1e-5, 3), (R, hk, y), (R, hk, y), cfg)
    b, hb = train(init_model(8, 20, 1e-5, 3), (R, hk, y), (R, hk, y), cfg)
    assert ha == hb
    assert abs(a.history["best_val_mae"] - b.history["best_val_mae"]) <= 1e-7


def test_save_load_roundtrip(tmp_path):
    model = init_model(6, 7, 1e-6, 2, cls="sd")
    model.biases[1][:] = 0.3
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    R = np.random.default_rng(0).normal(size=(5, 6)).astype(np.float32)
    hk = np.zeros(5, np.float32)
    assert np.array_equal(forward(model, R, hk), forward(back, R, hk))
    assert back.cls == "sd" and back.l2 == pytest.approx(1e-6)


def test_tampered_shape_fails(tmp_path):
    obj = json.loads(model_to_json(init_model(6, 7, 0.0, 2)))
    obj["layers"][0]["w_shape"] = [7, 7]
    (tmp_path / "bad.json").write_text(json.dumps(obj))
    with pytest.raises(ArtifactMismatch):
        load_model(tmp_path / "bad.json")


def test_fingerprint_guard():
    X = np.random.default_rng(0).normal(size=(200, 110))
    s1, s2 = fit_stats(X, 10), fit_stats(X[:150], 10)
    model = init_model(10, 4, 0.0, 0)
    model.stats_fingerprint = s1.fingerprint()
    check_fingerprint(model, s1)
    with pytest.raises(ArtifactMismatch):
        check_fingerprint(model, s2)


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        TrainConfig(lr=1e-6, lr_floor=1e-5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        MlpModel([np.zeros((2, 2))], [np.zeros(2)])
