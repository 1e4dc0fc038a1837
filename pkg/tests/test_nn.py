import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acronn import nn


def make_model(d=5, h=4, c=3, seed=0, lam=0.1, dtype=np.float64):
    return nn.init_model(d, h, c, seed=seed, lambda_gamma=lam, dtype=dtype)


def test_forward_zero_weights_uniform():
    m = make_model()
    for k in m.params:
        m.params[k][:] = 0.0
    x = np.random.default_rng(0).normal(size=(6, 5))
    out = nn.forward(m, x)
    np.testing.assert_allclose(out.alpha, np.full(6, 1 / 6), atol=1e-12)
    np.testing.assert_allclose(out.probs, np.full(3, 1 / 3), atol=1e-12)
    np.testing.assert_allclose(out.per_step, np.full((6, 3), 1 / 3), atol=1e-12)


def test_forward_single_step_alpha_is_one():
    m = make_model()
    out = nn.forward(m, np.ones((1, 5)))
    assert out.alpha.shape == (1,)
    assert out.alpha[0] == 1.0


def test_forward_bitwise_stable():
    m = make_model(seed=0)
    x = np.random.default_rng(1).normal(size=(7, 5))
    a = nn.forward(m, x)
    b = nn.forward(m, x)
    assert np.array_equal(a.probs, b.probs)
    assert np.array_equal(a.alpha, b.alpha)
    assert np.array_equal(a.per_step, b.per_step)


def test_forward_shape_mismatch():
    with pytest.raises(ValueError):
        nn.forward(make_model(), np.zeros((4, 7)))


def test_penalty_constant_alpha_is_zero():
    assert nn.consistency_penalty(np.full(8, 0.125)) == 0.0


def test_penalty_monotone_example():
    # 4 * (|0.1| + |0.1| + |0.1|) = 1.2; exact over exact arithmetic,
    # within one rounding step of it in binary floating point
    exact = nn.consistency_penalty([Fraction(1, 10), Fraction(2, 10), Fraction(3, 10), Fraction(4, 10)])
    assert exact == Fraction(6, 5)
    approx = nn.consistency_penalty(np.array([0.1, 0.2, 0.3, 0.4]))
    assert abs(approx - 1.2) < 1e-15


def test_penalty_two_step_maximum():
    assert nn.consistency_penalty(np.array([1.0, 0.0])) == 2.0


@given(st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=1, max_size=12))
def test_penalty_nonnegative_on_simplex(raw):
    alpha = np.asarray(raw) / np.sum(raw)
    assert nn.consistency_penalty(alpha) >= 0.0


def test_penalty_interleaved_duplication_doubles():
    alpha = np.array([0.4, 0.1, 0.3, 0.2])
    doubled = np.repeat(alpha, 2)
    assert nn.consistency_penalty(doubled) == 2 * nn.consistency_penalty(alpha)


def test_loss_uniform_is_log2():
    m = make_model(d=4, h=3, c=2, lam=0.0)
    for k in m.params:
        m.params[k][:] = 0.0
    batch = [(np.random.default_rng(i).normal(size=(5, 4)), i % 2) for i in range(4)]
    assert nn.loss(m, batch) == pytest.approx(math.log(2.0), abs=1e-12)


def test_loss_lambda_zero_is_plain_ce():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 5))
    m0 = make_model(lam=0.0, seed=4)
    m1 = m0.copy()
    m1.lambda_gamma = 0.25
    out = nn.forward(m0, x)
    ce = -math.log(out.probs[1])
    assert nn.loss(m0, [(x, 1)]) == pytest.approx(ce, rel=1e-12)
    gamma = nn.consistency_penalty(out.alpha)
    assert nn.loss(m1, [(x, 1)]) == pytest.approx(ce + 0.25 * gamma, rel=1e-12)


def test_loss_perfect_prediction_constant_alpha_is_zero():
    # a head that pushes all mass on the right class, attention exactly uniform
    m = make_model(d=2, h=2, c=2, lam=0.5)
    for k in m.params:
        m.params[k][:] = 0.0
    m.params["w_head"][0, :] = 400.0  # h_t is 0 for zero lstm weights -> logits 0
    # zero hidden state means the head cannot separate; use the bias instead
    m.params["b_head"][:] = np.array([60.0, -60.0])
    batch = [(np.zeros((4, 2)), 0)]
    assert nn.loss(m, batch) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("lam", [0.0, 0.1])
def test_grad_check_small_models(lam):
    rng = np.random.default_rng(int(lam * 10))
    m = make_model(d=4, h=5, c=3, seed=7, lam=lam)
    x = rng.normal(size=(5, 4))
    assert nn.grad_check(m, x, 2) < 1e-4


def test_grad_check_zero_input():
    m = make_model(d=3, h=4, c=2, seed=9, lam=0.1)
    assert nn.grad_check(m, np.zeros((4, 3)), 1) < 1e-4


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=15, deadline=None)
def test_alpha_is_simplex(seed):
    rng = np.random.default_rng(seed)
    m = make_model(d=4, h=4, c=2, seed=seed % 1000)
    out = nn.forward(m, rng.normal(size=(rng.integers(1, 9), 4)))
    assert np.all(out.alpha >= 0)
    assert abs(out.alpha.sum() - 1.0) < 1e-9


def toy_dataset(n=60, t=8, d=6, seed=0):
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n):
        label = i % 2
        shift = 1.0 if label else -1.0
        data.append((rng.normal(scale=0.5, size=(t, d)).astype(np.float32) + shift, label))
    return data


def test_train_separable_accuracy():
    data = toy_dataset()
    cfg = nn.TrainConfig(lr=0.05, epochs=50, batch=8, seed=3, lambda_gamma=0.1)
    model, history = nn.train(nn.init_model(6, 8, 2, seed=0), data, cfg)
    acc = np.mean([np.argmax(nn.forward(model, x).probs) == y for x, y in data])
    assert acc >= 0.95
    # training made progress on the held-out split
    assert history["val"][history["best_epoch"]] <= history["val"][0]


def test_train_deterministic():
    data = toy_dataset(n=30)
    cfg = nn.TrainConfig(lr=0.05, epochs=10, batch=8, seed=5)
    m1, h1 = nn.train(nn.init_model(6, 4, 2, seed=1), data, cfg)
    m2, h2 = nn.train(nn.init_model(6, 4, 2, seed=1), data, cfg)
    assert h1 == h2
    assert all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)


def test_train_zero_lr_is_noop():
    data = toy_dataset(n=20)
    init = nn.init_model(6, 4, 2, seed=2)
    model, history = nn.train(init, data, nn.TrainConfig(lr=0.0, epochs=5, batch=8, seed=0))
    assert all(np.array_equal(model.params[k], init.params[k]) for k in init.params)
    assert len(set(history["train"])) == 1


def test_train_single_class_rejected():
    data = [(np.zeros((3, 2)), 0) for _ in range(10)]
    with pytest.raises(ValueError):
        nn.train(nn.init_model(2, 3, 2), data, nn.TrainConfig(epochs=1))


def test_checkpoint_roundtrip(tmp_path):
    m = make_model(d=5, h=6, c=3, seed=11, dtype=np.float32)
    path = tmp_path / "model.json"
    nn.save_checkpoint(m, path)
    loaded = nn.load_checkpoint(path)
    assert loaded.input_dim == 5 and loaded.hidden_dim == 6 and loaded.num_classes == 3
    for k in m.params:
        assert np.array_equal(loaded.params[k], m.params[k])
    x = np.random.default_rng(0).normal(size=(4, 5))
    assert np.array_equal(nn.forward(m, x).probs, nn.forward(loaded, x).probs)


def test_checkpoint_version_mismatch(tmp_path):
    import json

    m = make_model()
    path = tmp_path / "model.json"
    nn.save_checkpoint(m, path)
    obj = json.loads(path.read_text())
    obj["version"] = 999
    path.write_text(json.dumps(obj))
    with pytest.raises(ValueError, match="version"):
        nn.load_checkpoint(path)
