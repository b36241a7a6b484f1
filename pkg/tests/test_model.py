import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from driftbench import model
from driftbench.errors import InvalidInputError, PoisonedUpdateError
from driftbench.model import DropoutMask, OptimizerState


def loss_at(params, x, target, mask=None):
    return float(np.mean(model.cross_entropy(target, model.forward(params, x, mask).probs)))


def finite_difference(params, x, target, mask=None, h=1e-5):
    flat = params.flat()
    out = np.empty_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        out[i] = (loss_at(params.unflat(up), x, target, mask) - loss_at(params.unflat(down), x, target, mask)) / (2 * h)
    return out


def test_keep_all_mask_equals_maskless(gen):
    params = model.init_params(5, 3, seed=1, scale=0.5)
    x = gen.normal(size=(4, 5))
    plain = model.forward(params, x)
    masked = model.forward(params, x, DropoutMask.keep_all(5))
    np.testing.assert_array_equal(plain.probs, masked.probs)


def test_hidden_draw_leaves_inputs_unscaled(gen):
    params = model.init_params(4, 3, hidden=6, seed=1)
    x = gen.normal(size=4)
    mask = DropoutMask.draw(3, 0, 0.5, 4, 6)
    assert mask.input_dropped is None
    manual = model.DropoutMask(None, mask.hidden_dropped, 0.5)
    np.testing.assert_array_equal(model.forward(params, x, mask).probs, model.forward(params, x, manual).probs)
    pre = np.maximum(x @ params.weights[0] + params.biases[0], 0.0)
    h = np.where(mask.hidden_dropped, 0.0, pre / 0.5)
    np.testing.assert_allclose(model.forward(params, x, mask).logits, h @ params.weights[1] + params.biases[1], atol=1e-14)


def test_dropping_every_input_leaves_bias():
    params = model.init_params(4, 3, seed=2, scale=0.5)
    params = params.unflat(np.concatenate([params.weights[0].ravel(), [0.3, -0.1, 0.5]]))
    mask = DropoutMask(np.ones(4, dtype=bool), None, 0.5)
    pred = model.forward(params, np.array([1.0, -2.0, 3.0, 0.5]), mask)
    np.testing.assert_allclose(pred.logits, [0.3, -0.1, 0.5], atol=1e-15)
    np.testing.assert_allclose(pred.probs, model.softmax(np.array([0.3, -0.1, 0.5])), atol=1e-15)


def test_inverted_dropout_scaling():
    params = model.ModelParams((np.eye(3),), (np.zeros(3),))
    mask = DropoutMask(np.array([False, True, False]), None, 0.25)
    logits = model.forward(params, np.array([1.0, 2.0, 3.0]), mask).logits
    np.testing.assert_allclose(logits, [1 / 0.75, 0.0, 3 / 0.75])


def test_mask_draw_is_deterministic():
    a = DropoutMask.draw(99, 3, 0.4, 10, 6, rows=5)
    b = DropoutMask.draw(99, 3, 0.4, 10, 6, rows=5)
    np.testing.assert_array_equal(a.hidden_dropped, b.hidden_dropped)
    c = DropoutMask.draw(99, 4, 0.4, 10, 6, rows=5)
    assert not np.array_equal(a.hidden_dropped, c.hidden_dropped)


def test_mask_draw_rate():
    mask = DropoutMask.draw(5, 0, 0.1, 1000, rows=20)
    assert abs(mask.input_dropped.mean() - 0.1) < 4 * math.sqrt(0.09 / 20000)


def test_forward_same_mask_bit_identical(gen):
    params = model.init_params(6, 4, hidden=8, seed=3)
    x = gen.normal(size=6)
    m1 = DropoutMask.draw(7, 2, 0.1, 6, 8)
    m2 = DropoutMask.draw(7, 2, 0.1, 6, 8)
    assert model.forward(params, x, m1).probs.tobytes() == model.forward(params, x, m2).probs.tobytes()


def test_forward_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        model.forward(model.init_params(4, 2), np.ones(5))


def test_logit_clamp_keeps_softmax_finite():
    params = model.ModelParams((np.array([[1e6, -1e6]]),), (np.zeros(2),))
    probs = model.forward(params, np.array([1.0])).probs
    assert np.all(np.isfinite(probs)) and np.all(probs > 0)
    assert math.isclose(probs.sum(), 1.0, abs_tol=1e-12)


@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=12))
def test_softmax_normalised_and_positive(z):
    p = model.softmax(np.clip(np.array(z), -model.LOGIT_CLAMP, model.LOGIT_CLAMP))
    assert abs(p.sum() - 1.0) <= 1e-12 and np.all(p > 0)


def test_cross_entropy_one_hot_target():
    student = np.array([0.2, 0.5, 0.3])
    assert model.cross_entropy(np.array([0.0, 1.0, 0.0]), student) == pytest.approx(-math.log(0.5), abs=1e-15)


def test_self_cross_entropy_is_entropy(gen):
    p = gen.dirichlet(np.ones(5))
    assert model.cross_entropy(p, p) == pytest.approx(model.entropy(p), abs=1e-14)


def test_cross_entropy_hand_value():
    value = model.cross_entropy(np.array([0.5, 0.5]), np.array([0.9, 0.1]))
    assert value == pytest.approx(-0.5 * (math.log(0.9) + math.log(0.1)), abs=1e-15)
    assert value == pytest.approx(1.2040, abs=5e-5)


def test_cross_entropy_clamps_zero_student():
    assert model.cross_entropy(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(-math.log(1e-30))


@pytest.mark.parametrize(
    "p, expected",
    [([0.25] * 4, math.log(4)), ([0, 0, 1, 0], 0.0), ([0.5, 0.5, 0, 0], math.log(2))],
)
def test_entropy_values(p, expected):
    assert model.entropy(np.array(p)) == pytest.approx(expected, abs=1e-12)


@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_entropy_bounds(c, seed):
    p = np.random.default_rng(seed).dirichlet(np.full(c, 0.3))
    h = model.entropy(p)
    assert 0.0 <= h <= math.log(c) + 1e-12


def test_grad_zero_at_matching_target(gen):
    params = model.init_params(5, 3, seed=4, scale=0.5)
    x = gen.normal(size=(3, 5))
    target = model.forward(params, x).probs
    g = model.grad(params, x, target)
    assert np.linalg.norm(g.flat()) <= 1e-12


@pytest.mark.parametrize("hidden", [0, 7])
@pytest.mark.parametrize("masked", [False, True])
def test_grad_matches_finite_differences(gen, hidden, masked):
    for trial in range(10):
        d, c = int(gen.integers(2, 7)), int(gen.integers(2, 5))
        params = model.init_params(d, c, hidden=hidden, seed=trial, scale=0.7)
        params = params.unflat(params.flat() + 0.1 * gen.normal(size=params.size))
        x = gen.normal(size=(4, d))
        target = gen.dirichlet(np.ones(c), size=4)
        mask = DropoutMask.draw(trial, 0, 0.3, d, hidden, rows=4) if masked else None
        analytic = model.grad(params, x, target, mask).flat()
        numeric = finite_difference(params, x, target, mask)
        rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        assert rel.max() <= 1e-5


def test_grad_sign_follows_target_gap():
    params = model.ModelParams((np.zeros((1, 2)),), (np.zeros(2),))
    x = np.array([[1.0]])
    toward_0 = model.grad(params, x, np.array([[0.8, 0.2]])).biases[0]
    toward_1 = model.grad(params, x, np.array([[0.2, 0.8]])).biases[0]
    # descent raises the logit with more target mass
    assert toward_0[0] < 0 < toward_1[0]
    np.testing.assert_allclose(toward_0, -toward_1)


def test_entropy_grad_matches_finite_differences(gen):
    params = model.init_params(4, 3, hidden=5, seed=11, scale=0.8)
    x = gen.normal(size=(3, 4))
    g = model.entropy_grad(params, x).flat()
    flat, h = params.flat(), 1e-6

    def mean_entropy(v):
        return float(np.mean(model.entropy(model.forward(params.unflat(v), x).probs)))

    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        fd = (mean_entropy(up) - mean_entropy(down)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-6 * max(1.0, abs(fd))


def test_sgd_step():
    params = model.ModelParams((np.array([[1.0]]),), (np.array([1.0]),))
    grad = model.ModelParams((np.array([[2.0]]),), (np.array([2.0]),))
    new, _ = model.optimizer_step(params, grad, OptimizerState(kind="sgd", lr=0.1))
    np.testing.assert_allclose(new.flat(), [0.8, 0.8])


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_keeps_params(kind):
    params = model.init_params(3, 2, seed=5, scale=1.0)
    zero = params.unflat(np.zeros(params.size))
    new, _ = model.optimizer_step(params, zero, OptimizerState(kind=kind, lr=0.1))
    np.testing.assert_allclose(new.flat(), params.flat(), atol=1e-15)


def test_adam_first_step_moves_by_lr():
    params = model.init_params(3, 2, seed=6, scale=1.0)
    ones = params.unflat(np.ones(params.size))
    new, state = model.optimizer_step(params, ones, OptimizerState(kind="adam", lr=1e-3))
    np.testing.assert_allclose(new.flat() - params.flat(), -1e-3, atol=1e-12)
    assert state.step == 1


def test_adam_matches_reference_recursion(gen):
    params = model.init_params(2, 2, seed=7, scale=1.0)
    state = OptimizerState(kind="adam", lr=0.01)
    p, m, v = params.flat(), np.zeros(params.size), np.zeros(params.size)
    for t in range(1, 6):
        g = gen.normal(size=params.size)
        params, state = model.optimizer_step(params, params.unflat(g), state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p = p - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(params.flat(), p, atol=1e-14)


def test_poisoned_gradient_rejected():
    params = model.init_params(3, 2, seed=8)
    bad = params.unflat(np.full(params.size, np.nan))
    state = OptimizerState(kind="adam", lr=0.1)
    before = params.flat().copy()
    with pytest.raises(PoisonedUpdateError):
        model.optimizer_step(params, bad, state)
    np.testing.assert_array_equal(params.flat(), before)
    assert state.step == 0 and state.m is None


def test_optimizer_step_does_not_mutate_state():
    params = model.init_params(3, 2, seed=9)
    state = OptimizerState(kind="adam", lr=0.1)
    model.optimizer_step(params, params, state)
    assert state.step == 0 and state.m is None


@pytest.mark.parametrize("hidden", [0, 5])
def test_checkpoint_round_trip(tmp_path, hidden):
    params = model.init_params(6, 3, hidden=hidden, seed=10, scale=0.3)
    path = tmp_path / "theta.bin"
    model.save_params(params, path)
    raw = path.read_bytes()
    assert len(raw) == 16 + 8 * params.size
    assert model.load_params(path).flat().tobytes() == params.flat().tobytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(InvalidInputError):
        model.load_params(path)


def test_features_of_linear_model_are_inputs(gen):
    x = gen.normal(size=(3, 4))
    np.testing.assert_array_equal(model.features(model.init_params(4, 2), x), x)


def test_fit_source_learns_separable_data(gen):
    y = np.arange(200) % 2
    x = gen.normal(size=(200, 3)) + np.where(y[:, None] == 1, 3.0, -3.0) * np.array([1.0, 0.0, 0.0])
    params = model.fit_source(x, y, 2, epochs=100)
    assert np.mean(np.argmax(model.forward(params, x).probs, axis=1) == y) > 0.98
