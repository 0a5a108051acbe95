import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepsharpe.diffnet import (
    AdamState,
    adam_step,
    backward,
    clip_by_global_norm,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
    softmax,
)
from deepsharpe.errors import ConfigError, ContractError, IOFailure, TrainingError

from .conftest import central_difference, max_relative_error


def test_shapes_and_parameter_count():
    p = init_params(4, 64, seed=0)
    assert p.size == param_count(4, 64)
    assert p.size == 18_948
    w, _ = forward_batch(p, np.zeros((3, 50, 8)))
    assert w.shape == (3, 4)


def test_init_is_seeded_and_sets_forget_bias():
    a, b = init_params(3, 5, 1), init_params(3, 5, 1)
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), init_params(3, 5, 2).flat())
    np.testing.assert_array_equal(a.b[5:10], 1.0)
    with pytest.raises(ConfigError):
        init_params(3, 0, 0)


def test_zero_window_zero_head_gives_equal_weights():
    p = init_params(4, 6, 0)
    p.W_out[:] = 0.0
    w, _ = forward(p, np.zeros((10, 8)))
    np.testing.assert_allclose(w, 0.25, atol=1e-15)


def test_wrong_width_is_contract_error():
    p = init_params(2, 3, 0)
    with pytest.raises(ContractError):
        forward(p, np.zeros((5, 5)))


def test_softmax_is_stable_for_huge_logits():
    w = softmax(np.array([[1e4, 0.0, -1e4], [800.0, 800.0, 0.0]]))
    assert np.all(np.isfinite(w))
    np.testing.assert_allclose(w[0], [1, 0, 0])
    np.testing.assert_allclose(w[1], [0.5, 0.5, 0])


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    scale=st.sampled_from([1e-3, 1.0, 1e2, 1e4]),
    n=st.integers(1, 5),
)
def test_weights_on_simplex(seed, scale, n):
    rng = np.random.default_rng(seed)
    p = init_params(n, 3, seed)
    p.W_out *= scale
    w, _ = forward_batch(p, rng.normal(0, scale, (4, 6, 2 * n)))
    assert np.all(w >= 0) and np.all(np.isfinite(w))
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 4, 4), elements=st.floats(-3, 3)))
def test_batched_forward_equals_single(X):
    p = init_params(2, 3, 5)
    wb, _ = forward_batch(p, X)
    for b in range(2):
        ws, _ = forward(p, X[b])
        np.testing.assert_allclose(wb[b], ws, rtol=0, atol=1e-15)


def _loss_fn(p, X, G):
    w, _ = forward_batch(p, X)
    return float(np.sum(w * G))


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, H, k, B = 3, 4, 5, 3
    p = init_params(n, H, seed)
    p.b += rng.normal(0, 0.3, p.b.shape)
    p.b_out += rng.normal(0, 0.3, p.b_out.shape)
    X = rng.normal(0, 1, (B, k, 2 * n))
    G = rng.normal(0, 1, (B, n))
    _, trace = forward_batch(p, X)
    grad, dX = backward(p, trace, G, return_inputs=True)
    num_p = central_difference(lambda v: _loss_fn(p.with_flat(v), X, G), p.flat())
    num_x = central_difference(lambda x: _loss_fn(p, x, G), X)
    assert max_relative_error(grad.flat(), num_p) < 1e-6
    assert max_relative_error(dX, num_x) < 1e-6


def test_backward_accepts_trace_list():
    rng = np.random.default_rng(1)
    p = init_params(2, 3, 0)
    X = rng.normal(size=(4, 3, 4))
    G = rng.normal(size=(4, 2))
    _, whole = forward_batch(p, X)
    parts = [forward_batch(p, X[i:i + 1])[1] for i in range(4)]
    np.testing.assert_allclose(backward(p, whole, G).flat(), backward(p, parts, G).flat(), atol=1e-14)
    with pytest.raises(ContractError):
        backward(p, whole, G[:2])


def test_clip_by_global_norm():
    p = init_params(2, 3, 0)
    g = p.copy()
    norm = float(np.linalg.norm(g.flat()))
    clipped, reported = clip_by_global_norm(g, norm / 2)
    assert reported == pytest.approx(norm)
    assert np.linalg.norm(clipped.flat()) == pytest.approx(norm / 2)
    same, _ = clip_by_global_norm(g, norm * 2)
    assert same is g


def test_adam_moves_uphill_and_matches_reference():
    p = init_params(2, 2, 0)
    g = p.zeros_like().with_flat(np.linspace(-1, 1, p.size))
    state = AdamState.fresh(p, learning_rate=0.01)
    p1, s1 = adam_step(p, g, state)
    # first bias-corrected step is lr * sign(g) (up to eps)
    expected = p.flat() + 0.01 * g.flat() / (np.abs(g.flat()) + 1e-8)
    np.testing.assert_allclose(p1.flat(), expected, rtol=0, atol=1e-12)
    assert s1.step == 1 and state.step == 0


def test_adam_rejects_non_finite():
    p = init_params(2, 2, 0)
    bad = p.zeros_like()
    bad.b[0] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        adam_step(p, bad, AdamState.fresh(p))


def test_checkpoint_roundtrip(tmp_path):
    p = init_params(3, 4, 9)
    state = AdamState.fresh(p, learning_rate=5e-4)
    p2, state = adam_step(p, p, state)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, p2, state, {"split": 1})
    q, a, meta = load_checkpoint(path)
    for x, y in zip(p2.arrays(), q.arrays()):
        assert np.array_equal(x, y)
    assert np.array_equal(a.m, state.m) and a.step == 1 and a.learning_rate == 5e-4
    assert meta == {"split": 1}
    X = np.random.default_rng(0).normal(size=(2, 4, 6))
    assert np.array_equal(forward_batch(p2, X)[0], forward_batch(q, X)[0])


def test_checkpoint_errors(tmp_path):
    with pytest.raises(IOFailure):
        load_checkpoint(tmp_path / "missing.npz")
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    with pytest.raises(IOFailure):
        load_checkpoint(bad)


def test_known_logits_give_closed_form_weights():
    p = init_params(4, 3, 0)
    p.W_out[:] = 0.0
    p.b_out[:] = [np.log(2.0), 0.0, 0.0, 0.0]
    w, _ = forward(p, np.random.default_rng(0).normal(size=(5, 8)))
    np.testing.assert_allclose(w, [0.4, 0.2, 0.2, 0.2], rtol=0, atol=1e-15)


def test_zero_upstream_gives_zero_gradient():
    p = init_params(2, 3, 0)
    X = np.random.default_rng(0).normal(size=(3, 4, 4))
    _, trace = forward_batch(p, X)
    assert not np.any(backward(p, trace, np.zeros((3, 2))).flat())


def test_duplicated_sample_doubles_gradient():
    rng = np.random.default_rng(3)
    p = init_params(2, 3, 1)
    x = rng.normal(size=(1, 4, 4))
    g = rng.normal(size=(1, 2))
    single = backward(p, forward_batch(p, x)[1], g).flat()
    double = backward(p, forward_batch(p, np.concatenate([x, x]))[1], np.concatenate([g, g])).flat()
    np.testing.assert_allclose(double, 2 * single, rtol=1e-14, atol=1e-16)


def test_adam_zero_gradient_is_fixed_point():
    p = init_params(2, 2, 0)
    p1, _ = adam_step(p, p.zeros_like(), AdamState.fresh(p))
    assert np.array_equal(p1.flat(), p.flat())


def test_adam_constant_gradient_step_approaches_learning_rate():
    p = init_params(1, 1, 0)
    g = p.zeros_like().with_flat(np.full(p.size, 0.3))
    state = AdamState.fresh(p, learning_rate=1e-2)
    for _ in range(200):
        prev = p.flat()
        p, state = adam_step(p, g, state)
    np.testing.assert_allclose(p.flat() - prev, 1e-2, rtol=1e-6)


def test_adam_without_moments_is_sign_ascent():
    p = init_params(2, 2, 0)
    vec = np.random.default_rng(1).normal(size=p.size)
    state = AdamState.fresh(p, learning_rate=0.05, beta1=0.0, beta2=0.0, eps=1e-300)
    p1, _ = adam_step(p, p.zeros_like().with_flat(vec), state)
    np.testing.assert_allclose(p1.flat() - p.flat(), 0.05 * np.sign(vec), rtol=1e-12)
