"""Unit and gradient tests for the autodiff substrate."""

import numpy as np
import pytest

from helpers import finite_difference, gradcheck, relative_error

from triadcoref import autodiff as ad
from triadcoref.autodiff import Adam, Parameter, Tensor


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def projected_sum(out, rng):
    """Scalar with a fixed random projection so gradient errors cannot cancel."""
    return ad.sum_all(ad.mul(out, Tensor(rng.standard_normal(out.shape))))


# ---------------------------------------------------------------------------
# forward values


def test_sigmoid_at_zero():
    x = Tensor(np.zeros(3), requires_grad=True)
    y = ad.sigmoid(x)
    assert np.allclose(y.values, 0.5)
    ad.sum_all(y).backward()
    assert np.allclose(x.grad, 0.25)


def test_softmax_uniform():
    y = ad.softmax(Tensor(np.zeros(3)))
    assert np.allclose(y.values, 1.0 / 3.0)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    y = ad.softmax(Tensor(rng.standard_normal((4, 7))))
    assert np.allclose(y.values.sum(axis=-1), 1.0, atol=1e-12)


def test_bce_values():
    labels = np.array([0.0, 1.0, 1.0, 0.0])
    near = ad.bce_loss(Tensor(np.array([1e-9, 1.0, 1.0, 0.0])), labels)
    assert float(near.values) < 1e-6
    half = ad.bce_loss(Tensor(np.full(4, 0.5)), labels)
    assert np.isclose(float(half.values), np.log(2.0))


def test_shape_errors_name_the_op():
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ad.ShapeError, match="concat"):
        ad.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=1)


def test_dropout_off_is_identity():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((5, 4)))
    assert ad.dropout(x, 0.5, training=False, rng=rng) is x
    assert ad.dropout(x, 0.0, training=True, rng=rng) is x


def test_dropout_inverted_scaling():
    rng = np.random.default_rng(1)
    x = Tensor(np.ones((200, 50)))
    y = ad.dropout(x, 0.3, training=True, rng=np.random.default_rng(7))
    kept = y.values[y.values != 0]
    assert np.allclose(kept, 1.0 / 0.7)
    # survival rate concentrates near 1 - rate
    assert abs((y.values != 0).mean() - 0.7) < 0.02
    # same seed, same mask
    again = ad.dropout(x, 0.3, training=True, rng=np.random.default_rng(7))
    assert np.array_equal(y.values, again.values)


# ---------------------------------------------------------------------------
# gradient checks vs central finite differences (the independent oracle)


def test_matmul_gradient_small():
    rng = np.random.default_rng(2)
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    err = gradcheck(lambda: projected_sum(ad.matmul(a, b),
                                          np.random.default_rng(3)), [a, b])
    assert err < 1e-6, err


OPS = {
    "add_broadcast_bias": lambda a, b: ad.add(a, b),
    "sub": lambda a, b: ad.sub(a, ad.reshape(b, (1, b.shape[0]))),
    "mul_broadcast": lambda a, b: ad.mul(a, b),
    "matmul_batched": None,
    "tanh": lambda a, b: ad.tanh(a),
    "sigmoid": lambda a, b: ad.sigmoid(a),
    "softmax": lambda a, b: ad.softmax(a),
}


@pytest.mark.parametrize("name", ["add_broadcast_bias", "sub", "mul_broadcast",
                                  "tanh", "sigmoid", "softmax"])
def test_elementwise_op_gradients(name):
    rng = np.random.default_rng(hash(name) % 2 ** 31)
    a = leaf(rng, 5, 3)
    b = leaf(rng, 3)
    err = gradcheck(lambda: projected_sum(OPS[name](a, b),
                                          np.random.default_rng(11)), [a, b])
    assert err < 1e-4, (name, err)


def test_batched_matmul_gradient():
    rng = np.random.default_rng(4)
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 5)
    err = gradcheck(lambda: projected_sum(ad.matmul(a, b),
                                          np.random.default_rng(5)), [a, b])
    assert err < 1e-4, err


def test_structural_op_gradients():
    rng = np.random.default_rng(6)
    a, b = leaf(rng, 4, 3), leaf(rng, 2, 3)

    def build():
        joined = ad.concat([a, b], axis=0)          # (6, 3)
        moved = ad.transpose_last2(joined)          # (3, 6)
        flat = ad.reshape(moved, (18,))
        back = ad.reshape(flat, (3, 6))
        piece = ad.slice_axis(back, 1, 1, 5)        # (3, 4)
        picked = ad.take_rows(piece, np.array([0, 2, 2, 1]))
        total = ad.add_n([picked, picked, ad.mul(picked, picked)])
        return projected_sum(total, np.random.default_rng(7))

    assert gradcheck(build, [a, b]) < 1e-4


def test_take_rows_repeated_indices_accumulate():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    y = ad.take_rows(x, np.array([1, 1, 1]))
    ad.sum_all(y).backward()
    assert np.allclose(x.grad, [[0, 0], [3, 3], [0, 0]])


def test_masked_mean_gradient_and_errors():
    rng = np.random.default_rng(8)
    x = leaf(rng, 2, 5, 3)
    mask = np.array([[1, 1, 0, 0, 1], [0, 1, 0, 0, 0]], dtype=float)
    err = gradcheck(lambda: projected_sum(ad.masked_mean(x, mask, axis=1),
                                          np.random.default_rng(9)), [x])
    assert err < 1e-4
    with pytest.raises(ad.ShapeError, match="mask"):
        ad.masked_mean(x, np.zeros((2, 5)), axis=1)


def test_dropout_gradient_fixed_mask():
    rng = np.random.default_rng(10)
    x = leaf(rng, 6, 4)
    err = gradcheck(
        lambda: ad.sum_all(ad.dropout(x, 0.4, training=True,
                                      rng=np.random.default_rng(3))), [x])
    assert err < 1e-4


def test_bce_gradient():
    rng = np.random.default_rng(12)
    p = Tensor(rng.uniform(0.05, 0.95, size=(4, 3)), requires_grad=True)
    labels = (rng.random((4, 3)) > 0.5).astype(float)
    err = gradcheck(lambda: ad.bce_loss(p, labels), [p])
    assert err < 1e-4


# ---------------------------------------------------------------------------
# bidirectional LSTM


def _lstm(rng, d_in=3, hidden=4):
    return ad.lstm_params(rng, d_in, hidden, "enc")


def test_bilstm_all_masked_is_zero():
    rng = np.random.default_rng(13)
    params = _lstm(rng)
    out = ad.bilstm_forward(Tensor(rng.standard_normal((5, 3))),
                            np.zeros(5), params, "enc")
    assert out.shape == (5, 8)
    assert np.allclose(out.values, 0.0)


def test_bilstm_rejects_empty_sequence():
    rng = np.random.default_rng(14)
    params = _lstm(rng)
    with pytest.raises(ad.ShapeError):
        ad.bilstm_forward(Tensor(np.zeros((0, 3))), np.zeros(0), params, "enc")


def test_bilstm_gradient():
    rng = np.random.default_rng(15)
    params = _lstm(rng)
    x = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    mask = np.array([1, 1, 1, 0, 1], dtype=float)
    leaves = [x] + [p.tensor for p in params.values()]

    def build():
        out = ad.bilstm_forward(x, mask, params, "enc")
        return projected_sum(out, np.random.default_rng(16))

    assert gradcheck(build, leaves) < 1e-5


def test_bilstm_reversal_swaps_direction_halves():
    # with identical weights in both directions, reversing the input sequence
    # swaps the forward/backward halves (up to the time flip)
    rng = np.random.default_rng(17)
    params = _lstm(rng)
    for name in ("w", "u", "b"):
        params[f"enc.bw.{name}"].tensor.values = params[f"enc.fw.{name}"].values.copy()
    x = rng.standard_normal((6, 3))
    mask = np.ones(6)
    out = ad.bilstm_forward(Tensor(x), mask, params, "enc").values
    rev = ad.bilstm_forward(Tensor(x[::-1].copy()), mask, params, "enc").values
    h = 4
    assert np.allclose(rev[:, :h], out[::-1, h:], atol=1e-12)
    assert np.allclose(rev[:, h:], out[::-1, :h], atol=1e-12)


def test_bilstm_masked_steps_emit_zero_and_propagate_state():
    rng = np.random.default_rng(18)
    params = _lstm(rng)
    x = rng.standard_normal((4, 3))
    mask = np.array([1, 0, 1, 1], dtype=float)
    out = ad.bilstm_forward(Tensor(x), mask, params, "enc").values
    assert np.allclose(out[1], 0.0)
    # forward half at step 2 must match running the unmasked subsequence
    sub = ad.bilstm_forward(Tensor(x[[0, 2, 3]]), np.ones(3), params, "enc").values
    assert np.allclose(out[2, :4], sub[1, :4], atol=1e-12)


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_moves_by_lr_sign():
    p = Parameter(np.array([1.0, -2.0, 3.0]))
    p.tensor.grad = np.array([0.5, -0.1, 2.0])
    opt = Adam({"w": p})
    opt.step(lr=0.01)
    moved = p.values - np.array([1.0, -2.0, 3.0])
    assert np.allclose(moved, -0.01 * np.sign([0.5, -0.1, 2.0]), atol=1e-6)


def test_adam_zero_gradient_keeps_weights():
    p = Parameter(np.array([1.0, 2.0]))
    p.tensor.grad = np.zeros(2)
    opt = Adam({"w": p})
    opt.step(lr=0.1)
    assert np.array_equal(p.values, [1.0, 2.0])


def test_adam_two_steps_match_scalar_reference():
    rng = np.random.default_rng(19)
    start = rng.standard_normal(5)
    grads = [rng.standard_normal(5), rng.standard_normal(5)]

    # independent scalar-by-scalar reference
    beta1, beta2, eps, lr = 0.9, 0.999, 1e-8, 0.05
    expected = start.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    for t, g in enumerate(grads, start=1):
        for i in range(5):
            m[i] = beta1 * m[i] + (1 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i]
            m_hat = m[i] / (1 - beta1 ** t)
            v_hat = v[i] / (1 - beta2 ** t)
            expected[i] -= lr * m_hat / (np.sqrt(v_hat) + eps)

    p = Parameter(start.copy())
    opt = Adam({"w": p})
    for g in grads:
        p.tensor.grad = g.copy()
        opt.step(lr=lr)
    assert np.allclose(p.values, expected, atol=1e-15)


def test_gradient_clipping_scales_global_norm():
    p1, p2 = Parameter(np.zeros(3)), Parameter(np.zeros(4))
    p1.tensor.grad = np.full(3, 2.0)
    p2.tensor.grad = np.full(4, -2.0)
    opt = Adam({"a": p1, "b": p2})
    opt.clip_gradients(1.0)
    total = np.sqrt((p1.tensor.grad ** 2).sum() + (p2.tensor.grad ** 2).sum())
    assert np.isclose(total, 1.0)


# ---------------------------------------------------------------------------
# checkpoint container


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(20)
    arrays = {"layer.w": rng.standard_normal((3, 4)),
              "layer.b": rng.standard_normal(4),
              "emb": rng.standard_normal((5, 2))}
    path = tmp_path / "params.bin"
    ad.save_arrays(path, arrays)
    loaded = ad.load_arrays(path)
    assert sorted(loaded) == sorted(arrays)
    for name in arrays:
        assert np.array_equal(loaded[name], arrays[name])


def test_save_is_byte_deterministic(tmp_path):
    arrays = {"b": np.arange(4.0), "a": np.ones((2, 2))}
    ad.save_arrays(tmp_path / "one.bin", arrays)
    ad.save_arrays(tmp_path / "two.bin", dict(reversed(list(arrays.items()))))
    assert (tmp_path / "one.bin").read_bytes() == (tmp_path / "two.bin").read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        ad.load_arrays(path)
