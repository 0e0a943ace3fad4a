import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from casi_inpaint import tensor as T
from casi_inpaint.gradcheck import grad_check
from casi_inpaint.tensor import ContractError, DimensionError, Tape, Tensor


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# ------------------------------------------------------------------ oracles


def conv_loops(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation with zero padding."""
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, k, oh, ow))
    for i0, o, r, s in itertools.product(range(n), range(k), range(oh), range(ow)):
        acc = b[o]
        for ci, u, v in itertools.product(range(c), range(kh), range(kw)):
            acc += xp[i0, ci, r * stride + u, s * stride + v] * w[o, ci, u, v]
        out[i0, o, r, s] = acc
    return out


def deconv_loops(x, w, b, stride, pad):
    """Scatter every input pixel times the kernel, then crop the padding."""
    n, c, h, wd = x.shape
    _, k, kh, kw = w.shape
    full = np.zeros((n, k, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for i0, ci, r, s in itertools.product(range(n), range(c), range(h), range(wd)):
        full[i0, :, r * stride : r * stride + kh, s * stride : s * stride + kw] += x[i0, ci, r, s] * w[ci]
    out = full[:, :, pad : full.shape[2] - pad, pad : full.shape[3] - pad]
    return out + b.reshape(1, -1, 1, 1)


def central_diff(f, a, h=1e-5):
    g = np.zeros_like(a)
    flat, gf = a.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + h
        up = f()
        flat[i] = o - h
        dn = f()
        flat[i] = o
        gf[i] = (up - dn) / (2 * h)
    return g


def max_rel(a, n):
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)))


# ----------------------------------------------------------------- tensor


def test_tensor_basics():
    t = Tensor([[1, 2], [3, 4]])
    assert t.shape == (2, 2) and t.size == 4 and t.data.dtype == np.float64
    assert t.grad is None and not t.requires_grad


def test_distinct_ids():
    assert Tensor(1.0).id != Tensor(1.0).id


def test_dimension_error_carries_axis():
    x = leaf(np.zeros((1, 2, 5, 5)))
    w = leaf(np.zeros((1, 3, 3, 3)))
    with pytest.raises(DimensionError) as err:
        T.conv2d(x, w, leaf(np.zeros(1)))
    assert err.value.axis == 1


def test_conv_indivisible_stride_names_axis():
    with pytest.raises(DimensionError) as err:
        T.conv2d(np.zeros((1, 1, 6, 5)), np.zeros((1, 1, 3, 3)), np.zeros(1), stride=2)
    assert err.value.axis == 2


# ------------------------------------------------------------ conv examples


def test_conv_scalar_scaling():
    out = T.conv2d(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), np.full((1, 1, 1, 1), 2.0), np.zeros(1))
    assert np.array_equal(out.data[0, 0], [[2, 4], [6, 8]])


def test_conv_halves_128():
    out = T.conv2d(np.zeros((1, 1, 128, 128)), np.zeros((1, 1, 4, 4)), np.zeros(1), stride=2, pad=1)
    assert out.shape[2:] == (64, 64)


def test_conv_ones_padded():
    out = T.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.ones(1), pad=1).data[0, 0]
    assert np.array_equal(out, [[5, 7, 5], [7, 10, 7], [5, 7, 5]])


def test_deconv_doubles_16():
    out = T.conv_transpose2d(np.zeros((1, 2, 16, 16)), np.zeros((2, 1, 4, 4)), np.zeros(1), stride=2, pad=1)
    assert out.shape[2:] == (32, 32)


def test_deconv_scalar_scaling():
    out = T.conv_transpose2d(np.full((1, 1, 1, 1), 3.0), np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), np.zeros(1))
    assert np.array_equal(out.data[0, 0], [[3, 6], [9, 12]])


def test_transposed_alias():
    assert T.transposed_conv2d is T.conv_transpose2d


def _valid(h, k, s, p):
    return h + 2 * p - k >= 0 and (h + 2 * p - k) % s == 0


def test_conv_shape_sweep_exhaustive():
    """Every (H, k, s, p) with H <= 16, k <= 5, s <= 3, p <= 2."""
    for h, k, s, p in itertools.product(range(1, 17), range(1, 6), range(1, 4), range(0, 3)):
        x, w, b = np.zeros((1, 1, h, 3)), np.zeros((1, 1, k, 1)), np.zeros(1)
        if _valid(h, k, s, p) and _valid(3, 1, s, p):
            assert T.conv2d(x, w, b, s, p).shape[2] == (h + 2 * p - k) // s + 1
        elif not _valid(h, k, s, p):
            with pytest.raises(DimensionError):
                T.conv2d(x, w, b, s, p)


def test_deconv_shape_sweep_exhaustive():
    for h, k, s, p in itertools.product(range(1, 17), range(1, 6), range(1, 4), range(0, 3)):
        expect = (h - 1) * s - 2 * p + k
        x, w, b = np.zeros((1, 1, h, 2)), np.zeros((1, 1, k, 2 * p + 1)), np.zeros(1)
        if expect >= 1:
            assert T.conv_transpose2d(x, w, b, s, p).shape[2] == expect
        else:
            with pytest.raises(DimensionError):
                T.conv_transpose2d(x, w, b, s, p)


conv_cfg = st.tuples(
    st.integers(1, 2),  # n
    st.integers(1, 3),  # c
    st.integers(1, 3),  # k out
    st.integers(1, 5),  # kernel
    st.integers(1, 3),  # stride
    st.integers(0, 2),  # pad
    st.integers(0, 3),  # extra steps
    st.integers(0, 2**31),
)


@given(conv_cfg)
def test_conv_matches_loop_oracle(cfg):
    n, c, k, kh, s, p, extra, seed = cfg
    h = max(kh - 2 * p, 1)
    h += (-(h + 2 * p - kh)) % s + s * extra
    rng = np.random.default_rng(seed)
    x, w, b = rng.standard_normal((n, c, h, h)), rng.standard_normal((k, c, kh, kh)), rng.standard_normal(k)
    assert np.allclose(T.conv2d(x, w, b, s, p).data, conv_loops(x, w, b, s, p), rtol=0, atol=1e-12)


@given(conv_cfg)
def test_deconv_matches_loop_oracle(cfg):
    n, c, k, kh, s, p, extra, seed = cfg
    h = 1 + extra
    if (h - 1) * s - 2 * p + kh < 1:
        return
    rng = np.random.default_rng(seed)
    x, w, b = rng.standard_normal((n, c, h, h)), rng.standard_normal((c, k, kh, kh)), rng.standard_normal(k)
    assert np.allclose(T.conv_transpose2d(x, w, b, s, p).data, deconv_loops(x, w, b, s, p), rtol=0, atol=1e-12)


@given(st.integers(1, 3), st.integers(1, 2), st.integers(0, 1), st.integers(0, 2**31))
def test_conv_deconv_duality(kh_extra, stride, pad, seed):
    """deconv(g; w) equals d<conv(x; w), g>/dx."""
    kh = 2 + kh_extra
    rng = np.random.default_rng(seed)
    h = 5 if (5 + 2 * pad - kh) % stride == 0 else 6
    x = leaf(rng.standard_normal((2, 3, h, h)))
    w = leaf(rng.standard_normal((4, 3, kh, kh)))
    b = leaf(np.zeros(4))
    with Tape() as tape:
        y = T.conv2d(x, w, b, stride, pad)
        g = rng.standard_normal(y.shape)
        loss = T.reduce_sum(T.mul(y, g))
    tape.backward(loss)
    dec = T.conv_transpose2d(g, w.data, np.zeros(3), stride, pad).data
    assert dec.shape == x.shape
    assert np.allclose(dec, x.grad, rtol=0, atol=1e-10)


# ------------------------------------------------------------- batchnorm


def test_bn_constant_channel():
    out = T.batchnorm2d(np.full((2, 1, 3, 3), 7.0), np.ones(1), np.full(1, 5.0), "train")
    assert np.allclose(out.data, 5.0, atol=1e-12)


def test_bn_standardized_input_passes_through():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 2, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = T.batchnorm2d(x, np.ones(2), np.zeros(2), "train").data
    assert np.allclose(out, x, rtol=1e-3, atol=0)


def test_bn_eval_with_batch_stats_equals_train():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 2, 4, 4)) * 3 + 1
    gamma, beta = rng.standard_normal(2), rng.standard_normal(2)
    train = T.batchnorm2d(x, gamma, beta, "train").data
    ev = T.batchnorm2d(x, gamma, beta, "eval", x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3))).data
    assert np.allclose(train, ev, rtol=0, atol=1e-12)


def test_bn_running_stats_update_only_in_train():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 2, 4, 4)) + 2.0
    rm, rv = np.zeros(2), np.ones(2)
    T.batchnorm2d(x, np.ones(2), np.zeros(2), "train", rm, rv, momentum=0.1)
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), rtol=0, atol=1e-15)
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), rtol=0, atol=1e-15)
    before = (rm.copy(), rv.copy())
    T.batchnorm2d(x, np.ones(2), np.zeros(2), "eval", rm, rv)
    assert np.array_equal(rm, before[0]) and np.array_equal(rv, before[1])


def test_bn_eval_needs_stats():
    with pytest.raises(ContractError):
        T.batchnorm2d(np.zeros((1, 1, 2, 2)), np.ones(1), np.zeros(1), "eval")


# ----------------------------------------------------- activations, linear


def test_activation_examples():
    assert np.array_equal(T.activation("relu", np.array([-1.0, 2.0])).data, [0.0, 2.0])
    assert T.activation("sigmoid", np.array(0.0)).item() == 0.5
    assert T.activation("leakyrelu", np.array(-2.0), 0.2).item() == pytest.approx(-0.4, abs=1e-15)
    assert T.activation("tanh", np.array(0.0)).item() == 0.0


@given(st.lists(st.floats(-800, 800), min_size=1, max_size=20))
def test_sigmoid_bounded_and_finite(vals):
    out = T.activation("sigmoid", np.array(vals)).data
    assert np.all(np.isfinite(out)) and np.all((out >= 0) & (out <= 1))


def test_unknown_activation():
    with pytest.raises(ValueError):
        T.activation("gelu", np.zeros(2))


def test_linear_examples():
    x = np.random.default_rng(0).standard_normal((3, 4))
    assert np.array_equal(T.linear(x, np.eye(4), np.zeros(4)).data, x)
    assert np.array_equal(T.linear(np.zeros((2, 3)), np.ones((3, 2)), np.array([1.0, -1.0])).data, [[1, -1], [1, -1]])
    out = T.linear(np.array([[1.0, 2.0]]), np.array([[1.0, 0.0], [0.0, 3.0]]), np.ones(2)).data
    assert np.array_equal(out, [[2.0, 7.0]])


def test_linear_dimension_errors():
    with pytest.raises(DimensionError):
        T.linear(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))
    with pytest.raises(DimensionError):
        T.linear(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros(3))


# --------------------------------------------------------------- backward


def test_backward_sum_gives_ones():
    x = leaf(np.arange(6.0).reshape(2, 3))
    with Tape() as tape:
        loss = T.reduce_sum(x)
    grads = tape.backward(loss)
    assert np.array_equal(grads[x.id], np.ones((2, 3)))
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_rejects_non_scalar():
    x = leaf(np.ones(3))
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        tape.backward(y)


def test_unreached_param_gets_zero_grad():
    x, unused = leaf(np.ones(3)), leaf(np.ones((2, 2)))
    with Tape() as tape:
        loss = T.reduce_sum(x)
    grads = tape.backward(loss, [x, unused])
    assert np.array_equal(grads[unused.id], np.zeros((2, 2)))


def test_gradients_accumulate_over_fanout():
    x = leaf(np.array([1.0, 2.0]))
    with Tape() as tape:
        loss = T.reduce_sum(x * x + x)
    tape.backward(loss)
    assert np.array_equal(x.grad, [3.0, 5.0])


def test_broadcast_mul_unbroadcasts():
    a, b = leaf(np.ones((2, 3))), leaf(np.array([1.0, 2.0, 3.0]))
    with Tape() as tape:
        loss = T.reduce_sum(T.mul(a, b))
    tape.backward(loss)
    assert np.array_equal(b.grad, [2.0, 2.0, 2.0])
    assert np.array_equal(a.grad, np.tile([1.0, 2.0, 3.0], (2, 1)))


def test_sigmoid_mlp_matches_fd_1e6():
    rng = np.random.default_rng(7)
    x, t = rng.standard_normal((2, 2)), rng.uniform(size=(2, 2))
    w, b = leaf(rng.standard_normal((2, 2))), leaf(rng.standard_normal(2))

    def f():
        return T.reduce_mean(T.square(T.activation("sigmoid", T.linear(x, w, b)) - t))

    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    assert max_rel(w.grad, central_diff(lambda: f().item(), w.data)) <= 1e-6
    assert max_rel(b.grad, central_diff(lambda: f().item(), b.data)) <= 1e-6


def test_conv_weight_grad_matches_fd():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 2, 6, 6))
    w, b = leaf(rng.standard_normal((3, 2, 3, 3))), leaf(rng.standard_normal(3))
    r = rng.standard_normal((1, 3, 4, 4))

    def f():
        return T.reduce_sum(T.mul(T.conv2d(x, w, b), r))

    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    assert max_rel(w.grad, central_diff(lambda: f().item(), w.data)) <= 1e-4


def test_grad_check_examples():
    assert grad_check("conv2d", 3, 1e-4) <= 1e-4
    assert grad_check({"op": "batchnorm2d_train"}, 3, 1e-4) <= 1e-4
    assert grad_check("sigmoid", 3, 1e-6) <= 1e-6


def test_grad_check_unknown_op():
    with pytest.raises(ValueError):
        grad_check("softplus", 0, 1e-4)


# ---------------------------------------------------- replay, determinism


def test_tape_topological_and_replay_bit_exact():
    rng = np.random.default_rng(9)
    x = leaf(rng.standard_normal((2, 3, 8, 8)))
    w = leaf(rng.standard_normal((4, 3, 4, 4)) * 0.1)
    b = leaf(np.zeros(4))
    g, be = leaf(np.ones(4)), leaf(np.zeros(4))
    with Tape() as tape:
        h = T.conv2d(x, w, b, 2, 1)
        h = T.batchnorm2d(h, g, be, "train")
        h = T.activation("leakyrelu", h)
        loss = T.reduce_mean(T.square(h))
    produced = set()
    leaves = {t.id for t in tape.leaves()}
    for rec in tape.records:
        for i in rec.input_ids:
            assert i in produced or i not in {r.output_id for r in tape.records}
        produced.add(rec.output_id)
    assert {x.id, w.id, b.id, g.id, be.id} <= leaves
    env = tape.replay()
    assert np.array_equal(env[loss.id], loss.data)
    assert np.array_equal(env[h.id], h.data)


def test_identical_ops_bit_identical():
    from casi_inpaint.rng import SeededRng

    def run():
        r = SeededRng(11)
        x, w = r.normal((2, 3, 8, 8)), r.normal((5, 3, 3, 3))
        return T.activation("tanh", T.conv2d(x, w, np.zeros(5), 1, 1)).data

    assert np.array_equal(run(), run())


@given(st.integers(0, 2**31))
def test_forward_finite_on_finite_input(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 4, 4)) * 100
    out = T.batchnorm2d(T.conv2d(x, rng.standard_normal((3, 2, 3, 3)), np.zeros(3), 1, 1), np.ones(3), np.zeros(3))
    for kind in ("relu", "leakyrelu", "sigmoid", "tanh"):
        assert np.all(np.isfinite(T.activation(kind, out).data))
    assert np.all(np.isfinite(T.log_softmax(out.reshape(2, -1)).data))
