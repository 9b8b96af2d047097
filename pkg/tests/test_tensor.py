"""Autodiff correctness against central finite differences."""

import numpy as np
import pytest
from gradcheck import check_grads, rel_err

from pdpcrn import tensor as tz
from pdpcrn.tensor import Tape, Tensor


def rand(rng, *shape):
    return rng.standard_normal(shape)


def test_add_sub_broadcast():
    rng = np.random.default_rng(0)
    check_grads(lambda a, b: a + b, [rand(rng, 3, 4), rand(rng, 4)])
    check_grads(lambda a, b: a - b, [rand(rng, 2, 3, 4), rand(rng, 3, 1)])
    check_grads(lambda a: a + 2.5, [rand(rng, 5)])


def test_mul_div_broadcast():
    rng = np.random.default_rng(1)
    check_grads(lambda a, b: a * b, [rand(rng, 3, 4), rand(rng, 1, 4)])
    b = rand(rng, 2, 4)
    b += np.sign(b) * 1.0 + (b == 0)  # keep denominators away from zero
    check_grads(lambda a, c: a / c, [rand(rng, 2, 4), b])
    check_grads(lambda a: 3.0 / (a * a + 1.0), [rand(rng, 4)])


def test_unary_elementwise():
    rng = np.random.default_rng(2)
    check_grads(lambda a: -a, [rand(rng, 3)])
    check_grads(lambda a: a**3.0, [rand(rng, 4)])
    check_grads(lambda a: a.exp(), [rand(rng, 3, 2)])
    check_grads(lambda a: (a * a + 0.5).log(), [rand(rng, 5)])
    check_grads(lambda a: (a * a + 0.3).sqrt(), [rand(rng, 4)])
    check_grads(lambda a: a.tanh(), [2.0 * rand(rng, 6)])
    check_grads(lambda a: a.sigmoid(), [2.0 * rand(rng, 6)])
    check_grads(lambda a: tz.erf(a), [rand(rng, 6)])


def test_clip_gradient_masks():
    rng = np.random.default_rng(3)
    a = rand(rng, 40)
    # keep every sample off the clip boundary so FD is well defined
    a = a[np.abs(np.abs(a) - 0.5) > 0.05][:16].copy()
    check_grads(lambda t: tz.clip(t, -0.5, 0.5) * 2.0, [a])


def test_reductions():
    rng = np.random.default_rng(4)
    check_grads(lambda a: a.sum(), [rand(rng, 3, 4)])
    check_grads(lambda a: a.sum(axis=1), [rand(rng, 3, 4)])
    check_grads(lambda a: a.sum(axis=(0, 2), keepdims=True), [rand(rng, 2, 3, 4)])
    check_grads(lambda a: a.mean(axis=0), [rand(rng, 3, 4)])
    check_grads(lambda a: a.mean(), [rand(rng, 7)])


def test_matmul():
    rng = np.random.default_rng(5)
    check_grads(lambda a, b: a @ b, [rand(rng, 3, 4), rand(rng, 4, 2)])
    # batched, with broadcast on the left operand
    check_grads(lambda a, b: a @ b, [rand(rng, 2, 3, 4), rand(rng, 2, 4, 2)])
    check_grads(lambda a, b: a @ b, [rand(rng, 3, 4), rand(rng, 5, 4, 2)])


def test_shape_ops():
    rng = np.random.default_rng(6)
    check_grads(lambda a: a.reshape(6, 2).tanh(), [rand(rng, 3, 4)])
    check_grads(lambda a: a.transpose(1, 0, 2).exp(), [rand(rng, 2, 3, 4)])
    check_grads(lambda a, b: tz.concat([a, b], axis=1), [rand(rng, 2, 3), rand(rng, 2, 2)])
    check_grads(lambda a: a[:, 1:3] * 2.0, [rand(rng, 3, 5)])
    check_grads(lambda a: tz.pad(a, [(0, 0), (1, 2)]).tanh(), [rand(rng, 2, 3)])
    check_grads(lambda a: tz.flip(a, axis=1) * a, [rand(rng, 2, 3)])
    check_grads(lambda a: tz.dilate(a, axis=1, step=2).sum(axis=0), [rand(rng, 2, 3)])


def test_reuse_accumulates_gradient():
    with Tape() as tape:
        x = Tensor([2.0], requires_grad=True)
        y = x * x + x * 3.0  # dy/dx = 2x + 3 = 7
        tape.backward(y.sum())
    assert abs(x.grad[0] - 7.0) < 1e-12


def test_chained_graph_value_and_grad():
    # f(x) = tanh(x W) summed; verified against a hand numpy reimplementation
    rng = np.random.default_rng(7)
    xv, wv = rand(rng, 2, 3), rand(rng, 3, 3)
    with Tape() as tape:
        x = Tensor(xv, requires_grad=True)
        w = Tensor(wv, requires_grad=True)
        loss = (x @ w).tanh().sum()
        tape.backward(loss)
    y = np.tanh(xv @ wv)
    assert rel_err(loss.item(), np.sum(y)) < 1e-12
    gw = xv.T @ (1 - y * y)
    assert rel_err(w.grad, gw) < 1e-12


def test_tape_is_consumed_once():
    with Tape() as tape:
        x = Tensor([1.0], requires_grad=True)
        y = x * 2.0
        tape.backward(y.sum())
        with pytest.raises(tz.TensorError):
            tape.backward(y.sum())


def test_backward_requires_scalar_and_attached_loss():
    with Tape() as tape:
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = x * 2.0
        with pytest.raises(tz.TensorError):
            tape.backward(y)  # non-scalar
    with Tape() as tape:
        z = Tensor([3.0])  # no grad, never recorded
        with pytest.raises(tz.TensorError):
            tape.backward(z)


def test_backward_without_tape_raises():
    x = Tensor([1.0], requires_grad=True)
    y = x * 2.0
    with pytest.raises(tz.TensorError):
        y.backward()


def test_no_tape_blocks_recording():
    with Tape() as tape:
        x = Tensor([1.0], requires_grad=True)
        with tz.no_tape():
            y = x * 2.0
        assert len(tape) == 0
        assert not hasattr(y, "_missing")  # result still usable
        z = x * 4.0
        tape.backward(z.sum())
    assert x.grad[0] == 4.0


def test_mixed_dtype_rejected():
    a = Tensor(np.ones(3), dtype=np.float64)
    b = Tensor(np.ones(3, dtype=np.float32), dtype=np.float32)
    with pytest.raises(tz.TensorError, match="mixed dtypes"):
        a + b


def test_bad_shapes_report_both_operands():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 5)))
    with pytest.raises(tz.TensorError, match=r"\[2, 3\].*\[4, 5\]"):
        a + b
    with pytest.raises(tz.TensorError, match="inner dimensions"):
        a @ b


def test_default_dtype_switch():
    tz.set_default_dtype(np.float32)
    assert tz.zeros((2,)).dtype == np.float32
    tz.set_default_dtype(np.float64)
    assert tz.ones((2,)).dtype == np.float64
    with pytest.raises(ValueError):
        tz.set_default_dtype(np.int32)


def test_tensor_file_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    arr = rng.standard_normal((3, 1, 4))
    p = tmp_path / "x.tnsr"
    tz.save_tensor(p, Tensor(arr))
    back = tz.load_tensor(p)
    assert back.shape == (3, 1, 4)
    assert np.array_equal(back.data, arr)
    with open(tmp_path / "bad.tnsr", "wb") as f:
        f.write(b"NOPE")
    with pytest.raises(tz.TensorError, match="magic"):
        tz.load_tensor(tmp_path / "bad.tnsr")
