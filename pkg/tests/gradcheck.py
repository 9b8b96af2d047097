"""Shared finite-difference gradient oracle for the test suite."""

import numpy as np

from pdpcrn import tensor as tz
from pdpcrn.tensor import Tape, Tensor

EPS = 1e-5
TOL = 1e-6


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return np.max(np.abs(a - b) / denom)


def fd_grad(f, x, eps=EPS):
    """Central finite differences of scalar f() w.r.t. array x, mutated in place."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def check_grads(build, arrays, tol=TOL):
    """build(tensors) -> output Tensor; compares tape grads to FD grads.

    The output is contracted against a fixed random projection so the
    loss is scalar but every output element influences it.
    """
    rng = np.random.default_rng(99)
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = build(*tensors)
        proj = Tensor(rng.standard_normal(out.shape))
        loss = (out * proj).sum()
        tape.backward(loss)
    got = [t.grad for t in tensors]

    def scalar():
        with tz.no_tape():
            ts = [Tensor(a) for a in arrays]
            return float(np.sum(build(*ts).data * proj.data))

    for a, g in zip(arrays, got):
        assert g is not None
        want = fd_grad(scalar, a)
        assert rel_err(g, want) < tol
