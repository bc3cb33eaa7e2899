"""Shared test oracles.

The finite-difference gradient oracle here is intentionally independent of
the tape machinery it checks: it re-evaluates the forward function with
perturbed parameter entries and never looks at recorded nodes.
"""

from __future__ import annotations

import numpy as np

from splt import autodiff as ad


def finite_difference_grads(f, tensors, eps: float = 1e-5):
    """Central finite differences of the scalar ``f()`` w.r.t. each tensor.

    ``f`` must recompute the forward pass from the tensors' current data.
    Entries are perturbed in place and restored.
    """
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.zeros(flat.shape, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * eps)
        grads.append(g.reshape(t.data.shape))
    return grads


def assert_gradients_match(build_loss, tensors, rtol: float = 1e-4, atol: float = 1e-7, eps: float = 1e-5):
    """Reverse-mode gradients of ``build_loss`` vs. the finite-difference oracle.

    ``build_loss()`` must construct the loss from scratch using the given
    tensors (it is called once under a tape and many times tape-free).
    """
    ad.zero_grad({str(i): t for i, t in enumerate(tensors)})
    with ad.Tape() as tape:
        loss = build_loss()
    tape.backward(loss)

    def f():
        with ad.no_grad():
            return build_loss().item()

    fd = finite_difference_grads(f, tensors, eps=eps)
    for t, g_fd in zip(tensors, fd):
        assert t.grad is not None, "parameter received no gradient"
        np.testing.assert_allclose(t.grad, g_fd, rtol=rtol, atol=atol)
