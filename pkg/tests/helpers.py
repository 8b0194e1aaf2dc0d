"""Shared test oracles: central finite differences against autodiff."""

import numpy as np

from bvihead.tensor import Tensor


def numeric_gradients(make_loss, arrays, h=1e-5):
    """Central-difference gradients of a scalar-valued graph builder.

    `make_loss` receives a list of Tensors (one per entry of `arrays`) and
    must return a scalar Tensor. Only forward values are used here, so the
    result is independent of the autodiff path it is checked against.
    """
    def value(arrs):
        loss = make_loss([Tensor(a) for a in arrs])
        return float(loss.data)

    grads = []
    for i, base in enumerate(arrays):
        g = np.zeros_like(base, dtype=np.float64)
        flat = g.reshape(-1)
        for j in range(base.size):
            bumped = [a.copy() for a in arrays]
            bumped[i].reshape(-1)[j] += h
            up = value(bumped)
            bumped[i].reshape(-1)[j] -= 2 * h
            down = value(bumped)
            flat[j] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradients(make_loss, arrays):
    leaves = [Tensor(a) for a in arrays]
    loss = make_loss(leaves)
    loss.backward()
    return [leaf.grad.copy() for leaf in leaves]


def gradient_rel_error(make_loss, arrays, h=1e-5):
    """Norm-relative error between autodiff and finite differences."""
    ana = analytic_gradients(make_loss, arrays)
    num = numeric_gradients(make_loss, arrays, h=h)
    a = np.concatenate([g.reshape(-1) for g in ana])
    n = np.concatenate([g.reshape(-1) for g in num])
    denom = max(np.linalg.norm(n), 1e-12)
    return np.linalg.norm(a - n) / denom


def assert_gradients_match(make_loss, arrays, rel=1e-6, h=1e-5):
    err = gradient_rel_error(make_loss, arrays, h=h)
    assert err < rel, f"gradient mismatch: rel error {err:.3e} >= {rel}"
