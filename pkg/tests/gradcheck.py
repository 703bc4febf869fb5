"""Central finite-difference gradient oracle, independent of the autodiff path."""

from __future__ import annotations

import numpy as np

from adexsbi.nn import Tensor


def finite_difference_grad(f, params: list[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """d f / d p via central differences, one scalar evaluation per element."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_match(f, params: list[Tensor], rel_tol: float = 1e-4,
                       h: float = 1e-5) -> float:
    """Run autodiff and the oracle on scalar-valued f; assert agreement.

    Returns the worst relative deviation seen, using
    |ad - fd| / (|ad| + 1e-8) elementwise.
    """
    for p in params:
        p.zero_grad()
    out = f()
    out.backward()
    ad = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    fd = finite_difference_grad(f, params, h=h)
    worst = 0.0
    for p, a, n in zip(params, ad, fd):
        rel = np.abs(a - n) / (np.abs(a) + 1e-8)
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
        assert np.all(rel < rel_tol), (
            f"gradient mismatch for {p.name or p.op}: max rel {rel.max():.3e}"
        )
    return worst
