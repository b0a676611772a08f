"""Independent oracles: finite differences and an explicit CG triple loop."""

from __future__ import annotations

import numpy as np

from ..cg import basis_q_j, check_triangle


def finite_diff_grad(f, params, step=1e-5, entries=None) -> dict:
    """Central-difference gradient of scalar ``f()`` w.r.t. parameter values.

    ``entries`` optionally maps a parameter name to the flat indices to probe;
    unprobed entries are left as NaN.
    """
    grads = {}
    for p in params:
        flat = p.data.reshape(-1)
        g = np.full(flat.shape, np.nan)
        idx = range(flat.size) if entries is None or p.name not in entries else entries[p.name]
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite objective probing {p.name}[{i}]")
            g[i] = (up - down) / (2.0 * step)
        grads[p.name] = g.reshape(p.data.shape)
    return grads


def directional_derivative(f, params, direction: dict, step=1e-5) -> float:
    """Central difference of ``f`` along a joint direction over parameters."""
    originals = {p.name: p.data.copy() for p in params}

    def shifted(h):
        for p in params:
            p.data[...] = originals[p.name] + h * direction[p.name]
        return f()

    try:
        return (shifted(step) - shifted(-step)) / (2.0 * step)
    finally:
        for p in params:
            p.data[...] = originals[p.name]


def brute_force_type_component(Y, f, l: int) -> np.ndarray:
    """Type-``l`` part of ``Y (x) f`` by an explicit loop over CG entries.

    Entry ``[(m_k, m_l), m]`` of the ``(k, l, J)`` block couples component
    ``m`` of ``Y`` and ``m_k`` of ``f`` into output component ``m_l``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    J, k = (Y.size - 1) // 2, (f.size - 1) // 2
    check_triangle(k, l, J)
    q = basis_q_j(k, l, J).q_t
    dl = 2 * l + 1
    out = np.zeros(dl)
    for ml in range(dl):
        for m in range(2 * J + 1):
            for mk in range(2 * k + 1):
                out[ml] += q[mk * dl + ml, m] * Y[m] * f[mk]
    return out
