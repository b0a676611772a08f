"""Radial networks, equivariant kernels and per-edge convolution messages."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..cg import EdgeBasis
from ..errors import ShapeError
from .fiber import Fiber
from .module import LayerNorm, Linear, Module


def num_bases(k: int, l: int) -> int:
    return 2 * min(k, l) + 1


class RadialNet(Module):
    """Maps invariant edge scalars to the weights of every basis kernel and
    channel pair of one ``k -> l`` kernel. Output shape ``(E, mo, mi, nb)``.
    """

    def __init__(self, in_dim: int, nb: int, mi: int, mo: int, rng, hidden: int = 32):
        self.in_dim, self.nb, self.mi, self.mo = in_dim, nb, mi, mo
        self.layer0 = Linear(in_dim, hidden, rng)
        self.norm0 = LayerNorm(hidden)
        self.layer1 = Linear(hidden, hidden, rng)
        self.norm1 = LayerNorm(hidden)
        self.layer2 = Linear(hidden, nb * mi * mo, rng)

    def __call__(self, edge_scalars):
        x = ad.as_tensor(edge_scalars)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"RadialNet: edge scalars of shape {x.shape}, expected (E, {self.in_dim})")
        h = ad.relu(self.norm0(self.layer0(x)))
        h = ad.relu(self.norm1(self.layer1(h)))
        return ad.reshape(self.layer2(h), (x.shape[0], self.mo, self.mi, self.nb))


def radial_weights(net: RadialNet, edge_scalars):
    """Radial weights in the broadcast layout ``(E, mo, 1, mi, 1, nb)``."""
    w = net(edge_scalars)
    e, mo, mi, nb = w.shape
    return ad.reshape(w, (e, mo, 1, mi, 1, nb))


def assemble_kernel(rw, basis) -> ad.Tensor:
    """Full block kernels ``(E, mo*(2l+1), mi*(2k+1))``.

    ``rw`` is ``(E, mo, mi, nb)`` (or the broadcast layout) and ``basis`` is
    ``(E, 2l+1, 2k+1, nb)``. Row ``o*(2l+1) + a`` and column ``i*(2k+1) + b``
    follow the channel-major feature layout.
    """
    rw = ad.as_tensor(rw)
    basis = np.asarray(basis)
    if rw.ndim == 6:
        rw = ad.reshape(rw, (rw.shape[0], rw.shape[1], rw.shape[3], rw.shape[5]))
    if rw.ndim != 4 or basis.ndim != 4 or rw.shape[3] != basis.shape[3] or rw.shape[0] != basis.shape[0]:
        raise ShapeError(f"assemble_kernel: radial weights {rw.shape} vs basis {basis.shape}")
    e, mo, mi, _ = rw.shape
    _, dl, dk, _ = basis.shape
    k = ad.einsum("eoiJ,eabJ->eoaib", rw, basis)
    return ad.reshape(k, (e, mo * dl, mi * dk))


class PairConv(Module):
    """Per-edge messages ``sum_k K^{lk}(x_ij) f_k(src)`` for every output degree.

    Computed without materializing the block kernels: the basis kernels act
    on the source features first, then radial weights mix channels and bases.
    """

    def __init__(self, f_in: Fiber, f_out: Fiber, edge_dim: int, rng, hidden: int = 32):
        self.f_in, self.f_out, self.edge_dim = f_in, f_out, edge_dim
        self.nets = {
            (k, l): RadialNet(edge_dim, num_bases(k, l), mi, mo, rng, hidden)
            for mi, k in f_in
            for mo, l in f_out
        }

    def __call__(self, src_features: dict, edge_scalars, basis: EdgeBasis) -> dict:
        out = {}
        for mo, l in self.f_out:
            total = None
            for mi, k in self.f_in:
                f = src_features[k]
                if f.shape[1:] != (mi, 2 * k + 1):
                    raise ShapeError(f"PairConv: degree-{k} input {f.shape}, expected (E, {mi}, {2 * k + 1})")
                w = self.nets[(k, l)](edge_scalars)  # (E, mo, mi, nb)
                projected = ad.einsum("eabJ,eib->eaiJ", basis[(k, l)], f)  # (E, 2l+1, mi, nb)
                msg = ad.einsum("eoiJ,eaiJ->eoa", w, projected)
                total = msg if total is None else total + msg
            out[l] = total
        return out
