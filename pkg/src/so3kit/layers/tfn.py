"""Tensor field network convolution with mean aggregation."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Parameter
from ..errors import DomainError
from .fiber import Fiber
from .kernels import PairConv
from .module import Module

SELF_INTERACTIONS = ("linear_si", "channel_mix", "none")


def gather_sources(features: dict, src) -> dict:
    return {d: ad.getitem(f, src) for d, f in features.items()}


class TFNLayer(Module):
    """Equivariant convolution averaging neighbor messages.

    ``linear_si`` adds a learned same-degree skip ``W f_l`` after the mean,
    ``channel_mix`` left-multiplies each edge message by a square channel
    mixing matrix before the mean. Nodes without incoming edges receive only
    the skip term (or zeros).
    """

    def __init__(self, f_in: Fiber, f_out: Fiber, edge_dim: int, rng, self_interaction="linear_si",
                 hidden: int = 32):
        if self_interaction not in SELF_INTERACTIONS:
            raise DomainError(f"unknown self-interaction {self_interaction!r}")
        self.f_in, self.f_out = f_in, f_out
        self.mode = self_interaction
        self.conv = PairConv(f_in, f_out, edge_dim, rng, hidden)
        self.si = {}
        if self_interaction == "linear_si":
            self.si = {l: Parameter(rng.standard_normal((mo, f_in[l])) / np.sqrt(f_in[l]))
                       for mo, l in f_out if l in f_in}
        elif self_interaction == "channel_mix":
            self.si = {l: Parameter(rng.standard_normal((mo, mo)) / np.sqrt(mo)) for mo, l in f_out}

    def __call__(self, graph, features: dict) -> dict:
        basis = graph.edge_basis(max(self.f_in.max_degree, self.f_out.max_degree))
        messages = self.conv(gather_sources(features, graph.src), graph.edge_scalars, basis)
        out = {}
        for _, l in self.f_out:
            msg = messages[l]
            if self.mode == "channel_mix":
                msg = ad.einsum("po,eoa->epa", self.si[l], msg)
            agg = ad.segment_mean(msg, graph.dst, graph.num_nodes)
            if self.mode == "linear_si" and l in self.si:
                agg = agg + ad.einsum("oi,nia->noa", self.si[l], features[l])
            out[l] = agg
        return out
