"""Norm-based nonlinearity and invariant pooling."""

from __future__ import annotations

from .. import autodiff as ad
from ..errors import DomainError
from .fiber import Fiber
from .module import LayerNorm, Linear, Module

NORM_EPS = 1e-12


class NormNonlinearity(Module):
    """Rescale each channel by a learned function of all channel norms of its
    degree, keeping the channel's direction.
    """

    def __init__(self, fiber: Fiber, rng):
        self.fiber = fiber
        self.norm = {d: LayerNorm(m) for m, d in fiber}
        self.linear = {d: Linear(m, m, rng) for m, d in fiber}

    def __call__(self, features: dict) -> dict:
        out = {}
        for _, d in self.fiber:
            x = features[d]
            norms = ad.l2_norm(x, NORM_EPS, keepdims=True)  # (N, m, 1)
            phase = x / norms
            flat = ad.reshape(norms, norms.shape[:2])
            scale = self.linear[d](ad.relu(self.norm[d](flat)))
            out[d] = ad.reshape(scale, scale.shape + (1,)) * phase
        return out


def pool(features: dict, mode: str = "max", node_graph=None, num_graphs: int = 1):
    """Per-graph max or mean of degree-0 channels: ``(num_graphs, m)``."""
    if set(features) != {0}:
        raise DomainError(f"pooling needs degree-0 features only, got degrees {sorted(features)}")
    x = features[0]
    flat = ad.reshape(x, x.shape[:2])
    seg = [0] * x.shape[0] if node_graph is None else node_graph
    if mode == "max":
        return ad.segment_max(flat, seg, num_graphs)
    if mode == "avg":
        return ad.segment_mean(flat, seg, num_graphs)
    raise DomainError(f"unknown pooling mode {mode!r}")
