"""Equivariant multi-head graph attention with attentive self-interaction."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Parameter
from ..errors import DomainError, ShapeError
from ..so3 import CART_TO_DEGREE1
from .fiber import Fiber
from .kernels import PairConv
from .module import LayerNorm, Linear, Module
from .tfn import gather_sources

X_IJ_MODES = ("none", "cat", "add")
SCORE_EPS = 1e-12


def query_embed(features: dict, weights: dict) -> dict:
    """Per degree, ``(mid, mi)`` weights times the ``(mi, 2d+1)`` channel stack."""
    out = {}
    for d, w in weights.items():
        if d not in features:
            raise DomainError(f"query needs degree {d}, absent from the input features")
        out[d] = ad.einsum("qi,nia->nqa", w, features[d])
    return out


def inject_displacement(src_features: dict, displacement, mode: str) -> dict:
    """Feed the edge displacement into the degree-1 inputs.

    The Cartesian vector is first expressed in the real degree-1 harmonic
    basis so it rotates with the degree-1 Wigner-D matrix.
    """
    if mode == "none":
        return src_features
    vec = np.asarray(displacement) @ CART_TO_DEGREE1.T  # (E, 3)
    out = dict(src_features)
    if mode == "cat":
        x = ad.Tensor(vec[:, None, :])
        out[1] = ad.concat([src_features[1], x], axis=1) if 1 in src_features else x
    elif mode == "add":
        if 1 not in src_features:
            raise DomainError("x_ij mode 'add' needs at least one degree-1 input channel")
        f1 = src_features[1]
        first = ad.getitem(f1, (slice(None), slice(0, 1))) + vec[:, None, :]
        out[1] = ad.concat([first, ad.getitem(f1, (slice(None), slice(1, None)))], axis=1)
    else:
        raise DomainError(f"unknown x_ij mode {mode!r}")
    return out


def fiber2head(features: dict, heads: int, fiber: Fiber):
    """``(entities, heads, n_features / heads)``: per degree the channels are
    split into ``heads`` contiguous groups, then degrees are concatenated in
    ascending order.
    """
    parts = []
    for m, d in fiber:
        if m % heads:
            raise ShapeError(f"degree-{d} multiplicity {m} not divisible by {heads} heads")
        f = features[d]
        parts.append(ad.reshape(f, (f.shape[0], heads, (m // heads) * (2 * d + 1))))
    return ad.concat(parts, axis=-1) if len(parts) > 1 else parts[0]


def attention_scores(q_heads, k_heads, dst, num_nodes: int, dim: int):
    """Softmax over each destination's incoming edges of ``q . k / sqrt(dim)``.

    ``q_heads`` is per node ``(N, H, c)``, ``k_heads`` per edge ``(E, H, c)``.
    """
    if q_heads.shape[1:] != k_heads.shape[1:]:
        raise ShapeError(f"attention_scores: query {q_heads.shape} vs key {k_heads.shape}")
    raw = ad.sum_(ad.getitem(q_heads, dst) * k_heads, axis=-1)
    return ad.segment_softmax(ad.scale(raw, 1.0 / math.sqrt(dim)), dst, num_nodes)


def attention_aggregate(scores, values: dict, dst, num_nodes: int) -> dict:
    """Weight each head's share of the value channels by its score and sum
    over incoming edges; heads keep their own channels.
    """
    heads = scores.shape[1]
    out = {}
    for d, v in values.items():
        e, m, c = v.shape
        if m % heads:
            raise ShapeError(f"degree-{d} value multiplicity {m} not divisible by {heads} heads")
        split = ad.reshape(v, (e, heads, m // heads, c))
        weighted = ad.reshape(split * ad.reshape(scores, (e, heads, 1, 1)), (e, m, c))
        out[d] = ad.segment_sum(weighted, dst, num_nodes)
    return out


class AttentiveSelfInteraction(Module):
    """Per node and degree, output channels are softmax-weighted mixtures of
    the input channels, with weights computed from all pairwise dot products.
    """

    def __init__(self, f_cat: Fiber, f_out: Fiber, rng, slope=0.01):
        for _, d in f_out:
            if d not in f_cat:
                raise DomainError(f"output degree {d} missing from concatenated fiber {f_cat}")
        self.f_cat, self.f_out, self.slope = f_cat, f_out, slope
        self.norm = {d: LayerNorm(f_cat[d] ** 2) for _, d in f_out}
        self.linear = {d: Linear(f_cat[d] ** 2, f_cat[d] * mo, rng) for mo, d in f_out}

    def mixing_weights(self, features: dict) -> dict:
        out = {}
        for mo, d in self.f_out:
            x = features[d]
            n, mcat, _ = x.shape
            dots = ad.reshape(ad.einsum("nac,nbc->nab", x, x), (n, mcat * mcat))
            h = ad.leaky_relu(self.norm[d](ad.sign_clamp(dots, SCORE_EPS)), self.slope)
            out[d] = ad.softmax(ad.reshape(self.linear[d](h), (n, mo, mcat)), axis=-1)
        return out

    def __call__(self, features: dict) -> dict:
        weights = self.mixing_weights(features)
        return {d: ad.einsum("noc,nca->noa", weights[d], features[d]) for _, d in self.f_out}


class AttentionBlock(Module):
    """Attention over incoming edges, concatenation with the input channels,
    then attentive self-interaction.

    Value and key/query fibers are the output fiber divided by ``div``; keys
    and queries keep only degrees present in the input.
    """

    def __init__(self, f_in: Fiber, f_out: Fiber, edge_dim: int, rng, n_heads=1, div=1,
                 x_ij="none", hidden: int = 32):
        if x_ij not in X_IJ_MODES:
            raise DomainError(f"unknown x_ij mode {x_ij!r}")
        if x_ij == "add" and 1 not in f_in:
            raise DomainError("x_ij mode 'add' needs at least one degree-1 input channel")
        self.f_in, self.f_out = f_in, f_out
        self.n_heads, self.div, self.x_ij = n_heads, div, x_ij
        self.f_mid_out = f_out.divided(div)
        self.f_mid_in = self.f_mid_out.restricted(f_in.degrees)
        for fib in (self.f_mid_in, self.f_mid_out):
            for m, d in fib:
                if m % n_heads:
                    raise DomainError(f"multiplicity {m} (degree {d}) not divisible by {n_heads} heads")
        f_edge_in = f_in.plus(Fiber([(1, 1)])) if x_ij == "cat" else f_in
        self.value = PairConv(f_edge_in, self.f_mid_out, edge_dim, rng, hidden)
        self.key = PairConv(f_edge_in, self.f_mid_in, edge_dim, rng, hidden)
        self.query = {d: Parameter(rng.standard_normal((m, f_in[d])) / np.sqrt(f_in[d])) for m, d in self.f_mid_in}
        self.f_cat = Fiber([(m + f_in.get(d), d) for m, d in self.f_mid_out])
        self.self_interaction = AttentiveSelfInteraction(self.f_cat, f_out, rng)

    def embeddings(self, graph, features: dict):
        """Node queries and edge keys/values, before the head split."""
        basis = graph.edge_basis(max(self.f_in.max_degree, self.f_out.max_degree, 1 if self.x_ij != "none" else 0))
        src = inject_displacement(gather_sources(features, graph.src), graph.displacement, self.x_ij)
        scalars = graph.edge_scalars
        return query_embed(features, self.query), self.key(src, scalars, basis), self.value(src, scalars, basis)

    def scores(self, graph, features: dict):
        q, k, _ = self.embeddings(graph, features)
        return self._scores(graph, q, k)

    def _scores(self, graph, q, k):
        qh = fiber2head(q, self.n_heads, self.f_mid_in)
        kh = fiber2head(k, self.n_heads, self.f_mid_in)
        return attention_scores(qh, kh, graph.dst, graph.num_nodes, self.f_mid_in.n_features)

    def __call__(self, graph, features: dict) -> dict:
        q, k, v = self.embeddings(graph, features)
        scores = self._scores(graph, q, k)
        messages = attention_aggregate(scores, v, graph.dst, graph.num_nodes)
        cat = {}
        for _, d in self.f_mid_out:
            cat[d] = ad.concat([features[d], messages[d]], axis=1) if d in self.f_in else messages[d]
        return self.self_interaction(cat)
