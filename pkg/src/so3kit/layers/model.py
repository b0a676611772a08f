"""Molecular property model: attention encoder, TFN decoder, pooled head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..errors import DomainError
from .attention import AttentionBlock
from .fiber import Fiber
from .module import Linear, Module
from .norm import NormNonlinearity, pool
from .tfn import TFNLayer


@dataclass
class ModelConfig:
    in_channels: int = 6
    edge_dim: int = 5
    num_blocks: int = 7
    channels: int = 32
    max_degree: int = 3
    n_heads: int = 8
    div: float = 2
    x_ij: str = "cat"
    decoder_channels: int = 128
    head_hidden: int = 128
    pooling: str = "max"
    radial_hidden: int = 32
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown model config keys {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def fibers(self):
        """``(f_in, f_out)`` for every encoder block."""
        hidden = Fiber.uniform(self.channels, self.max_degree)
        first = Fiber([(self.in_channels, 0)])
        return [(first if i == 0 else hidden, hidden) for i in range(self.num_blocks)]


class QM9Model(Module):
    """Encoder of attention blocks (each followed by a norm nonlinearity),
    a TFN layer down to invariant channels, pooling, and a two-layer head.
    """

    def __init__(self, config: ModelConfig | None = None):
        self.config = config = config or ModelConfig()
        rng = np.random.default_rng(config.seed)
        self.blocks = []
        self.norms = []
        for f_in, f_out in config.fibers():
            self.blocks.append(AttentionBlock(f_in, f_out, config.edge_dim, rng, config.n_heads, config.div,
                                              config.x_ij, config.radial_hidden))
            self.norms.append(NormNonlinearity(f_out, rng))
        last = config.fibers()[-1][1]
        self.decoder = TFNLayer(last, Fiber([(config.decoder_channels, 0)]), config.edge_dim, rng,
                                "linear_si", config.radial_hidden)
        self.head0 = Linear(config.decoder_channels, config.head_hidden, rng)
        self.head1 = Linear(config.head_hidden, 1, rng)
        self.scalers = None  # set by training or checkpoint loading
        self.parameters()

    def encode(self, graph) -> dict:
        h = {0: ad.Tensor(graph.node_features[0])}
        for block, norm in zip(self.blocks, self.norms):
            h = norm(block(graph, h))
        return h

    def __call__(self, graph):
        """Predictions, one per graph in the (possibly batched) input."""
        h = self.decoder(graph, self.encode(graph))
        pooled = pool(h, self.config.pooling, graph.node_graph, graph.num_graphs)
        out = self.head1(ad.relu(self.head0(pooled)))
        return ad.reshape(out, (graph.num_graphs,))


def model_forward(model: QM9Model, graph) -> float:
    return float(model(graph).data[0])
