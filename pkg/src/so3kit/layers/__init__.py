"""Equivariant network layers."""

from .attention import (
    AttentionBlock,
    AttentiveSelfInteraction,
    attention_aggregate,
    attention_scores,
    fiber2head,
    inject_displacement,
    query_embed,
)
from .fiber import Fiber
from .kernels import PairConv, RadialNet, assemble_kernel, num_bases, radial_weights
from .model import ModelConfig, QM9Model, model_forward
from .module import LayerNorm, Linear, Module
from .norm import NormNonlinearity, pool
from .tfn import TFNLayer
