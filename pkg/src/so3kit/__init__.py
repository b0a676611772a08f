"""SO(3)-equivariant graph neural network toolkit."""
