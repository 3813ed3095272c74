"""miarn: single- and multi-dimensional intra-attention recurrent networks
for binary text classification, built on a minimal numpy autodiff engine."""

__version__ = "0.1.0"
