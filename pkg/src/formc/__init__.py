"""Compiler toolkit for multilinear variational forms on affine simplices.

Forms written in a small tensor-notation language are translated into a
precomputed reference tensor plus a per-element geometry tensor, with C,
raw and LaTeX backends, and verified against a runtime quadrature path.
"""

__version__ = "0.1.0"
