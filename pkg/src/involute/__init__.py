"""Neural networks with exact invariance to involutory linear/affine maps."""

__version__ = "0.1.0"
