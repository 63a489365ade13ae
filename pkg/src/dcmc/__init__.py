"""Deep CRF matrix completion: a two-branch rating network with unrolled mean-field layers."""

__version__ = "0.1.0"
