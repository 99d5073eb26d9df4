"""Sparse neural network training with learned binary gates.

Weights and a binary parameter-selection mask are learned together:
each weight gets a real-valued gate in [0,1], masks are drawn from the
gates (deterministic thresholding or bernoulli sampling), gradients pass
straight through the draw, and a bi-modal + L1 gate penalty drives the
gates to {0,1}. Trained networks are pruned to an explicit sparse model
and evaluated on CSR kernels.
"""

__version__ = "0.1.0"

from .tensor import Tensor

__all__ = ["Tensor", "__version__"]
