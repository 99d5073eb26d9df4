"""Penalty terms for gate training, plus analysis oracles.

The training objective adds two gate penalties to the data loss: a
bi-modal term sum g*(1-g) that pushes gates toward {0,1} (it equals the
variance of the bernoulli draw), and an L1 term sum g that pushes them
toward 0. For binary gates the bi-modal term vanishes and the L1 term
counts the surviving parameters, i.e. the network complexity.

The spike-and-slab negative log-prior is an analysis oracle only: it is
reported and tested against, never added to the training loss.
"""

from dataclasses import dataclass

import numpy as np

from .gates import BinaryMask
from .tensor import Tensor, ewise_mul, tensor_sum

ZERO_TOL = 1e-12


class DomainError(ValueError):
    """An input lies outside the domain a penalty is defined on."""


@dataclass(frozen=True)
class PenaltyWeights:
    """Coefficients of the training penalties; all must be >= 0."""

    lambda1: float = 0.0  # bi-modal g*(1-g)
    lambda2: float = 0.0  # L1 on gates
    lambda3: float = 0.0  # optional L2 on gated weights

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class SpikeSlabParams:
    """Mixture coefficient, slab stddev, and weight support half-width.

    Defaults are reporting conveniences; the penalty is exercised with
    explicit values in tests.
    """

    alpha: float = 0.95
    sigma: float = 1.0
    k_bound: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError("alpha must lie in [0,1]")
        if self.sigma <= 0 or self.k_bound <= 0:
            raise DomainError("sigma and k_bound must be positive")


def _values(g):
    return g.data if isinstance(g, Tensor) else np.asarray(g)


def mask_variance(g):
    """Per-entry variance of the bernoulli draw, g*(1-g)."""
    v = _values(g)
    return v * (1.0 - v)


def bimodal_penalty(g):
    """Sum of g*(1-g); zero exactly when every gate is 0 or 1."""
    return float(np.sum(mask_variance(g), dtype=np.float64))


def bimodal_grad(g):
    """Analytic gradient of the bi-modal penalty: 1 - 2g per entry."""
    return 1.0 - 2.0 * _values(g)


def gate_l1_penalty(g):
    """Sum of gate values; equals the surviving-parameter count for binary gates."""
    return float(np.sum(_values(g), dtype=np.float64))


def gate_l1_grad(g):
    return np.ones_like(_values(g))


def complexity(masks):
    """Total number of surviving parameters across layer masks (index-set size)."""
    total = 0
    for m in masks:
        gs = m.gs if isinstance(m, BinaryMask) else np.asarray(m)
        if not np.isin(gs, (0.0, 1.0)).all():
            raise DomainError("complexity expects binary masks")
        total += int(np.count_nonzero(gs))
    return total


def spike_slab_neglog(w, params):
    """Negative log of a spike-and-slab prior, up to its normalizer.

    alpha * #(|w| > tol)  +  (1-alpha)/(2 sigma^2) * sum(w^2).

    The count term enters with a positive sign: it is a penalty on the
    number of nonzero parameters, so more density must cost more.
    Weights must lie in [-k_bound, k_bound].
    """
    v = np.asarray(_values(w), dtype=np.float64)
    if v.size and np.abs(v).max() > params.k_bound:
        raise DomainError(
            f"weight magnitude {np.abs(v).max():g} exceeds k_bound {params.k_bound:g}"
        )
    count = int(np.count_nonzero(np.abs(v) > ZERO_TOL))
    slab = (1.0 - params.alpha) / (2.0 * params.sigma**2) * float(np.sum(v * v))
    return params.alpha * count + slab


def penalty_terms(gate_tensors, weight_tensors, pw):
    """Differentiable penalty node: l1*sum g(1-g) + l2*sum g + l3*sum w^2.

    Returns None when every coefficient is zero or there is nothing to
    penalize, so callers can skip the add.
    """
    total = None

    def _add(term):
        nonlocal total
        total = term if total is None else total + term

    if pw.lambda1 or pw.lambda2:
        for g in gate_tensors:
            if pw.lambda1:
                _add(pw.lambda1 * tensor_sum(ewise_mul(g, 1.0 - g)))
            if pw.lambda2:
                _add(pw.lambda2 * tensor_sum(g))
    if pw.lambda3:
        for w in weight_tensors:
            _add(pw.lambda3 * tensor_sum(ewise_mul(w, w)))
    return total
