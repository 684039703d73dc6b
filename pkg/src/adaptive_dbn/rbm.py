"""Bernoulli-Bernoulli restricted Boltzmann machine.

Weights are stored visible-major: ``weights[i, j]`` connects visible unit ``i``
to hidden unit ``j``. Batches are arrays of shape ``(n, n_visible)``.
Every stochastic routine takes an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, logsumexp

from .errors import EnumerationTooLarge, NumericError, ShapeError

#: Largest ``I + J`` for which exact enumeration is allowed.
ENUMERATION_LIMIT = 22


@dataclass
class RbmParameters:
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.visible_bias = np.asarray(self.visible_bias, dtype=np.float64)
        self.hidden_bias = np.asarray(self.hidden_bias, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.visible_bias.ndim != 1 or self.visible_bias.size < 1:
            raise ShapeError("visible axis: visible_bias must be a non-empty vector")
        if self.hidden_bias.ndim != 1 or self.hidden_bias.size < 1:
            raise ShapeError("hidden axis: hidden_bias must be a non-empty vector")
        expected = (self.visible_bias.size, self.hidden_bias.size)
        if self.weights.shape != expected:
            raise ShapeError(f"weights: expected shape {expected}, got {self.weights.shape}")
        for name in ("visible_bias", "hidden_bias", "weights"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"{name} contains non-finite values")

    @property
    def n_visible(self) -> int:
        return self.visible_bias.size

    @property
    def n_hidden(self) -> int:
        return self.hidden_bias.size

    def copy(self) -> "RbmParameters":
        return RbmParameters(self.visible_bias.copy(), self.hidden_bias.copy(), self.weights.copy())

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> "RbmParameters":
        return cls(np.zeros(n_visible), np.zeros(n_hidden), np.zeros((n_visible, n_hidden)))

    @classmethod
    def initialize(cls, n_visible: int, n_hidden: int, rng: np.random.Generator,
                   std: float = 0.01) -> "RbmParameters":
        """Gaussian weights with the given std, zero biases."""
        return cls(np.zeros(n_visible), np.zeros(n_hidden),
                   rng.normal(0.0, std, size=(n_visible, n_hidden)))


@dataclass
class GradientTriple:
    d_visible_bias: np.ndarray
    d_hidden_bias: np.ndarray
    d_weights: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.d_visible_bias ** 2) + np.sum(self.d_hidden_bias ** 2)
                             + np.sum(self.d_weights ** 2)))


@dataclass
class CdStats:
    epoch: int
    reconstruction_error: float
    mean_energy: float
    grad_norm_c: float
    grad_norm_W: float
    #: The update actually applied (learning rate, decay and momentum included).
    step: Optional[GradientTriple] = field(default=None, repr=False)


def _check_visible(v, params: RbmParameters) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1:] != (params.n_visible,):
        raise ShapeError(f"visible axis: expected length {params.n_visible}, got shape {v.shape}")
    return v


def _check_hidden(h, params: RbmParameters) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1:] != (params.n_hidden,):
        raise ShapeError(f"hidden axis: expected length {params.n_hidden}, got shape {h.shape}")
    return h


def _check_batch(batch, params: RbmParameters) -> np.ndarray:
    batch = np.atleast_2d(_check_visible(batch, params))
    if batch.shape[0] == 0:
        raise ValueError("batch is empty")
    return batch


def _guard(params: RbmParameters) -> None:
    size = params.n_visible + params.n_hidden
    if size > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(
            f"instance too large for exact enumeration: I + J = {size} > {ENUMERATION_LIMIT}")


def binary_states(n: int) -> np.ndarray:
    """All ``2**n`` binary vectors of length ``n`` as rows, in counting order."""
    codes = np.arange(2 ** n)[:, None]
    return ((codes >> np.arange(n - 1, -1, -1)) & 1).astype(np.float64)


def energy(v, h, params: RbmParameters):
    """E(v, h) = -b.v - c.h - v.W.h. Broadcasts over leading batch axes."""
    v = _check_visible(v, params)
    h = _check_hidden(h, params)
    interaction = np.sum((v @ params.weights) * h, axis=-1)
    return -(v @ params.visible_bias) - (h @ params.hidden_bias) - interaction


def free_energy(v, params: RbmParameters):
    """-log sum_h exp(-E(v, h)), with the hidden units summed out analytically."""
    v = _check_visible(v, params)
    return -(v @ params.visible_bias) - np.sum(np.logaddexp(0.0, params.hidden_bias + v @ params.weights), axis=-1)


def log_partition_function(params: RbmParameters) -> float:
    """log Z by summing over every (v, h) pair. Guarded by ``ENUMERATION_LIMIT``."""
    _guard(params)
    vs = binary_states(params.n_visible)
    hs = binary_states(params.n_hidden)
    neg_energy = ((vs @ params.visible_bias)[:, None] + (hs @ params.hidden_bias)[None, :]
                  + vs @ params.weights @ hs.T)
    return float(logsumexp(neg_energy))


def partition_function(params: RbmParameters) -> float:
    return float(np.exp(log_partition_function(params)))


def joint_probability(v, h, params: RbmParameters):
    return np.exp(-energy(v, h, params) - log_partition_function(params))


def log_likelihood(params: RbmParameters, batch) -> float:
    """Mean log p(v) over the batch, exact (enumeration guarded)."""
    batch = _check_batch(batch, params)
    return float(np.mean(-free_energy(batch, params)) - log_partition_function(params))


def hidden_conditional(v, params: RbmParameters) -> np.ndarray:
    """p(h_j = 1 | v) = sigmoid(c_j + sum_i W_ij v_i)."""
    v = _check_visible(v, params)
    return expit(params.hidden_bias + v @ params.weights)


def visible_conditional(h, params: RbmParameters) -> np.ndarray:
    """p(v_i = 1 | h) = sigmoid(b_i + sum_j W_ij h_j)."""
    h = _check_hidden(h, params)
    return expit(params.visible_bias + h @ params.weights.T)


def reconstruction_error(params: RbmParameters, batch) -> float:
    """Mean squared error of the one-step mean-field reconstruction."""
    batch = _check_batch(batch, params)
    recon = visible_conditional(hidden_conditional(batch, params), params)
    return float(np.mean((batch - recon) ** 2))


def _sample(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(p.shape) < p).astype(np.float64)


def cd_update(params: RbmParameters, batch, k: int = 1, learning_rate: float = 0.05,
              rng: Optional[np.random.Generator] = None, *, weight_decay: float = 0.0,
              momentum: float = 0.0, previous_step: Optional[GradientTriple] = None,
              sample_visible: bool = True, epoch: int = 0) -> tuple[RbmParameters, CdStats]:
    """One CD-k step on a mini-batch; returns new parameters and batch statistics.

    The positive phase uses the data as Bernoulli probabilities and mean-field
    hidden probabilities. The negative chain samples binary states, except the
    last hidden layer which is kept as probabilities. ``weight_decay`` is an
    L2 penalty on the weights; ``momentum`` mixes in ``previous_step``.
    """
    batch = _check_batch(batch, params)
    if k < 1:
        raise ValueError("k must be >= 1")
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    if np.any(batch < 0) or np.any(batch > 1):
        raise ValueError("batch entries must lie in [0, 1]")
    if rng is None:
        rng = np.random.default_rng()
    n = batch.shape[0]

    ph0 = hidden_conditional(batch, params)
    h = _sample(ph0, rng)
    h_first = h
    for step in range(k):
        pv = visible_conditional(h, params)
        v = _sample(pv, rng) if sample_visible else pv
        ph = hidden_conditional(v, params)
        if step < k - 1:
            h = _sample(ph, rng)

    grad = GradientTriple(
        np.mean(batch - v, axis=0),
        np.mean(ph0 - ph, axis=0),
        (batch.T @ ph0 - v.T @ ph) / n,
    )
    step = GradientTriple(
        learning_rate * grad.d_visible_bias,
        learning_rate * grad.d_hidden_bias,
        learning_rate * (grad.d_weights - weight_decay * params.weights),
    )
    if momentum and previous_step is not None:
        step = GradientTriple(
            step.d_visible_bias + momentum * previous_step.d_visible_bias,
            step.d_hidden_bias + momentum * previous_step.d_hidden_bias,
            step.d_weights + momentum * previous_step.d_weights,
        )

    new_b = params.visible_bias + step.d_visible_bias
    new_c = params.hidden_bias + step.d_hidden_bias
    new_W = params.weights + step.d_weights
    for name, block in (("visible_bias", new_b), ("hidden_bias", new_c), ("weights", new_W)):
        if not np.all(np.isfinite(block)):
            raise NumericError(f"non-finite update in {name}")

    recon = visible_conditional(ph0, params)
    stats = CdStats(
        epoch=epoch,
        reconstruction_error=float(np.mean((batch - recon) ** 2)),
        mean_energy=float(np.mean(energy(batch, h_first, params))),
        grad_norm_c=float(np.linalg.norm(grad.d_hidden_bias)),
        grad_norm_W=float(np.linalg.norm(grad.d_weights)),
        step=step,
    )
    return RbmParameters(new_b, new_c, new_W), stats


def exact_loglik_gradient(params: RbmParameters, batch) -> GradientTriple:
    """Exact gradient of the mean log-likelihood of ``batch``.

    The model expectations are taken under p(v) obtained by enumerating every
    visible state with the hidden units summed out.
    """
    _guard(params)
    batch = _check_batch(batch, params)
    vs = binary_states(params.n_visible)
    log_pv = -free_energy(vs, params)
    pv = np.exp(log_pv - logsumexp(log_pv))

    data_h = hidden_conditional(batch, params)
    model_h = hidden_conditional(vs, params)
    return GradientTriple(
        batch.mean(axis=0) - pv @ vs,
        data_h.mean(axis=0) - pv @ model_h,
        batch.T @ data_h / batch.shape[0] - (vs * pv[:, None]).T @ model_h,
    )
