"""Adversarial and reconstruction losses.

The gradient penalty differentiates the critic's input gradient, so it needs
an active tape; its mixing weights are drawn on a 2^-24 grid so that eps and
1 - eps are both exact floats (the penalty is then bit-for-bit symmetric
under swapping the real and fake batches with mirrored weights).
"""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .tensor import Rng, Tensor

log = logging.getLogger(__name__)

BCE_CLAMP = 1e-7
_GP_NORM_FLOOR = 1e-12  # inside the sqrt; keeps the norm differentiable at 0


def bce_loss(predictions: Tensor, targets) -> Tensor:
    """Mean binary cross entropy over probability predictions.

    Predictions at exactly 0 or 1 are clamped to [1e-7, 1 - 1e-7] (and the
    event logged) so the logarithms stay finite.
    """
    p = predictions
    data = p.data
    if np.any(data <= 0.0) or np.any(data >= 1.0):
        log.warning("bce_loss clamped %d prediction(s) at the (0, 1) boundary",
                    int(np.sum((data <= 0.0) | (data >= 1.0))))
        p = T.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = targets if isinstance(targets, Tensor) else Tensor._wrap(
        np.broadcast_to(np.asarray(targets, dtype=data.dtype), data.shape)
    )
    term = T.add(T.mul(t, T.log(p)), T.mul(T.sub(1.0, t), T.log(T.sub(1.0, p))))
    return T.neg(T.mean(term))


def generator_bce_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator objective: -log D(G(z))."""
    return bce_loss(d_fake, 1.0)


def wasserstein_critic_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """mean(d_fake) - mean(d_real); minimized by the critic."""
    return T.sub(T.mean(d_fake), T.mean(d_real))


def wasserstein_generator_loss(d_fake: Tensor) -> Tensor:
    return T.neg(T.mean(d_fake))


def l1_loss(output: Tensor, target: Tensor) -> Tensor:
    return T.mean(T.absolute(T.sub(output, target)))


def mix_weights(rng: Rng, batch: int, dtype) -> np.ndarray:
    """Uniform [0, 1) weights on a 2^-24 grid (so 1 - eps is exact)."""
    k = rng.integers((batch, 1, 1, 1), 0, 1 << 24).astype(np.float64)
    return (k * (1.0 / (1 << 24))).astype(dtype)


def gradient_penalty(
    critic,
    x_real: Tensor,
    x_fake: Tensor,
    lam: float,
    rng: Rng | None = None,
    eps: np.ndarray | None = None,
) -> Tensor:
    """Penalty pushing the critic's input-gradient norm toward 1.

    Mixes real and fake per sample with eps ~ U[0,1], evaluates the critic at
    the mix, and returns ``lam * mean((||grad|| - 1)^2)`` as a tape node that
    is differentiable with respect to the critic parameters.
    """
    tape = T._current_tape()
    if tape is None:
        raise RuntimeError("gradient_penalty needs an active tape (second-order recording)")
    if x_real.shape != x_fake.shape:
        raise T.ShapeError(f"real {x_real.shape} and fake {x_fake.shape} batches differ")
    if eps is None:
        if rng is None:
            raise ValueError("provide either rng or explicit eps")
        eps = mix_weights(rng, x_real.shape[0], x_real.data.dtype)
    eps = np.asarray(eps, dtype=x_real.data.dtype).reshape(x_real.shape[0], 1, 1, 1)

    mixed = eps * x_real.data + (1.0 - eps) * x_fake.data
    x_hat = Tensor(mixed, requires_grad=True, dtype=x_real.data.dtype)
    d_hat = critic(x_hat)
    grad = tape.backward(T.reduce_sum(d_hat), wrt=[x_hat], create_graph=True)[x_hat]
    sq = T.reduce_sum(T.mul(grad, grad), axis=tuple(range(1, grad.ndim)))
    norm = T.sqrt(T.add(sq, _GP_NORM_FLOOR))
    gap = T.sub(norm, 1.0)
    return T.mul(T.mean(T.mul(gap, gap)), float(lam))
