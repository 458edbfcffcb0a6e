"""Adaptive discriminator augmentation for small datasets.

One plan is sampled per training step and applied to both the real and the
generated batch, so the discriminator never sees a systematic difference
between the two.  All spatial transforms go through the differentiable
affine-warp op, which keeps generator gradients intact when augmented fakes
are scored.

Categories: blit (x-flip, 90-degree rotations, integer translation up to
12.5%), geometric (small continuous scale/rotation), color
(brightness/contrast), additive Gaussian noise (sigma up to 0.1), and one
zeroed cutout square with a quarter of the image side.  Each category fires
independently per image with the state's probability p; p is nudged by the
sign test on the discriminator's real-batch outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Rng, Tensor

CATEGORIES = ("blit", "geometric", "color", "noise", "cutout")

TRANSLATE_FRAC = 0.125
MAX_ROTATE = math.radians(15.0)
MAX_LOG2_SCALE = 0.25
MAX_BRIGHTNESS = 0.2
MAX_LOG2_CONTRAST = 0.25
MAX_NOISE_STD = 0.1
CUTOUT_FRAC = 0.25


@dataclass
class AugmentState:
    """Probability controller shared by one training run."""

    p: float = 0.0
    r_t: float = 0.0
    dp: float = 0.01
    target: float = 0.6
    p_max: float = 0.9
    interval: int = 4  # loop calls ada_update every this many steps
    categories: tuple[str, ...] = CATEGORIES

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "r_t": self.r_t,
            "dp": self.dp,
            "target": self.target,
            "p_max": self.p_max,
            "interval": self.interval,
            "categories": list(self.categories),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentState":
        return cls(
            p=d["p"],
            r_t=d["r_t"],
            dp=d["dp"],
            target=d["target"],
            p_max=d["p_max"],
            interval=d["interval"],
            categories=tuple(d["categories"]),
        )


def ada_update(state: AugmentState, real_scores: np.ndarray, center: float = 0.0) -> AugmentState:
    """Adjust p from the sign of centered discriminator outputs on reals.

    ``center`` is 0.5 for probability heads and 0 for unbounded critics.
    A confident discriminator (r_t above target) raises p; otherwise p decays.
    """
    scores = np.asarray(real_scores, dtype=np.float64).reshape(-1)
    state.r_t = float(np.mean(np.sign(scores - center)))
    if state.r_t > state.target:
        state.p = min(state.p + state.dp, state.p_max)
    else:
        state.p = max(state.p - state.dp, 0.0)
    return state


@dataclass
class AugmentPlan:
    theta: np.ndarray | None = None
    contrast: np.ndarray | None = None
    brightness: np.ndarray | None = None
    noise: np.ndarray | None = None
    cutout_mask: np.ndarray | None = None

    @property
    def is_identity(self) -> bool:
        return all(
            v is None
            for v in (self.theta, self.contrast, self.brightness, self.noise, self.cutout_mask)
        )


def _compose(theta3: np.ndarray, other3: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """theta3[i] <- theta3[i] @ other3[i] where mask, else unchanged."""
    prod = np.einsum("bij,bjk->bik", theta3, other3)
    return np.where(mask[:, None, None], prod, theta3)


def sample_plan(state: AugmentState, rng: Rng, shape: tuple, dtype=np.float32) -> AugmentPlan:
    """Draw one per-image augmentation plan for an NCHW batch shape."""
    b, c, h, w = shape
    p = state.p
    cats = state.categories
    plan = AugmentPlan()
    if p <= 0.0:
        return plan

    eye = np.broadcast_to(np.eye(3), (b, 3, 3)).copy()
    theta3 = eye.copy()
    any_warp = False

    if "blit" in cats:
        chosen = rng.bernoulli(b, p)
        flip = rng.bernoulli(b, 0.5) & chosen
        rotk = rng.integers(b, 0, 4) * chosen
        max_t = int(round(TRANSLATE_FRAC * w))
        tx = rng.integers(b, -max_t, max_t + 1) * chosen
        ty = rng.integers(b, -max_t, max_t + 1) * chosen
        if chosen.any():
            any_warp = True
            m = eye.copy()
            m[:, 0, 0] = np.where(flip, -1.0, 1.0)
            cosk = np.cos(-rotk * (math.pi / 2))
            sink = np.sin(-rotk * (math.pi / 2))
            rot = eye.copy()
            rot[:, 0, 0] = np.round(cosk)
            rot[:, 0, 1] = -np.round(sink)
            rot[:, 1, 0] = np.round(sink)
            rot[:, 1, 1] = np.round(cosk)
            trans = eye.copy()
            trans[:, 0, 2] = -tx  # output-to-source mapping, hence the minus
            trans[:, 1, 2] = -ty
            theta3 = _compose(theta3, m, chosen)
            theta3 = _compose(theta3, rot, chosen)
            theta3 = _compose(theta3, trans, chosen)

    if "geometric" in cats:
        chosen = rng.bernoulli(b, p)
        scale = np.exp2(rng.uniform(b, -MAX_LOG2_SCALE, MAX_LOG2_SCALE).astype(np.float64))
        ang = rng.uniform(b, -MAX_ROTATE, MAX_ROTATE).astype(np.float64)
        if chosen.any():
            any_warp = True
            geo = np.broadcast_to(np.eye(3), (b, 3, 3)).copy()
            inv = 1.0 / scale
            geo[:, 0, 0] = np.cos(-ang) * inv
            geo[:, 0, 1] = -np.sin(-ang) * inv
            geo[:, 1, 0] = np.sin(-ang) * inv
            geo[:, 1, 1] = np.cos(-ang) * inv
            theta3 = _compose(theta3, geo, chosen)

    if any_warp:
        plan.theta = theta3[:, :2, :]

    if "color" in cats:
        chosen = rng.bernoulli(b, p)
        contrast = np.exp2(rng.uniform(b, -MAX_LOG2_CONTRAST, MAX_LOG2_CONTRAST).astype(np.float64))
        bright = rng.uniform(b, -MAX_BRIGHTNESS, MAX_BRIGHTNESS).astype(np.float64)
        if chosen.any():
            plan.contrast = np.where(chosen, contrast, 1.0).reshape(b, 1, 1, 1).astype(dtype)
            plan.brightness = np.where(chosen, bright, 0.0).reshape(b, 1, 1, 1).astype(dtype)

    if "noise" in cats:
        chosen = rng.bernoulli(b, p)
        sigma = rng.uniform(b, 0.0, MAX_NOISE_STD).astype(np.float64)
        if chosen.any():
            sigma = np.where(chosen, sigma, 0.0).reshape(b, 1, 1, 1)
            plan.noise = (rng.normal((b, c, h, w)).astype(np.float64) * sigma).astype(dtype)

    if "cutout" in cats:
        chosen = rng.bernoulli(b, p)
        side = max(1, int(round(CUTOUT_FRAC * w)))
        cx = rng.integers(b, 0, w)
        cy = rng.integers(b, 0, h)
        if chosen.any():
            mask = np.ones((b, 1, h, w), dtype=dtype)
            ys = np.arange(h).reshape(1, h, 1)
            xs = np.arange(w).reshape(1, 1, w)
            y0 = (cy - side // 2).reshape(b, 1, 1)
            x0 = (cx - side // 2).reshape(b, 1, 1)
            inside = (ys >= y0) & (ys < y0 + side) & (xs >= x0) & (xs < x0 + side)
            inside &= chosen.reshape(b, 1, 1)
            mask[:, 0][inside] = 0.0
            plan.cutout_mask = mask

    return plan


def apply_plan(images: Tensor, plan: AugmentPlan) -> Tensor:
    """Apply a sampled plan; identity plans return the input tensor itself."""
    if plan.is_identity:
        return images
    out = images
    if plan.theta is not None:
        out = T.affine_warp(out, plan.theta)
    if plan.contrast is not None:
        out = T.add(T.mul(out, Tensor._wrap(plan.contrast)), Tensor._wrap(plan.brightness))
    if plan.noise is not None:
        out = T.add(out, Tensor._wrap(plan.noise))
    if plan.cutout_mask is not None:
        out = T.mul(out, Tensor._wrap(plan.cutout_mask))
    return out


def augment_batch(images: Tensor, state: AugmentState, rng: Rng) -> Tensor:
    """Sample a fresh plan and apply it (images expected in [-1, 1])."""
    plan = sample_plan(state, rng, images.shape, images.data.dtype)
    return apply_plan(images, plan)
