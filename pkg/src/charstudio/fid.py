"""Frechet-distance scoring between real and generated image sets.

The score is the Frechet distance between Gaussians fitted to feature
embeddings of the two sets: ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2(Sa Sb)^1/2),
lower meaning more similar.  Two deterministic extractors substitute for the
usual large pretrained embedding, so absolute values are engine-relative;
ordering comparisons between models scored with the same extractor are the
meaningful output.  All statistics accumulate in 64-bit regardless of the
compute precision.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as dataio
from . import tensor as T
from . import zoo
from .tensor import Rng, Tensor

log = logging.getLogger(__name__)

PIXEL_SIDE = 16
RANDCONV_DIM = 128
DEFAULT_SAMPLES = 50_000

EIG_FLOOR_FRAC = -1e-6  # eigenvalues below this fraction of the trace mean not PSD
NEG_CLAMP = -1e-6  # small negative totals clamp to zero
REGULARIZER = 1e-6


class FidError(ValueError):
    pass


class NotPsdError(FidError):
    pass


# --------------------------------------------------------------------------
# feature extraction
# --------------------------------------------------------------------------


class FeatureExtractor:
    """Deterministic image embedding: 'pixel' or 'randconv'.

    pixel: bicubic 16x16 grayscale, flattened (256 dims).
    randconv: fixed-seed 3-layer strided convolution stack with leaky
    activations, globally average pooled (128 dims).
    """

    KINDS = ("pixel", "randconv")

    def __init__(self, kind: str = "pixel", seed: int = 0):
        if kind not in self.KINDS:
            raise FidError(f"unknown extractor kind {kind!r}")
        self.kind = kind
        self.seed = seed
        self._weights: list[np.ndarray] | None = None
        self._resample: dict[int, np.ndarray] = {}

    @property
    def output_dim(self) -> int:
        return PIXEL_SIDE * PIXEL_SIDE if self.kind == "pixel" else RANDCONV_DIM

    def _grayscale(self, images: np.ndarray) -> np.ndarray:
        if images.shape[1] == 1:
            return images[:, 0]
        r, g, b = images[:, 0], images[:, 1], images[:, 2]
        return dataio.LUMA[0] * r + dataio.LUMA[1] * g + dataio.LUMA[2] * b

    def _pixel_features(self, images: np.ndarray) -> np.ndarray:
        gray = self._grayscale(images.astype(np.float64))
        side = gray.shape[1]
        mat = self._resample.get(side)
        if mat is None:
            mat = dataio._resample_matrix(side, PIXEL_SIDE)
            self._resample[side] = mat
        down = np.einsum("oh,nhw,pw->nop", mat, gray, mat)
        return down.reshape(len(images), -1)

    def _conv_weights(self) -> list[np.ndarray]:
        if self._weights is None:
            rng = Rng(self.seed, stream=404)
            dims = [(32, 3), (64, 32), (RANDCONV_DIM, 64)]
            self._weights = [
                (rng.normal((o, i, 3, 3)).astype(np.float32) * np.sqrt(2.0 / (i * 9))).astype(np.float32)
                for o, i in dims
            ]
        return self._weights

    def _randconv_features(self, images: np.ndarray) -> np.ndarray:
        x = images.astype(np.float32)
        if x.shape[1] == 1:
            x = np.repeat(x, 3, axis=1)
        with T.no_grad():
            h = Tensor._wrap(x)
            for w in self._conv_weights():
                h = T.leaky_relu(T.conv2d(h, Tensor._wrap(w), stride=2, padding=1), 0.2)
        return h.data.mean(axis=(2, 3)).astype(np.float64)

    def features(self, images: np.ndarray) -> np.ndarray:
        """(N, C, H, W) images in [-1, 1] -> (N, output_dim) float64 rows."""
        if images.ndim != 4:
            raise FidError(f"expected NCHW images, got shape {images.shape}")
        if self.kind == "pixel":
            return self._pixel_features(images)
        return self._randconv_features(images)

    def describe(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "output_dim": self.output_dim}


# --------------------------------------------------------------------------
# Gaussian statistics
# --------------------------------------------------------------------------


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        asym = np.abs(self.sigma - self.sigma.T).max(initial=0.0)
        if asym > 1e-10:
            raise FidError(f"covariance asymmetry {asym:.2e} exceeds tolerance")


class StatsAccumulator:
    """Streaming mean/covariance with 64-bit sums; order-independent totals."""

    def __init__(self, dim: int):
        self.dim = dim
        self.n = 0
        self._s1 = np.zeros(dim, dtype=np.float64)
        self._s2 = np.zeros((dim, dim), dtype=np.float64)

    def add(self, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise FidError(f"expected (n, {self.dim}) feature rows, got {rows.shape}")
        self.n += len(rows)
        self._s1 += rows.sum(axis=0)
        self._s2 += rows.T @ rows

    def finalize(self) -> GaussianStats:
        if self.n < 2:
            raise FidError(f"need at least 2 samples, have {self.n}")
        mu = self._s1 / self.n
        sigma = (self._s2 - self.n * np.outer(mu, mu)) / (self.n - 1)
        sigma = (sigma + sigma.T) / 2.0
        return GaussianStats(mu=mu, sigma=sigma, n=self.n)


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased covariance of feature rows."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    acc = StatsAccumulator(features.shape[1])
    acc.add(features)
    return acc.finalize()


# --------------------------------------------------------------------------
# the distance
# --------------------------------------------------------------------------


def matrix_sqrt_psd(sigma: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    sigma = np.asarray(sigma, dtype=np.float64)
    vals, vecs = np.linalg.eigh((sigma + sigma.T) / 2.0)
    floor = EIG_FLOOR_FRAC * max(float(np.trace(sigma)), 0.0)
    if vals.min(initial=0.0) < floor:
        raise NotPsdError(f"eigenvalue {vals.min():.3e} below tolerance {floor:.3e}")
    root = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return (root + root.T) / 2.0


def _cross_trace(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    # tr((Sa Sb)^1/2) equals the nuclear norm of sqrt(Sa) @ sqrt(Sb); the
    # singular values are far more accurate than eigenvalues of the triple
    # product when the covariances are rank deficient
    ra = matrix_sqrt_psd(sigma_a)
    rb = matrix_sqrt_psd(sigma_b)
    return float(np.linalg.svd(ra @ rb, compute_uv=False).sum())


def fid(stats_a: GaussianStats, stats_b: GaussianStats) -> float:
    """Frechet distance between two Gaussian summaries (lower is closer)."""
    if stats_a.mu.shape != stats_b.mu.shape:
        raise FidError(f"dimension mismatch: {stats_a.mu.shape} vs {stats_b.mu.shape}")
    try:
        cross = _cross_trace(stats_a.sigma, stats_b.sigma)
        sa, sb = stats_a.sigma, stats_b.sigma
    except NotPsdError:
        log.warning("cross square root failed; retrying with %.0e regularization", REGULARIZER)
        bump = REGULARIZER * np.eye(len(stats_a.mu))
        sa, sb = stats_a.sigma + bump, stats_b.sigma + bump
        cross = _cross_trace(sa, sb)
    diff = stats_a.mu - stats_b.mu
    value = float(diff @ diff + np.trace(sa) + np.trace(sb) - 2.0 * cross)
    if value < NEG_CLAMP:
        raise FidError(f"distance {value:.3e} is negative beyond tolerance")
    return max(value, 0.0)


def score_images(real: np.ndarray, fake: np.ndarray, extractor: FeatureExtractor) -> float:
    """Convenience: fit stats to both image stacks and return the distance."""
    return fid(
        gaussian_stats(extractor.features(real)),
        gaussian_stats(extractor.features(fake)),
    )


# --------------------------------------------------------------------------
# the scoring protocol
# --------------------------------------------------------------------------


def _quantize(images: np.ndarray) -> np.ndarray:
    # match the 8-bit grid the real images went through at write time
    return dataio.to_floats(dataio.to_bytes(images))


def stats_from_images(images: np.ndarray, extractor: FeatureExtractor, batch: int = 256) -> GaussianStats:
    acc = StatsAccumulator(extractor.output_dim)
    for start in range(0, len(images), batch):
        acc.add(extractor.features(images[start : start + batch]))
    return acc.finalize()


def score_model(
    ckpt,
    real_dir,
    extractor: FeatureExtractor,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    resolution: int | None = None,
    batch: int = 64,
) -> dict:
    """Score a generator checkpoint against a directory of real images.

    Generates ``n_samples`` images (conditional models: ceil(n/classes) per
    class, then merged), extracts features streamingly, and reports the
    distance plus the exact counts and extractor settings used.
    """
    from . import checkpoint as ckpt_mod

    t0 = time.perf_counter()
    if not isinstance(ckpt, ckpt_mod.Checkpoint):
        ckpt = ckpt_mod.load(ckpt)
    pair = zoo.build_from_descriptor(ckpt.descriptor)
    ckpt_mod.load_into_pair(pair, ckpt)
    resolution = resolution or pair.resolution

    real = dataio.load_dataset(real_dir, resolution, merge=True)
    real_stats = stats_from_images(real.images(), extractor)

    rng = Rng(seed, stream=500)
    if pair.conditional:
        per_class = -(-n_samples // pair.n_classes)  # ceil
        plan = [(cls, per_class) for cls in range(pair.n_classes)]
    else:
        plan = [(None, n_samples)]
    generated = 0
    acc = StatsAccumulator(extractor.output_dim)
    for label, count in plan:
        remaining = count
        while remaining > 0:
            take = min(batch, remaining)
            images = zoo.generate_images(pair, take, rng, labels=label)
            if not np.all(np.isfinite(images)):
                raise FidError(f"generator produced non-finite pixels after {generated} samples")
            acc.add(extractor.features(_quantize(images)))
            generated += take
            remaining -= take
    score = fid(real_stats, acc.finalize())
    report = {
        "score": score,
        "extractor": extractor.describe(),
        "seed": seed,
        "n_real": real_stats.n,
        "n_requested": n_samples,
        "n_generated": generated,
        "per_class": plan[0][1] if pair.conditional else None,
        "n_classes": pair.n_classes if pair.conditional else None,
        "resolution": resolution,
        "seconds": time.perf_counter() - t0,
    }
    return report


def score_dirs(real_dir, fake_dir, extractor: FeatureExtractor, resolution: int = 64) -> dict:
    """Directory-vs-directory scoring for the CLI."""
    t0 = time.perf_counter()
    real = dataio.load_dataset(real_dir, resolution, merge=True)
    fake = dataio.load_dataset(fake_dir, resolution, merge=True)
    score = fid(
        stats_from_images(real.images(), extractor),
        stats_from_images(fake.images(), extractor),
    )
    return {
        "score": score,
        "extractor": extractor.describe(),
        "n_real": len(real),
        "n_fake": len(fake),
        "resolution": resolution,
        "seconds": time.perf_counter() - t0,
    }
