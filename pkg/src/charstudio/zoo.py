"""Concrete model constructors: base GAN pairs plus the colorization pair.

The base generator/discriminator ladder works at 64x64 (spatial path
1-4-8-16-32-64, feature maps 8w/4w/2w/w at width w=64) and at 32x32 with one
stride-2 stage removed from each side.  Wasserstein critics drop the final
sigmoid; the gradient-penalty critic also drops batch norm, since a
per-sample input gradient is meaningless when normalization couples the
batch.  Both deviations from the shared base table are visible in the
descriptor.

The colorizer is a 4-stage U-Net over 64x64 silhouettes with a patch
discriminator that scores overlapping receptive fields on the
(silhouette, color) pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import DEFAULT_LEAKY_SLOPE, LayerSpec, Network
from .tensor import Rng, ShapeError, Tensor

ARCH_KINDS = ("dcgan", "wgan", "wgan-gp")
CLASS_NAMES = ("Man", "Monster", "Woman")
LATENT_DIM = 100


@dataclass
class GanPair:
    kind: str
    resolution: int
    base_width: int
    conditional: bool
    n_classes: int
    latent_dim: int
    generator: Network
    discriminator: Network

    @property
    def image_channels(self) -> int:
        return 3

    def descriptor(self) -> dict:
        return {
            "family": "gan",
            "kind": self.kind,
            "resolution": self.resolution,
            "base_width": self.base_width,
            "conditional": self.conditional,
            "n_classes": self.n_classes,
            "latent_dim": self.latent_dim,
            "generator": self.generator.descriptor(),
            "discriminator": self.discriminator.descriptor(),
        }


@dataclass
class TranslatorPair:
    resolution: int
    base_width: int
    generator: "UnetTranslator"
    discriminator: Network

    kind: str = "translator"

    def descriptor(self) -> dict:
        return {
            "family": "translator",
            "kind": self.kind,
            "resolution": self.resolution,
            "base_width": self.base_width,
            "generator": self.generator.descriptor(),
            "discriminator": self.discriminator.descriptor(),
        }


def _gen_specs(resolution: int, w: int, in_channels: int) -> list[LayerSpec]:
    stages = {64: 4, 32: 3}[resolution]
    widths = [w * (1 << i) for i in range(stages - 1, -1, -1)]  # 8w..w at 64, 4w..w at 32
    specs = [
        LayerSpec("tconv", in_channels, widths[0], 4, 1, 0, batchnorm=True, activation="relu")
    ]
    for cin, cout in zip(widths, widths[1:]):
        specs.append(LayerSpec("tconv", cin, cout, 4, 2, 1, batchnorm=True, activation="relu"))
    specs.append(LayerSpec("tconv", widths[-1], 3, 4, 2, 1, batchnorm=False, activation="tanh"))
    return specs


def _disc_specs(
    resolution: int, w: int, in_channels: int, head: str, batchnorm: bool, slope: float
) -> list[LayerSpec]:
    stages = {64: 4, 32: 3}[resolution]
    widths = [w * (1 << i) for i in range(stages)]  # w..8w at 64, w..4w at 32
    specs = [
        LayerSpec(
            "conv", in_channels, widths[0], 4, 2, 1, batchnorm=False, activation="leaky_relu", act_param=slope
        )
    ]
    for cin, cout in zip(widths, widths[1:]):
        specs.append(
            LayerSpec(
                "conv", cin, cout, 4, 2, 1, batchnorm=batchnorm, activation="leaky_relu", act_param=slope
            )
        )
    # final decision layer: kernel 4, stride 1, no padding, so a 4x4 map
    # collapses to a true scalar (a stride-2 final layer would leave 2x2)
    specs.append(LayerSpec("conv", widths[-1], 1, 4, 1, 0, batchnorm=False, activation=head))
    return specs


def build_gan(
    arch: str,
    resolution: int = 64,
    conditional: bool = False,
    base_width: int = 64,
    n_classes: int = len(CLASS_NAMES),
    latent_dim: int = LATENT_DIM,
    init: str = "uniform",
    seed: int = 0,
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
) -> GanPair:
    """Construct a generator/discriminator pair for one of the base kinds."""
    if arch not in ARCH_KINDS:
        raise ValueError(f"unknown arch {arch!r}, expected one of {ARCH_KINDS}")
    if resolution not in (32, 64):
        raise ValueError(f"unsupported resolution {resolution}, expected 32 or 64")
    if base_width < 8:
        raise ValueError(f"base_width must be >= 8, got {base_width}")

    g_in = latent_dim + (n_classes if conditional else 0)
    d_in = 3 + (n_classes if conditional else 0)
    head = "sigmoid" if arch == "dcgan" else "none"
    critic_bn = arch != "wgan-gp"

    rng = Rng(seed, stream=101)
    gen = Network(_gen_specs(resolution, base_width, g_in), rng, init, name="generator")
    disc = Network(
        _disc_specs(resolution, base_width, d_in, head, critic_bn, leaky_slope),
        rng,
        init,
        name="discriminator",
    )
    return GanPair(
        kind=arch,
        resolution=resolution,
        base_width=base_width,
        conditional=conditional,
        n_classes=n_classes if conditional else 0,
        latent_dim=latent_dim,
        generator=gen,
        discriminator=disc,
    )


# --------------------------------------------------------------------------
# conditioning
# --------------------------------------------------------------------------


def one_hot_planes(labels, n_classes: int, hw: tuple[int, int], batch: int, dtype) -> np.ndarray:
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (batch,))
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes}): {labels.min()}..{labels.max()}")
    planes = np.zeros((batch, n_classes, hw[0], hw[1]), dtype=dtype)
    planes[np.arange(batch), labels] = 1.0
    return planes


def condition_inputs(x: Tensor, labels, n_classes: int) -> Tensor:
    """Append one-hot class planes along the channel axis.

    Works for both latent stacks (spatial 1x1) and images: the one-hot vector
    is broadcast as constant planes of the input's spatial extent.
    """
    if x.ndim != 4:
        raise ShapeError(f"conditioning expects NCHW, got {x.shape}")
    planes = one_hot_planes(labels, n_classes, (x.shape[2], x.shape[3]), x.shape[0], x.data.dtype)
    return T.concat([x, Tensor._wrap(planes)], axis=1)


def sample_latent(rng: Rng, batch: int, latent_dim: int = LATENT_DIM, truncation: float = 1.0) -> Tensor:
    """Standard normal latents, optionally shrunk toward the mean."""
    z = rng.normal((batch, latent_dim, 1, 1))
    if truncation != 1.0:
        z = z * np.asarray(truncation, dtype=z.dtype)
    return Tensor._wrap(z)


def truncate_latent(z: Tensor, psi: float) -> Tensor:
    """Shrink latents toward the prior mean: z' = psi * z, psi in [0, 1]."""
    if not 0.0 <= psi <= 1.0:
        raise ValueError(f"truncation must be in [0, 1], got {psi}")
    if psi == 1.0:
        return z
    return Tensor._wrap(z.data * np.asarray(psi, dtype=z.data.dtype))


def generate_images(
    pair: GanPair,
    n: int,
    rng: Rng,
    truncation: float = 1.0,
    labels=None,
    batch_size: int = 64,
    latents_out: list | None = None,
) -> "np.ndarray":
    """Inference-only sampling into a (n, 3, R, R) array in [-1, 1].

    ``labels`` (scalar or length-n array) is required for conditional pairs;
    pass ``latents_out`` to also collect the raw latents per image.
    """
    if pair.conditional and labels is None:
        labels = rng.integers(n, 0, pair.n_classes)
    if labels is not None:
        labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (n,))
    chunks = []
    with T.no_grad():
        for start in range(0, n, batch_size):
            count = min(batch_size, n - start)
            z = truncate_latent(sample_latent(rng, count, pair.latent_dim), truncation)
            if latents_out is not None:
                latents_out.extend(z.data.reshape(count, -1).copy())
            inp = condition_inputs(z, labels[start : start + count], pair.n_classes) if pair.conditional else z
            chunks.append(pair.generator(inp, training=False).data)
    return np.concatenate(chunks, axis=0)


# --------------------------------------------------------------------------
# stage two: silhouette -> color translator
# --------------------------------------------------------------------------


class UnetTranslator:
    """Encoder/decoder with mirrored skip concatenation and a tanh head.

    Input is a single-channel silhouette (figure -1 on ground +1); output is
    a 3-channel image in [-1, 1].  A small noise tensor added at the
    bottleneck gives seed-controlled variant diversity.
    """

    NOISE_SCALE = 0.1

    def __init__(self, resolution: int, base_width: int, rng: Rng, init: str = "uniform"):
        if resolution != 64:
            raise ValueError(f"translator supports resolution 64, got {resolution}")
        w = base_width
        self.name = "translator_g"
        self.init = init
        self.resolution = resolution
        self.base_width = w
        self.enc_specs = [
            LayerSpec("conv", 1, w, 4, 2, 1, batchnorm=False, activation="leaky_relu"),
            LayerSpec("conv", w, 2 * w, 4, 2, 1, batchnorm=True, activation="leaky_relu"),
            LayerSpec("conv", 2 * w, 4 * w, 4, 2, 1, batchnorm=True, activation="leaky_relu"),
            LayerSpec("conv", 4 * w, 8 * w, 4, 2, 1, batchnorm=True, activation="leaky_relu"),
        ]
        self.dec_specs = [
            LayerSpec("tconv", 8 * w, 4 * w, 4, 2, 1, batchnorm=True, activation="relu"),
            LayerSpec("tconv", 8 * w, 2 * w, 4, 2, 1, batchnorm=True, activation="relu"),
            LayerSpec("tconv", 4 * w, w, 4, 2, 1, batchnorm=True, activation="relu"),
            LayerSpec("tconv", 2 * w, 3, 4, 2, 1, batchnorm=False, activation="tanh"),
        ]
        self.encoder = Network(self.enc_specs, rng, init, name="enc")
        self.decoder = Network(self.dec_specs, rng, init, name="dec")

    def named_params(self):
        out = {}
        for name, p in self.encoder.named_params().items():
            out[f"enc.{name}"] = p
        for name, p in self.decoder.named_params().items():
            out[f"dec.{name}"] = p
        return out

    def named_buffers(self):
        out = {}
        for name, b in self.encoder.named_buffers().items():
            out[f"enc.{name}"] = b
        for name, b in self.decoder.named_buffers().items():
            out[f"dec.{name}"] = b
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.named_params().values())

    def descriptor(self) -> dict:
        return {
            "name": self.name,
            "init": self.init,
            "encoder": self.encoder.descriptor(),
            "decoder": self.decoder.descriptor(),
        }

    def forward(
        self,
        x: Tensor,
        training: bool = False,
        noise: Tensor | None = None,
        zero_skips: bool = False,
    ) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"translator expects a 1-channel NCHW silhouette, got {x.shape}")
        skips = []
        h = x
        for blk in self.encoder.blocks:
            h = blk.forward(h, training)
            skips.append(h)
        if noise is not None:
            h = T.add(h, noise)
        skips = skips[:-1]  # the bottleneck itself is not a skip
        for i, blk in enumerate(self.decoder.blocks):
            h = blk.forward(h, training)
            if i < len(self.decoder.blocks) - 1:
                skip = skips[-(i + 1)]
                if zero_skips:
                    skip = Tensor._wrap(np.zeros_like(skip.data))
                h = T.concat([h, skip], axis=1)
        return h

    def __call__(self, x, training=False, noise=None, zero_skips=False):
        return self.forward(x, training, noise, zero_skips)

    def bottleneck_shape(self, batch: int) -> tuple:
        side = self.resolution // 16
        return (batch, 8 * self.base_width, side, side)

    def sample_noise(self, rng: Rng, batch: int) -> Tensor:
        return Tensor._wrap(rng.normal(self.bottleneck_shape(batch), std=self.NOISE_SCALE))


def _patch_disc_specs(w: int, slope: float) -> list[LayerSpec]:
    return [
        LayerSpec("conv", 4, w, 4, 2, 1, batchnorm=False, activation="leaky_relu", act_param=slope),
        LayerSpec("conv", w, 2 * w, 4, 2, 1, batchnorm=True, activation="leaky_relu", act_param=slope),
        LayerSpec("conv", 2 * w, 4 * w, 4, 2, 1, batchnorm=True, activation="leaky_relu", act_param=slope),
        # 8x8 -> 6x6 grid of patch probabilities
        LayerSpec("conv", 4 * w, 1, 3, 1, 0, batchnorm=False, activation="sigmoid"),
    ]


def build_translator(
    resolution: int = 64,
    base_width: int = 64,
    init: str = "uniform",
    seed: int = 0,
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
) -> TranslatorPair:
    """Silhouette-to-color U-Net plus its pair-consuming patch discriminator."""
    rng = Rng(seed, stream=202)
    gen = UnetTranslator(resolution, base_width, rng, init)
    disc = Network(_patch_disc_specs(base_width, leaky_slope), rng, init, name="patch_disc")
    return TranslatorPair(resolution=resolution, base_width=base_width, generator=gen, discriminator=disc)


def build_from_descriptor(desc: dict, seed: int = 0):
    """Rebuild a pair from its checkpoint descriptor (fresh parameters)."""
    if desc["family"] == "gan":
        return build_gan(
            desc["kind"],
            desc["resolution"],
            conditional=desc["conditional"],
            base_width=desc["base_width"],
            n_classes=desc["n_classes"] or len(CLASS_NAMES),
            latent_dim=desc["latent_dim"],
            init=desc["generator"].get("init", "uniform"),
            seed=seed,
        )
    if desc["family"] == "translator":
        return build_translator(
            desc["resolution"],
            desc["base_width"],
            init=desc["generator"].get("init", "uniform"),
            seed=seed,
        )
    raise ValueError(f"unknown descriptor family {desc.get('family')!r}")
