"""Training configurations and the per-architecture loops.

One loop step consumes one data batch.  DCGAN alternates a discriminator and
a generator update every step; the Wasserstein variants run one critic update
per batch and a generator update after every ``n_critic`` of them; the
translator alternates patch-adversarial updates with an L1-weighted
reconstruction objective.  A single counter-based rng drives shuffling,
latents, augmentation, and penalty mixing, and its counter is checkpointed,
so resuming from an epoch boundary replays the uninterrupted run bit for
bit.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment as aug
from . import checkpoint as ck
from . import losses, optim, zoo
from . import tensor as T
from .tensor import Rng, Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class TrainConfig:
    arch: str
    optimizer: str = "adam"
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    rho: float = 0.99
    clip_c: float | None = None
    n_critic: int = 1
    gp_lambda: float | None = None
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    augment: bool = False
    augment_p0: float = 0.0
    conditional: bool = False
    resolution: int = 64
    base_width: int = 64
    latent_dim: int = 100
    init: str = "uniform"
    l1_weight: float = 100.0
    leaky_slope: float = 0.02
    checkpoint_every: int = 1  # epochs

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


_PRESETS: dict[str, dict] = {
    "dcgan": dict(
        arch="dcgan", optimizer="adam", lr=2e-4, beta1=0.5, beta2=0.999,
        batch_size=64, epochs=100, n_critic=1,
    ),
    "wgan": dict(
        arch="wgan", optimizer="rmsprop", lr=5e-5, clip_c=0.01, n_critic=5,
        batch_size=64, epochs=100,
    ),
    "wgan-gp": dict(
        arch="wgan-gp", optimizer="adam", lr=2e-4, beta1=0.0, beta2=0.9,
        gp_lambda=10.0, n_critic=5, batch_size=64, epochs=100,
    ),
    # config-only preset: the deep residual architecture itself is out of
    # scope, but its optimizer/batch/init settings are reusable.  Whether the
    # epoch count was meant per class or over the merged set is unknown; it
    # is kept as stated for the merged set.
    "biggan-deep": dict(
        arch="dcgan", optimizer="adam", lr=2e-4, beta1=0.5, beta2=0.999,
        batch_size=16, epochs=70, init="orthogonal", conditional=True,
    ),
    "translator": dict(
        arch="translator", optimizer="adam", lr=2e-4, beta1=0.5, beta2=0.999,
        batch_size=16, epochs=100, l1_weight=100.0,
    ),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; have {sorted(_PRESETS)}")
    base = dict(_PRESETS[name])
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class RunResult:
    run_dir: Path
    checkpoints: list[Path]
    metrics_path: Path
    epochs: int
    steps: int
    critic_steps: int
    gen_steps: int
    diverged: bool = False


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------


def _make_optimizer(cfg: TrainConfig, params: dict[str, Tensor], frozen: set[str]) -> optim.Optimizer:
    if cfg.optimizer == "adam":
        return optim.Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, frozen=frozen)
    if cfg.optimizer == "rmsprop":
        return optim.RMSProp(params, lr=cfg.lr, rho=cfg.rho, frozen=frozen)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def _split_freeze(freeze: tuple[str, ...]) -> tuple[set[str], set[str]]:
    g, d = set(), set()
    for item in freeze:
        if item.startswith("g."):
            g.add(item[2:])
        elif item.startswith("d."):
            d.add(item[2:])
        else:
            raise ValueError(f"freeze entries must start with 'g.' or 'd.': {item!r}")
    return g, d


def _named_grads(tape: T.Tape, loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    tensor_list = list(params.values())
    grads = tape.backward(loss, wrt=tensor_list)
    return {name: grads[p].data for name, p in params.items()}


def _prefix_match(names, frozen_prefixes: set[str]) -> set[str]:
    if not frozen_prefixes:
        return set()
    prefixes = tuple(frozen_prefixes)
    return {n for n in names if n.startswith(prefixes)}


class _Emitter:
    """Append-only structured metrics log, one JSON record per line."""

    def __init__(self, path: Path):
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")

    def emit(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _check_finite(step: int, **values: float) -> None:
    for name, v in values.items():
        if v is not None and not np.isfinite(v):
            raise TrainingDiverged(step, f"{name} is {v}")


class _Loop:
    """State shared by the GAN and translator loops."""

    def __init__(self, pair, cfg: TrainConfig, run_dir, resume, freeze):
        self.pair = pair
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        g_frozen, d_frozen = _split_freeze(tuple(freeze))
        self.g_params = pair.generator.named_params()
        self.d_params = pair.discriminator.named_params()
        self.g_frozen = _prefix_match(self.g_params, g_frozen)
        self.d_frozen = _prefix_match(self.d_params, d_frozen)
        self.opt_g = _make_optimizer(cfg, self.g_params, self.g_frozen)
        self.opt_d = _make_optimizer(cfg, self.d_params, self.d_frozen)
        self.rng = Rng(cfg.seed, stream=1)
        self.aug_state = aug.AugmentState(p=cfg.augment_p0 if cfg.augment else 0.0)
        self.epoch = 0
        self.step = 0
        self.critic_steps = 0
        self.gen_steps = 0
        self.checkpoints: list[Path] = []
        if resume is not None:
            self._restore(resume)

    def _restore(self, resume) -> None:
        ckpt = resume if isinstance(resume, ck.Checkpoint) else ck.load(resume)
        ck.load_into_pair(self.pair, ckpt)
        counters = ckpt.counters
        self.epoch = counters["epoch"]
        self.step = counters["step"]
        self.critic_steps = counters["critic_steps"]
        self.gen_steps = counters["gen_steps"]
        self.rng = Rng.from_state(counters["rng"])
        self.aug_state = aug.AugmentState.from_dict(counters["augment"])
        opt_tensors_g = {k[len("opt_g."):]: v for k, v in ckpt.tensors.items() if k.startswith("opt_g.")}
        opt_tensors_d = {k[len("opt_d."):]: v for k, v in ckpt.tensors.items() if k.startswith("opt_d.")}
        self.opt_g.load_state(opt_tensors_g, counters["opt_g"])
        self.opt_d.load_state(opt_tensors_d, counters["opt_d"])

    def counters(self) -> dict:
        return {
            "epoch": self.epoch,
            "step": self.step,
            "critic_steps": self.critic_steps,
            "gen_steps": self.gen_steps,
            "rng": self.rng.state,
            "augment": self.aug_state.as_dict(),
            "opt_g": self.opt_g.counters(),
            "opt_d": self.opt_d.counters(),
        }

    def save_checkpoint(self) -> Path:
        tensors = ck.pair_tensors(self.pair)
        tensors.update({f"opt_g.{k}": v for k, v in self.opt_g.state_tensors().items()})
        tensors.update({f"opt_d.{k}": v for k, v in self.opt_d.state_tensors().items()})
        meta = {
            "descriptor": self.pair.descriptor(),
            "counters": self.counters(),
            "config": self.cfg.as_dict(),
            "precision": "float32",
            "norm": {"bn_momentum": 0.1, "bn_eps": 1e-5},
            "init": {"kind": self.cfg.init, "uniform_range": "1/sqrt(fan_in)", "bias": "zeros"},
        }
        path = self.run_dir / f"ck_epoch{self.epoch:04d}.ck"
        ck.save(path, tensors, meta)
        self.checkpoints.append(path)
        return path

    def maybe_augment(self, images: Tensor, plan) -> Tensor:
        if plan is None:
            return images
        return aug.apply_plan(images, plan)

    def sample_plan(self, shape) -> "aug.AugmentPlan | None":
        if not self.cfg.augment:
            return None
        return aug.sample_plan(self.aug_state, self.rng, shape)


# --------------------------------------------------------------------------
# stage one: silhouette GANs
# --------------------------------------------------------------------------


def train_gan(
    pair: zoo.GanPair,
    dataset,
    cfg: TrainConfig,
    run_dir,
    resume=None,
    freeze: tuple[str, ...] = (),
    on_step=None,
) -> RunResult:
    """Train a stage-one pair on a dataset of images (and optional labels)."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    loop = _Loop(pair, cfg, run_dir, resume, freeze)
    images = dataset.images().astype(np.float32)
    labels = dataset.labels() if pair.conditional else None
    emitter = _Emitter(loop.run_dir / "metrics.jsonl")
    is_dcgan = cfg.arch == "dcgan"
    center = 0.5 if is_dcgan else 0.0
    diverged = False
    try:
        start_epoch = loop.epoch
        for epoch in range(start_epoch, cfg.epochs):
            loop.epoch = epoch
            order = loop.rng.permutation(len(images))
            for lo in range(0, len(images), cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                x_real = Tensor._wrap(images[idx])
                y = labels[idx] if labels is not None else None
                t0 = time.perf_counter()
                if is_dcgan:
                    loss_d, loss_g, gp_val, d_real_vals = _dcgan_step(loop, x_real, y)
                else:
                    loss_d, loss_g, gp_val, d_real_vals = _wgan_step(loop, x_real, y)
                loop.step += 1
                _check_finite(loop.step, loss_d=loss_d, loss_g=loss_g, gradient_penalty=gp_val)
                if cfg.augment and loop.step % loop.aug_state.interval == 0:
                    aug.ada_update(loop.aug_state, d_real_vals, center=center)
                record = {
                    "step": loop.step,
                    "epoch": epoch,
                    "loss_d": loss_d,
                    "loss_g": loss_g,
                    "p": loop.aug_state.p,
                    "r_t": loop.aug_state.r_t,
                    "seconds": time.perf_counter() - t0,
                }
                if gp_val is not None:
                    record["gp"] = gp_val
                emitter.emit(record)
                if on_step is not None:
                    on_step(record, pair)
            loop.epoch = epoch + 1
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
                loop.save_checkpoint()
    except TrainingDiverged:
        diverged = True
        emitter.emit({"step": loop.step, "diverged": True})
        raise
    finally:
        emitter.close()
    return RunResult(
        run_dir=loop.run_dir,
        checkpoints=loop.checkpoints,
        metrics_path=loop.run_dir / "metrics.jsonl",
        epochs=loop.epoch,
        steps=loop.step,
        critic_steps=loop.critic_steps,
        gen_steps=loop.gen_steps,
        diverged=diverged,
    )


def _gen_input(loop: _Loop, batch: int, y):
    z = zoo.sample_latent(loop.rng, batch, loop.cfg.latent_dim)
    if loop.pair.conditional:
        if y is None:
            y = loop.rng.integers(batch, 0, loop.pair.n_classes)
        return zoo.condition_inputs(z, y, loop.pair.n_classes)
    return z


def _disc_input(loop: _Loop, images: Tensor, y):
    if loop.pair.conditional:
        return zoo.condition_inputs(images, y, loop.pair.n_classes)
    return images


def _dcgan_step(loop: _Loop, x_real: Tensor, y):
    pair = loop.pair
    tape = T.Tape()
    plan = loop.sample_plan(x_real.shape)
    with tape:
        fake = pair.generator(_gen_input(loop, x_real.shape[0], y), training=True)
        d_real = pair.discriminator(_disc_input(loop, loop.maybe_augment(x_real, plan), y), training=True)
        d_fake = pair.discriminator(
            _disc_input(loop, loop.maybe_augment(fake.detach(), plan), y), training=True
        )
        loss_d = T.add(losses.bce_loss(d_real, 1.0), losses.bce_loss(d_fake, 0.0))
    loop.opt_d.step(_named_grads(tape, loss_d, loop.d_params))
    loop.critic_steps += 1
    with tape:
        d_fake2 = pair.discriminator(_disc_input(loop, loop.maybe_augment(fake, plan), y), training=True)
        loss_g = losses.generator_bce_loss(d_fake2)
    loop.opt_g.step(_named_grads(tape, loss_g, loop.g_params))
    loop.gen_steps += 1
    tape.reset()
    return float(loss_d.item()), float(loss_g.item()), None, d_real.data.copy()


def _wgan_step(loop: _Loop, x_real: Tensor, y):
    pair, cfg = loop.pair, loop.cfg
    tape = T.Tape()
    plan = loop.sample_plan(x_real.shape)
    gp_val = None
    with T.no_grad():
        fake = pair.generator(_gen_input(loop, x_real.shape[0], y), training=True)
    with tape:
        d_real = pair.discriminator(_disc_input(loop, loop.maybe_augment(x_real, plan), y), training=True)
        d_fake = pair.discriminator(_disc_input(loop, loop.maybe_augment(fake, plan), y), training=True)
        loss_d = losses.wasserstein_critic_loss(d_real, d_fake)
        if cfg.gp_lambda is not None:
            critic = lambda x: pair.discriminator(_disc_input(loop, x, y), training=True)  # noqa: E731
            gp = losses.gradient_penalty(critic, x_real, fake, cfg.gp_lambda, loop.rng)
            gp_val = float(gp.item())
            loss_d = T.add(loss_d, gp)
    loop.opt_d.step(_named_grads(tape, loss_d, loop.d_params))
    if cfg.clip_c is not None:
        optim.clip_weights(
            [p for n, p in loop.d_params.items() if n not in loop.d_frozen], cfg.clip_c
        )
    loop.critic_steps += 1
    tape.reset()

    loss_g_val = None
    if loop.critic_steps % cfg.n_critic == 0:
        plan_g = loop.sample_plan(x_real.shape)
        with tape:
            fake_g = pair.generator(_gen_input(loop, x_real.shape[0], y), training=True)
            d_fake_g = pair.discriminator(
                _disc_input(loop, loop.maybe_augment(fake_g, plan_g), y), training=True
            )
            loss_g = losses.wasserstein_generator_loss(d_fake_g)
        loop.opt_g.step(_named_grads(tape, loss_g, loop.g_params))
        loop.gen_steps += 1
        loss_g_val = float(loss_g.item())
        tape.reset()
    return float(loss_d.item()), loss_g_val, gp_val, d_real.data.copy()


# --------------------------------------------------------------------------
# stage two: silhouette -> color translator
# --------------------------------------------------------------------------


def train_translator(
    pair: zoo.TranslatorPair,
    silhouettes: np.ndarray,
    colored: np.ndarray,
    cfg: TrainConfig,
    run_dir,
    resume=None,
    freeze: tuple[str, ...] = (),
    on_step=None,
) -> RunResult:
    """Patch-adversarial + L1 training over (silhouette, colored) pairs."""
    if len(silhouettes) == 0 or len(silhouettes) != len(colored):
        raise ValueError(f"bad pair arrays: {len(silhouettes)} vs {len(colored)}")
    loop = _Loop(pair, cfg, run_dir, resume, freeze)
    sils = silhouettes.astype(np.float32)
    cols = colored.astype(np.float32)
    emitter = _Emitter(loop.run_dir / "metrics.jsonl")
    diverged = False
    try:
        for epoch in range(loop.epoch, cfg.epochs):
            loop.epoch = epoch
            order = loop.rng.permutation(len(sils))
            for lo in range(0, len(sils), cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                sil = Tensor._wrap(sils[idx])
                col = Tensor._wrap(cols[idx])
                t0 = time.perf_counter()
                loss_d, loss_g = _translator_step(loop, sil, col)
                loop.step += 1
                _check_finite(loop.step, loss_d=loss_d, loss_g=loss_g)
                emitter.emit(
                    {
                        "step": loop.step,
                        "epoch": epoch,
                        "loss_d": loss_d,
                        "loss_g": loss_g,
                        "p": loop.aug_state.p,
                        "r_t": loop.aug_state.r_t,
                        "seconds": time.perf_counter() - t0,
                    }
                )
                if on_step is not None:
                    on_step({"step": loop.step, "loss_d": loss_d, "loss_g": loss_g}, pair)
            loop.epoch = epoch + 1
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
                loop.save_checkpoint()
    except TrainingDiverged:
        diverged = True
        emitter.emit({"step": loop.step, "diverged": True})
        raise
    finally:
        emitter.close()
    return RunResult(
        run_dir=loop.run_dir,
        checkpoints=loop.checkpoints,
        metrics_path=loop.run_dir / "metrics.jsonl",
        epochs=loop.epoch,
        steps=loop.step,
        critic_steps=loop.critic_steps,
        gen_steps=loop.gen_steps,
        diverged=diverged,
    )


def _translator_step(loop: _Loop, sil: Tensor, col: Tensor):
    pair, cfg = loop.pair, loop.cfg
    gen = pair.generator
    tape = T.Tape()
    noise = gen.sample_noise(loop.rng, sil.shape[0])
    with tape:
        fake = gen.forward(sil, training=True, noise=noise)
        d_real = pair.discriminator(T.concat([sil, col], axis=1), training=True)
        d_fake = pair.discriminator(T.concat([sil, fake.detach()], axis=1), training=True)
        loss_d = T.add(losses.bce_loss(d_real, 1.0), losses.bce_loss(d_fake, 0.0))
    loop.opt_d.step(_named_grads(tape, loss_d, loop.d_params))
    loop.critic_steps += 1
    with tape:
        d_fake2 = pair.discriminator(T.concat([sil, fake], axis=1), training=True)
        loss_g = T.add(
            losses.generator_bce_loss(d_fake2), T.mul(losses.l1_loss(fake, col), cfg.l1_weight)
        )
    loop.opt_g.step(_named_grads(tape, loss_g, loop.g_params))
    loop.gen_steps += 1
    tape.reset()
    return float(loss_d.item()), float(loss_g.item())
