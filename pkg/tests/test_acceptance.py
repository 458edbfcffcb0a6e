"""Acceptance gate: every release criterion as a test, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  The smoke-training criteria train real (small) models and dominate
the runtime; everything else finishes in seconds.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from charstudio import augment as aug
from charstudio import checkpoint as ck
from charstudio import data, fid, losses, optim, training, zoo
from charstudio import tensor as T
from charstudio.tensor import Rng, Tensor
from helpers import gradcheck, rel_err


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"\n[ACCEPTANCE] {name}: PASS")


def silhouette_dataset(n, res=32, seed=0):
    records = data.synth_toy_corpus(n, resolution=res, seed=seed)
    ds_records = [
        data.ImageRecord(r.identifier, 0, "merged", np.repeat(r.silhouette, 3, axis=0))
        for r in records
    ]
    return data.Dataset(ds_records, ("merged",), res)


@pytest.fixture(scope="module")
def smoke_corpus():
    return silhouette_dataset(500, res=32, seed=0)


# --------------------------------------------------------------------------
# 1. gradient correctness
# --------------------------------------------------------------------------


def rand64(shape, seed, scale=1.0):
    return Rng(seed).normal(shape, std=scale).astype(np.float64)


PRIMITIVE_CASES = [
    ("neg", lambda ps: T.reduce_sum(T.neg(ps[0]) ** 3.0), [(3, 4)]),
    ("expand", lambda ps: T.reduce_sum(T._expand(ps[0], (5, 3, 4)) ** 2), [(3, 4)]),
    ("add", lambda ps: T.reduce_sum(T.add(ps[0], ps[1]) ** 2), [(3, 4), (3, 4)]),
    ("sub", lambda ps: T.reduce_sum(T.sub(ps[0], ps[1]) ** 2), [(3, 4), (3, 4)]),
    ("mul", lambda ps: T.reduce_sum(T.mul(ps[0], ps[1])), [(3, 4), (3, 4)]),
    ("div", lambda ps: T.reduce_sum(T.div(ps[0], T.add(T.mul(ps[1], ps[1]), 1.0))), [(3, 4), (3, 4)]),
    ("pow", lambda ps: T.reduce_sum(T.pow(T.add(T.mul(ps[0], ps[0]), 0.5), 1.7)), [(3, 4)]),
    ("exp", lambda ps: T.reduce_sum(T.exp(T.mul(ps[0], 0.3))), [(3, 4)]),
    ("log", lambda ps: T.reduce_sum(T.log(T.add(T.mul(ps[0], ps[0]), 1.0))), [(3, 4)]),
    ("abs", lambda ps: T.reduce_sum(T.absolute(ps[0])), [(17,)]),
    ("clip", lambda ps: T.reduce_sum(T.clip(ps[0], -0.8, 0.8) ** 2), [(17,)]),
    ("relu", lambda ps: T.reduce_sum(T.relu(ps[0]) ** 2), [(3, 4)]),
    ("leaky_relu", lambda ps: T.reduce_sum(T.leaky_relu(ps[0], 0.02) ** 2), [(3, 4)]),
    ("tanh", lambda ps: T.reduce_sum(T.tanh(ps[0]) ** 2), [(3, 4)]),
    ("sigmoid", lambda ps: T.reduce_sum(T.sigmoid(ps[0]) ** 2), [(3, 4)]),
    ("sum_axis", lambda ps: T.reduce_sum(T.reduce_sum(ps[0], axis=1, keepdims=True) ** 2), [(3, 4)]),
    ("mean", lambda ps: T.reduce_sum(T.mean(ps[0], axis=(0, 2)) ** 2), [(2, 3, 4)]),
    ("reshape", lambda ps: T.reduce_sum(T.reshape(ps[0], (4, 3)) ** 2), [(3, 4)]),
    ("concat", lambda ps: T.reduce_sum(T.concat(ps, axis=1) ** 2), [(2, 2, 3, 3), (2, 1, 3, 3)]),
    ("narrow", lambda ps: T.reduce_sum(T.narrow(ps[0], 1, 1, 2) ** 2), [(2, 4)]),
    ("pad_zeros", lambda ps: T.reduce_sum(T.pad_zeros(ps[0], 0, 1, 2) ** 2), [(3, 2)]),
    (
        "conv2d",
        lambda ps: T.reduce_sum(T.conv2d(ps[0], ps[1], stride=2, padding=1) ** 2),
        [(2, 2, 6, 6), (3, 2, 4, 4)],
    ),
    (
        "tconv2d",
        lambda ps: T.reduce_sum(T.tconv2d(ps[0], ps[1], stride=2, padding=1) ** 2),
        [(2, 3, 3, 3), (3, 2, 4, 4)],
    ),
    (
        "batchnorm",
        lambda ps: T.reduce_sum(T.batchnorm2d(ps[0], ps[1], ps[2], training=True) ** 2),
        [(4, 2, 3, 3), (2,), (2,)],
    ),
]


class TestGradientCorrectness:
    def test_criterion_gradients(self):
        with criterion("gradient correctness (< 1e-5 first order, < 1e-3 second order, < 2 min)"):
            t0 = time.perf_counter()
            for name, build, shapes in PRIMITIVE_CASES:
                arrays = [rand64(s, seed=hash(name) % 1000 + i, scale=0.8) for i, s in enumerate(shapes)]
                if name in ("relu", "leaky_relu", "abs", "clip"):
                    arrays = [np.where(np.abs(a) < 0.1, a + 0.5, a) for a in arrays]
                h = 1e-3 if name == "batchnorm" else 1e-5
                err, _, _ = gradcheck(build, arrays, h=h)
                assert err < 1e-5, f"{name}: rel err {err:.2e}"

            # warp goes through constant matrices, checked separately
            theta = np.zeros((2, 2, 3))
            ang = 0.4
            theta[:, 0, 0] = math.cos(ang)
            theta[:, 0, 1] = -math.sin(ang)
            theta[:, 1, 0] = math.sin(ang)
            theta[:, 1, 1] = math.cos(ang)
            err, _, _ = gradcheck(
                lambda ps: T.reduce_sum(T.affine_warp(ps[0], theta) ** 2), [rand64((2, 2, 5, 5), 77)]
            )
            assert err < 1e-5, f"affine_warp: {err:.2e}"

            # full losses, first order
            targets = (Rng(3).uniform((8,)) > 0.5).astype(np.float64)
            err, _, _ = gradcheck(
                lambda ps: losses.bce_loss(T.sigmoid(ps[0]), targets), [rand64((8,), 4)]
            )
            assert err < 1e-5, f"bce: {err:.2e}"
            err, _, _ = gradcheck(
                lambda ps: losses.wasserstein_critic_loss(ps[0], ps[1]),
                [rand64((6,), 5), rand64((6,), 6)],
            )
            assert err < 1e-5, f"wasserstein: {err:.2e}"
            err, _, _ = gradcheck(
                lambda ps: losses.l1_loss(ps[0], ps[1]),
                [rand64((2, 3, 4, 4), 7), rand64((2, 3, 4, 4), 8)],
            )
            assert err < 1e-5, f"l1: {err:.2e}"

            self._gp_second_order()
            elapsed = time.perf_counter() - t0
            assert elapsed < 120, f"gradient suite took {elapsed:.0f}s"

    @staticmethod
    def _gp_second_order():
        with T.precision("float64"):
            rng = Rng(9)
            w1 = rng.normal((2, 1, 3, 3), std=0.5).astype(np.float64)
            w2 = rng.normal((1, 2, 2, 2), std=0.5).astype(np.float64)
            real = rng.normal((3, 1, 4, 4)).astype(np.float64)
            fake = rng.normal((3, 1, 4, 4)).astype(np.float64)
            eps = losses.mix_weights(Rng(10), 3, np.float64)

            def penalty(w1d, w2d, wrt=None):
                p1 = Tensor(w1d, requires_grad=True, dtype=np.float64)
                p2 = Tensor(w2d, requires_grad=True, dtype=np.float64)

                def critic(x):
                    h = T.leaky_relu(T.conv2d(x, p1, 1, 1), 0.2)
                    return T.reduce_sum(T.conv2d(h, p2, 2, 0), axis=(1, 2, 3))

                tape = T.Tape()
                with tape:
                    gp = losses.gradient_penalty(
                        critic, Tensor(real, dtype=np.float64), Tensor(fake, dtype=np.float64),
                        10.0, eps=eps,
                    )
                if wrt is None:
                    return gp.item()
                grads = tape.backward(gp, wrt=[p1, p2])
                return grads[p1].data, grads[p2].data

            g1, g2 = penalty(w1, w2, wrt=True)
            h = 1e-5
            for analytic, arr in ((g1, w1), (g2, w2)):
                numeric = np.zeros_like(arr)
                flat, nflat = arr.reshape(-1), numeric.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    up = penalty(w1, w2)
                    flat[i] = orig - h
                    dn = penalty(w1, w2)
                    flat[i] = orig
                    nflat[i] = (up - dn) / (2 * h)
                assert rel_err(analytic, numeric) < 1e-3


# --------------------------------------------------------------------------
# 2. shape fidelity
# --------------------------------------------------------------------------


class TestShapeFidelity:
    def test_criterion_shapes(self):
        with criterion("shape fidelity (latent 100x1x1 -> 64x64x3; image -> scalar)"):
            pair = zoo.build_gan("dcgan", 64, base_width=64, seed=0)
            sizes = [1]
            x = zoo.sample_latent(Rng(0), 2)
            for blk in pair.generator.blocks:
                x = blk.forward(x, training=True)
                sizes.append(x.shape[2])
            assert sizes == [1, 4, 8, 16, 32, 64]
            assert x.shape == (2, 3, 64, 64)
            assert [b.spec.out_channels for b in pair.generator.blocks] == [512, 256, 128, 64, 3]
            d_out = pair.discriminator(x, training=True)
            assert d_out.shape == (2, 1, 1, 1)


# --------------------------------------------------------------------------
# 3. closed-form oracles
# --------------------------------------------------------------------------


class TestClosedFormOracles:
    def test_criterion_closed_forms(self, smoke_corpus, tmp_path):
        with criterion("closed forms (bce ln2; gp lambda(|w|-1)^2; optimizer first steps; clip)"):
            assert abs(losses.bce_loss(Tensor([0.5]), 1.0).item() - math.log(2)) < 1e-7

            with T.precision("float64"):
                w = Rng(1).normal((1, 2, 4, 4)).astype(np.float64)
                for target_norm in (1.0, 3.0):
                    wn = w * (target_norm / np.linalg.norm(w))
                    wt = Tensor(wn, dtype=np.float64)
                    tape = T.Tape()
                    with tape:
                        gp = losses.gradient_penalty(
                            lambda x: T.reduce_sum(T.mul(x, wt), axis=(1, 2, 3)),
                            Tensor(Rng(2).normal((4, 2, 4, 4))),
                            Tensor(Rng(3).normal((4, 2, 4, 4))),
                            10.0,
                            Rng(4),
                        )
                    assert abs(gp.item() - 10.0 * (target_norm - 1.0) ** 2) < 1e-6

            with T.precision("float64"):
                p = Tensor(np.zeros(4), requires_grad=True, dtype=np.float64)
                optim.Adam({"w": p}, lr=2e-4, beta1=0.5, beta2=0.999).step({"w": np.full(4, 10.0)})
                expected = -2e-4 * 10.0 / (10.0 + optim.ADAM_EPS)
                assert np.all(np.abs(p.data - expected) < 1e-9)

                q = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
                optim.RMSProp({"w": q}, lr=5e-5, rho=0.99).step({"w": np.array([1.0])})
                expected = -5e-5 / (math.sqrt(0.01) + optim.RMSPROP_EPS)
                assert abs(q.data[0] - expected) < 1e-9

            # clip bound holds exactly after every critic step of a wgan run
            bounds = []

            def check(record, pair):
                bounds.append(max(np.abs(p.data).max() for p in pair.discriminator.named_params().values()))

            cfg = training.preset("wgan", resolution=32, base_width=8, epochs=1, batch_size=64, seed=5)
            pair = zoo.build_gan("wgan", 32, base_width=8, seed=5)
            training.train_gan(pair, silhouette_dataset(128, seed=5), cfg, tmp_path / "wgan", on_step=check)
            assert bounds and all(b <= cfg.clip_c for b in bounds)


# --------------------------------------------------------------------------
# 4. FID suite
# --------------------------------------------------------------------------


class TestFidSuite:
    def test_criterion_fid(self):
        with criterion("FID (self 0; symmetry; 1-D closed form; sqrt; noise ladder; < 3 min)"):
            t0 = time.perf_counter()
            imgs = np.stack(
                [np.repeat(r.silhouette, 3, axis=0) for r in data.synth_toy_corpus(1000, resolution=32, seed=42)]
            )
            ex = fid.FeatureExtractor("pixel")
            stats = fid.gaussian_stats(ex.features(imgs))
            assert abs(fid.fid(stats, stats)) < 1e-8

            half_a = fid.gaussian_stats(ex.features(imgs[:500]))
            half_b = fid.gaussian_stats(ex.features(imgs[500:]))
            assert abs(fid.fid(half_a, half_b) - fid.fid(half_b, half_a)) < 1e-8

            a = fid.GaussianStats(mu=np.array([0.0]), sigma=np.array([[1.0]]), n=10)
            b = fid.GaussianStats(mu=np.array([1.0]), sigma=np.array([[4.0]]), n=10)
            assert abs(fid.fid(a, b) - 2.0) < 1e-10

            for seed in (8, 9, 10):
                m = Rng(seed).normal((20, 20)).astype(np.float64)
                psd = m.T @ m
                s = fid.matrix_sqrt_psd(psd)
                assert np.linalg.norm(s @ s - psd) / np.linalg.norm(psd) < 1e-8

            scores = []
            for sigma in (0.05, 0.1, 0.2):
                noisy = imgs + Rng(99).normal(imgs.shape, std=sigma)
                scores.append(fid.fid(stats, fid.gaussian_stats(ex.features(noisy))))
            assert scores[0] < scores[1] < scores[2], scores

            elapsed = time.perf_counter() - t0
            assert elapsed < 180, f"FID suite took {elapsed:.0f}s"


# --------------------------------------------------------------------------
# 5. smoke training
# --------------------------------------------------------------------------


class TestSmokeTraining:
    def test_criterion_dcgan_smoke(self, smoke_corpus, tmp_path):
        with criterion("smoke: dcgan preset, 5 epochs, 500 images, FID beats untrained in >= 4/5 seeds"):
            ex = fid.FeatureExtractor("pixel")
            real_stats = fid.gaussian_stats(ex.features(smoke_corpus.images()))

            def gen_score(pair, seed):
                imgs = zoo.generate_images(pair, 500, Rng(seed, stream=77))
                assert imgs.min() >= -1.0 and imgs.max() <= 1.0
                return fid.fid(real_stats, fid.gaussian_stats(ex.features(imgs)))

            wins = 0
            for seed in (1, 2, 3, 4, 5):
                pair = zoo.build_gan("dcgan", 32, base_width=64, seed=seed)
                before = gen_score(pair, seed)
                cfg = training.preset("dcgan", resolution=32, base_width=64, epochs=5, seed=seed)
                t0 = time.perf_counter()
                result = training.train_gan(pair, smoke_corpus, cfg, tmp_path / f"dcgan_s{seed}")
                elapsed = time.perf_counter() - t0
                assert elapsed < 900, f"seed {seed}: {elapsed:.0f}s exceeds 15 minutes"
                assert result.steps == math.ceil(500 / 64) * 5
                import json

                for line in result.metrics_path.read_text().splitlines():
                    rec = json.loads(line)
                    assert np.isfinite(rec["loss_d"]) and np.isfinite(rec["loss_g"])
                after = gen_score(pair, seed)
                wins += after < before
                print(f"  seed {seed}: fid {before:.2f} -> {after:.2f} ({elapsed:.0f}s)")
            assert wins >= 4, f"only {wins}/5 seeds improved"

    def test_criterion_wgan_gp_smoke(self, smoke_corpus, tmp_path):
        with criterion("smoke: wgan-gp (n_critic=5, lambda=10), invariants hold throughout"):
            gp_values = []

            def check(record, pair):
                if "gp" in record:
                    gp_values.append(record["gp"])

            cfg = training.preset("wgan-gp", resolution=32, base_width=64, epochs=5, seed=1)
            assert cfg.n_critic == 5 and cfg.gp_lambda == 10.0
            pair = zoo.build_gan("wgan-gp", 32, base_width=64, seed=1)
            t0 = time.perf_counter()
            result = training.train_gan(pair, smoke_corpus, cfg, tmp_path / "wgangp", on_step=check)
            assert time.perf_counter() - t0 < 900
            assert gp_values and all(np.isfinite(v) and v >= 0 for v in gp_values)
            assert result.critic_steps == result.steps
            assert result.gen_steps == result.critic_steps // 5


# --------------------------------------------------------------------------
# 6. transfer learning
# --------------------------------------------------------------------------


class TestTransferLearning:
    def test_criterion_transfer(self, tmp_path):
        with criterion("transfer: warm start copies bit-wise, alters the trajectory; resume is exact"):
            dataset = silhouette_dataset(96, seed=11)
            donor = zoo.build_gan("dcgan", 32, base_width=8, seed=20)
            donor_path = ck.save(
                tmp_path / "donor.ck", ck.pair_tensors(donor), {"descriptor": donor.descriptor()}
            )

            warm = zoo.build_gan("dcgan", 32, base_width=8, conditional=True, seed=21)
            report = ck.warm_start(warm, ck.load(donor_path))
            donor_tensors = ck.pair_tensors(donor)
            warm_tensors = ck.pair_tensors(warm)
            for name in report["copied"]:
                assert np.array_equal(warm_tensors[name], donor_tensors[name]), name
            assert report["reinitialized"]

            import json

            def d_losses(pair, tag):
                cfg = training.preset(
                    "dcgan", resolution=32, base_width=8, conditional=True,
                    epochs=1, batch_size=32, seed=33,
                )
                result = training.train_gan(pair, dataset, cfg, tmp_path / tag)
                return [json.loads(l)["loss_d"] for l in result.metrics_path.read_text().splitlines()]

            cold = zoo.build_gan("dcgan", 32, base_width=8, conditional=True, seed=21)
            cold_losses = d_losses(cold, "cold")
            warm_losses = d_losses(warm, "warm")
            assert cold_losses != warm_losses, "warm start had no effect on the trajectory"

            # resume reproduces the uninterrupted run bit for bit
            def run_losses(tag, epochs, resume=None):
                cfg = training.preset("dcgan", resolution=32, base_width=8, epochs=epochs, batch_size=32, seed=44)
                pair = zoo.build_gan("dcgan", 32, base_width=8, seed=44)
                result = training.train_gan(pair, dataset, cfg, tmp_path / tag, resume=resume)
                return result, [
                    (json.loads(l)["loss_d"], json.loads(l)["loss_g"])
                    for l in result.metrics_path.read_text().splitlines()
                ]

            _, full = run_losses("full", 2)
            first, _ = run_losses("first", 1)
            _, resumed = run_losses("resumed", 2, resume=first.checkpoints[-1])
            per_epoch = len(full) // 2
            assert resumed == full[per_epoch:]


# --------------------------------------------------------------------------
# 7. checkpoint format
# --------------------------------------------------------------------------


class TestCheckpointFormat:
    def test_criterion_checkpoints(self, tmp_path):
        with criterion("checkpoint: bit-exact round trip, corruption detection, seed-stable bytes"):
            pair = zoo.build_gan("wgan-gp", 32, base_width=8, seed=30)
            tensors = ck.pair_tensors(pair)
            path = ck.save(tmp_path / "a.ck", tensors, {"descriptor": pair.descriptor()})
            loaded = ck.load(path)
            for name, arr in tensors.items():
                assert np.array_equal(loaded.tensors[name], arr)

            corrupt = bytearray(path.read_bytes())
            corrupt[len(corrupt) // 2] ^= 0x01
            (tmp_path / "bad.ck").write_bytes(bytes(corrupt))
            with pytest.raises(ck.BadChecksum):
                ck.load(tmp_path / "bad.ck")
            (tmp_path / "magic.ck").write_bytes(b"XXXX" + bytes(corrupt[4:]))
            with pytest.raises(ck.BadMagic):
                ck.load(tmp_path / "magic.ck")

            # identical seeds produce byte-identical files (fixed endianness,
            # no timestamps; the format is platform independent)
            p1 = zoo.build_gan("dcgan", 32, base_width=8, seed=31)
            p2 = zoo.build_gan("dcgan", 32, base_width=8, seed=31)
            f1 = ck.save(tmp_path / "s1.ck", ck.pair_tensors(p1), {"descriptor": p1.descriptor()})
            f2 = ck.save(tmp_path / "s2.ck", ck.pair_tensors(p2), {"descriptor": p2.descriptor()})
            assert f1.read_bytes() == f2.read_bytes()


# --------------------------------------------------------------------------
# 8. data pipeline
# --------------------------------------------------------------------------


class TestDataPipeline:
    def test_criterion_data(self, tmp_path):
        with criterion("data: bicubic properties, silhouette two-valuedness, idempotence, determinism"):
            img = data.to_floats(np.random.default_rng(1).integers(0, 256, (3, 16, 16), dtype=np.uint8))
            assert np.array_equal(data.resample_bicubic(img, 16), img)
            const = np.full((3, 12, 12), -0.125, dtype=np.float32)
            assert np.allclose(data.resample_bicubic(const, 24), -0.125, atol=1e-6)

            w = 16
            ramp = np.tile(np.linspace(-0.9, 0.9, w, dtype=np.float64), (w, 1))[None, :, :]
            out = data.resample_bicubic(ramp, 2 * w)
            slope = 1.8 / (w - 1)
            src_x = (np.arange(2 * w) + 0.5) * 0.5 - 0.5
            expected = -0.9 + slope * src_x
            assert np.allclose(out[0, w, 3 : 2 * w - 3], expected[3 : 2 * w - 3], atol=1e-9)

            colored = data.synth_toy_corpus(12, resolution=32, seed=3)
            for r in colored:
                sil = data.silhouette_from_colored(r.colored)
                assert set(np.unique(sil)).issubset({-1.0, 1.0})

            src = tmp_path / "colored"
            for r in colored:
                p = src / r.class_name / f"{r.identifier.split('/')[-1]}.png"
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_bytes(data.encode_png(r.colored))
            m1 = data.make_pairs(src, tmp_path / "pairs")
            first = m1.read_bytes()
            m2 = data.make_pairs(src, tmp_path / "pairs")
            assert m2.read_bytes() == first

            a = data.synth_toy_corpus(10, resolution=32, seed=9)
            b = data.synth_toy_corpus(10, resolution=32, seed=9)
            for ra, rb in zip(a, b):
                assert np.array_equal(ra.silhouette, rb.silhouette)
                assert np.array_equal(ra.colored, rb.colored)
