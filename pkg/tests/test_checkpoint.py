import numpy as np
import pytest

from charstudio import checkpoint as ck
from charstudio import zoo
from charstudio.tensor import Rng


def fresh_pair(seed=1, **kw):
    return zoo.build_gan("dcgan", 32, base_width=16, seed=seed, **kw)


class TestContainer:
    def test_roundtrip_bit_exact(self, tmp_path):
        pair = fresh_pair()
        tensors = ck.pair_tensors(pair)
        path = ck.save(tmp_path / "a.ck", tensors, {"descriptor": pair.descriptor()})
        loaded = ck.load(path)
        assert set(loaded.tensors) == set(tensors)
        for name, arr in tensors.items():
            assert np.array_equal(loaded.tensors[name], arr), name

    def test_same_tensors_same_bytes(self, tmp_path):
        pair = fresh_pair(seed=3)
        meta = {"descriptor": pair.descriptor()}
        a = ck.save(tmp_path / "a.ck", ck.pair_tensors(pair), meta).read_bytes()
        b = ck.save(tmp_path / "b.ck", ck.pair_tensors(pair), meta).read_bytes()
        assert a == b

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.ck"
        p.write_bytes(b"NOPE" + b"\0" * 64)
        with pytest.raises(ck.BadMagic):
            ck.load(p)

    def test_bad_version(self, tmp_path):
        pair = fresh_pair()
        path = ck.save(tmp_path / "a.ck", ck.pair_tensors(pair), {"descriptor": pair.descriptor()})
        raw = bytearray(path.read_bytes())
        raw[4] = 99  # bump the version field
        path.write_bytes(bytes(raw))
        with pytest.raises(ck.BadVersion):
            ck.load(path)

    def test_truncation_detected(self, tmp_path):
        pair = fresh_pair()
        path = ck.save(tmp_path / "a.ck", ck.pair_tensors(pair), {"descriptor": pair.descriptor()})
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 40])
        with pytest.raises(ck.BadChecksum):
            ck.load(path)

    def test_payload_corruption_detected(self, tmp_path):
        pair = fresh_pair()
        path = ck.save(tmp_path / "a.ck", ck.pair_tensors(pair), {"descriptor": pair.descriptor()})
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ck.BadChecksum):
            ck.load(path)

    def test_inspect_reads_header_only(self, tmp_path):
        pair = fresh_pair()
        path = ck.save(
            tmp_path / "a.ck",
            ck.pair_tensors(pair),
            {"descriptor": pair.descriptor(), "counters": {"epoch": 4}},
        )
        # corrupt the payload: inspect must still succeed
        raw = bytearray(path.read_bytes())
        raw[-10] ^= 0xFF
        path.write_bytes(bytes(raw))
        header = ck.inspect(path)
        assert header["counters"]["epoch"] == 4
        assert header["descriptor"]["kind"] == "dcgan"
        assert any(e["name"] == "g.0.weight" for e in header["tensor_index"])

    def test_load_into_pair_restores(self, tmp_path):
        donor = fresh_pair(seed=5)
        path = ck.save(tmp_path / "a.ck", ck.pair_tensors(donor), {"descriptor": donor.descriptor()})
        target = fresh_pair(seed=6)
        ck.load_into_pair(target, ck.load(path))
        for name, p in target.generator.named_params().items():
            assert np.array_equal(p.data, donor.generator.named_params()[name].data)


class TestWarmStart:
    def test_identical_donor_copies_everything(self, tmp_path):
        donor = fresh_pair(seed=7)
        path = ck.save(tmp_path / "d.ck", ck.pair_tensors(donor), {"descriptor": donor.descriptor()})
        target = fresh_pair(seed=8)
        report = ck.warm_start(target, ck.load(path))
        assert report["reinitialized"] == []
        for name, p in target.discriminator.named_params().items():
            assert np.array_equal(p.data, donor.discriminator.named_params()[name].data)

    def test_unconditional_to_conditional(self, tmp_path):
        donor = fresh_pair(seed=9)
        path = ck.save(tmp_path / "d.ck", ck.pair_tensors(donor), {"descriptor": donor.descriptor()})
        target = fresh_pair(seed=10, conditional=True, n_classes=3)
        before = {n: p.data.copy() for n, p in target.generator.named_params().items()}
        report = ck.warm_start(target, ck.load(path))
        gen_reinit = [n for n in report["reinitialized"] if n.startswith("g.")]
        assert gen_reinit == ["g.0.weight"]  # only the latent-side weight widens
        # the mismatched tensor kept its fresh init
        assert np.array_equal(target.generator.named_params()["0.weight"].data, before["0.weight"])
        # everything else was copied bit-wise
        for name, p in target.generator.named_params().items():
            if f"g.{name}" not in report["reinitialized"]:
                assert np.array_equal(p.data, donor.generator.named_params()[name].data)

    def test_incompatible_donor_rejected(self, tmp_path):
        donor = fresh_pair(seed=11)
        tensors = {f"zzz.{k}": v for k, v in ck.pair_tensors(donor).items()}
        path = ck.save(tmp_path / "d.ck", tensors, {"descriptor": donor.descriptor()})
        with pytest.raises(ck.CheckpointError, match="no tensor matched"):
            ck.warm_start(fresh_pair(seed=12), ck.load(path))

    def test_freeze_prefixes_reported(self, tmp_path):
        donor = fresh_pair(seed=13)
        path = ck.save(tmp_path / "d.ck", ck.pair_tensors(donor), {"descriptor": donor.descriptor()})
        report = ck.warm_start(fresh_pair(seed=14), ck.load(path), freeze=("d.",))
        assert all(n.startswith("d.") for n in report["frozen"])
        assert report["frozen"]

    def test_every_tensor_copied_or_reinitialized(self, tmp_path):
        donor = fresh_pair(seed=15)
        path = ck.save(tmp_path / "d.ck", ck.pair_tensors(donor), {"descriptor": donor.descriptor()})
        target = fresh_pair(seed=16, conditional=True)
        report = ck.warm_start(target, ck.load(path))
        all_names = set(ck.pair_tensors(target))
        assert set(report["copied"]) | set(report["reinitialized"]) == all_names
