import hashlib
import json

import pytest

from charstudio import cli


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert run("synth", "--n", "24", "--res", "32", "--seed", "7", "--out", str(root)) == 0
    return root


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("run")
    code = run(
        "train", "--arch", "dcgan", "--data", str(corpus / "silhouettes"),
        "--out", str(out), "--epochs", "1", "--batch", "8", "--res", "32",
        "--width", "8", "--seed", "1",
    )
    assert code == 0
    cks = sorted(out.glob("*.ck"))
    assert cks
    return cks[-1]


class TestUsageErrors:
    def test_no_command_exits_1(self, capsys):
        assert run() == 1

    def test_unknown_flag_exits_1_with_usage(self, capsys):
        assert run("synth", "--bogus") == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_train_without_data_exits_1(self, capsys):
        assert run("train", "--arch", "wgan-gp", "--out", "/tmp/x") == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_fid_requires_exactly_one_fake_source(self, corpus):
        assert run("fid", "--real", str(corpus / "silhouettes")) == 1


class TestSynthAndPairs:
    def test_synth_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("synth", "--n", "6", "--res", "32", "--seed", "5", "--out", str(a)) == 0
        assert run("synth", "--n", "6", "--res", "32", "--seed", "5", "--out", str(b)) == 0

        def tree_hash(root):
            h = hashlib.sha256()
            for p in sorted(root.rglob("*.png")):
                h.update(p.relative_to(root).as_posix().encode())
                h.update(p.read_bytes())
            return h.hexdigest()

        assert tree_hash(a) == tree_hash(b)

    def test_pairs_command(self, corpus, tmp_path):
        out = tmp_path / "pairs"
        assert run("pairs", "--colored", str(corpus / "colored"), "--out", str(out), "--threshold", "0.95") == 0
        assert (out / "pairs.tsv").exists()


class TestSampleCommand:
    def test_rerun_byte_identical(self, trained, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code = run(
                "sample", "--checkpoint", str(trained), "--n", "4", "--seed", "7",
                "--trunc", "0.75", "--out", str(out),
            )
            assert code == 0
        for pa, pb in zip(sorted(a.glob("*.png")), sorted(b.glob("*.png"))):
            assert pa.read_bytes() == pb.read_bytes()
        assert len(list(a.glob("*.png"))) == 4

    def test_missing_checkpoint_exits_2(self):
        assert run("sample", "--checkpoint", "/nope.ck", "--n", "1", "--out", "/tmp/x") == 2


class TestFidCommand:
    def test_self_comparison_zero(self, corpus, capsys, tmp_path):
        report = tmp_path / "report.json"
        code = run(
            "fid", "--real", str(corpus / "silhouettes"), "--fake", str(corpus / "silhouettes"),
            "--res", "32", "--report", str(report),
        )
        assert code == 0
        body = json.loads(report.read_text())
        assert body["score"] < 1e-6
        assert "fid:" in capsys.readouterr().out

    def test_checkpoint_scoring(self, corpus, trained, tmp_path):
        report = tmp_path / "report.json"
        code = run(
            "fid", "--real", str(corpus / "silhouettes"), "--checkpoint", str(trained),
            "--n", "24", "--res", "32", "--report", str(report),
        )
        assert code == 0
        body = json.loads(report.read_text())
        assert body["n_generated"] == 24
        assert body["score"] >= 0


class TestInspectCommand:
    def test_prints_header(self, trained, capsys):
        assert run("inspect", str(trained)) == 0
        out = capsys.readouterr().out
        assert "descriptor" in out
        assert "g.0.weight" in out

    def test_bad_file_exits_2(self, tmp_path):
        bad = tmp_path / "bad.ck"
        bad.write_bytes(b"garbage")
        assert run("inspect", str(bad)) == 2


class TestDeterministicFlag:
    def test_accepted_before_subcommand(self, tmp_path):
        assert run("--deterministic", "synth", "--n", "3", "--res", "32", "--out", str(tmp_path / "s")) == 0
