import json

import pytest

from pipeline import run, run_pipeline
from rankembed.cli import build_parser, resolve
from rankembed.corpus import Vocabulary


@pytest.fixture
def stats_files(tmp_path):
    (tmp_path / "c.txt").write_text("a a b\n", encoding="utf-8")
    Vocabulary.from_tokens(["a"]).save(tmp_path / "v.txt")
    return tmp_path


def test_help_exits_zero(capsys):
    assert run("--help")[0] == 0
    assert run("train", "--help")[0] == 0


def test_unknown_flag(capsys):
    assert run("stats", "--corpus", "c", "--vocab", "v", "--bogus")[0] == 1
    assert "--bogus" in capsys.readouterr().err


def test_unknown_command():
    assert run("frobnicate")[0] == 1


def test_stats_table(stats_files):
    code, out = run("stats", "--corpus", stats_files / "c.txt", "--vocab", stats_files / "v.txt")
    assert code == 0
    header, row = out.splitlines()
    assert header.split() == ["Tokens", "Words", "Coverage"]
    assert row.split() == ["3", "2", "66.67%"]


def test_stats_json(stats_files):
    code, out = run("stats", "--corpus", stats_files / "c.txt", "--vocab", stats_files / "v.txt", "--json")
    data = json.loads(out)
    assert (data["tokens"], data["word_types"], data["covered_tokens"]) == (3, 2, 2)
    assert data["token_coverage"] == pytest.approx(2 / 3)


def test_empty_vocab_is_data_error(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("", encoding="utf-8")
    assert run("build-vocab", "--corpus", tmp_path / "c.txt", "--out", tmp_path / "v")[0] == 2
    assert "empty corpus" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert run("stats", "--corpus", tmp_path / "nope", "--vocab", tmp_path / "nope")[0] == 2


def test_bad_split(stats_files):
    code, _ = run(
        "train", "--corpus", stats_files / "c.txt", "--vocab", stats_files / "v.txt",
        "--out", stats_files / "o", "--split", "0.5,0.5,0.5",
    )
    assert code == 1


class TestConfig:
    def resolved(self, argv, env=None):
        args = vars(build_parser().parse_args(argv))
        return resolve(args.pop("command"), args)

    def test_precedence(self, tmp_path, monkeypatch):
        conf = tmp_path / "conf.json"
        conf.write_text(json.dumps({"seed": 5, "train": {"lr": 0.02, "hidden": 7}}))
        base = ["train", "--corpus", "c", "--vocab", "v", "--out", "o", "--config", str(conf)]
        cfg = self.resolved(base + ["--hidden", "9"])
        assert (cfg["seed"], cfg["lr"], cfg["hidden"], cfg["embed_dim"]) == (5, 0.02, 9, 64)

    def test_env_variable(self, tmp_path, monkeypatch):
        conf = tmp_path / "conf.json"
        conf.write_text(json.dumps({"seed": 8}))
        monkeypatch.setenv("RANKEMBED_CONFIG", str(conf))
        assert self.resolved(["stats", "--corpus", "c", "--vocab", "v"])["seed"] == 8

    def test_unknown_key(self, tmp_path, stats_files):
        conf = tmp_path / "conf.json"
        conf.write_text(json.dumps({"stats": {"learning_rate": 1}}))
        argv = ["stats", "--corpus", stats_files / "c.txt", "--vocab", stats_files / "v.txt", "--config", conf]
        assert run(*argv)[0] == 1

    def test_unreadable(self, tmp_path, stats_files):
        conf = tmp_path / "conf.json"
        conf.write_text("{nope")
        argv = ["stats", "--corpus", stats_files / "c.txt", "--vocab", stats_files / "v.txt", "--config", conf]
        assert run(*argv)[0] == 2


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    return root, run_pipeline(root)


class TestPipeline:
    def test_products_exist(self, pipeline_run):
        _, products = pipeline_run
        assert all(products.values())

    def test_curve_and_embeddings(self, pipeline_run):
        _, products = pipeline_run
        curve = products["emb.bin.curve.csv"].decode().splitlines()
        assert curve[0] == "examples,train_loss,dev_loss"
        assert curve[1].startswith("0,")
        header = products["emb.bin.emb.txt"].decode().splitlines()[0]
        assert header.split()[1] == "8"

    def test_manifest(self, pipeline_run):
        _, products = pipeline_run
        m = json.loads(products["emb.bin.manifest.json"])
        assert m["command"] == "train"
        assert m["config"]["embed_dim"] == 8 and m["config"]["lr"] == 0.1
        assert set(m["inputs"]) == {"corpus.txt", "vocab.txt"}
        assert all(len(h) == 64 for h in m["inputs"].values())
        assert {"rankembed", "python", "numpy"} <= set(m["versions"])

    def test_outputs_parse(self, pipeline_run):
        _, products = pipeline_run
        nn = json.loads(products["nn.json"])
        assert [q["query"] for q in nn["neighbors"]] == ["red", "Paris"]
        assert all(len(q["neighbors"]) == 5 for q in nn["neighbors"])
        cov = json.loads(products["coverage.json"])
        # "said" and "again" only occur in the tagged templates
        assert 0.9 < cov["token_coverage"] < 1.0
        report = json.loads(products["eval.json"])
        assert report["unknown_total"] > 0 and 0 <= report["accuracy_all"] <= 1
        tagged = products["tagged.conll"].decode().split("\n\n")
        assert tagged[0].splitlines()[0].split("\t")[0] == "she"

    def test_resume_from_state(self, pipeline_run, tmp_path):
        root, _ = pipeline_run
        out = tmp_path / "more.bin"
        code, text = run(
            "train", "--corpus", root / "corpus.txt", "--vocab", root / "vocab.txt", "--out", out,
            "--embed-dim", 8, "--hidden", 4, "--max-examples", 30_000, "--eval-every", 5_000,
            "--dev-batches", 50, "--resume", root / "emb.bin.state", "--json",
        )
        assert code == 0
        assert json.loads(text)["examples_seen"] >= 30_000

    def test_tag_stdout(self, pipeline_run):
        root, _ = pipeline_run
        code, out = run("tag", "--model", root / "tagger.npz", "--input", root / "raw.txt")
        assert code == 0
        assert len(out.strip().split("\n\n")) == 2

    def test_export_matches_training_export(self, pipeline_run, tmp_path):
        root, products = pipeline_run
        code, _ = run("export", "--params", root / "emb.bin", "--vocab", root / "vocab.txt", "--out", tmp_path / "e.txt")
        assert code == 0
        assert (tmp_path / "e.txt").read_bytes() == products["emb.bin.emb.txt"]

    def test_nn_oov(self, pipeline_run, capsys):
        root, _ = pipeline_run
        assert run("nn", "--embeddings", root / "emb.bin.emb.txt", "--word", "qqq")[0] == 2


def test_pipeline_bitwise_deterministic(tmp_path):
    assert run_pipeline(tmp_path / "a") == run_pipeline(tmp_path / "b")
