"""End-to-end CLI pipeline on toy data, shared by the CLI and acceptance tests."""

import contextlib
import io
import os
from pathlib import Path

from rankembed.cli import dispatch
from rankembed.tagger import UNIVERSAL_TAGS
from rankembed.toy import tagged_template_corpus, template_corpus


def run(*argv) -> tuple[int, str]:
    """Call the CLI in-process; returns (exit code, stdout)."""
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = dispatch([str(a) for a in argv])
    return code, out.getvalue()


def write_inputs(root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    sents = template_corpus(3000, seed=1)
    (root / "corpus.txt").write_text("".join(" ".join(s) + "\n" for s in sents), encoding="utf-8")
    tagged = tagged_template_corpus(300, seed=2)
    for name, part in (("train", tagged[:200]), ("dev", tagged[200:250]), ("test", tagged[250:])):
        with open(root / f"{name}.conll", "w", encoding="utf-8") as f:
            for s in part:
                f.writelines(f"{tok}\t{UNIVERSAL_TAGS[t]}\n" for tok, t in zip(s.tokens, s.tags))
                f.write("\n")
    (root / "raw.txt").write_text("she lives in Paris .\nthe car is red .\n", encoding="utf-8")


PRODUCTS = (
    "vocab.txt",
    "emb.bin",
    "emb.bin.state",
    "emb.bin.curve.csv",
    "emb.bin.emb.txt",
    "emb.bin.manifest.json",
    "tagger.npz",
    "tagger.npz.manifest.json",
    "tagged.conll",
    "nn.json",
    "coverage.json",
    "eval.json",
)


def run_pipeline(root: Path, threads: int = 1) -> dict[str, bytes]:
    """build-vocab -> train -> nn -> coverage -> train-tagger -> tag -> eval.

    Runs with ``root`` as the working directory so every recorded path is
    relative, and returns the bytes of each product keyed by file name.
    """
    write_inputs(root)
    old = os.getcwd()
    os.chdir(root)
    try:
        steps = [
            ("build-vocab", "--corpus", "corpus.txt", "--out", "vocab.txt"),
            (
                "train", "--corpus", "corpus.txt", "--vocab", "vocab.txt", "--out", "emb.bin",
                "--embed-dim", 8, "--hidden", 4, "--max-examples", 20_000, "--eval-every", 5_000,
                "--dev-batches", 50, "--threads", threads,
            ),
            ("nn", "--embeddings", "emb.bin.emb.txt", "--word", "red", "--word", "Paris", "--json"),
            ("coverage", "--embeddings", "emb.bin.emb.txt", "--text", "test.conll", "--conll", "--json"),
            (
                "train-tagger", "--embeddings", "emb.bin.emb.txt", "--train", "train.conll", "--dev", "dev.conll",
                "--out", "tagger.npz", "--hidden", 20, "--epochs", 3,
            ),
            ("tag", "--model", "tagger.npz", "--input", "raw.txt", "--output", "tagged.conll"),
            ("eval", "--model", "tagger.npz", "--test", "test.conll", "--json"),
        ]
        captured = {"nn": "nn.json", "coverage": "coverage.json", "eval": "eval.json"}
        for argv in steps:
            code, out = run(*argv)
            if code != 0:
                raise AssertionError(f"{argv[0]} exited with {code}")
            if argv[0] in captured:
                Path(captured[argv[0]]).write_text(out, encoding="utf-8")
    finally:
        os.chdir(old)
    return {name: (root / name).read_bytes() for name in PRODUCTS}
