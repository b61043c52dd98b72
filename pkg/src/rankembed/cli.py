"""Command line entry point: ``rankembed <subcommand> ...``.

Options resolve as built-in defaults < config file < command line flags.
The config file is JSON, given by ``--config`` or the ``RANKEMBED_CONFIG``
environment variable; top-level keys apply to every subcommand and a key
named after a subcommand (e.g. ``"train"``) holds its own options.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    SplitSpec,
    Vocabulary,
    build_vocabulary,
    coverage_stats,
    encode_sentence,
    normalize_token,
    read_sentences,
    split_corpus,
)
from .embeddings import EmbeddingStore, export_text, import_text, nearest_neighbors
from .errors import DataError, DivergenceError
from .model import ModelConfig, load_params, save_params
from .tagger import (
    TaggerConfig,
    TaggerParams,
    Tagset,
    evaluate,
    load_conll,
    load_tagmap,
    read_conll_tokens,
    tag_sentence,
    train_tagger,
    write_conll,
)
from .trainer import TrainConfig, checkpoint_load, checkpoint_save, train, write_learning_curve

log = logging.getLogger("rankembed")

CONFIG_ENV = "RANKEMBED_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# subcommand -> {dest: default}
DEFAULTS: dict[str, dict] = {}


def _opt(parser, cmd: str, *flags, default=None, **kw):
    action = parser.add_argument(*flags, default=argparse.SUPPRESS, **kw)
    DEFAULTS.setdefault(cmd, {})[action.dest] = default
    return action


def _flag(parser, cmd: str, *flags, default=False, help=None):
    return _opt(parser, cmd, *flags, default=default, action="store_true", help=help)


def _common(p, cmd: str) -> None:
    _opt(p, cmd, "--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    _opt(p, cmd, "--seed", type=int, default=0)
    _opt(p, cmd, "--threads", type=int, default=1, help="worker threads; 1 guarantees bitwise determinism")
    _opt(p, cmd, "-v", "--verbose", action="count", default=0)
    _flag(p, cmd, "--json", help="machine-readable output on stdout")
    _opt(p, cmd, "--manifest", help="manifest path for commands without an --out file")


def _text_opts(p, cmd: str) -> None:
    _flag(p, cmd, "--pretokenized", help="whitespace-separated fields are final tokens")
    _flag(p, cmd, "--no-normalize", help="skip digit and mid-token separator normalization")


def build_parser() -> argparse.ArgumentParser:
    DEFAULTS.clear()
    parser = _Parser(prog="rankembed", description="Ranking-loss word embeddings and an embedding-only PoS tagger.")
    parser.add_argument("--version", action="version", version=f"rankembed {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("build-vocab", help="count tokens and keep the most frequent")
    _opt(p, "build-vocab", "--corpus", required=True)
    _opt(p, "build-vocab", "--out", required=True)
    _opt(p, "build-vocab", "--max-size", type=int, default=100_000)
    _text_opts(p, "build-vocab")
    _common(p, "build-vocab")

    p = sub.add_parser("train", help="train embeddings with the ranking hinge loss")
    c = "train"
    _opt(p, c, "--corpus", required=True)
    _opt(p, c, "--vocab", required=True)
    _opt(p, c, "--out", required=True, help="parameter file (best dev loss); side files share this prefix")
    _opt(p, c, "--n", type=int, default=2, help="half window; the window has 2n+1 words")
    _opt(p, c, "--embed-dim", type=int, default=64)
    _opt(p, c, "--hidden", type=int, default=32)
    _opt(p, c, "--batch", type=int, default=16)
    _opt(p, c, "--lr", type=float, default=0.1)
    _opt(p, c, "--dev-batches", type=int, default=10_000)
    _opt(p, c, "--max-examples", type=int, default=None)
    _opt(p, c, "--max-epochs", type=int, default=None)
    _opt(p, c, "--eval-every", type=int, default=100_000)
    _opt(p, c, "--patience", type=int, default=5)
    _opt(p, c, "--min-delta", type=float, default=0.0)
    _opt(p, c, "--split", default="0.9,0.05,0.05", help="train,dev,test fractions")
    _opt(p, c, "--dtype", choices=["float64", "float32"], default="float64")
    _opt(p, c, "--resume", help="trainer state file to continue from")
    _flag(p, c, "--no-fanin", help="use the base rate for every layer")
    _flag(p, c, "--allow-unk-centers", help="also train on windows centered on UNK")
    _text_opts(p, c)
    _common(p, c)

    p = sub.add_parser("export", help="write a parameter file's embeddings in text format")
    _opt(p, "export", "--params", required=True)
    _opt(p, "export", "--vocab", required=True)
    _opt(p, "export", "--out", required=True)
    _common(p, "export")

    p = sub.add_parser("nn", help="nearest neighbors by Euclidean distance")
    _opt(p, "nn", "--embeddings", required=True)
    _opt(p, "nn", "--word", required=True, action="append")
    _opt(p, "nn", "-k", type=int, default=5)
    _common(p, "nn")

    p = sub.add_parser("coverage", help="token and word coverage of a text by the embedding vocabulary")
    _opt(p, "coverage", "--embeddings", required=True)
    _opt(p, "coverage", "--text", required=True)
    _flag(p, "coverage", "--conll", help="read tokens from the first column of token<TAB>tag lines")
    _text_opts(p, "coverage")
    _common(p, "coverage")

    p = sub.add_parser("train-tagger", help="train the window PoS tagger")
    c = "train-tagger"
    _opt(p, c, "--embeddings", required=True)
    _opt(p, c, "--train", required=True)
    _opt(p, c, "--dev")
    _opt(p, c, "--tagmap")
    _opt(p, c, "--out", required=True)
    _opt(p, c, "--n", type=int, default=2)
    _opt(p, c, "--hidden", type=int, default=300)
    _opt(p, c, "--lr", type=float, default=0.3)
    _opt(p, c, "--batch", type=int, default=16)
    _opt(p, c, "--epochs", type=int, default=20)
    _opt(p, c, "--patience", type=int, default=5)
    _flag(p, c, "--random-init", help="replace the embeddings by random vectors (baseline)")
    _flag(p, c, "--freeze-embeddings", help="do not update embedding rows")
    _flag(p, c, "--no-fanin")
    _flag(p, c, "--no-normalize")
    _common(p, c)

    p = sub.add_parser("tag", help="tag plain text, one sentence per line")
    _opt(p, "tag", "--model", required=True)
    _opt(p, "tag", "--input", required=True)
    _opt(p, "tag", "--output", help="write token<TAB>tag here instead of stdout")
    _flag(p, "tag", "--no-normalize")
    _common(p, "tag")

    p = sub.add_parser("eval", help="accuracy over unknown / known / all test tokens")
    _opt(p, "eval", "--model", required=True)
    _opt(p, "eval", "--test", required=True)
    _opt(p, "eval", "--tagmap")
    _flag(p, "eval", "--no-normalize")
    _common(p, "eval")

    p = sub.add_parser("stats", help="corpus size and vocabulary coverage")
    _opt(p, "stats", "--corpus", required=True)
    _opt(p, "stats", "--vocab", required=True)
    _text_opts(p, "stats")
    _common(p, "stats")
    return parser


def resolve(cmd: str, flags: dict) -> dict:
    """Merge defaults < config file < explicit flags for ``cmd``."""
    cfg = dict(DEFAULTS[cmd])
    path = flags.get("config") or os.environ.get(CONFIG_ENV)
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read config file {path}: {e}") from None
        if not isinstance(data, dict):
            raise DataError(f"config file {path} must hold a JSON object")
        layered = {k: v for k, v in data.items() if not isinstance(v, dict)}
        layered.update(data.get(cmd, {}))
        for key, value in layered.items():
            dest = key.replace("-", "_")
            if dest not in cfg:
                raise UsageError(f"unknown option {key!r} in config file {path}")
            cfg[dest] = value
        cfg["config"] = path
    cfg.update(flags)
    return cfg


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, cmd: str, cfg: dict, inputs: list) -> None:
    manifest = {
        "command": cmd,
        "config": {k: cfg[k] for k in sorted(cfg)},
        "inputs": {str(p): _digest(p) for p in inputs if p},
        "versions": {
            "rankembed": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(cfg: dict, payload: dict, text: str) -> None:
    print(json.dumps(payload, sort_keys=True) if cfg["json"] else text)


def _sentences(cfg, path):
    return list(read_sentences(path, pretokenized=cfg["pretokenized"], normalize=not cfg["no_normalize"]))


def _require(path) -> None:
    if not Path(path).is_file():
        raise DataError(f"file not found: {path}")


def cmd_build_vocab(cfg) -> None:
    _require(cfg["corpus"])
    vocab = build_vocabulary(_sentences(cfg, cfg["corpus"]), cfg["max_size"])
    vocab.save(cfg["out"])
    write_manifest(cfg["out"] + ".manifest.json", "build-vocab", cfg, [cfg["corpus"]])
    counted = sum(c for _, c in vocab.entries)
    _emit(cfg, {"size": len(vocab), "kept_tokens": counted}, f"wrote {len(vocab)} entries to {cfg['out']}")


def _split_spec(text: str) -> SplitSpec:
    try:
        parts = [Fraction(x.strip()) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"bad --split {text!r}") from None
    if len(parts) != 3:
        raise UsageError("--split needs three comma-separated fractions")
    try:
        return SplitSpec(*parts)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_train(cfg) -> None:
    _require(cfg["corpus"])
    _require(cfg["vocab"])
    vocab = Vocabulary.load(cfg["vocab"])
    encoded = [encode_sentence(s, vocab) for s in _sentences(cfg, cfg["corpus"])]
    if not encoded:
        raise DataError("empty corpus")
    spec = _split_spec(cfg["split"])
    tr, dv, te = split_corpus(encoded, spec, np.random.default_rng([cfg["seed"], 9]))
    model_config = ModelConfig(vocab_size=len(vocab), n=cfg["n"], dim=cfg["embed_dim"], hidden=cfg["hidden"])
    try:
        train_config = TrainConfig(
            batch_size=cfg["batch"],
            base_lr=cfg["lr"],
            dev_sample_batches=cfg["dev_batches"],
            max_examples=cfg["max_examples"],
            max_epochs=cfg["max_epochs"],
            plateau_patience=cfg["patience"],
            plateau_min_delta=cfg["min_delta"],
            eval_every=cfg["eval_every"],
            seed=cfg["seed"],
            fan_in=not cfg["no_fanin"],
            allow_unk_centers=cfg["allow_unk_centers"],
            threads=cfg["threads"],
            dtype=cfg["dtype"],
        )
    except ValueError as e:
        raise UsageError(str(e)) from None
    state = checkpoint_load(cfg["resume"]) if cfg["resume"] else None
    state = train(tr, dv, model_config, train_config, state)
    out = cfg["out"]
    best = state.best_params or state.params
    save_params(best, out)
    checkpoint_save(state, out + ".state")
    write_learning_curve(state, out + ".curve.csv")
    export_text(EmbeddingStore.from_params(vocab, best), out + ".emb.txt")
    write_manifest(out + ".manifest.json", "train", cfg, [cfg["corpus"], cfg["vocab"], cfg["resume"]])
    summary = {
        "examples_seen": state.examples_seen,
        "train_sentences": len(tr),
        "dev_sentences": len(dv),
        "test_sentences": len(te),
        "initial_dev_loss": state.history[0][2] if state.history else None,
        "final_dev_loss": state.history[-1][2] if state.history else None,
        "best_dev_loss": state.best_dev_loss if state.history else None,
        "evaluations": len(state.history),
    }
    text = "\n".join(f"{k}: {v}" for k, v in summary.items())
    _emit(cfg, summary, text)


def cmd_export(cfg) -> None:
    _require(cfg["params"])
    _require(cfg["vocab"])
    params = load_params(cfg["params"])
    vocab = Vocabulary.load(cfg["vocab"])
    export_text(EmbeddingStore.from_params(vocab, params), cfg["out"])
    write_manifest(cfg["out"] + ".manifest.json", "export", cfg, [cfg["params"], cfg["vocab"]])
    _emit(cfg, {"rows": len(vocab), "dim": params.config.dim}, f"wrote {cfg['out']}")


def cmd_nn(cfg) -> None:
    _require(cfg["embeddings"])
    if cfg["k"] < 1:
        raise UsageError("-k must be >= 1")
    store = import_text(cfg["embeddings"])
    lists = [nearest_neighbors(store, w, cfg["k"]) for w in cfg["word"]]
    payload = {"neighbors": [{"query": nl.query, "neighbors": [[t, d] for t, d in nl.neighbors]} for nl in lists]}
    width = max(len(t) for nl in lists for t, _ in [(nl.query, 0), *nl.neighbors]) + 2
    rows = ["".join(nl.query.ljust(width) for nl in lists), "".join("-" * (width - 1) + " " for _ in lists)]
    for r in range(cfg["k"]):
        cells = []
        for nl in lists:
            cells.append((f"{nl.neighbors[r][0]}" if r < len(nl.neighbors) else "").ljust(width))
        rows.append("".join(cells).rstrip())
    _emit(cfg, payload, "\n".join(rows))
    if cfg["manifest"]:
        write_manifest(cfg["manifest"], "nn", cfg, [cfg["embeddings"]])


def _coverage_payload(stats) -> dict:
    return {
        "tokens": stats.total_tokens,
        "covered_tokens": stats.covered_tokens,
        "word_types": stats.total_word_types,
        "covered_word_types": stats.covered_word_types,
        "token_coverage": stats.token_coverage,
        "word_coverage": stats.word_coverage,
    }


def cmd_coverage(cfg) -> None:
    _require(cfg["embeddings"])
    _require(cfg["text"])
    store = import_text(cfg["embeddings"])
    if cfg["conll"]:
        normalize = not cfg["no_normalize"]
        sents = [[normalize_token(t) if normalize else t for t in s] for s in read_conll_tokens(cfg["text"])]
    else:
        sents = _sentences(cfg, cfg["text"])
    stats = coverage_stats(sents, store.vocab)
    text = f"% Token Coverage\t% Word Coverage\n{100 * stats.token_coverage:.2f}\t{100 * stats.word_coverage:.2f}"
    _emit(cfg, _coverage_payload(stats), text)
    if cfg["manifest"]:
        write_manifest(cfg["manifest"], "coverage", cfg, [cfg["embeddings"], cfg["text"]])


def _load_labeled(path, tagmap_path, tagset=None):
    tagmap = load_tagmap(tagmap_path) if tagmap_path else None
    if tagset is None:
        tagset = Tagset.for_tagmap(tagmap) if tagmap else Tagset()
    return load_conll(path, tagmap, tagset), tagset


def cmd_train_tagger(cfg) -> None:
    for key in ("embeddings", "train", "dev", "tagmap"):
        if cfg[key]:
            _require(cfg[key])
    store = import_text(cfg["embeddings"])
    train_sents, tagset = _load_labeled(cfg["train"], cfg["tagmap"])
    dev_sents = _load_labeled(cfg["dev"], cfg["tagmap"], tagset)[0] if cfg["dev"] else None
    try:
        tcfg = TaggerConfig(
            n=cfg["n"],
            hidden=cfg["hidden"],
            lr=cfg["lr"],
            batch_size=cfg["batch"],
            fine_tune_embeddings=not cfg["freeze_embeddings"],
            fan_in=not cfg["no_fanin"],
            epochs=cfg["epochs"],
            patience=cfg["patience"],
            seed=cfg["seed"],
            normalize=not cfg["no_normalize"],
        )
    except ValueError as e:
        raise UsageError(str(e)) from None
    run = train_tagger(store, train_sents, tagset, tcfg, dev_sents, random_init=cfg["random_init"])
    run.params.save(cfg["out"])
    write_manifest(
        cfg["out"] + ".manifest.json", "train-tagger", cfg, [cfg["embeddings"], cfg["train"], cfg["dev"], cfg["tagmap"]]
    )
    summary = {"best_epoch": run.best_epoch, "history": run.history}
    last = run.history[-1]
    _emit(cfg, summary, f"best epoch {run.best_epoch}; last epoch {last['epoch']} dev accuracy {last['dev_accuracy']:.4f}")


def cmd_tag(cfg) -> None:
    _require(cfg["model"])
    _require(cfg["input"])
    params = TaggerParams.load(cfg["model"])
    normalize = not cfg["no_normalize"]
    with open(cfg["input"], encoding="utf-8") as f:
        sentences = [line.split() for line in f if line.split()]
    tags = [[params.tagset.tags[t] for t in tag_sentence(params, s, normalize)] for s in sentences]
    if cfg["output"]:
        write_conll(cfg["output"], sentences, tags)
        write_manifest(cfg["output"] + ".manifest.json", "tag", cfg, [cfg["model"], cfg["input"]])
    if cfg["json"]:
        print(json.dumps({"sentences": [list(zip(s, t)) for s, t in zip(sentences, tags)]}, ensure_ascii=False))
    elif not cfg["output"]:
        for s, t in zip(sentences, tags):
            sys.stdout.write("".join(f"{w}\t{g}\n" for w, g in zip(s, t)) + "\n")
    if cfg["manifest"]:
        write_manifest(cfg["manifest"], "tag", cfg, [cfg["model"], cfg["input"]])


def cmd_eval(cfg) -> None:
    _require(cfg["model"])
    _require(cfg["test"])
    params = TaggerParams.load(cfg["model"])
    tagmap = load_tagmap(cfg["tagmap"]) if cfg["tagmap"] else None
    sents = load_conll(cfg["test"], tagmap, params.tagset)
    report = evaluate(params, sents, normalize=not cfg["no_normalize"])
    text = (
        f"{'Unknown':>9}{'Known':>9}{'All':>9}\n"
        f"{100 * report.accuracy_unknown:8.2f}%{100 * report.accuracy_known:8.2f}%{100 * report.accuracy_all:8.2f}%"
    )
    _emit(cfg, report.as_dict(), text)
    if cfg["manifest"]:
        write_manifest(cfg["manifest"], "eval", cfg, [cfg["model"], cfg["test"]])


def cmd_stats(cfg) -> None:
    _require(cfg["corpus"])
    _require(cfg["vocab"])
    vocab = Vocabulary.load(cfg["vocab"])
    stats = coverage_stats(_sentences(cfg, cfg["corpus"]), vocab)
    text = (
        f"{'Tokens':>12}{'Words':>10}{'Coverage':>10}\n"
        f"{stats.total_tokens:>12}{stats.total_word_types:>10}{100 * stats.token_coverage:>9.2f}%"
    )
    _emit(cfg, _coverage_payload(stats), text)
    if cfg["manifest"]:
        write_manifest(cfg["manifest"], "stats", cfg, [cfg["corpus"], cfg["vocab"]])


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "export": cmd_export,
    "nn": cmd_nn,
    "coverage": cmd_coverage,
    "train-tagger": cmd_train_tagger,
    "tag": cmd_tag,
    "eval": cmd_eval,
    "stats": cmd_stats,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    flags = vars(args)
    cmd = flags.pop("command")
    try:
        cfg = resolve(cmd, flags)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(int(cfg["verbose"]), 2), format="%(levelname)s %(name)s: %(message)s"
        )
        if cfg["threads"] < 1:
            raise UsageError("--threads must be >= 1")
        COMMANDS[cmd](cfg)
    except UsageError as e:
        print(f"rankembed {cmd}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, UnicodeDecodeError) as e:
        print(f"rankembed {cmd}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"rankembed {cmd}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"rankembed {cmd}: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
