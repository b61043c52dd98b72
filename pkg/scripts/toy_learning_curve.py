"""Train embeddings on the two-class toy corpus and report the learning curve.

Writes ``curve.csv`` (examples,train_loss,dev_loss) and ``embeddings.txt``
to the output directory and prints the five nearest neighbors of a few
class words.

    python3 scripts/toy_learning_curve.py --out runs/toy --sentences 50000
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from rankembed import toy
from rankembed.corpus import SplitSpec, build_vocabulary, encode_sentence, split_corpus
from rankembed.embeddings import EmbeddingStore, export_text, nearest_neighbors
from rankembed.model import ModelConfig
from rankembed.trainer import TrainConfig, smooth_median3, train, write_learning_curve


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/toy"))
    ap.add_argument("--sentences", type=int, default=50_000)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--hidden", type=int, default=8)
    ap.add_argument("--max-examples", type=int, default=2_000_000)
    ap.add_argument("--eval-every", type=int, default=100_000)
    ap.add_argument("--dev-batches", type=int, default=2_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    sentences = toy.template_corpus(args.sentences, seed=1)
    vocab = build_vocabulary(sentences)
    encoded = [encode_sentence(s, vocab) for s in sentences]
    tr, dv, _ = split_corpus(encoded, SplitSpec(), np.random.default_rng(7))
    config = TrainConfig(
        dev_sample_batches=args.dev_batches,
        eval_every=args.eval_every,
        max_examples=args.max_examples,
        plateau_patience=3,
        plateau_min_delta=1e-3,
        seed=args.seed,
    )
    state = train(tr, dv, ModelConfig(len(vocab), n=2, dim=args.dim, hidden=args.hidden), config)

    args.out.mkdir(parents=True, exist_ok=True)
    write_learning_curve(state, args.out / "curve.csv")
    store = EmbeddingStore.from_params(vocab, state.best_params)
    export_text(store, args.out / "embeddings.txt")

    dev = [d for _, _, d in state.history]
    print(f"dev loss {dev[0]:.4f} -> {dev[-1]:.4f} after {state.examples_seen} examples")
    print("smoothed:", " ".join(f"{v:.4f}" for v in smooth_median3(dev)))
    for word in ("red", "navy", "Paris", "Tokyo", "car"):
        nl = nearest_neighbors(store, word, 5)
        print(f"{word:>8}: " + ", ".join(t for t, _ in nl.neighbors))


if __name__ == "__main__":
    main()
