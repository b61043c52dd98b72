"""Compare taggers built on pretrained versus random embeddings.

Trains ranking embeddings on the toy corpus (or loads them with
``--embeddings``), then trains one tagger per seed on a small tagged
sample with each initialization and prints test accuracy for both.

    python3 scripts/pretraining_benefit.py --train-sentences 200 --seeds 5
"""

import argparse

import numpy as np

from rankembed import toy
from rankembed.corpus import SplitSpec, build_vocabulary, encode_sentence, split_corpus
from rankembed.embeddings import EmbeddingStore, import_text
from rankembed.model import ModelConfig
from rankembed.tagger import TaggerConfig, Tagset, evaluate, train_tagger
from rankembed.trainer import TrainConfig, train


def pretrained_store(max_examples: int) -> EmbeddingStore:
    sentences = toy.template_corpus(50_000, seed=1)
    vocab = build_vocabulary(sentences)
    encoded = [encode_sentence(s, vocab) for s in sentences]
    tr, dv, _ = split_corpus(encoded, SplitSpec(), np.random.default_rng(7))
    config = TrainConfig(dev_sample_batches=2_000, max_examples=max_examples, plateau_patience=3, plateau_min_delta=1e-3)
    state = train(tr, dv, ModelConfig(len(vocab), n=2, dim=16, hidden=8), config)
    return EmbeddingStore.from_params(vocab, state.best_params)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--embeddings", help="text-format embeddings; trained from scratch when omitted")
    ap.add_argument("--train-sentences", type=int, default=200)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--max-examples", type=int, default=2_000_000)
    args = ap.parse_args()

    store = import_text(args.embeddings) if args.embeddings else pretrained_store(args.max_examples)
    tagged = toy.tagged_template_corpus(args.train_sentences + 1200, seed=11, zipf=1.0)
    k = args.train_sentences
    train_set, dev, test = tagged[:k], tagged[k : k + 200], tagged[k + 200 :]

    print(f"{'seed':>4} {'pretrained':>11} {'random':>8} {'drop':>7}")
    for seed in range(args.seeds):
        cfg = TaggerConfig(epochs=20, patience=20, seed=seed)
        acc = [
            evaluate(train_tagger(store, train_set, Tagset(), cfg, dev, random_init=r).params, test).accuracy_all
            for r in (False, True)
        ]
        print(f"{seed:>4} {acc[0]:>11.2%} {acc[1]:>8.2%} {100 * (acc[1] - acc[0]):>+7.2f}")


if __name__ == "__main__":
    main()
