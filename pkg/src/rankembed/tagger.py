"""Window-based part-of-speech tagger whose only features are word embeddings.

Each token is tagged from the concatenated embeddings of the ``2n+1`` words
around it (same ``<S>``/``</S>``/PAD bracketing used for embedding
training), fed through one tanh layer and a softmax over the tagset.
Training minimizes the mean negative log likelihood and, unless frozen,
backpropagates into the embedding rows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import NUM_SPECIALS, UNK_ID, Vocabulary, context_windows, normalize_token
from .embeddings import EmbeddingStore
from .errors import DataError, DivergenceError, ParseError

log = logging.getLogger(__name__)

UNIVERSAL_TAGS = ("NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "NUM", "CONJ", "PRT", ".", "X")


@dataclass(frozen=True)
class Tagset:
    tags: tuple[str, ...] = UNIVERSAL_TAGS

    def __post_init__(self) -> None:
        if not self.tags:
            raise ValueError("empty tagset")
        if len(set(self.tags)) != len(self.tags):
            raise ValueError("duplicate tags in tagset")

    def __len__(self) -> int:
        return len(self.tags)

    def id(self, tag: str) -> int:
        return self.tags.index(tag)

    @classmethod
    def for_tagmap(cls, tagmap: dict[str, str]) -> "Tagset":
        """The universal tagset when it covers every target, else targets in first-seen order."""
        targets = list(dict.fromkeys(tagmap.values()))
        if set(targets) <= set(UNIVERSAL_TAGS):
            return cls()
        return cls(tuple(targets))


@dataclass
class TaggedSentence:
    tokens: list[str]
    tags: list[int]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.tags):
            raise ValueError("tokens and tags differ in length")


def load_tagmap(path: str | Path) -> dict[str, str]:
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not all(parts):
                raise ParseError("expected 'original<TAB>universal'", lineno, path)
            mapping[parts[0]] = parts[1]
    if not mapping:
        raise DataError(f"{path}: empty tag map")
    return mapping


def load_conll(
    path: str | Path, tagmap: dict[str, str] | None = None, tagset: Tagset | None = None
) -> list[TaggedSentence]:
    """Read ``token<TAB>tag`` lines with blank lines between sentences.

    Tags pass through ``tagmap`` (identity when None) and are converted to
    ids of ``tagset`` (derived from the map, or universal, when None).
    """
    if tagset is None:
        tagset = Tagset.for_tagmap(tagmap) if tagmap else Tagset()
    index = {t: i for i, t in enumerate(tagset.tags)}
    sentences: list[TaggedSentence] = []
    tokens: list[str] = []
    tags: list[int] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                if tokens:
                    sentences.append(TaggedSentence(tokens, tags))
                    tokens, tags = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ParseError(f"ragged columns: expected 'token<TAB>tag', got {len(parts)} fields", lineno, path)
            tok, tag = parts
            if tagmap is not None:
                if tag not in tagmap:
                    raise DataError(f"unmapped tag {tag} at line {lineno}")
                tag = tagmap[tag]
            if tag not in index:
                raise DataError(f"tag {tag} at line {lineno} is not in the tagset")
            tokens.append(tok)
            tags.append(index[tag])
    if tokens:
        sentences.append(TaggedSentence(tokens, tags))
    if not sentences:
        raise DataError(f"{path}: no tagged sentences")
    return sentences


def read_conll_tokens(path: str | Path) -> list[list[str]]:
    """Token column of a labeled file, one list per sentence; tags are ignored."""
    sentences: list[list[str]] = []
    current: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            field0 = line.rstrip("\n").split("\t")[0]
            if field0.strip():
                current.append(field0)
            elif current:
                sentences.append(current)
                current = []
    if current:
        sentences.append(current)
    return sentences


def write_conll(path: str | Path, sentences: Sequence[Sequence[str]], tags: Sequence[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for toks, tgs in zip(sentences, tags):
            for tok, tag in zip(toks, tgs):
                f.write(f"{tok}\t{tag}\n")
            f.write("\n")


@dataclass
class TaggerConfig:
    n: int = 2
    hidden: int = 300
    lr: float = 0.3
    batch_size: int = 16
    fine_tune_embeddings: bool = True
    fan_in: bool = True
    epochs: int = 20
    patience: int = 5
    seed: int = 0
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.n < 0 or self.hidden < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid tagger config {self}")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass
class TaggerParams:
    vocab: Vocabulary
    tagset: Tagset
    n: int
    C: np.ndarray  # (V, M), the tagger's own (possibly fine-tuned) embeddings
    W1: np.ndarray  # (hidden, (2n+1)M)
    b1: np.ndarray
    W2: np.ndarray  # (tags, hidden)
    b2: np.ndarray

    def copy(self) -> "TaggerParams":
        return TaggerParams(
            self.vocab, self.tagset, self.n, self.C.copy(), self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy()
        )

    def dense(self) -> list[np.ndarray]:
        return [self.C, self.W1, self.b1, self.W2, self.b2]

    def equals(self, other: "TaggerParams") -> bool:
        return (
            self.n == other.n
            and self.tagset == other.tagset
            and self.vocab.entries == other.vocab.entries
            and all(a.tobytes() == b.tobytes() for a, b in zip(self.dense(), other.dense()))
        )

    def save(self, path: str | Path) -> None:
        meta = {"n": self.n, "tags": list(self.tagset.tags), "format": "rankembed-tagger", "version": 1}
        with open(path, "wb") as f:
            np.savez(
                f,
                meta=np.array(json.dumps(meta)),
                tokens=np.array(self.vocab.tokens),
                counts=np.array([c for _, c in self.vocab.entries], dtype=np.int64),
                C=self.C,
                W1=self.W1,
                b1=self.b1,
                W2=self.W2,
                b2=self.b2,
            )

    @classmethod
    def load(cls, path: str | Path) -> "TaggerParams":
        try:
            z = np.load(path, allow_pickle=False)
            meta = json.loads(str(z["meta"]))
        except (ValueError, KeyError, OSError) as e:
            raise DataError(f"{path}: not a tagger model ({e})") from None
        if meta.get("format") != "rankembed-tagger":
            raise DataError(f"{path}: not a tagger model")
        vocab = Vocabulary([(str(t), int(c)) for t, c in zip(z["tokens"], z["counts"])])
        return cls(vocab, Tagset(tuple(meta["tags"])), meta["n"], z["C"], z["W1"], z["b1"], z["W2"], z["b2"])


def init_tagger(
    store: EmbeddingStore, tagset: Tagset, config: TaggerConfig, random_init: bool = False
) -> TaggerParams:
    """Fresh tagger weights on top of a copy of ``store``'s matrix.

    With ``random_init`` the embeddings are replaced by U[-0.5, 0.5] draws
    of the same shape (the no-pretraining baseline).
    """
    rng = np.random.default_rng([config.seed, 0])
    M = store.dim
    width = (2 * config.n + 1) * M
    r1 = 1.0 / np.sqrt(width)
    W1 = rng.uniform(-r1, r1, size=(config.hidden, width))
    r2 = 1.0 / np.sqrt(config.hidden)
    W2 = rng.uniform(-r2, r2, size=(len(tagset), config.hidden))
    if random_init:
        C = np.random.default_rng([config.seed, 5]).uniform(-0.5, 0.5, size=store.matrix.shape)
    else:
        C = np.array(store.matrix, dtype=np.float64, copy=True)
    return TaggerParams(
        store.vocab, tagset, config.n, C, W1, np.zeros(config.hidden), W2, np.zeros(len(tagset))
    )


def encode_tokens(tokens: Sequence[str], vocab: Vocabulary, normalize: bool = True) -> list[int]:
    """Token ids for tagging; anything outside the regular vocabulary is UNK."""
    out = []
    for tok in tokens:
        i = vocab.index.get(normalize_token(tok) if normalize else tok, UNK_ID)
        out.append(i if i >= NUM_SPECIALS else UNK_ID)
    return out


def build_features(C: np.ndarray, window: Sequence[int], n: int | None = None) -> np.ndarray:
    """Concatenation of the embedding rows of ``window`` (length ``(2n+1)*M``)."""
    ids = np.asarray(window, dtype=np.int64)
    if n is not None and len(ids) != 2 * n + 1:
        raise ValueError(f"window must have {2 * n + 1} ids")
    if ids.size and (ids.min() < 0 or ids.max() >= len(C)):
        raise ValueError(f"token id out of range [0, {len(C)})")
    return C[ids].reshape(-1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def tagger_forward(params: TaggerParams, features: np.ndarray) -> np.ndarray:
    """Tag probabilities for one feature vector or a ``(B, width)`` batch."""
    if features.shape[-1] != params.W1.shape[1]:
        raise ValueError(f"feature length {features.shape[-1]} != {params.W1.shape[1]}")
    A = np.tanh(features @ params.W1.T + params.b1)
    return _softmax(A @ params.W2.T + params.b2)


def nll_loss(probabilities: np.ndarray, gold: int) -> float:
    return float(-np.log(probabilities[gold]))


@dataclass
class TaggerGradients:
    C_rows: np.ndarray
    C_grad: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


def tagger_backward(
    params: TaggerParams, windows: np.ndarray, gold: np.ndarray
) -> tuple[float, TaggerGradients]:
    """Mean NLL over a ``(B, 2n+1)`` batch and its exact gradient."""
    windows = np.asarray(windows, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    B, L = windows.shape
    M = params.C.shape[1]
    F = params.C[windows].reshape(B, L * M)
    A = np.tanh(F @ params.W1.T + params.b1)
    logits = A @ params.W2.T + params.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(B), gold]))

    dlogits = np.exp(shifted - log_z[:, None])
    dlogits[np.arange(B), gold] -= 1.0
    dlogits /= B
    dW2 = dlogits.T @ A
    db2 = dlogits.sum(axis=0)
    dZ = (dlogits @ params.W2) * (1.0 - A * A)
    dW1 = dZ.T @ F
    db1 = dZ.sum(axis=0)
    dF = (dZ @ params.W1).reshape(B * L, M)
    rows, inv = np.unique(windows.reshape(-1), return_inverse=True)
    C_grad = np.zeros((len(rows), M))
    np.add.at(C_grad, inv, dF)
    return loss, TaggerGradients(rows, C_grad, dW1, db1, dW2, db2)


def sentence_windows(tokens: Sequence[str], params: TaggerParams, normalize: bool = True) -> np.ndarray:
    return context_windows(encode_tokens(tokens, params.vocab, normalize), params.n)


def _dataset(sentences: Sequence[TaggedSentence], params: TaggerParams, normalize: bool):
    windows = [sentence_windows(s.tokens, params, normalize) for s in sentences]
    width = 2 * params.n + 1
    X = np.concatenate(windows) if windows else np.empty((0, width), dtype=np.int64)
    y = np.asarray([t for s in sentences for t in s.tags], dtype=np.int64)
    return X, y


def predict_windows(params: TaggerParams, windows: np.ndarray, chunk: int = 4096) -> np.ndarray:
    out = []
    for start in range(0, len(windows), chunk):
        w = windows[start : start + chunk]
        F = params.C[w].reshape(len(w), -1)
        A = np.tanh(F @ params.W1.T + params.b1)
        # argmax keeps the first (lowest) tag id on ties
        out.append(np.argmax(A @ params.W2.T + params.b2, axis=1))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def tag_sentence(params: TaggerParams, sentence: Sequence[str], normalize: bool = True) -> list[int]:
    if not sentence:
        return []
    return [int(t) for t in predict_windows(params, sentence_windows(sentence, params, normalize))]


@dataclass
class EvalReport:
    known_correct: int
    known_total: int
    unknown_correct: int
    unknown_total: int

    @property
    def total(self) -> int:
        return self.known_total + self.unknown_total

    @property
    def accuracy_all(self) -> float:
        return (self.known_correct + self.unknown_correct) / self.total if self.total else 0.0

    @property
    def accuracy_known(self) -> float:
        return self.known_correct / self.known_total if self.known_total else 0.0

    @property
    def accuracy_unknown(self) -> float:
        return self.unknown_correct / self.unknown_total if self.unknown_total else 0.0

    def as_dict(self) -> dict:
        return {
            **asdict(self),
            "accuracy_all": self.accuracy_all,
            "accuracy_known": self.accuracy_known,
            "accuracy_unknown": self.accuracy_unknown,
        }


def evaluate(params: TaggerParams, sentences: Sequence[TaggedSentence], normalize: bool = True) -> EvalReport:
    """Accuracy split by whether each token's normalized form is in the embedding vocabulary."""
    if not sentences:
        raise DataError("empty test set")
    X, y = _dataset(sentences, params, normalize)
    pred = predict_windows(params, X)
    known = X[:, params.n] != UNK_ID
    correct = pred == y
    return EvalReport(
        known_correct=int((correct & known).sum()),
        known_total=int(known.sum()),
        unknown_correct=int((correct & ~known).sum()),
        unknown_total=int((~known).sum()),
    )


def _accuracy(params: TaggerParams, X: np.ndarray, y: np.ndarray) -> float:
    return float((predict_windows(params, X) == y).mean())


@dataclass
class TaggerRun:
    params: TaggerParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def train_tagger(
    store: EmbeddingStore,
    train_sentences: Sequence[TaggedSentence],
    tagset: Tagset,
    config: TaggerConfig,
    dev_sentences: Sequence[TaggedSentence] | None = None,
    random_init: bool = False,
) -> TaggerRun:
    """Minibatch SGD on the mean NLL with fan-in scaled rates.

    Out-of-vocabulary training tokens stay UNK. Keeps the parameters with
    the best dev accuracy (training accuracy when no dev set is given) and
    stops after ``patience`` epochs without improvement.
    """
    if not train_sentences:
        raise DataError("empty training data")
    params = init_tagger(store, tagset, config, random_init)
    X, y = _dataset(train_sentences, params, config.normalize)
    if dev_sentences:
        Xd, yd = _dataset(dev_sentences, params, config.normalize)
    else:
        Xd, yd = X, y
    width = params.W1.shape[1]
    if config.fan_in:
        r_C, r_1, r_2 = config.lr, config.lr / width, config.lr / config.hidden
    else:
        r_C = r_1 = r_2 = config.lr

    run = TaggerRun(params.copy())
    best_acc = _accuracy(params, Xd, yd)
    run.history.append({"epoch": 0, "train_loss": None, "dev_accuracy": best_acc})
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, 1, epoch]).permutation(len(X))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, g = tagger_backward(params, X[idx], y[idx])
            if not np.isfinite(loss) or not all(np.isfinite(t).all() for t in (g.W1, g.W2, g.C_grad)):
                raise DivergenceError(f"divergence: non-finite tagger loss in epoch {epoch}")
            total += loss * len(idx)
            if config.fine_tune_embeddings:
                params.C[g.C_rows] -= r_C * g.C_grad
            params.W1 -= r_1 * g.W1
            params.b1 -= r_1 * g.b1
            params.W2 -= r_2 * g.W2
            params.b2 -= r_2 * g.b2
        acc = _accuracy(params, Xd, yd)
        run.history.append({"epoch": epoch, "train_loss": total / len(X), "dev_accuracy": acc})
        log.info("epoch %d train_nll=%.4f dev_acc=%.4f", epoch, total / len(X), acc)
        if acc > best_acc:
            best_acc, stale = acc, 0
            run.params = params.copy()
            run.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    return run


def config_dict(config: TaggerConfig) -> dict:
    return asdict(config)
