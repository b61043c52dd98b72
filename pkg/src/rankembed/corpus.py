"""Text normalization, vocabulary building, window generation and coverage.

Sentences are plain lists of token strings. Encoded sentences are lists
(or int arrays) of vocabulary ids with no boundary or padding ids.
"""

from __future__ import annotations

import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, ParseError

log = logging.getLogger(__name__)

UNK = "⟨UNK⟩"
S_OPEN = "⟨S⟩"
S_CLOSE = "⟨/S⟩"
PAD = "⟨PAD⟩"
SPECIALS = (UNK, S_OPEN, S_CLOSE, PAD)
UNK_ID, S_OPEN_ID, S_CLOSE_ID, PAD_ID = range(4)
NUM_SPECIALS = len(SPECIALS)

DEFAULT_MAX_SIZE = 100_000

_MID_TOKEN_SEPARATORS = frozenset("-()[]")


def normalize_token(token: str) -> str:
    """Replace decimal digits by ``#`` and drop mid-token hyphens/brackets.

    >>> normalize_token("1999")
    '####'
    >>> normalize_token("co-operate")
    'cooperate'
    """
    if not token:
        raise ValueError("cannot normalize an empty token")
    chars = ["#" if unicodedata.category(c) == "Nd" else c for c in token]
    if len(chars) > 2:
        inner = [c for c in chars[1:-1] if c not in _MID_TOKEN_SEPARATORS]
        chars = [chars[0], *inner, chars[-1]]
    out = "".join(chars)
    return out if out else token


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _split_punct(word: str) -> list[str]:
    start, end = 0, len(word)
    while start < end and _is_punct(word[start]):
        start += 1
    while end > start and _is_punct(word[end - 1]):
        end -= 1
    if start == end:
        # all punctuation, e.g. "..." or "--"
        return [word]
    return [*word[:start], word[start:end], *word[end:]]


def tokenize_line(line: str, *, pretokenized: bool = False, normalize: bool = True) -> list[str]:
    """Split a line into tokens.

    Whitespace separates words; leading and trailing punctuation characters
    become tokens of their own unless ``pretokenized`` is set.
    """
    tokens: list[str] = []
    for word in line.split():
        tokens.extend([word] if pretokenized else _split_punct(word))
    if normalize:
        tokens = [normalize_token(t) for t in tokens]
    return tokens


def read_sentences(
    path: str | Path, *, pretokenized: bool = False, normalize: bool = True
) -> Iterator[list[str]]:
    """Yield non-empty tokenized sentences from a one-sentence-per-line file."""
    with open(path, encoding="utf-8") as f:
        for line in f:
            tokens = tokenize_line(line, pretokenized=pretokenized, normalize=normalize)
            if tokens:
                yield tokens


@dataclass
class Vocabulary:
    """Ordered token/id mapping. Ids 0..3 are always the special tokens."""

    entries: list[tuple[str, int]]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if tuple(tok for tok, _ in self.entries[:NUM_SPECIALS]) != SPECIALS:
            raise DataError(f"vocabulary must start with the special tokens {SPECIALS}")
        self.index = {}
        for i, (tok, count) in enumerate(self.entries):
            if tok in self.index:
                raise DataError(f"duplicate vocabulary token {tok!r}")
            if count < 0:
                raise DataError(f"negative count for {tok!r}")
            self.index[tok] = i

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        """Vocabulary over the given non-special tokens, in order, with zero counts."""
        return cls([(t, 0) for t in SPECIALS] + [(t, 0) for t in tokens])

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def tokens(self) -> list[str]:
        return [tok for tok, _ in self.entries]

    @property
    def num_regular(self) -> int:
        return len(self.entries) - NUM_SPECIALS

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def is_known(self, token: str) -> bool:
        i = self.index.get(token)
        return i is not None and i >= NUM_SPECIALS

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"#vocab {len(self)}\n")
            for tok, count in self.entries:
                f.write(f"{tok}\t{count}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise DataError(f"{path}: empty vocabulary file")
        header = lines[0].split()
        if len(header) != 2 or header[0] != "#vocab" or not header[1].isdigit():
            raise ParseError("expected header '#vocab <size>'", 1, path)
        size = int(header[1])
        entries = []
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].isdigit():
                raise ParseError("expected 'token<TAB>count'", lineno, path)
            entries.append((parts[0], int(parts[1])))
        if len(entries) != size:
            raise ParseError(f"header declares {size} entries, found {len(entries)}", 1, path)
        try:
            return cls(entries)
        except DataError as e:
            raise DataError(f"{path}: {e}") from None


def count_tokens(sentences: Iterable[Sequence[str]]) -> Counter:
    counts: Counter = Counter()
    for sent in sentences:
        counts.update(sent)
    return counts


def vocabulary_from_counts(counts: Counter, max_size: int = DEFAULT_MAX_SIZE) -> Vocabulary:
    """Keep the ``max_size`` most frequent tokens; ties go to the smaller UTF-8 byte string."""
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    if not counts:
        raise DataError("empty corpus")
    counts = Counter(counts)
    for special in SPECIALS:
        if special in counts:
            log.warning("dropping %d corpus occurrences of reserved token %s", counts[special], special)
            del counts[special]
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0].encode("utf-8")))
    return Vocabulary([(t, 0) for t in SPECIALS] + ranked[:max_size])


def build_vocabulary(sentences: Iterable[Sequence[str]], max_size: int = DEFAULT_MAX_SIZE) -> Vocabulary:
    """Count tokens and keep the most frequent ``max_size`` after the four specials.

    Counts from sharded workers can be merged with ``Counter.update`` and
    passed to :func:`vocabulary_from_counts` instead.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    return vocabulary_from_counts(count_tokens(sentences), max_size)


def encode_sentence(sentence: Sequence[str], vocab: Vocabulary) -> list[int]:
    """Map tokens to ids; unknown tokens and literal special surfaces become UNK."""
    out = []
    for tok in sentence:
        i = vocab.index.get(tok, UNK_ID)
        out.append(i if i >= NUM_SPECIALS else UNK_ID)
    return out


@dataclass(frozen=True)
class WindowExample:
    original: tuple[int, ...]
    corrupted: tuple[int, ...]

    @property
    def center_index(self) -> int:
        return len(self.original) // 2


def context_windows(ids: Sequence[int], n: int) -> np.ndarray:
    """All ``2n+1`` windows of ``<S> ids </S>`` centered on the real tokens.

    Returns an int64 array of shape ``(len(ids), 2n+1)``; slots past the
    bracketed sentence hold PAD.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    ids = np.asarray(ids, dtype=np.int64)
    padded = np.concatenate(
        [
            np.full(n, PAD_ID, dtype=np.int64),
            [S_OPEN_ID],
            ids,
            [S_CLOSE_ID],
            np.full(n, PAD_ID, dtype=np.int64),
        ]
    )
    if len(ids) == 0:
        return np.empty((0, 2 * n + 1), dtype=np.int64)
    view = np.lib.stride_tricks.sliding_window_view(padded, 2 * n + 1)
    # window k is centred on padded[k + n]; real tokens sit at n+1 .. n+len
    return view[1 : len(ids) + 1].copy()


def corrupt_centers(centers: np.ndarray, vocab_size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform replacement ids from the non-special range, redrawn while equal to the original."""
    if vocab_size - NUM_SPECIALS < 2:
        raise DataError("cannot corrupt: vocabulary needs at least 2 non-special entries")
    out = rng.integers(NUM_SPECIALS, vocab_size, size=len(centers))
    clash = out == centers
    while clash.any():
        out[clash] = rng.integers(NUM_SPECIALS, vocab_size, size=int(clash.sum()))
        clash = out == centers
    return out


def window_arrays(
    ids: Sequence[int],
    n: int,
    vocab_size: int,
    rng: np.random.Generator,
    *,
    allow_unk_centers: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`generate_windows`: ``(originals, corrupted)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if vocab_size - NUM_SPECIALS < 2:
        raise DataError("cannot corrupt: vocabulary needs at least 2 non-special entries")
    orig = context_windows(ids, n)
    centers = orig[:, n]
    keep = centers >= NUM_SPECIALS
    if allow_unk_centers:
        keep |= centers == UNK_ID
    orig = orig[keep]
    corrupted = orig.copy()
    corrupted[:, n] = corrupt_centers(orig[:, n], vocab_size, rng)
    return orig, corrupted


def generate_windows(
    sentence: Sequence[int],
    n: int,
    vocab: Vocabulary,
    rng: np.random.Generator,
    *,
    allow_unk_centers: bool = False,
) -> list[WindowExample]:
    """One (original, corrupted) window pair per real, non-UNK token."""
    orig, corrupted = window_arrays(sentence, n, len(vocab), rng, allow_unk_centers=allow_unk_centers)
    return [
        WindowExample(tuple(int(x) for x in o), tuple(int(x) for x in c))
        for o, c in zip(orig, corrupted)
    ]


@dataclass(frozen=True)
class SplitSpec:
    train: Fraction = Fraction(9, 10)
    dev: Fraction = Fraction(1, 20)
    test: Fraction = Fraction(1, 20)

    def __post_init__(self) -> None:
        for name in ("train", "dev", "test"):
            object.__setattr__(self, name, Fraction(getattr(self, name)).limit_denominator(10**9))
        if min(self.train, self.dev, self.test) < 0:
            raise ValueError("split fractions must be non-negative")
        if self.train + self.dev + self.test != 1:
            raise ValueError("split fractions must sum to 1")


def split_corpus(sentences: Iterable, spec: SplitSpec, rng: np.random.Generator) -> tuple[list, list, list]:
    """Assign each sentence to train/dev/test by an independent seeded draw."""
    train, dev, test = [], [], []
    lo, hi = float(spec.train), float(spec.train + spec.dev)
    for sent in sentences:
        u = rng.random()
        if u < lo:
            train.append(sent)
        elif u < hi:
            dev.append(sent)
        else:
            test.append(sent)
    return train, dev, test


@dataclass(frozen=True)
class CoverageStats:
    total_tokens: int
    covered_tokens: int
    total_word_types: int
    covered_word_types: int

    @property
    def token_coverage(self) -> float:
        return self.covered_tokens / self.total_tokens if self.total_tokens else 0.0

    @property
    def word_coverage(self) -> float:
        return self.covered_word_types / self.total_word_types if self.total_word_types else 0.0


def coverage_stats(sentences: Iterable[Sequence[str]], vocab: Vocabulary) -> CoverageStats:
    counts = count_tokens(sentences)
    covered = {t: c for t, c in counts.items() if vocab.is_known(t)}
    return CoverageStats(
        total_tokens=sum(counts.values()),
        covered_tokens=sum(covered.values()),
        total_word_types=len(counts),
        covered_word_types=len(covered),
    )
