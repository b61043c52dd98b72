"""Synthetic corpora for desk-scale experiments.

``template_corpus`` fills sentence templates whose slots accept either a
color word or a city word, never both, so a working embedding model must
separate the two classes. ``tagged_template_corpus`` emits the same kind of
sentences with universal tags, and ``deterministic_tagged_corpus`` produces
random word sequences whose tag is a fixed function of the word.
"""

from __future__ import annotations

import numpy as np

from .tagger import UNIVERSAL_TAGS, TaggedSentence, Tagset

COLORS = (
    "red", "blue", "green", "yellow", "purple", "orange", "pink", "brown", "black", "white",
    "gray", "violet", "indigo", "crimson", "scarlet", "teal", "beige", "maroon", "olive", "navy",
)
CITIES = (
    "Paris", "London", "Berlin", "Madrid", "Rome", "Vienna", "Prague", "Warsaw", "Lisbon", "Dublin",
    "Oslo", "Athens", "Cairo", "Tokyo", "Seoul", "Lima", "Quito", "Nairobi", "Delhi", "Sydney",
)
NOUNS = ("car", "house", "door", "shirt", "boat", "chair", "wall", "bike", "hat", "lamp")
PEOPLE = ("he", "she", "they", "we")

# (tokens, tags); "{color}" / "{city}" / "{noun}" / "{pron}" are slots
TEMPLATES = (
    ("the {noun} is {color} .", "DET NOUN VERB ADJ ."),
    ("{pron} painted the {noun} {color} .", "PRON VERB DET NOUN ADJ ."),
    ("a {color} {noun} was sold yesterday .", "DET ADJ NOUN VERB VERB ADV ."),
    ("{pron} bought a {color} {noun} .", "PRON VERB DET ADJ NOUN ."),
    ("{pron} lives in {city} .", "PRON VERB ADP NOUN ."),
    ("{pron} flew from {city} to {city} .", "PRON VERB ADP NOUN ADP NOUN ."),
    ("the mayor of {city} resigned .", "DET NOUN ADP NOUN VERB ."),
    ("{city} is a large city .", "NOUN VERB DET ADJ NOUN ."),
    ("the {noun} from {city} is {color} .", "DET NOUN ADP NOUN VERB ADJ ."),
    ("{pron} moved to {city} with a {color} {noun} .", "PRON VERB ADP NOUN ADP DET ADJ NOUN ."),
)

# Tagged corpora only: the slot takes a color (ADJ) or a city (NOUN) in the
# same context, so only the word itself tells the tags apart.
AMBIGUOUS_TEMPLATES = (("{pron} said {either} again .", "PRON VERB * ADV ."),)


def _letters(k: int) -> str:
    out = ""
    while True:
        k, r = divmod(k, 26)
        out = chr(ord("a") + r) + out
        if k == 0:
            return out
        k -= 1


def _weights(k: int, zipf: float) -> np.ndarray:
    w = 1.0 / np.arange(1, k + 1) ** zipf
    return w / w.sum()


def _fill(template: str, tags: str, rng: np.random.Generator, zipf: float) -> tuple[list[str], list[str]]:
    pools = {"{color}": COLORS, "{city}": CITIES, "{noun}": NOUNS, "{pron}": PEOPLE}
    words, out_tags = [], []
    for slot, tag in zip(template.split(), tags.split()):
        if slot == "{either}":
            slot, tag = ("{color}", "ADJ") if rng.random() < 0.5 else ("{city}", "NOUN")
        pool = pools.get(slot)
        if pool is None:
            words.append(slot)
        else:
            w = _weights(len(pool), zipf) if pool in (COLORS, CITIES) else None
            words.append(pool[rng.choice(len(pool), p=w)])
        out_tags.append(tag)
    return words, out_tags


def template_corpus(num_sentences: int, seed: int = 0, zipf: float = 0.0) -> list[list[str]]:
    """Untagged sentences; class words sampled with Zipf exponent ``zipf`` (0 = uniform)."""
    return [s for s, _ in _tagged_pairs(num_sentences, seed, zipf)]


def _tagged_pairs(num_sentences: int, seed: int, zipf: float, templates=TEMPLATES):
    rng = np.random.default_rng(seed)
    for _ in range(num_sentences):
        template, tags = templates[rng.integers(len(templates))]
        yield _fill(template, tags, rng, zipf)


def tagged_template_corpus(num_sentences: int, seed: int = 0, zipf: float = 1.0) -> list[TaggedSentence]:
    """Tagged sentences from the shared templates plus the word-identity template."""
    tagset = Tagset()
    return [
        TaggedSentence(words, [tagset.id(t) for t in tags])
        for words, tags in _tagged_pairs(num_sentences, seed, zipf, TEMPLATES + AMBIGUOUS_TEMPLATES)
    ]


def deterministic_tagged_corpus(
    num_sentences: int, num_words: int = 200, seed: int = 0, min_len: int = 5, max_len: int = 15
) -> tuple[list[TaggedSentence], dict[str, int]]:
    """Random word sequences where the ``k``-th word always carries tag ``k mod 12``.

    Words are letter-only (``"wa"``, ``"wb"``, ...) so normalization leaves them intact.
    """
    rng = np.random.default_rng(seed)
    words = ["w" + _letters(k) for k in range(num_words)]
    tag_of = {w: k % len(UNIVERSAL_TAGS) for k, w in enumerate(words)}
    p = _weights(num_words, 0.5)
    sentences = []
    for _ in range(num_sentences):
        length = int(rng.integers(min_len, max_len + 1))
        toks = [words[i] for i in rng.choice(num_words, size=length, p=p)]
        sentences.append(TaggedSentence(toks, [tag_of[t] for t in toks]))
    return sentences, tag_of
