"""Count-based text embeddings: bag-of-words and TF-IDF.

Text goes through a fixed pipeline before counting: lowercase, strip
punctuation, split on whitespace, drop stopwords, lemmatize with a small
suffix-rule lemmatizer. Reviews are vectorized one at a time and then
averaged per product.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import EmbeddingMatrix, Product, Source
from .errors import ValidationError

_APOSTROPHES = re.compile(r"['’`]")
_NON_WORD = re.compile(r"[^a-z0-9]+")
_VOWELS = set("aeiou")


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset:
    text = resources.files("embedchoice").joinpath("resources/stopwords_en.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def load_stopwords(path) -> frozenset:
    """Read a stopword file with one token per line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    words = set()
    for line in lines:
        words.update(_normalize(line))
    return frozenset(words)


def _normalize(text: str) -> list:
    text = _APOSTROPHES.sub("", text.lower())
    return _NON_WORD.sub(" ", text).split()


def _is_cvc(stem: str) -> bool:
    a, b, c = stem[-3:]
    return a not in _VOWELS and b in _VOWELS and c not in _VOWELS and c not in "wxy"


def _strip_verb_suffix(word: str, stem: str) -> str:
    if len(stem) < 3 or not any(ch in _VOWELS for ch in stem):
        return word
    if len(stem) >= 4 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS and stem[-1] not in "lsz":
        return stem[:-1]
    if len(stem) == 3 and _is_cvc(stem):
        return stem + "e"
    return stem


def lemmatize(word: str) -> str:
    """Reduce a lowercase token with a handful of English suffix rules.

    Handles plural -s/-es/-ies and verbal -ing/-ed, undoubling final
    consonants (running -> run) and restoring a silent e (making -> make).
    Tokens of three characters or fewer and tokens with digits are returned
    unchanged.
    """
    if len(word) <= 3 or not word.isalpha():
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith(("ches", "shes", "xes", "zzes")):
        return word[:-2]
    if word.endswith("ing"):
        return _strip_verb_suffix(word, word[:-3])
    if word.endswith("ed"):
        return _strip_verb_suffix(word, word[:-2])
    if word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


def preprocess(text: str, stopwords: Iterable[str] | None = None) -> list:
    """Tokenize ``text`` into lemmatized, stopword-free tokens."""
    stop = default_stopwords() if stopwords is None else {t for w in stopwords for t in _normalize(w)}
    return [lemmatize(tok) for tok in _normalize(text) if tok not in stop]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary tokens must be unique")
        if any(not t or t != t.lower() for t in tokens):
            raise ValidationError("vocabulary tokens must be nonempty and lowercase")
        if list(tokens) != sorted(tokens):
            raise ValidationError("vocabulary must be in lexicographic order")
        object.__setattr__(self, "tokens", tokens)

    @classmethod
    def from_documents(cls, documents: Iterable[Sequence[str]]) -> "Vocabulary":
        return cls(tuple(sorted({tok for doc in documents for tok in doc})))

    @property
    def index(self) -> dict:
        return {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)


def count_matrix(documents: Sequence[Sequence[str]], vocab: Vocabulary) -> np.ndarray:
    index = vocab.index
    counts = np.zeros((len(documents), len(vocab)))
    for i, doc in enumerate(documents):
        for tok in doc:
            k = index.get(tok)
            if k is not None:
                counts[i, k] += 1.0
    return counts


def tfidf_weights(counts: np.ndarray) -> np.ndarray:
    """Smoothed-idf TF-IDF with L2-normalized rows; all-zero rows stay zero."""
    n_docs = counts.shape[0]
    df = (counts > 0).sum(axis=0)
    idf = 1.0 + np.log((1.0 + n_docs) / (1.0 + df))
    weighted = counts * idf
    norms = np.sqrt((weighted**2).sum(axis=1, keepdims=True))
    return np.divide(weighted, norms, out=np.zeros_like(weighted), where=norms > 0)


def _vectorize(corpus: Mapping[str, Sequence[str]], kind: str, source: Source) -> EmbeddingMatrix:
    if not corpus:
        raise ValidationError("corpus is empty")
    ids = list(corpus)
    docs = [list(corpus[pid]) for pid in ids]
    vocab = Vocabulary.from_documents(docs)
    if len(vocab) == 0:
        raise ValidationError("empty vocabulary: every document is empty after preprocessing")
    counts = count_matrix(docs, vocab)
    values = counts if kind == "bow" else tfidf_weights(counts)
    return EmbeddingMatrix(source, tuple(ids), values, vocab.tokens)


def bow_vectorize(corpus: Mapping[str, Sequence[str]], source: Source | None = None) -> EmbeddingMatrix:
    """Count vectors over the lexicographic corpus vocabulary."""
    return _vectorize(corpus, "bow", source or Source("description", "bow"))


def tfidf_vectorize(corpus: Mapping[str, Sequence[str]], source: Source | None = None) -> EmbeddingMatrix:
    return _vectorize(corpus, "tfidf", source or Source("description", "tfidf"))


def average_review_embedding(per_review_vectors) -> np.ndarray:
    vectors = [np.asarray(v, dtype=np.float64) for v in per_review_vectors]
    if not vectors:
        raise ValidationError("product has no reviews")
    if len({v.shape for v in vectors}) != 1:
        raise ValidationError("review vectors must share one length")
    return np.mean(np.stack(vectors), axis=0)


def featurize(
    catalog: Sequence[Product],
    data_type: str,
    kind: str = "bow",
    stopwords: Iterable[str] | None = None,
) -> tuple:
    """Build a count-model embedding for one text source of the catalog.

    Every review is its own document, both for the vocabulary and for
    document frequencies; a product's row is the mean of its review rows.

    Returns:
        (EmbeddingMatrix, Vocabulary)
    """
    if kind not in ("bow", "tfidf"):
        raise ValidationError(f"unknown featurizer {kind!r}")
    if data_type not in ("title", "description", "reviews"):
        raise ValidationError(f"cannot featurize data type {data_type!r}")
    stop = default_stopwords() if stopwords is None else stopwords
    owners, docs = [], []
    for p in catalog:
        if data_type == "reviews":
            if not p.reviews:
                raise ValidationError(f"product {p.id!r}: product has no reviews")
            texts = p.reviews
        else:
            texts = [p.title if data_type == "title" else p.description]
        for t in texts:
            owners.append(p.id)
            docs.append(preprocess(t, stop))
    vocab = Vocabulary.from_documents(docs)
    if len(vocab) == 0:
        raise ValidationError("empty vocabulary: every document is empty after preprocessing")
    counts = count_matrix(docs, vocab)
    weights = counts if kind == "bow" else tfidf_weights(counts)
    rows = []
    for p in catalog:
        rows.append(average_review_embedding([w for w, o in zip(weights, owners) if o == p.id]))
    emb = EmbeddingMatrix(Source(data_type, kind), tuple(p.id for p in catalog), np.array(rows), vocab.tokens)
    return emb, vocab

