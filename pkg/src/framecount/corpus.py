"""Tokenization, vocabulary construction and top-percentile post trimming."""

from __future__ import annotations

import csv
import io
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from framecount.ingest import Post

DEFAULT_MIN_LENGTH = 3
DEFAULT_MIN_DF = 2

_APOSTROPHES = re.compile(r"['’ʼ]")


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """Read one stopword per line; ``None`` loads the bundled English list."""
    if path is None:
        text = resources.files("framecount").joinpath("data/stopwords_en.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip() and not w.startswith("#"))


@dataclass(frozen=True)
class NormalizationRules:
    stopwords: frozenset[str] = field(default_factory=load_stopwords)
    min_length: int = DEFAULT_MIN_LENGTH


def tokenize_normalize(text: str, rules: NormalizationRules | None = None) -> list[str]:
    """Lowercase, strip punctuation and digits, drop short words and stopwords.

    Apostrophes are deleted inside words ("don't" -> "dont"); every other
    non-letter character separates tokens. Token order is preserved.
    """
    rules = rules or NormalizationRules()
    text = _APOSTROPHES.sub("", text.lower())
    letters = "".join(c if c.isalpha() else " " for c in text)
    return [
        tok
        for tok in letters.split()
        if len(tok) >= rules.min_length and tok not in rules.stopwords
    ]


class Vocabulary:
    """Bijective token <-> index map with lexicographic index order."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: tuple[str, ...] = tuple(sorted(set(tokens)))
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocabulary({len(self)} tokens)"

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        """Map tokens to indices, dropping out-of-vocabulary tokens."""
        return tuple(self.index[t] for t in tokens if t in self.index)

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in indices]

    def to_text(self) -> str:
        return "".join(f"{tok}\n" for tok in self.tokens)

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        tokens = text.splitlines()
        vocab = cls(tokens)
        if list(vocab.tokens) != tokens:
            raise ValueError("vocabulary file is not sorted and duplicate-free")
        return vocab


def build_vocabulary(docs: Iterable[Sequence[str]], min_df: int = DEFAULT_MIN_DF) -> Vocabulary:
    """Keep tokens that occur in at least ``min_df`` documents."""
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df = Counter()
    for doc in docs:
        df.update(set(doc))
    vocab = Vocabulary(tok for tok, n in df.items() if n >= min_df)
    if not len(vocab):
        raise ValueError("empty vocabulary")
    return vocab


@dataclass(frozen=True)
class Document:
    post_id: str
    tokens: tuple[int, ...]
    parsable: bool

    def __post_init__(self):
        if self.parsable and not self.tokens:
            raise ValueError(f"parsable document {self.post_id} has no tokens")


def build_corpus(
    texts: Sequence[tuple[str, str, bool]],
    rules: NormalizationRules | None = None,
    min_df: int = DEFAULT_MIN_DF,
) -> tuple[list[Document], Vocabulary]:
    """Turn ``(post_id, text, parsable)`` triples into indexed documents.

    The vocabulary is built from parsable texts only. A parsable text left
    with no in-vocabulary tokens becomes an unparsable document.
    """
    tokenized = [(pid, tokenize_normalize(text, rules), ok) for pid, text, ok in texts]
    vocab = build_vocabulary((toks for _, toks, ok in tokenized if ok), min_df)
    docs = []
    for pid, toks, ok in tokenized:
        ids = vocab.encode(toks) if ok else ()
        docs.append(Document(pid, ids, ok and bool(ids)))
    return docs, vocab


def write_corpus(docs: Iterable[Document], vocab: Vocabulary) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["post_id", "parsable", "tokens"])
    for doc in docs:
        writer.writerow([doc.post_id, int(doc.parsable), " ".join(vocab.decode(doc.tokens))])
    return buf.getvalue()


def read_corpus(text: str, vocab: Vocabulary) -> list[Document]:
    docs = []
    for row in csv.DictReader(io.StringIO(text)):
        tokens = row["tokens"].split()
        unknown = [t for t in tokens if t not in vocab]
        if unknown:
            raise ValueError(f"document {row['post_id']}: tokens not in vocabulary: {unknown[:3]}")
        docs.append(Document(row["post_id"], vocab.encode(tokens), row["parsable"] == "1"))
    return docs


# ---------------------------------------------------------------------------
# trimming
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrimReport:
    n_before: int
    n_removed: int
    threshold_value: int | None

    @property
    def n_after(self) -> int:
        return self.n_before - self.n_removed


def _id_key(post_id: str):
    # numeric ids compare as numbers, anything else as text after them
    return (0, int(post_id), "") if post_id.isascii() and post_id.isdigit() else (1, 0, post_id)


def trim_top_percentile(posts: Sequence[Post], percentile: float) -> tuple[list[Post], TrimReport]:
    """Drop the ``floor(percentile * N)`` most reshared posts.

    Among equal reshare counts the post with the higher id goes first.
    Survivors keep their input order. ``threshold_value`` is the smallest
    reshare count among removed posts (``None`` when nothing is removed).
    """
    if not 0 <= percentile < 1:
        raise ValueError("percentile must be in [0, 1)")
    n = len(posts)
    n_remove = math.floor(Decimal(str(percentile)) * n)
    ranked = sorted(
        range(n),
        key=lambda i: (posts[i].reshare_count, _id_key(posts[i].id)),
        reverse=True,
    )
    removed = set(ranked[:n_remove])
    survivors = [p for i, p in enumerate(posts) if i not in removed]
    threshold = min((posts[i].reshare_count for i in removed), default=None)
    return survivors, TrimReport(n, n_remove, threshold)
