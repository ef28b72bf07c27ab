"""LDA topic model fitted by collapsed Gibbs sampling.

The sampler keeps the usual count tables (document-topic, topic-word and topic
totals) and resamples every token from its full conditional with the token
itself removed. Uniform variates come from a seeded numpy ``Generator`` and are
handed to a compiled sweep kernel, so a fit is bit-reproducible for a given
seed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from framecount.corpus import Document

DEFAULT_BETA = 0.01
DEFAULT_SWEEPS = 2000
DEFAULT_BURN_IN = 500
DEFAULT_THIN = 10


@njit(cache=True)
def _gibbs_sweep(doc_ids, word_ids, z, ndk, nkw, nk, alpha, beta, vbeta, u):
    n_topics = nk.shape[0]
    cum = np.empty(n_topics)
    for i in range(doc_ids.shape[0]):
        d = doc_ids[i]
        w = word_ids[i]
        k = z[i]
        ndk[d, k] -= 1
        nkw[k, w] -= 1
        nk[k] -= 1
        total = 0.0
        for j in range(n_topics):
            total += (ndk[d, j] + alpha) * (nkw[j, w] + beta) / (nk[j] + vbeta)
            cum[j] = total
        r = u[i] * total
        k = 0
        while k < n_topics - 1 and cum[k] <= r:
            k += 1
        z[i] = k
        ndk[d, k] += 1
        nkw[k, w] += 1
        nk[k] += 1


@njit(cache=True)
def _fold_in(word_ids, phi, alpha, sweeps, burn_in, z, u):
    # Gibbs on a single document with topic-word distributions held fixed
    n_topics = phi.shape[0]
    n = word_ids.shape[0]
    ndk = np.zeros(n_topics)
    for i in range(n):
        ndk[z[i]] += 1
    cum = np.empty(n_topics)
    theta = np.zeros(n_topics)
    kept = 0
    pos = 0
    for s in range(sweeps):
        for i in range(n):
            w = word_ids[i]
            ndk[z[i]] -= 1
            total = 0.0
            for j in range(n_topics):
                total += (ndk[j] + alpha) * phi[j, w]
                cum[j] = total
            r = u[pos] * total
            pos += 1
            k = 0
            while k < n_topics - 1 and cum[k] <= r:
                k += 1
            z[i] = k
            ndk[k] += 1
        if s >= burn_in:
            theta += (ndk + alpha) / (n + n_topics * alpha)
            kept += 1
    return theta / kept


@dataclass
class GibbsState:
    z: np.ndarray
    n_dk: np.ndarray
    n_kw: np.ndarray
    n_k: np.ndarray

    def check(self, doc_ids: np.ndarray, word_ids: np.ndarray) -> None:
        """Raise ``AssertionError`` if the count tables disagree with ``z``."""
        n_dk = np.zeros_like(self.n_dk)
        n_kw = np.zeros_like(self.n_kw)
        np.add.at(n_dk, (doc_ids, self.z), 1)
        np.add.at(n_kw, (self.z, word_ids), 1)
        assert (n_dk == self.n_dk).all(), "n_dk inconsistent with z"
        assert (n_kw == self.n_kw).all(), "n_kw inconsistent with z"
        assert (self.n_kw.sum(axis=1) == self.n_k).all(), "n_k inconsistent with n_kw"
        assert (self.n_dk >= 0).all() and (self.n_kw >= 0).all()


def _as_index_docs(docs) -> list[np.ndarray]:
    out = []
    for doc in docs:
        if isinstance(doc, Document):
            if not doc.parsable:
                raise ValueError(f"document {doc.post_id} is not parsable")
            doc = doc.tokens
        out.append(np.asarray(doc, dtype=np.int64))
    return out


class GibbsSampler:
    """A single collapsed Gibbs chain; not thread-safe, one chain per thread."""

    def __init__(self, docs, n_topics: int, n_words: int, alpha: float, beta: float, seed: int):
        arrays = _as_index_docs(docs)
        self.n_topics = n_topics
        self.n_words = n_words
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.doc_lengths = np.array([len(a) for a in arrays], dtype=np.int64)
        self.doc_ids = np.repeat(np.arange(len(arrays), dtype=np.int64), self.doc_lengths)
        self.word_ids = np.concatenate(arrays) if arrays else np.zeros(0, dtype=np.int64)
        if self.word_ids.size and (self.word_ids.min() < 0 or self.word_ids.max() >= n_words):
            raise ValueError("token index outside vocabulary")
        self.rng = np.random.default_rng(seed)
        z = self.rng.integers(n_topics, size=self.word_ids.size).astype(np.int64)
        n_dk = np.zeros((len(arrays), n_topics), dtype=np.int64)
        n_kw = np.zeros((n_topics, n_words), dtype=np.int64)
        np.add.at(n_dk, (self.doc_ids, z), 1)
        np.add.at(n_kw, (z, self.word_ids), 1)
        self.state = GibbsState(z, n_dk, n_kw, n_kw.sum(axis=1))

    @property
    def n_tokens(self) -> int:
        return int(self.word_ids.size)

    def sweep(self) -> None:
        s = self.state
        u = self.rng.random(self.n_tokens)
        _gibbs_sweep(
            self.doc_ids, self.word_ids, s.z, s.n_dk, s.n_kw, s.n_k,
            self.alpha, self.beta, self.n_words * self.beta, u,
        )

    def theta(self) -> np.ndarray:
        s = self.state
        return (s.n_dk + self.alpha) / (self.doc_lengths[:, None] + self.n_topics * self.alpha)

    def phi(self) -> np.ndarray:
        s = self.state
        return (s.n_kw + self.beta) / (s.n_k[:, None] + self.n_words * self.beta)


@dataclass(frozen=True)
class TopicModel:
    """Fitted LDA posterior means. ``theta`` rows follow the input documents."""

    K: int
    alpha: float
    beta: float
    phi: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    seed: int = 0
    sweeps: int = 0
    burn_in: int = 0
    thin: int = DEFAULT_THIN
    vocab: tuple[str, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.phi, self.theta):
            arr.setflags(write=False)

    @property
    def V(self) -> int:
        return self.phi.shape[1]


def default_alpha(n_topics: int) -> float:
    return 50.0 / n_topics


def fit_lda(
    docs,
    K: int,
    alpha: float | None = None,
    beta: float = DEFAULT_BETA,
    sweeps: int = DEFAULT_SWEEPS,
    burn_in: int = DEFAULT_BURN_IN,
    seed: int = 0,
    thin: int = DEFAULT_THIN,
    n_words: int | None = None,
    vocab: Sequence[str] | None = None,
) -> TopicModel:
    """Fit LDA by collapsed Gibbs sampling.

    Parameters
    ----------
    docs : sequence of Document or sequence of int sequences
        Parsable documents as vocabulary indices.
    K : int
        Number of topics.
    alpha, beta : float
        Symmetric document-topic and topic-word priors; ``alpha`` defaults to
        ``50 / K``.
    sweeps, burn_in, thin : int
        Total sweeps, discarded initial sweeps, and the spacing of the
        post-burn-in sweeps averaged into the estimates. The final sweep is
        used if no sweep qualifies.
    n_words : int, optional
        Vocabulary size; taken from ``vocab`` or the largest index otherwise.

    Returns
    -------
    TopicModel
        Smoothed posterior means of ``theta`` (D x K) and ``phi`` (K x V).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    alpha = default_alpha(K) if alpha is None else float(alpha)
    if not sweeps > burn_in >= 0:
        raise ValueError("need sweeps > burn_in >= 0")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    if alpha <= 0 or beta <= 0:
        raise ValueError("priors must be positive")
    arrays = _as_index_docs(docs)
    if not arrays:
        raise ValueError("empty corpus")
    if any(len(a) == 0 for a in arrays):
        raise ValueError("empty document in corpus")
    if n_words is None:
        n_words = len(vocab) if vocab is not None else int(max(a.max() for a in arrays)) + 1
    sampler = GibbsSampler(arrays, K, n_words, alpha, beta, seed)
    if K > sampler.n_tokens:
        raise ValueError("underdetermined: K exceeds the total token count")

    theta_sum = np.zeros((len(arrays), K))
    phi_sum = np.zeros((K, n_words))
    kept = 0
    for s in range(1, sweeps + 1):
        sampler.sweep()
        if s > burn_in and (s - burn_in) % thin == 0:
            theta_sum += sampler.theta()
            phi_sum += sampler.phi()
            kept += 1
    if kept == 0:
        theta_sum, phi_sum, kept = sampler.theta(), sampler.phi(), 1
    theta = theta_sum / kept
    phi = phi_sum / kept
    theta /= theta.sum(axis=1, keepdims=True)
    phi /= phi.sum(axis=1, keepdims=True)
    return TopicModel(
        K=K, alpha=alpha, beta=float(beta), phi=phi, theta=theta, seed=seed,
        sweeps=sweeps, burn_in=burn_in, thin=thin,
        vocab=tuple(vocab) if vocab is not None else None,
    )


def doc_topic_matrix(model: TopicModel) -> np.ndarray:
    return model.theta


def held_out_perplexity(
    model: TopicModel,
    docs,
    fold_in_sweeps: int = 50,
    fold_in_burn_in: int = 10,
    seed: int = 0,
) -> float:
    """Perplexity of held-out documents under ``model``.

    Document completion: each document's topic proportions are estimated by
    Gibbs sampling its even-position tokens with ``phi`` fixed, and the
    odd-position tokens are scored (a one-token document is scored on its
    only token). Tokens outside the model vocabulary are dropped first.
    """
    if not fold_in_sweeps > fold_in_burn_in >= 0:
        raise ValueError("need fold_in_sweeps > fold_in_burn_in >= 0")
    arrays = []
    for doc in docs:
        tokens = doc.tokens if isinstance(doc, Document) else doc
        a = np.asarray(tokens, dtype=np.int64)
        a = a[(a >= 0) & (a < model.V)]
        if a.size:
            arrays.append(a)
    if not arrays:
        raise ValueError("held-out set is empty after vocabulary filtering")

    rng = np.random.default_rng(seed)
    phi = np.ascontiguousarray(model.phi, dtype=np.float64)
    log_lik = 0.0
    n_tokens = 0
    for a in arrays:
        observed, scored = (a[0::2], a[1::2]) if a.size > 1 else (a, a)
        z = rng.integers(model.K, size=observed.size).astype(np.int64)
        u = rng.random(observed.size * fold_in_sweeps)
        theta_d = _fold_in(observed, phi, model.alpha, fold_in_sweeps, fold_in_burn_in, z, u)
        log_lik += float(np.log(theta_d @ phi[:, scored]).sum())
        n_tokens += scored.size
    return math.exp(-log_lik / n_tokens)


@dataclass(frozen=True)
class LdaConfig:
    alpha: float | None = None
    beta: float = DEFAULT_BETA
    sweeps: int = DEFAULT_SWEEPS
    burn_in: int = DEFAULT_BURN_IN
    thin: int = DEFAULT_THIN
    seed: int = 0
    held_out_fraction: float = 0.1
    fold_in_sweeps: int = 50
    fold_in_burn_in: int = 10


def split_held_out(n_docs: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split into (train, held-out) index arrays."""
    if n_docs < 2:
        raise ValueError("need at least two documents to hold some out")
    n_held = min(n_docs - 1, max(1, int(round(fraction * n_docs))))
    order = np.random.default_rng(seed).permutation(n_docs)
    return np.sort(order[n_held:]), np.sort(order[:n_held])


def topic_count_perplexities(docs, candidates: Sequence[int], config: LdaConfig | None = None,
                             n_words: int | None = None) -> dict[int, float]:
    config = config or LdaConfig()
    if not candidates:
        raise ValueError("no candidate topic counts")
    docs = list(docs)
    if n_words is None:
        n_words = max(int(a.max()) for a in _as_index_docs(docs)) + 1
    train_idx, test_idx = split_held_out(len(docs), config.held_out_fraction, config.seed)
    train = [docs[i] for i in train_idx]
    test = [docs[i] for i in test_idx]
    scores = {}
    for k in sorted(set(candidates)):
        model = fit_lda(
            train, k, alpha=config.alpha, beta=config.beta, sweeps=config.sweeps,
            burn_in=config.burn_in, seed=config.seed, thin=config.thin, n_words=n_words,
        )
        scores[k] = held_out_perplexity(
            model, test, config.fold_in_sweeps, config.fold_in_burn_in, seed=config.seed
        )
    return scores


def select_topic_count(docs, candidates: Sequence[int], config: LdaConfig | None = None,
                       n_words: int | None = None) -> int:
    """Candidate K with the lowest held-out perplexity; ties go to the smaller K."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate topic counts")
    if len(set(candidates)) == 1:
        return candidates[0]
    scores = topic_count_perplexities(docs, candidates, config, n_words)
    best = None
    for k in sorted(scores):
        if best is None or scores[k] < scores[best]:
            best = k
    return best


def top_words(model: TopicModel, topic: int, n: int, vocab: Sequence[str] | None = None) -> list[str]:
    """The ``n`` most probable words of ``topic``; equal weights sort lexicographically."""
    vocab = vocab if vocab is not None else model.vocab
    if vocab is None:
        raise ValueError("model has no vocabulary; pass vocab")
    if not 0 <= topic < model.K:
        raise IndexError(f"topic {topic} out of range for K={model.K}")
    row = model.phi[topic]
    order = sorted(range(len(vocab)), key=lambda w: (-row[w], vocab[w]))
    return [vocab[w] for w in order[: max(0, n)]]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def format_exact(x: float) -> str:
    return repr(float(x))


def write_matrix(matrix: np.ndarray, prefix: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"{prefix}{j}" for j in range(matrix.shape[1])])
    for row in matrix:
        writer.writerow([format_exact(x) for x in row])
    return buf.getvalue()


def read_matrix(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise ValueError("matrix file has no data rows")
    return np.array([[float(x) for x in row] for row in rows[1:]], dtype=np.float64)


def write_topics(model: TopicModel, n: int = 15) -> str:
    return "".join(f"{k}: {' '.join(top_words(model, k, n))}\n" for k in range(model.K))
