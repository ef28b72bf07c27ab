"""Episodic/thematic topic labels and per-document content scores."""

from __future__ import annotations

import enum
from decimal import Decimal
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Aspect(str, enum.Enum):
    EPISODIC = "episodic"
    THEMATIC = "thematic"
    UNPARSABLE = "unparsable"


class LabelingError(ValueError):
    pass


@dataclass(frozen=True)
class TopicLabeling:
    """One aspect per topic, indexed by 0-based topic number."""

    labels: tuple[Aspect, ...]

    @property
    def K(self) -> int:
        return len(self.labels)

    def topics(self, aspect: Aspect) -> list[int]:
        return [k for k, a in enumerate(self.labels) if a is aspect]

    def mask(self, aspect: Aspect) -> np.ndarray:
        return np.array([a is aspect for a in self.labels])

    def to_text(self) -> str:
        return "".join(f"{k},{a.value}\n" for k, a in enumerate(self.labels))


def load_labeling(text: str, K: int) -> TopicLabeling:
    """Parse ``topic_index,label`` lines into a complete labeling.

    Labels are case-insensitive. Blank lines, ``#`` comments and a
    ``topic_index,label`` header are ignored.
    """
    found: dict[int, Aspect] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise LabelingError(f"line {lineno}: expected 'index,label'")
        if parts[0].lower() == "topic_index":
            continue
        try:
            index = int(parts[0])
        except ValueError:
            raise LabelingError(f"line {lineno}: bad topic index {parts[0]!r}") from None
        try:
            aspect = Aspect(parts[1].lower())
        except ValueError:
            raise LabelingError(f"line {lineno}: unknown label {parts[1]!r}") from None
        if not 0 <= index < K:
            raise LabelingError(f"line {lineno}: topic index {index} outside 0..{K - 1}")
        if index in found:
            raise LabelingError(f"line {lineno}: duplicate topic index {index}")
        found[index] = aspect
    if len(found) != K:
        missing = sorted(set(range(K)) - set(found))
        raise LabelingError(f"incomplete labeling: missing topics {missing}")
    return TopicLabeling(tuple(found[k] for k in range(K)))


@dataclass(frozen=True)
class ContentScores:
    e: float
    t: float
    u: float


def score(theta_row: Sequence[float], labeling: TopicLabeling) -> ContentScores:
    """Sum a document's topic posteriors within each aspect.

    Sums run in decimal over each value's shortest round-trip form, so rows
    written as short decimals (0.1, 0.25, ...) add up exactly as written.
    """
    if len(theta_row) != labeling.K:
        raise LabelingError(f"labeling covers {labeling.K} topics, row has {len(theta_row)}")
    sums = {a: Decimal(0) for a in Aspect}
    for m, a in zip(theta_row, labeling.labels):
        sums[a] += Decimal(repr(float(m)))
    return ContentScores(
        float(sums[Aspect.EPISODIC]),
        float(sums[Aspect.THEMATIC]),
        float(sums[Aspect.UNPARSABLE]),
    )


def score_matrix(theta: np.ndarray, labeling: TopicLabeling) -> np.ndarray:
    """Scores for every row of ``theta`` as an ``(n, 3)`` array of (e, t, u)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2 or theta.shape[1] != labeling.K:
        raise LabelingError(f"labeling covers {labeling.K} topics, matrix has {theta.shape[-1]}")
    return np.array([[s.e, s.t, s.u] for s in (score(row, labeling) for row in theta)]).reshape(-1, 3)


# pages that resolved but carried no usable text contribute only unparsable mass
UNPARSABLE_SCORES = ContentScores(0.0, 0.0, 1.0)
