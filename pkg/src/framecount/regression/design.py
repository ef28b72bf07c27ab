"""Model specifications and design matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from framecount.regression.covariates import CovariateRow

INTERCEPT = "(Intercept)"

MAIN_EFFECTS = (
    "party",
    "episodicity",
    "thematicity",
    "is_reshare",
    "time_of_day",
    "message_length",
    "sqrt_proximity",
)


class DesignError(ValueError):
    """Degenerate or rank-deficient design; ``term`` names the offending column."""

    def __init__(self, message: str, term: str | None = None):
        super().__init__(message if term is None else f"{message}: {term}")
        self.term = term


def interaction(a: str, b: str) -> str:
    return f"{a}:{b}"


@dataclass(frozen=True)
class ModelSpec:
    """Ordered main effects and pairwise interactions (written ``a:b``)."""

    terms: tuple[str, ...]
    intercept: bool = True
    offset: bool = True

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("duplicate terms in model spec")
        mains = set(self.main_effects)
        for term in self.interactions:
            parts = term.split(":")
            if len(parts) != 2 or parts[0] == parts[1]:
                raise ValueError(f"interaction {term!r} must join two distinct main effects")
            missing = [p for p in parts if p not in mains]
            if missing:
                raise ValueError(f"interaction {term!r} references undeclared main effect(s) {missing}")
        for term in self.main_effects:
            if term not in MAIN_EFFECTS:
                raise ValueError(f"unknown covariate {term!r}")

    @property
    def main_effects(self) -> list[str]:
        return [t for t in self.terms if ":" not in t]

    @property
    def interactions(self) -> list[str]:
        return [t for t in self.terms if ":" in t]

    @property
    def column_names(self) -> list[str]:
        return ([INTERCEPT] if self.intercept else []) + list(self.terms)

    def without(self, term: str) -> "ModelSpec":
        if term not in self.terms:
            raise KeyError(term)
        return ModelSpec(tuple(t for t in self.terms if t != term), self.intercept, self.offset)


FINAL_MODEL = ModelSpec(
    MAIN_EFFECTS
    + (
        "party:episodicity",
        "party:is_reshare",
        "party:time_of_day",
        "episodicity:sqrt_proximity",
        "thematicity:sqrt_proximity",
    )
)

# the final model plus the two party interactions expected to be dropped
FULL_MODEL = ModelSpec(
    MAIN_EFFECTS
    + (
        "party:episodicity",
        "party:thematicity",
        "party:is_reshare",
        "party:time_of_day",
        "party:message_length",
        "episodicity:sqrt_proximity",
        "thematicity:sqrt_proximity",
    )
)


@dataclass(frozen=True)
class Design:
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    offset: np.ndarray = field(repr=False)
    terms: tuple[str, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape


def _column(rows: Sequence[CovariateRow], term: str) -> np.ndarray:
    if ":" in term:
        a, b = term.split(":")
        return _column(rows, a) * _column(rows, b)
    return np.array([getattr(r, term) for r in rows], dtype=np.float64)


def build_design(rows: Sequence[CovariateRow], spec: ModelSpec) -> Design:
    """Assemble the design matrix, response and offset for ``spec``.

    Columns follow ``spec.column_names`` (intercept first). Raises
    :class:`DesignError` for a constant non-intercept column or a column that
    is linearly dependent on the ones before it.
    """
    if not rows:
        raise DesignError("no rows")
    n = len(rows)
    cols = [np.ones(n)] if spec.intercept else []
    for term in spec.terms:
        col = _column(rows, term)
        if np.ptp(col) == 0:
            raise DesignError("degenerate column", term)
        cols.append(col)
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    names = spec.column_names
    if X.shape[1] and np.linalg.matrix_rank(X) < X.shape[1]:
        # report the first column that adds no rank
        for j in range(1, X.shape[1] + 1):
            if np.linalg.matrix_rank(X[:, :j]) < j:
                raise DesignError("singular design", names[j - 1])
    y = np.array([r.y for r in rows], dtype=np.float64)
    offset = np.array([r.offset_log for r in rows], dtype=np.float64) if spec.offset else np.zeros(n)
    return Design(X, y, offset, tuple(names))
