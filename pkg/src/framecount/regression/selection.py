"""Likelihood-ratio tests, backward elimination and incidence-rate ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from framecount.regression.covariates import CovariateRow
from framecount.regression.design import ModelSpec, build_design
from framecount.regression.glm import RegressionFit, fit_negbin, fit_poisson

_EPS = 1e-16
_TINY = 1e-300


def _lower_series(a: float, x: float) -> float:
    # P(a, x) by its power series; converges fast for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_fraction(a: float, x: float) -> float:
    # Q(a, x) by the modified Lentz continued fraction; used for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_upper_gamma(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x) / Gamma(a) for a > 0, x >= 0."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _lower_series(a, x))
    return min(1.0, _upper_fraction(a, x))


def chi_square_upper_tail(x: float, df: int) -> float:
    """Upper-tail probability of a chi-square variable with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if x < 0:
        raise ValueError("statistic must be non-negative")
    return regularized_upper_gamma(df / 2.0, x / 2.0)


@dataclass(frozen=True)
class LRTestResult:
    df: int
    statistic: float
    p_value: float


def lr_test(small: RegressionFit, large: RegressionFit, df: int) -> LRTestResult:
    """Likelihood-ratio test of a restricted fit against a larger one."""
    if df < 1:
        raise ValueError("df must be >= 1")
    diff = large.log_likelihood - small.log_likelihood
    if diff < -1e-6:
        raise ValueError("not nested or not converged: larger model has lower log-likelihood")
    stat = max(0.0, 2.0 * diff)
    return LRTestResult(df, stat, chi_square_upper_tail(stat, df))


def incidence_rate_ratios(fit: RegressionFit) -> dict[str, float]:
    """``exp(beta)`` per term, in coefficient order."""
    return {term: math.exp(b) for term, b in zip(fit.terms, fit.coef)}


@dataclass(frozen=True)
class EliminationStep:
    step: int
    dropped_term: str
    test: LRTestResult
    ll_small: float
    ll_large: float


FITTERS: dict[str, Callable] = {"negbin": fit_negbin, "poisson": fit_poisson}


def fit_spec(rows: Sequence[CovariateRow], spec: ModelSpec, family: str = "negbin") -> RegressionFit:
    design = build_design(rows, spec)
    return FITTERS[family](design.X, design.y, design.offset, design.terms)


def backward_eliminate(
    rows: Sequence[CovariateRow],
    full_spec: ModelSpec,
    alpha: float = 0.05,
    family: str = "negbin",
) -> tuple[RegressionFit, list[EliminationStep]]:
    """Drop insignificant interactions one at a time.

    At each step every remaining interaction is LR-tested (df 1) against the
    current model; the one with the largest p-value is removed if that p
    exceeds ``alpha``. Main effects are never candidates. Returns the final
    fit and the removal trail in order.
    """
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    spec = full_spec
    current = fit_spec(rows, spec, family)
    trail: list[EliminationStep] = []
    while spec.interactions:
        best = None
        for term in spec.interactions:
            reduced = fit_spec(rows, spec.without(term), family)
            test = lr_test(reduced, current, 1)
            if best is None or test.p_value > best[1].p_value:
                best = (term, test, reduced)
        term, test, reduced = best
        if not test.p_value > alpha:
            break
        trail.append(EliminationStep(len(trail) + 1, term, test,
                                     reduced.log_likelihood, current.log_likelihood))
        spec, current = spec.without(term), reduced
    return current, trail


def poisson_vs_negbin(poisson: RegressionFit, negbin: RegressionFit) -> tuple[LRTestResult, float]:
    """LR test of the dispersion parameter (df 1).

    Returns the plain chi-square result and the boundary-corrected p-value
    (half the tail), since ``1/theta = 0`` sits on the edge of the parameter
    space.
    """
    if poisson.terms != negbin.terms:
        raise ValueError("Poisson and NB fits must share terms")
    res = lr_test(poisson, negbin, 1)
    return res, 0.5 * res.p_value if res.statistic > 0 else 1.0


def coefficient_table(fit: RegressionFit) -> list[tuple[str, float, float, float, float]]:
    return [
        (t, float(b), float(s), float(z), float(p))
        for t, b, s, z, p in zip(fit.terms, fit.coef, fit.se, fit.z, np.asarray(fit.p))
    ]
