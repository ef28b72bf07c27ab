"""Poisson and NB2 negative-binomial regression with a log link and offset.

Both families are fitted by iteratively reweighted least squares with
step-halving. The negative binomial alternates IRLS for the coefficients with
Newton steps on ``log(theta)``, then polishes the joint optimum with full
Newton steps so the score vanishes to rounding.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import digamma, gammaln, polygamma

MAX_ITER = 100
LL_TOL = 1e-10
GRAD_TOL = 1e-8
THETA_TOL = 1e-8
THETA_MAX = 1e8


class Family(str, enum.Enum):
    POISSON = "Poisson"
    NEGATIVE_BINOMIAL = "NegativeBinomial"


class ConvergenceError(ArithmeticError):
    """Fitting failed; ``fit`` holds the last iterate when one exists."""

    def __init__(self, message: str, fit: "RegressionFit | None" = None):
        super().__init__(message)
        self.fit = fit


@dataclass(frozen=True)
class RegressionFit:
    family: Family
    terms: tuple[str, ...]
    coef: np.ndarray = field(repr=False)
    se: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    log_likelihood: float
    theta: float | None = None
    iterations: int = 0
    converged: bool = True
    score_norm: float = 0.0
    n_obs: int = 0
    theta_se: float | None = None
    note: str = ""
    ll_trace: tuple[float, ...] = field(default=(), repr=False)

    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.terms, map(float, self.coef)))


def wald_p_values(z: np.ndarray) -> np.ndarray:
    """Two-sided normal p-values."""
    return np.array([math.erfc(abs(v) / math.sqrt(2.0)) for v in np.atleast_1d(z)])


# ---------------------------------------------------------------------------
# log-likelihoods and their derivatives
# ---------------------------------------------------------------------------


def _eta(beta, X, offset):
    return X @ beta + offset


def poisson_loglik(beta, X, y, offset) -> float:
    eta = _eta(beta, X, offset)
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1)))


def poisson_score(beta, X, y, offset) -> np.ndarray:
    return X.T @ (y - np.exp(_eta(beta, X, offset)))


def _power_sums(y):
    # sums of j**m over j = 0 .. y-1
    n = y - 1.0
    s1 = n * (n + 1) / 2
    s2 = n * (n + 1) * (2 * n + 1) / 6
    s3 = s1 * s1
    s4 = n * (n + 1) * (2 * n + 1) * (3 * n * n + 3 * n - 1) / 30
    return s1, s2, s3, s4


def _large_theta(y, theta):
    return theta > 1e4 * (y + 1.0)


def log_rising(y, theta) -> np.ndarray:
    """``lgamma(y + theta) - lgamma(theta) - y log(theta)``, accurate for huge theta."""
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    big = _large_theta(y, theta)
    if big.any():
        s1, s2, s3, s4 = _power_sums(y[big])
        out[big] = s1 / theta - s2 / (2 * theta**2) + s3 / (3 * theta**3) - s4 / (4 * theta**4)
    small = ~big
    if small.any():
        ys = y[small]
        out[small] = gammaln(ys + theta) - gammaln(theta) - ys * math.log(theta)
    return out


def _digamma_diff(y, theta):
    """``psi(y + theta) - psi(theta)``."""
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    big = _large_theta(y, theta)
    if big.any():
        s1, s2, s3, s4 = _power_sums(y[big])
        out[big] = (y[big] - s1 / theta + s2 / theta**2 - s3 / theta**3 + s4 / theta**4) / theta
    small = ~big
    if small.any():
        out[small] = digamma(y[small] + theta) - digamma(theta)
    return out


def _trigamma_diff(y, theta):
    """``psi'(y + theta) - psi'(theta)``."""
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    big = _large_theta(y, theta)
    if big.any():
        s1, s2, s3, s4 = _power_sums(y[big])
        out[big] = -(
            y[big] - 2 * s1 / theta + 3 * s2 / theta**2 - 4 * s3 / theta**3 + 5 * s4 / theta**4
        ) / theta**2
    small = ~big
    if small.any():
        out[small] = polygamma(1, y[small] + theta) - polygamma(1, theta)
    return out


def nb_loglik(beta, theta, X, y, offset) -> float:
    """NB2 log-likelihood (variance ``mu + mu**2 / theta``)."""
    eta = _eta(beta, X, offset)
    with np.errstate(over="ignore", invalid="ignore"):
        mu = np.exp(eta)
        ll = log_rising(y, theta) + y * eta - (y + theta) * np.log1p(mu / theta) - gammaln(y + 1)
    return float(np.sum(ll))


def nb_theta_derivatives(theta, y, mu) -> tuple[float, float]:
    """First and second derivative of the NB2 log-likelihood in ``theta``."""
    g = _digamma_diff(y, theta) - np.log1p(mu / theta) + (mu - y) / (theta + mu)
    h = _trigamma_diff(y, theta) + 1.0 / theta - 2.0 / (theta + mu) + (y + theta) / (theta + mu) ** 2
    return float(np.sum(g)), float(np.sum(h))


def nb_score(beta, theta, X, y, offset) -> tuple[np.ndarray, float]:
    mu = np.exp(_eta(beta, X, offset))
    g_beta = X.T @ (theta * (y - mu) / (theta + mu))
    g_theta, _ = nb_theta_derivatives(theta, y, mu)
    return g_beta, g_theta


def nb_hessian(beta, theta, X, y, offset) -> np.ndarray:
    """Observed Hessian of the NB2 log-likelihood in ``(beta, theta)``."""
    mu = np.exp(_eta(beta, X, offset))
    d = theta + mu
    w = theta * mu * (y + theta) / d**2
    p = X.shape[1]
    H = np.empty((p + 1, p + 1))
    H[:p, :p] = -(X.T * w) @ X
    cross = X.T @ ((y - mu) * mu / d**2)
    H[:p, p] = cross
    H[p, :p] = cross
    H[p, p] = nb_theta_derivatives(theta, y, mu)[1]
    return H


# ---------------------------------------------------------------------------
# IRLS
# ---------------------------------------------------------------------------


def _slack(ll: float) -> float:
    return 1e-12 * max(1.0, abs(ll))


def _initial_beta(X, y, offset) -> np.ndarray:
    beta = np.zeros(X.shape[1])
    ones = np.flatnonzero(np.all(X == 1.0, axis=0))
    if ones.size:
        beta[ones[0]] = math.log(y.sum() / np.exp(offset).sum())
        return beta
    mu0 = (y + y.mean()) / 2 + 1e-3
    z = np.log(mu0) - offset
    sw = np.sqrt(mu0)
    return np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0]


def _irls(X, y, offset, theta, beta, max_iter=MAX_ITER, tol=LL_TOL):
    """IRLS for the coefficients; ``theta=None`` means Poisson.

    Returns ``(beta, ll, iterations, converged, trace)``.
    """
    if theta is None:
        loglik = lambda b: poisson_loglik(b, X, y, offset)
    else:
        loglik = lambda b: nb_loglik(b, theta, X, y, offset)
    ll = loglik(beta)
    trace = [ll]
    for it in range(1, max_iter + 1):
        eta = _eta(beta, X, offset)
        mu = np.maximum(np.exp(eta), 1e-300)
        w = mu if theta is None else mu / (1.0 + mu / theta)
        zwork = eta - offset + (y - mu) / mu
        XtW = X.T * w
        try:
            target = np.linalg.solve(XtW @ X, XtW @ zwork)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular weighted normal equations") from exc
        step = target - beta
        ll_new = loglik(beta + step)
        halvings = 0
        while not ll_new >= ll - _slack(ll) and halvings < 50:
            step = step / 2
            ll_new = loglik(beta + step)
            halvings += 1
        if not ll_new >= ll - _slack(ll):
            return beta, ll, it, False, trace
        beta = beta + step
        change = abs(ll_new - ll) / max(abs(ll), 1e-300)
        ll = ll_new
        trace.append(ll)
        small_step = np.max(np.abs(step)) <= 1e-8 * (1.0 + np.max(np.abs(beta)))
        if theta is None:
            grad = poisson_score(beta, X, y, offset)
        else:
            grad = nb_score(beta, theta, X, y, offset)[0]
        if (change < tol and small_step) or np.linalg.norm(grad) < GRAD_TOL:
            return beta, ll, it, True, trace
    return beta, ll, max_iter, False, trace


def _check_inputs(X, y, offset):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, p) with one row per response")
    offset = np.zeros(y.shape[0]) if offset is None else np.asarray(offset, dtype=np.float64)
    if offset.shape != y.shape:
        raise ValueError("offset must align with y")
    if (y < 0).any() or not np.array_equal(y, np.round(y)):
        raise ValueError("response must be non-negative integer counts")
    if not y.any():
        raise ValueError("degenerate response: all counts are zero")
    if not np.isfinite(offset).all():
        raise ValueError("non-finite offset")
    return X, y, offset


def _terms(terms, p):
    return tuple(terms) if terms is not None else tuple(f"x{j}" for j in range(p))


def fit_poisson(X, y, offset=None, terms: Sequence[str] | None = None,
                max_iter: int = MAX_ITER, tol: float = LL_TOL) -> RegressionFit:
    """Maximum-likelihood Poisson regression with log link and offset.

    Standard errors come from the inverse Fisher information at the optimum;
    p-values are two-sided Wald tests. Raises :class:`ConvergenceError`
    (carrying the last iterate) if IRLS does not converge.
    """
    X, y, offset = _check_inputs(X, y, offset)
    beta, ll, iters, ok, trace = _irls(X, y, offset, None, _initial_beta(X, y, offset), max_iter, tol)
    mu = np.exp(_eta(beta, X, offset))
    try:
        cov = np.linalg.inv((X.T * mu) @ X)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("singular Fisher information") from exc
    se = np.sqrt(np.diag(cov))
    z = beta / se
    fit = RegressionFit(
        family=Family.POISSON, terms=_terms(terms, X.shape[1]), coef=beta, se=se, z=z,
        p=wald_p_values(z), log_likelihood=ll, iterations=iters, converged=ok,
        score_norm=float(np.linalg.norm(poisson_score(beta, X, y, offset))),
        n_obs=len(y), ll_trace=tuple(trace),
    )
    if not ok:
        raise ConvergenceError(f"Poisson IRLS did not converge in {max_iter} iterations", fit)
    return fit


def _theta_newton(theta, y, mu, tol=THETA_TOL, max_iter=MAX_ITER):
    """Maximize the NB2 likelihood over ``theta`` with ``mu`` fixed.

    Newton on ``log(theta)``; returns ``math.inf`` once theta passes
    ``THETA_MAX``.
    """

    def ll(t):
        return float(np.sum(log_rising(y, t) - (y + t) * np.log1p(mu / t)))

    s = math.log(theta)
    cur = ll(theta)
    for _ in range(max_iter):
        t = math.exp(s)
        g, h = nb_theta_derivatives(t, y, mu)
        gs, hs = t * g, t * t * h + t * g
        step = -gs / hs if hs < 0 else math.copysign(1.0, gs)
        step = max(-2.0, min(2.0, step))
        new = ll(math.exp(s + step))
        halvings = 0
        while not new >= cur - _slack(cur) and halvings < 50:
            step /= 2
            new = ll(math.exp(s + step))
            halvings += 1
        if not new >= cur - _slack(cur):
            return t
        s += step
        cur = new
        if math.exp(s) > THETA_MAX:
            return math.inf
        if abs(step) < tol:
            return math.exp(s)
    return math.exp(s)


def _moment_theta(y, mu) -> float:
    excess = float(np.sum((y - mu) ** 2 - mu))
    if excess <= 0:
        return 1e6
    return min(max(float(np.sum(mu**2)) / excess, 1e-3), 1e6)


def fit_negbin(X, y, offset=None, terms: Sequence[str] | None = None,
               max_iter: int = MAX_ITER, tol: float = LL_TOL) -> RegressionFit:
    """Maximum-likelihood NB2 regression with log link and offset.

    Starts from the Poisson fit with a method-of-moments ``theta``. If
    ``theta`` runs past ``1e8`` the Poisson-limit fit is returned with
    ``theta = inf`` and a note. Standard errors use the observed information
    of ``(beta, theta)`` jointly.
    """
    X, y, offset = _check_inputs(X, y, offset)
    terms = _terms(terms, X.shape[1])
    pois = fit_poisson(X, y, offset, terms, max_iter, tol)

    def poisson_limit():
        return replace(pois, family=Family.NEGATIVE_BINOMIAL, theta=math.inf,
                       note="no overdispersion detected")

    beta = pois.coef.copy()
    theta = _moment_theta(y, np.exp(_eta(beta, X, offset)))
    ll = nb_loglik(beta, theta, X, y, offset)
    trace = [ll]
    iters = 0
    converged = False
    for _ in range(max_iter):
        beta, _, k, _, _ = _irls(X, y, offset, theta, beta, max_iter, tol)
        iters += k
        new_theta = _theta_newton(theta, y, np.exp(_eta(beta, X, offset)))
        if math.isinf(new_theta):
            return poisson_limit()
        ll_new = nb_loglik(beta, new_theta, X, y, offset)
        change = abs(ll_new - ll) / max(abs(ll), 1e-300)
        dlog = abs(math.log(new_theta) - math.log(theta))
        theta, ll = new_theta, ll_new
        trace.append(ll)
        if change < tol and dlog < THETA_TOL:
            converged = True
            break

    beta, theta, ll, polish_iters = _polish(beta, theta, X, y, offset, ll)
    iters += polish_iters
    trace.append(ll)
    if theta > THETA_MAX:
        return poisson_limit()

    H = nb_hessian(beta, theta, X, y, offset)
    g_beta, g_theta = nb_score(beta, theta, X, y, offset)
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("singular observed information") from exc
    diag = np.diag(cov)
    if (diag[:-1] <= 0).any():
        raise ConvergenceError("observed information is not positive definite")
    se = np.sqrt(diag[:-1])
    z = beta / se
    fit = RegressionFit(
        family=Family.NEGATIVE_BINOMIAL, terms=terms, coef=beta, se=se, z=z, p=wald_p_values(z),
        log_likelihood=ll, theta=theta, iterations=iters, converged=converged,
        score_norm=float(np.linalg.norm(g_beta)), n_obs=len(y),
        theta_se=float(math.sqrt(diag[-1])) if diag[-1] > 0 else None,
        ll_trace=tuple(trace),
    )
    if not converged:
        raise ConvergenceError("negative binomial alternation did not converge", fit)
    return fit


def _polish(beta, theta, X, y, offset, ll, max_iter=25):
    """Joint Newton steps in ``(beta, log theta)`` to drive the score to zero."""
    s = math.log(theta)
    iters = 0
    for _ in range(max_iter):
        t = math.exp(s)
        g_beta, g_theta = nb_score(beta, t, X, y, offset)
        H = nb_hessian(beta, t, X, y, offset)
        p = len(beta)
        # chain rule for the log-theta coordinate
        H[:p, p] *= t
        H[p, :p] *= t
        H[p, p] = t * t * H[p, p] + t * g_theta
        g = np.append(g_beta, t * g_theta)
        try:
            np.linalg.cholesky(-H)
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        new_ll = nb_loglik(beta + step[:p], math.exp(s + step[p]), X, y, offset)
        halvings = 0
        while not new_ll >= ll - _slack(ll) and halvings < 30:
            step /= 2
            new_ll = nb_loglik(beta + step[:p], math.exp(s + step[p]), X, y, offset)
            halvings += 1
        if not new_ll >= ll - _slack(ll):
            break
        beta = beta + step[:p]
        s += step[p]
        ll = new_ll
        iters += 1
        if np.max(np.abs(step)) < 1e-12 * (1 + np.max(np.abs(beta))):
            break
    return beta, math.exp(s), ll, iters
