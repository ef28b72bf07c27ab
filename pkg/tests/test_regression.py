import math
from datetime import date, datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats
from scipy.special import gammaln

from framecount.fixture import simulate_covariate_rows, simulation_effects
from framecount.regression import (
    FINAL_MODEL,
    FULL_MODEL,
    INTERCEPT,
    ConvergenceError,
    CovariateRow,
    DesignError,
    Family,
    ModelSpec,
    RegressionFit,
    backward_eliminate,
    build_design,
    chi_square_upper_tail,
    compute_offset,
    election_proximity,
    fit_negbin,
    fit_poisson,
    incidence_rate_ratios,
    lr_test,
    message_age_days,
    nb_loglik,
    nb_score,
    poisson_vs_negbin,
    time_of_day,
)

UTC = timezone.utc


# --- covariates -------------------------------------------------------------

def test_election_proximity_example():
    # 2014-05-25 to 2014-11-04: 6 days of May, then 30+31+31+30+31 and 4 of November
    days = 6 + 30 + 31 + 31 + 30 + 31 + 4
    assert days == 163
    t = datetime(2014, 5, 25, tzinfo=UTC)
    assert election_proximity(t, [date(2014, 11, 4)]) == pytest.approx(math.sqrt(163), abs=1e-12)
    assert math.sqrt(163) == pytest.approx(12.767, abs=1e-3)


def test_election_proximity_nearest_and_empty():
    t = datetime(2013, 1, 3, 12, tzinfo=UTC)
    cal = [date(2012, 11, 6), date(2013, 1, 1), date(2014, 11, 4)]
    assert election_proximity(t, cal) == pytest.approx(math.sqrt(2.5))
    assert election_proximity(datetime(2013, 1, 1, tzinfo=UTC), cal) == 0.0
    with pytest.raises(ValueError, match="empty election calendar"):
        election_proximity(t, [])


def test_offset_and_age():
    assert compute_offset(1000, 10) == pytest.approx(math.log(10_000))
    created = datetime(2014, 5, 20, 12, tzinfo=UTC)
    assert message_age_days(created, datetime(2014, 5, 25, tzinfo=UTC)) == 4.5
    with pytest.raises(ValueError):
        compute_offset(0, 10)
    with pytest.raises(ValueError, match="newer than the harvest"):
        compute_offset(10, message_age_days(created, datetime(2014, 5, 1, tzinfo=UTC)))


def test_time_of_day():
    assert time_of_day(datetime(2014, 1, 1, 13, 30, tzinfo=UTC)) == 13.5


def test_row_validation():
    with pytest.raises(ValueError):
        CovariateRow("x", 0, 0.5, 0.2, 0, 1.0, 10, 1.0, float("nan"), 1)


# --- design -------------------------------------------------------------------

def _rows(n=40, seed=0):
    return simulate_covariate_rows(n, seed)


def test_final_model_columns():
    d = build_design(_rows(), FINAL_MODEL)
    assert d.shape == (40, 13)
    assert d.terms[0] == INTERCEPT
    assert "party:thematicity" not in d.terms and "party:message_length" not in d.terms
    assert len(FULL_MODEL.column_names) == 15


def test_interaction_column_is_product():
    rows = _rows()
    d = build_design(rows, FINAL_MODEL)
    j = d.terms.index("episodicity:sqrt_proximity")
    expect = [r.episodicity * r.sqrt_proximity for r in rows]
    assert d.X[:, j].tolist() == expect


def test_intercept_only():
    d = build_design(_rows(), ModelSpec(()))
    assert d.X.shape == (40, 1) and (d.X == 1).all()


@pytest.mark.parametrize(
    "terms, match",
    [
        (("party:episodicity",), "undeclared"),
        (("party", "party"), "duplicate"),
        (("weather",), "unknown covariate"),
        (("party", "party:party"), "distinct"),
    ],
)
def test_spec_validation(terms, match):
    with pytest.raises(ValueError, match=match):
        ModelSpec(terms)


def test_degenerate_and_singular_columns():
    rows = [r.__class__(**{**r.__dict__, "is_reshare": 0}) for r in _rows()]
    with pytest.raises(DesignError, match="degenerate column: is_reshare") as info:
        build_design(rows, ModelSpec(("party", "is_reshare")))
    assert info.value.term == "is_reshare"
    # thematicity duplicated through a copy of episodicity
    rows = [r.__class__(**{**r.__dict__, "thematicity": r.episodicity}) for r in _rows()]
    with pytest.raises(DesignError, match="singular design: thematicity"):
        build_design(rows, ModelSpec(("episodicity", "thematicity")))


# --- Poisson ------------------------------------------------------------------

def test_poisson_intercept_only_closed_form():
    y = np.array([1, 2, 3])
    fit = fit_poisson(np.ones((3, 1)), y)
    assert abs(fit.coef[0] - math.log(2)) <= 1e-10


def test_poisson_intercept_with_offset_closed_form():
    rng = np.random.default_rng(1)
    y = rng.poisson(3.0, 50)
    off = rng.normal(0, 1, 50)
    fit = fit_poisson(np.ones((50, 1)), y, off)
    assert abs(fit.coef[0] - math.log(y.sum() / np.exp(off).sum())) <= 1e-10


def _poisson_data(seed=0, n=200):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.uniform(size=n)])
    off = rng.uniform(-0.5, 0.5, n)
    y = rng.poisson(np.exp(X @ [0.3, 0.6, -0.8] + off))
    return X, y, off


def _scipy_poisson(X, y, off):
    def f(b):
        eta = X @ b + off
        return -(y @ eta - np.exp(eta).sum())

    def g(b):
        return -X.T @ (y - np.exp(X @ b + off))

    def h(b):
        return (X.T * np.exp(X @ b + off)) @ X

    res = optimize.minimize(f, np.zeros(X.shape[1]), jac=g, hess=h, method="trust-exact",
                            options={"gtol": 1e-12})
    return res.x


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_poisson_matches_direct_maximization(seed):
    X, y, off = _poisson_data(seed)
    fit = fit_poisson(X, y, off)
    np.testing.assert_allclose(fit.coef, _scipy_poisson(X, y, off), atol=1e-6)
    assert fit.converged and fit.score_norm < 1e-6
    cov = np.linalg.inv((X.T * np.exp(X @ fit.coef + off)) @ X)
    np.testing.assert_allclose(fit.se, np.sqrt(np.diag(cov)), rtol=1e-10)


def test_irls_loglik_monotone():
    X, y, off = _poisson_data(4)
    trace = fit_poisson(X, y, off).ll_trace
    assert len(trace) >= 2
    assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))


def test_poisson_nesting():
    X, y, off = _poisson_data(5)
    small = fit_poisson(X[:, :2], y, off)
    large = fit_poisson(X, y, off)
    assert large.log_likelihood >= small.log_likelihood - 1e-9


def test_all_zero_response():
    with pytest.raises(ValueError, match="degenerate response"):
        fit_poisson(np.ones((4, 1)), np.zeros(4))


def test_nonconvergence_carries_last_iterate():
    X, y, off = _poisson_data(6)
    with pytest.raises(ConvergenceError) as info:
        fit_poisson(X, y, off, max_iter=1)
    assert isinstance(info.value.fit, RegressionFit)


# --- negative binomial --------------------------------------------------------

def _nb_data(seed, n=5000, theta=1.5, beta=(1.0, 0.5, -0.7)):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.uniform(size=n)])
    mu = np.exp(X @ np.array(beta))
    if theta is None:
        return X, rng.poisson(mu)
    return X, rng.poisson(rng.gamma(theta, mu / theta))


def _nb_reference_loglik(beta, theta, X, y):
    mu = np.exp(X @ beta)
    return float(np.sum(gammaln(y + theta) - gammaln(theta) - gammaln(y + 1)
                        + theta * np.log(theta / (theta + mu)) + y * np.log(mu / (theta + mu))))


def test_nb_loglik_matches_reference_formula():
    X, y = _nb_data(0, n=300)
    beta = np.array([0.9, 0.4, -0.5])
    for theta in (0.3, 1.5, 40.0, 1e5):
        assert nb_loglik(beta, theta, X, y, np.zeros(300)) == pytest.approx(
            _nb_reference_loglik(beta, theta, X, y), rel=1e-10)


def test_nb_score_matches_finite_differences():
    X, y = _nb_data(1, n=300)
    off = np.zeros(300)
    beta, theta = np.array([0.8, 0.3, -0.4]), 2.0
    g_beta, g_theta = nb_score(beta, theta, X, y, off)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (nb_loglik(beta + e, theta, X, y, off) - nb_loglik(beta - e, theta, X, y, off)) / (2 * h)
        assert g_beta[j] == pytest.approx(fd, rel=1e-6)
    fd = (nb_loglik(beta, theta + h, X, y, off) - nb_loglik(beta, theta - h, X, y, off)) / (2 * h)
    assert g_theta == pytest.approx(fd, rel=1e-5)


def test_nb_recovery():
    truth = np.array([1.0, 0.5, -0.7])
    X, y = _nb_data(0)
    fit = fit_negbin(X, y)
    assert fit.family is Family.NEGATIVE_BINOMIAL and fit.converged
    assert (np.abs(fit.coef - truth) <= 3 * fit.se).all()
    assert 1.2 <= fit.theta <= 1.9


def test_nb_matches_direct_maximization():
    X, y = _nb_data(2, n=400)
    fit = fit_negbin(X, y)

    def f(v):
        return -_nb_reference_loglik(v[:3], math.exp(v[3]), X, y)

    res = optimize.minimize(f, np.append(fit.coef * 0.9, 0.0), method="BFGS", options={"gtol": 1e-9})
    np.testing.assert_allclose(fit.coef, res.x[:3], atol=1e-5)
    assert fit.theta == pytest.approx(math.exp(res.x[3]), rel=1e-4)


def test_nb_on_poisson_data():
    X, y = _nb_data(0, theta=None)
    pois = fit_poisson(X, y)
    nb = fit_negbin(X, y)
    assert nb.theta >= 1e4
    np.testing.assert_allclose(nb.coef, pois.coef, atol=1e-3)


def test_nb_poisson_limit_flagged():
    X, y = _nb_data(0, theta=None)
    nb = fit_negbin(X, y)
    assert math.isinf(nb.theta) and nb.note == "no overdispersion detected"


def test_nb_loglik_tends_to_poisson():
    X, y = _nb_data(3, n=300, theta=None)
    off = np.zeros(300)
    beta = fit_poisson(X, y).coef
    pois = fit_poisson(X, y).log_likelihood
    assert nb_loglik(beta, 1e8, X, y, off) == pytest.approx(pois, abs=1e-3)


# --- offset invariance ----------------------------------------------------------

@pytest.mark.parametrize("fitter", [fit_poisson, fit_negbin])
def test_offset_scaling_moves_only_intercept(fitter):
    rows = simulate_covariate_rows(1500, 3, theta=2.0)
    d = build_design(rows, FINAL_MODEL)
    a = fitter(d.X, d.y, d.offset)
    b = fitter(d.X, d.y, d.offset + math.log(1000))
    assert b.coef[0] - a.coef[0] == pytest.approx(-math.log(1000), abs=1e-8)
    np.testing.assert_allclose(b.coef[1:], a.coef[1:], atol=1e-8)


# --- tests and ratios -----------------------------------------------------------

@pytest.mark.parametrize("x, df, expected", [(1.95, 1, 0.1626), (0.8676, 1, 0.3516)])
def test_chi_square_reference_values(x, df, expected):
    assert abs(chi_square_upper_tail(x, df) - expected) <= 1e-4


def _quad_tail(x, df):
    k = df / 2.0
    dens = lambda u: math.exp((k - 1) * math.log(u) - u / 2 - k * math.log(2) - math.lgamma(k))
    head, _ = integrate.quad(dens, 0, x, epsabs=1e-14, epsrel=1e-13, limit=200)
    return 1.0 - head


@pytest.mark.parametrize("df", [1, 2, 3, 5, 14])
@pytest.mark.parametrize("x", [0.01, 0.5, 1.95, 3.841459, 10.0, 30.0])
def test_chi_square_matches_quadrature(x, df):
    assert chi_square_upper_tail(x, df) == pytest.approx(_quad_tail(x, df), abs=1e-9)


@settings(max_examples=200)
@given(st.floats(0, 500), st.integers(1, 40))
def test_chi_square_matches_scipy(x, df):
    assert chi_square_upper_tail(x, df) == pytest.approx(stats.chi2.sf(x, df), rel=1e-8, abs=1e-300)


def test_chi_square_edges():
    assert chi_square_upper_tail(0.0, 3) == 1.0
    assert chi_square_upper_tail(3.841459, 1) == pytest.approx(0.05, abs=1e-7)
    with pytest.raises(ValueError):
        chi_square_upper_tail(-1.0, 1)


def _fake_fit(ll, terms=("a",)):
    z = np.zeros(len(terms))
    return RegressionFit(Family.POISSON, terms, z, z + 1, z, z + 1, ll)


def test_lr_test_values():
    res = lr_test(_fake_fit(-100.0), _fake_fit(-99.025), 1)
    assert res.statistic == pytest.approx(1.95)
    assert abs(res.p_value - 0.1626) < 1e-4
    same = lr_test(_fake_fit(-10.0), _fake_fit(-10.0), 1)
    assert (same.statistic, same.p_value) == (0.0, 1.0)
    with pytest.raises(ValueError, match="not nested"):
        lr_test(_fake_fit(-10.0), _fake_fit(-11.0), 1)


def test_poisson_vs_negbin_boundary_halving():
    rows = simulate_covariate_rows(800, 1, theta=1.0)
    d = build_design(rows, ModelSpec(("party", "episodicity")))
    pois = fit_poisson(d.X, d.y, d.offset, d.terms)
    nb = fit_negbin(d.X, d.y, d.offset, d.terms)
    res, halved = poisson_vs_negbin(pois, nb)
    assert res.df == 1 and res.statistic > 100 and halved == 0.5 * res.p_value


REFERENCE_IRR = [
    (-0.142, 0.867), (-1.132, 0.322), (-0.73, 0.482), (1.526, 4.599), (0.039, 1.04),
    (0.003, 1.003), (0.229, 1.257), (0.241, 1.272), (-1.104, 0.332), (-0.029, 0.972),
    (-0.079, 0.924), (-0.11, 0.896),
]


@pytest.mark.parametrize("beta, irr", REFERENCE_IRR)
def test_irr_reference_values(beta, irr):
    fit = _fake_fit(0.0)
    fit = RegressionFit(Family.POISSON, ("x",), np.array([beta]), fit.se, fit.z, fit.p, 0.0)
    assert abs(incidence_rate_ratios(fit)["x"] - irr) <= 1e-3


def test_irr_identity_and_intercept():
    fit = RegressionFit(Family.POISSON, (INTERCEPT, "x"), np.array([-14.45, 0.0]),
                        np.ones(2), np.zeros(2), np.ones(2), 0.0)
    irr = incidence_rate_ratios(fit)
    assert irr["x"] == 1.0 and irr[INTERCEPT] < 5e-4


# --- backward elimination ---------------------------------------------------------

def _null_rows(seed, n=1500):
    eff = {INTERCEPT: -17.5, "party": -0.1, "is_reshare": 1.5}
    return simulate_covariate_rows(n, seed, eff, theta=3.0)


SMALL_FULL = ModelSpec(("party", "episodicity", "is_reshare", "party:episodicity", "party:is_reshare"))


def test_elimination_alpha_one_keeps_everything():
    fit, trail = backward_eliminate(_null_rows(0), SMALL_FULL, alpha=1.0)
    assert trail == [] and fit.terms[1:] == SMALL_FULL.terms


def test_elimination_alpha_zero_drops_all_interactions():
    fit, trail = backward_eliminate(_null_rows(0), SMALL_FULL, alpha=0.0)
    assert sorted(s.dropped_term for s in trail) == ["party:episodicity", "party:is_reshare"]
    assert fit.terms == (INTERCEPT, "party", "episodicity", "is_reshare")
    # recorded log-likelihoods chain from step to step
    assert trail[0].ll_small == trail[1].ll_large


def test_elimination_trail_matches_manual_tests():
    rows = _null_rows(1)
    fit, trail = backward_eliminate(rows, SMALL_FULL, alpha=0.05)
    from framecount.regression import fit_spec
    if trail:
        full = fit_spec(rows, SMALL_FULL)
        reduced = fit_spec(rows, SMALL_FULL.without(trail[0].dropped_term))
        assert trail[0].test == lr_test(reduced, full, 1)
        assert trail[0].test.p_value > 0.05


def test_elimination_keeps_strong_interaction():
    eff = simulation_effects()
    eff = {k: v for k, v in eff.items() if k in {INTERCEPT, "party", "is_reshare", "party:is_reshare"}}
    rows = simulate_covariate_rows(3000, 2, eff, theta=3.0)
    spec = ModelSpec(("party", "is_reshare", "party:is_reshare"))
    fit, trail = backward_eliminate(rows, spec)
    assert trail == [] and "party:is_reshare" in fit.terms


def test_bad_alpha():
    with pytest.raises(ValueError):
        backward_eliminate(_null_rows(0, 100), SMALL_FULL, alpha=1.5)
