import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from ordcfa import build_model_spec, gh_grid, make_constraints, rect_grid
from ordcfa.identify import random_parameter_set
from ordcfa.likelihood import (
    ResponseMatrix,
    category_prob,
    conditional_loglik,
    conditional_score_batch,
    ingest,
    loglik_gradient,
    marginal_loglik,
    marginal_value_and_grad,
    posterior_score_batch,
    prior_mass_on_grid,
    shift_scale_grid,
)
from ordcfa.simulate import generate_dataset

_SPEC1 = build_model_spec({"a": 3, "b": 4, "c": 5}, {"f": ["a", "b", "c"]})


def _params(seed=3, spec=_SPEC1, regime="traditional"):
    cs = make_constraints(spec, regime)
    return random_parameter_set(spec, cs, np.random.default_rng(seed))


# ------------------------------------------------------------- probabilities

@given(seed=st.integers(0, 2**31), eta=st.floats(-3, 3))
def test_category_probs_sum_to_one(seed, eta):
    ps = _params(seed)
    for j in range(_SPEC1.p):
        total = sum(
            category_prob(ps, _SPEC1, j, k, np.array([eta]))
            for k in range(1, _SPEC1.K[j] + 1)
        )
        assert abs(total - 1.0) < 1e-12


def test_category_prob_matches_normal_cdf():
    ps = _params(11)
    eta = np.array([0.37])
    j = 1
    mu = ps.nu[j] + ps.lam[j, 0] * eta[0]
    sd = np.sqrt(ps.theta[j])
    tau = ps.tau[j]
    # middle category: difference of two normal cdfs
    want = norm.cdf((tau[1] - mu) / sd) - norm.cdf((tau[0] - mu) / sd)
    assert abs(category_prob(ps, _SPEC1, j, 2, eta) - want) < 1e-13
    # open-ended extremes
    assert abs(
        category_prob(ps, _SPEC1, j, 1, eta) - norm.cdf((tau[0] - mu) / sd)
    ) < 1e-13
    assert abs(
        category_prob(ps, _SPEC1, j, 4, eta) - norm.sf((tau[2] - mu) / sd)
    ) < 1e-13


def test_conditional_loglik_is_sum_of_item_logs():
    ps = _params(5)
    row = np.array([2, 4, 1])
    eta = np.array([-0.4])
    want = sum(
        np.log(category_prob(ps, _SPEC1, j, int(row[j]), eta))
        for j in range(3)
    )
    assert abs(conditional_loglik(ps, _SPEC1, row, eta) - want) < 1e-12


def test_conditional_score_matches_fd():
    ps = _params(9)
    Y = np.array([[1, 2, 3], [3, 4, 5], [2, 1, 1]])
    Eta = np.array([[0.3], [-1.1], [0.0]])
    _, g = conditional_score_batch(ps, _SPEC1, Y, Eta)
    h = 1e-6
    for i in range(3):
        up = conditional_loglik(ps, _SPEC1, Y[i], Eta[i] + h)
        dn = conditional_loglik(ps, _SPEC1, Y[i], Eta[i] - h)
        assert abs(g[i, 0] - (up - dn) / (2 * h)) < 1e-6


def test_posterior_score_matches_fd():
    ps = _params(13)
    Y = np.array([[2, 3, 4]])
    Eta = np.array([[0.9]])
    _, g = posterior_score_batch(ps, _SPEC1, Y, Eta)
    h = 1e-6
    from ordcfa.likelihood import posterior_logdensity

    up = posterior_logdensity(ps, _SPEC1, Y[0], Eta[0] + h)
    dn = posterior_logdensity(ps, _SPEC1, Y[0], Eta[0] - h)
    assert abs(g[0, 0] - (up - dn) / (2 * h)) < 1e-6


# ----------------------------------------------------------------- quadrature

def test_gh_grid_integrates_gaussian_moments():
    mean, sd = np.array([0.7]), np.array([1.3])
    grid = gh_grid(mean, sd, 31)
    nodes = grid.nodes[0]
    w = np.exp(grid.log_weights[0] + norm.logpdf(nodes, mean[0], sd[0]))
    assert abs(w.sum() - 1.0) < 1e-12
    assert abs((w * nodes).sum() - 0.7) < 1e-12
    assert abs((w * nodes**2).sum() - (0.7**2 + 1.3**2)) < 1e-10


def test_rect_grid_integrates_gaussian_moments():
    grid = rect_grid(np.array([0.0]), np.array([1.0]), 201)
    nodes = grid.nodes[0]
    w = np.exp(grid.log_weights[0] + norm.logpdf(nodes))
    assert abs(w.sum() - 1.0) < 1e-6
    assert abs((w * nodes**2).sum() - 1.0) < 1e-6


def test_shift_scale_grid_is_exact_affine_image():
    ps = _params(21)
    data = generate_dataset(ps, 60, 5)
    grid = gh_grid(np.zeros(1), np.ones(1), 41)
    d, beta = np.array([1.7]), np.array([-0.6])
    moved = shift_scale_grid(grid, d, beta)
    # moving parameters and grid together preserves the marginal likelihood
    from ordcfa import TransformSet, apply_transform

    t = TransformSet(d, np.ones(3), beta, np.zeros(3))
    ps2 = apply_transform(ps, t)
    ll0 = marginal_loglik(ps, _SPEC1, data, grid)
    ll1 = marginal_loglik(ps2, _SPEC1, data, moved)
    assert abs(ll0 - ll1) < 1e-10


# ------------------------------------------------------- marginal likelihood

def test_marginal_loglik_against_quad_oracle():
    ps = _params(2)
    data, _ = ingest(np.array([[1, 2, 3], [3, 4, 5], [2, 2, 1], [1, 1, 2]]),
                     _SPEC1)
    grid = gh_grid(np.zeros(1), np.ones(1), 61)
    got = marginal_loglik(ps, _SPEC1, data, grid)
    want = 0.0
    for i in range(data.n):
        def f(e, row=data.y[i]):
            like = 1.0
            for j in range(3):
                like *= category_prob(ps, _SPEC1, j, int(row[j]),
                                      np.array([e]))
            return like * norm.pdf(e, ps.kappa[0], np.sqrt(ps.phi[0, 0]))

        val, _ = integrate.quad(f, -9, 9, limit=200)
        want += np.log(val)
    assert abs(got - want) < 1e-8


def test_marginal_loglik_two_factor_oracle():
    spec = build_model_spec(
        {"x%d" % j: 3 for j in range(4)},
        {"f1": ["x0", "x1"], "f2": ["x2", "x3"]},
    )
    ps = _params(8, spec)
    data, _ = ingest(np.array([[1, 2, 3, 2], [3, 1, 2, 2]]), spec)
    grid = gh_grid(np.zeros(2), np.ones(2), 41)
    got = marginal_loglik(ps, spec, data, grid)
    rv = multivariate_normal(mean=ps.kappa, cov=ps.phi)
    want = 0.0
    for i in range(data.n):
        def f(e2, e1, row=data.y[i]):
            eta = np.array([e1, e2])
            like = 1.0
            for j in range(4):
                like *= category_prob(ps, spec, j, int(row[j]), eta)
            return like * rv.pdf(eta)

        val, _ = integrate.dblquad(f, -7, 7, -7, 7, epsabs=1e-10)
        want += np.log(val)
    assert abs(got - want) < 1e-7


def test_marginal_gradient_matches_fd():
    ps = _params(4)
    data = generate_dataset(ps, 50, 17)
    grid = gh_grid(np.zeros(1), np.ones(1), 31)
    _, gb = marginal_value_and_grad(ps, _SPEC1, data, grid)
    h = 1e-6

    def ll_with(**kw):
        return marginal_loglik(ps.with_(**kw), _SPEC1, data, grid)

    # loading of item 1
    lam_hi = np.array(ps.lam); lam_hi[1, 0] += h
    lam_lo = np.array(ps.lam); lam_lo[1, 0] -= h
    fd = (ll_with(lam=lam_hi) - ll_with(lam=lam_lo)) / (2 * h)
    assert abs(gb.lam[1, 0] - fd) < 1e-4
    # threshold 2 of item 2
    tau_hi = [np.array(t) for t in ps.tau]; tau_hi[2][1] += h
    tau_lo = [np.array(t) for t in ps.tau]; tau_lo[2][1] -= h
    fd = (ll_with(tau=tuple(tau_hi)) - ll_with(tau=tuple(tau_lo))) / (2 * h)
    assert abs(gb.tau[2][1] - fd) < 1e-4
    # latent mean
    k_hi = np.array(ps.kappa) + h
    k_lo = np.array(ps.kappa) - h
    fd = (ll_with(kappa=k_hi) - ll_with(kappa=k_lo)) / (2 * h)
    assert abs(gb.kappa[0] - fd) < 1e-4
    # residual variance of item 0
    th_hi = np.array(ps.theta); th_hi[0] += h
    th_lo = np.array(ps.theta); th_lo[0] -= h
    fd = (ll_with(theta=th_hi) - ll_with(theta=th_lo)) / (2 * h)
    assert abs(gb.theta[0] - fd) < 1e-4
    # latent variance
    phi_hi = np.array(ps.phi); phi_hi[0, 0] += h
    phi_lo = np.array(ps.phi); phi_lo[0, 0] -= h
    fd = (ll_with(phi=phi_hi) - ll_with(phi=phi_lo)) / (2 * h)
    assert abs(gb.phi[0, 0] - fd) < 1e-4


def test_loglik_gradient_zeroes_fixed_entries():
    # the traditional regime pins nu, theta, kappa, and diag(phi)
    ps = _params(6)
    data = generate_dataset(ps, 40, 23)
    grid = gh_grid(np.zeros(1), np.ones(1), 21)
    g = loglik_gradient(ps, _SPEC1, data, grid)
    _, raw = marginal_value_and_grad(ps, _SPEC1, data, grid)
    assert np.all(g.nu == 0) and np.all(g.theta == 0)
    assert np.all(g.kappa == 0) and np.all(g.phi == 0)
    assert np.allclose(g.lam, raw.lam)
    for got, want in zip(g.tau, raw.tau):
        assert np.allclose(got, want)


# -------------------------------------------------------------------- ingest

def test_ingest_drops_incomplete_rows():
    # code 0 marks a missing response; the row is listwise-deleted
    data, dropped = ingest(np.array([[0, 2, 3], [1, 2, 3]]), _SPEC1)
    assert dropped == 1 and data.n == 1


def test_ingest_validates_codes():
    with pytest.raises(ValueError):
        ingest(np.array([[1, 5, 3]]), _SPEC1)  # item b has K=4
    with pytest.raises(ValueError):
        ingest(np.array([[1, 2]]), _SPEC1)  # wrong width


def test_response_matrix_counts():
    data, _ = ingest(np.array([[1, 2, 3], [3, 4, 5]]), _SPEC1)
    assert data.n == 2 and data.p == 3
    assert isinstance(data, ResponseMatrix)


# ---------------------------------------------------------------- prior mass

def test_prior_mass_is_anchored_on_a_covering_grid():
    from dataclasses import replace

    ps = _params(11)
    grid = gh_grid(np.zeros(1), np.ones(1), 21)
    lm, _, _ = prior_mass_on_grid(ps, grid)
    assert abs(lm) < 1e-12
    # prior collapsed between nodes: the estimate piles mass onto them
    tight = replace(ps, phi=np.array([[0.0025]]))
    assert prior_mass_on_grid(tight, grid)[0] > 0.5
    # prior walked off the node hull: the estimate loses mass
    off = replace(ps, kappa=np.array([9.0]))
    assert prior_mass_on_grid(off, grid)[0] < -0.5


def test_prior_mass_gradients_match_finite_differences():
    from dataclasses import replace

    spec2 = build_model_spec(
        {"a": 3, "b": 3, "c": 3, "d": 3}, {"f1": ["a", "b"], "f2": ["c", "d"]}
    )
    cs = make_constraints(spec2, "traditional")
    base = random_parameter_set(spec2, cs, np.random.default_rng(5))
    kap = np.array([0.15, -0.1])
    phi = np.array([[0.09, 0.03], [0.03, 0.06]])
    grid = gh_grid(np.zeros(2), np.ones(2), 9)
    ps = replace(base, kappa=kap, phi=phi)
    lm, gk, gp = prior_mass_on_grid(ps, grid)
    assert lm > 0.5  # far tighter than the node spacing

    h = 1e-6
    for q in range(2):
        kp, km = kap.copy(), kap.copy()
        kp[q] += h
        km[q] -= h
        fd = (
            prior_mass_on_grid(replace(ps, kappa=kp), grid)[0]
            - prior_mass_on_grid(replace(ps, kappa=km), grid)[0]
        ) / (2 * h)
        assert abs(fd - gk[q]) < 1e-4 * max(1.0, abs(fd))
    for a, b in [(0, 0), (0, 1), (1, 1)]:
        pp, pm = phi.copy(), phi.copy()
        pp[a, b] += h
        pp[b, a] = pp[a, b]
        pm[a, b] -= h
        pm[b, a] = pm[a, b]
        fd = (
            prior_mass_on_grid(replace(ps, phi=pp), grid)[0]
            - prior_mass_on_grid(replace(ps, phi=pm), grid)[0]
        ) / (2 * h)
        want = gp[a, b] + (gp[b, a] if a != b else 0.0)
        assert abs(fd - want) < 1e-4 * max(1.0, abs(fd))
