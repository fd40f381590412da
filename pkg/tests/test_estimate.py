import numpy as np
import pytest

from ordcfa import (
    build_model_spec,
    common_scale_loglik,
    default_grid,
    fit_mml,
    fit_statistics,
    fixed_mask_from,
    gh_grid,
    make_constraints,
    standardize,
    starting_values,
    sumscore_lr_test,
)
from ordcfa.estimate import admissibility_check
from ordcfa.identify import random_parameter_set
from ordcfa.model import ParameterSet, free_parameter_count
from ordcfa.simulate import generate_dataset

_SPEC = build_model_spec(
    {"i%d" % j: 3 for j in range(4)}, {"f": ["i%d" % j for j in range(4)]}
)


def _population(loading=0.7):
    cs = make_constraints(_SPEC, "traditional")
    lam = np.full((4, 1), loading)
    return ParameterSet(
        nu=np.zeros(4), lam=lam,
        tau=tuple(np.array([-0.8, 0.8]) for _ in range(4)),
        theta=1.0 - lam[:, 0] ** 2, kappa=np.zeros(1), phi=np.eye(1),
        fixed=fixed_mask_from(_SPEC, cs),
    )


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(_population(), 400, 31)


def test_fit_converges_and_is_admissible(dataset):
    cs = make_constraints(_SPEC, "traditional")
    fit = fit_mml(_SPEC, dataset, cs)
    assert fit.converged and fit.admissible
    assert fit.gradient_norm < 1e-5
    assert fit.constraint_residuals < 1e-8


def test_regimes_reach_identical_maximum(dataset):
    # newton_polish drives the gradient to ~1e-9 so the standardized
    # solutions can agree at the 1e-8 level
    fits = {}
    for regime in ("traditional", "reference-indicator", "integer"):
        cs = make_constraints(_SPEC, regime)
        fits[regime] = fit_mml(_SPEC, dataset, cs, newton_polish=True)
    lls = [f.loglik for f in fits.values()]
    assert max(lls) - min(lls) < 1e-6
    stds = [standardize(f.params) for f in fits.values()]
    for s in stds[1:]:
        assert np.max(np.abs(s.loadings - stds[0].loadings)) < 1e-8
        assert np.max(np.abs(s.factor_corr - stds[0].factor_corr)) < 1e-10


def test_delta_regime_reaches_same_standardized_solution(dataset):
    cs_t = make_constraints(_SPEC, "traditional")
    cs_d = make_constraints(_SPEC, "delta")
    f_t = fit_mml(_SPEC, dataset, cs_t)
    f_d = fit_mml(_SPEC, dataset, cs_d)
    assert abs(f_t.loglik - f_d.loglik) < 1e-5
    # the nonlinear per-item constraint holds at the solution
    tot = np.einsum(
        "jq,qr,jr->j", f_d.params.lam, f_d.params.phi, f_d.params.lam
    ) + f_d.params.theta
    assert np.max(np.abs(tot - 1.0)) < 1e-7


def test_start_regimes_agree(dataset):
    cs = make_constraints(_SPEC, "integer")
    f1 = fit_mml(_SPEC, dataset, cs,
                 start=starting_values(_SPEC, dataset, cs, "simple"))
    f2 = fit_mml(_SPEC, dataset, cs,
                 start=starting_values(_SPEC, dataset, cs, "default"))
    assert abs(f1.loglik - f2.loglik) < 1e-6
    assert f1.start == "simple" and f2.start == "default"


def test_common_scale_loglik_is_regime_invariant(dataset):
    eval_grid = gh_grid(np.zeros(1), np.ones(1), 61)
    vals = []
    for regime in ("traditional", "integer"):
        cs = make_constraints(_SPEC, regime)
        fit = fit_mml(_SPEC, dataset, cs)
        vals.append(common_scale_loglik(fit, _SPEC, dataset, eval_grid))
    assert abs(vals[0] - vals[1]) < 1e-6


def test_admissibility_check_flags_negative_variance(dataset):
    cs = make_constraints(_SPEC, "traditional")
    ps = random_parameter_set(_SPEC, cs, np.random.default_rng(1))
    ok, reasons = admissibility_check(ps)
    assert ok and not reasons
    theta = np.array(ps.theta)
    theta[1] = -0.05
    bad = ParameterSet(ps.nu, ps.lam, ps.tau, theta, ps.kappa, ps.phi,
                       ps.fixed)
    ok, reasons = admissibility_check(bad)
    assert not ok
    assert any("variance" in r for r in reasons)


def test_fit_statistics_free_count(dataset):
    cs = make_constraints(_SPEC, "integer")
    fit = fit_mml(_SPEC, dataset, cs)
    stats = fit_statistics(fit, dataset, _SPEC)
    assert stats["free_parameters"] == free_parameter_count(_SPEC, cs)
    assert stats["deviance"] == -2.0 * fit.loglik
    assert stats["aic"] == stats["deviance"] + 2 * stats["free_parameters"]
    assert stats["n_obs"] == dataset.n


def test_sumscore_lr_test_df_and_null_calibration():
    # null-true data: generated from the fully pinned configuration
    cs_ss = make_constraints(_SPEC, "sumscore-rasch")
    truth = ParameterSet(
        nu=np.zeros(4), lam=np.ones((4, 1)),
        tau=tuple(np.array([1.5, 2.5]) for _ in range(4)),
        theta=np.ones(4), kappa=np.array([2.0]),
        phi=np.eye(1) * 4.0, fixed=fixed_mask_from(_SPEC, cs_ss),
    )
    data = generate_dataset(truth, 400, 77)
    res = sumscore_lr_test(_SPEC, data)
    cs_int = make_constraints(_SPEC, "integer")
    assert res["df"] == free_parameter_count(_SPEC, cs_int)
    assert res["statistic"] >= 0.0
    assert res["p_value"] > 0.05  # seeded null-true draw


def test_sumscore_lr_test_rejects_on_alternative(dataset):
    # unequal loadings in the population: the pinned model should lose badly
    res = sumscore_lr_test(_SPEC, dataset)
    assert res["p_value"] < 1e-6


def test_default_grids_are_affine_images(dataset):
    base = default_grid(_SPEC, dataset, make_constraints(_SPEC, "traditional"))
    other = default_grid(_SPEC, dataset, make_constraints(_SPEC, "integer"))
    assert base.node_count == other.node_count
    # equal spacing ratios: the integer grid is a shift/scale of the base
    b, o = base.nodes[0], other.nodes[0]
    ratios = np.diff(o) / np.diff(b)
    assert np.max(np.abs(ratios - ratios[0])) < 1e-9
