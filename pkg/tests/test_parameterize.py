import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ordcfa import (
    MINIMAL_REGIMES,
    build_model_spec,
    make_constraints,
    max_constraint_residual,
)
from ordcfa.identify import random_parameter_set
from ordcfa.likelihood import gh_grid, marginal_loglik, marginal_value_and_grad
from ordcfa.model import (
    check_parameter_set,
    constraint_residuals,
    max_param_deviation,
)
from ordcfa.parameterize import Parameterization
from ordcfa.simulate import generate_dataset

_SPEC1 = build_model_spec({"a": 3, "b": 4, "c": 5}, {"f": ["a", "b", "c"]})
_SPEC2 = build_model_spec(
    {"x%d" % j: 4 for j in range(6)},
    {"f1": ["x0", "x1", "x2"], "f2": ["x3", "x4", "x5"]},
)


@pytest.mark.parametrize("regime", MINIMAL_REGIMES)
@pytest.mark.parametrize("spec", [_SPEC1, _SPEC2], ids=["m1", "m2"])
def test_build_satisfies_constraints(regime, spec):
    # the delta regime's per-item nonlinear constraint is handled by the
    # estimator's penalty, not the coordinate map
    cs = make_constraints(spec, regime)
    par = Parameterization(spec, cs)
    rng = np.random.default_rng(5)
    for _ in range(5):
        z = rng.normal(scale=0.6, size=par.size)
        ps = par.build(z)
        check_parameter_set(ps, spec)
        res = constraint_residuals(ps, cs)[: cs.count]
        if res.size:
            assert np.max(np.abs(res)) < 1e-9


@pytest.mark.parametrize("regime", MINIMAL_REGIMES)
def test_round_trip_through_coordinates(regime):
    spec = _SPEC2
    cs = make_constraints(spec, regime)
    par = Parameterization(spec, cs)
    ps = random_parameter_set(spec, cs, np.random.default_rng(11))
    z = par.init_from(ps)
    back = par.build(z)
    assert max_param_deviation(ps, back) < 1e-9


@given(seed=st.integers(0, 2**31))
def test_coordinate_map_is_stable(seed):
    cs = make_constraints(_SPEC1, "integer")
    par = Parameterization(_SPEC1, cs)
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=1.0, size=par.size)
    ps = par.build(z)
    z2 = par.init_from(ps)
    assert max_param_deviation(ps, par.build(z2)) < 1e-9


def test_sumscore_rasch_has_no_coordinates():
    spec = build_model_spec(
        {"a": 4, "b": 4, "c": 4}, {"f": ["a", "b", "c"]}
    )
    cs = make_constraints(spec, "sumscore-rasch")
    par = Parameterization(spec, cs)
    assert par.size == 0
    ps = par.build(np.zeros(0))
    assert max_constraint_residual(ps, cs) < 1e-12


@pytest.mark.parametrize("regime", ["traditional", "reference-indicator",
                                    "integer"])
def test_pullback_matches_fd(regime):
    spec = _SPEC1
    cs = make_constraints(spec, regime)
    par = Parameterization(spec, cs)
    ps0 = random_parameter_set(spec, cs, np.random.default_rng(3))
    data = generate_dataset(ps0, 60, 9)
    grid = gh_grid(np.zeros(1), np.ones(1), 31)
    z = par.init_from(ps0)

    def f(zv):
        return marginal_loglik(par.build(zv), spec, data, grid)

    ps = par.build(z)
    _, gb = marginal_value_and_grad(ps, spec, data, grid)
    g = par.pullback(z, ps, gb)
    h = 1e-6
    for i in range(par.size):
        zp = np.array(z); zp[i] += h
        zm = np.array(z); zm[i] -= h
        fd = (f(zp) - f(zm)) / (2 * h)
        assert abs(g[i] - fd) < 5e-5, "coordinate %d" % i
