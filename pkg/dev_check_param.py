import numpy as np
from ordcfa import model, parameterize, likelihood

rng = np.random.default_rng(7)


def rand_params(spec, cs):
    p, m = spec.p, spec.m
    lam = np.zeros((p, m))
    for q, S in enumerate(spec.pattern):
        for j in S:
            lam[j, q] = rng.uniform(0.4, 1.3)
    A = rng.normal(size=(m, m)) * 0.3
    phi = A @ A.T + np.eye(m)
    tau = tuple(np.sort(rng.normal(size=k - 1) * 1.2) for k in spec.K)
    # ensure strict increase
    tau = tuple(t + np.arange(t.size) * 0.15 for t in tau)
    ps = model.ParameterSet(
        nu=rng.normal(size=p) * 0.5,
        lam=lam,
        tau=tau,
        theta=rng.uniform(0.5, 1.5, size=p),
        kappa=rng.normal(size=m) * 0.5,
        phi=phi,
        fixed=model.FixedMask.structural(spec),
    )
    return model.project_onto_constraints(ps, spec, cs)


def check(spec, regime, **kw):
    cs = model.make_constraints(spec, regime, **kw)
    par = parameterize.Parameterization(spec, cs)
    ps = rand_params(spec, cs)
    z = par.init_from(ps)
    ps2 = par.build(z)
    dev = model.max_param_deviation(ps, ps2)
    res = model.max_constraint_residual(ps2, cs)
    if cs.unit_total_variance:
        r = model.constraint_residuals(ps2, cs)
        res = float(np.max(np.abs(r[: r.size - spec.p]))) if r.size > spec.p else 0.0
    # random coords -> constraints hold
    z3 = rng.normal(size=par.size) * 0.7
    ps3 = par.build(z3)
    r3 = model.constraint_residuals(ps3, cs)
    if cs.unit_total_variance:
        r3 = r3[: r3.size - spec.p]
    res3 = float(np.max(np.abs(r3))) if r3.size else 0.0
    z3b = par.init_from(ps3, check=not cs.unit_total_variance)
    zdev = float(np.max(np.abs(z3b - z3))) if par.size else 0.0
    print(f"{regime:22s} size={par.size:3d} roundtrip={dev:.2e} res={res:.2e} "
          f"rand-res={res3:.2e} coord-roundtrip={zdev:.2e}")
    assert dev < 1e-10 and res < 1e-10 and res3 < 1e-10 and zdev < 1e-9
    return par, cs


def grad_check(spec, regime, **kw):
    cs = model.make_constraints(spec, regime, **kw)
    par = parameterize.Parameterization(spec, cs)
    if par.size == 0:
        print(f"{regime:22s} no free coordinates, skip grad")
        return
    ps0 = rand_params(spec, cs)
    z0 = par.init_from(ps0, check=not cs.unit_total_variance)
    pop = par.build(z0)
    grid = likelihood.gh_grid(pop.kappa, np.sqrt(np.diag(pop.phi)), n_nodes=15)
    n = 60
    eta = rng.multivariate_normal(pop.kappa, pop.phi, size=n)
    Y = np.zeros((n, spec.p), dtype=int)
    for j in range(spec.p):
        q = spec.factor_of[j]
        mu = pop.nu[j] + pop.lam[j, q] * eta[:, q]
        sd = np.sqrt(pop.theta[j])
        cuts = pop.tau[j]
        Y[:, j] = 1 + np.sum(rng.normal(mu, sd)[:, None] > cuts[None, :], axis=1)
    data = likelihood.ResponseMatrix(Y)

    def f(z):
        ps = par.build(z)
        return likelihood.marginal_loglik(ps, spec, data, grid)

    ll, blocks = likelihood.marginal_value_and_grad(par.build(z0), spec, data, grid)
    g = par.pullback(z0, par.build(z0), blocks)
    h = 1e-6
    worst = 0.0
    for i in range(par.size):
        zp = z0.copy(); zp[i] += h
        zm = z0.copy(); zm[i] -= h
        fd = (f(zp) - f(zm)) / (2 * h)
        err = abs(fd - g[i]) / max(1.0, abs(fd))
        worst = max(worst, err)
    print(f"{regime:22s} size={par.size:3d} worst grad rel err = {worst:.2e}")
    assert worst < 5e-6


spec1 = model.build_model_spec(
    {f"it{i}": k for i, k in enumerate([4, 4, 3, 5, 4, 3, 4])},
    {"f1": ["it0", "it1", "it2", "it3"], "f2": ["it4", "it5", "it6"]},
)
spec_bin = model.build_model_spec(
    {"a": 2, "b": 4, "c": 4, "d": 2, "e": 5},
    {"g": ["a", "b", "c", "d", "e"]},
)
spec3 = model.build_model_spec(
    {f"v{i}": 4 for i in range(9)},
    {"fa": [f"v{i}" for i in range(3)],
     "fb": [f"v{i}" for i in range(3, 6)],
     "fc": [f"v{i}" for i in range(6, 9)]},
)

print("== roundtrip / constraint checks ==")
for sp in (spec1, spec_bin, spec3):
    for reg in ("traditional", "unit-variance", "reference-indicator", "delta", "integer"):
        if reg == "integer" and sp is spec_bin:
            pass  # binary rule path included
        check(sp, reg)
    check(sp, "geometric-mean", allow_experimental=True)
try:
    check(spec3, "sumscore-rasch")
except Exception as e:
    print("sumscore:", e)
spec_ss = model.build_model_spec(
    {f"s{i}": 4 for i in range(6)},
    {"fa": [f"s{i}" for i in range(3)], "fb": [f"s{i}" for i in range(3, 6)]},
)
check(spec_ss, "sumscore-rasch")

print("== gradient pullback checks ==")
for sp, reg in [
    (spec1, "traditional"),
    (spec1, "reference-indicator"),
    (spec1, "integer"),
    (spec1, "delta"),
    (spec_bin, "integer"),
    (spec3, "integer"),
    (spec1, "geometric-mean"),
]:
    kw = {"allow_experimental": True} if reg == "geometric-mean" else {}
    grad_check(sp, reg, **kw)
print("OK")
