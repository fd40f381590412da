import time
import numpy as np
from ordcfa import model, transform, likelihood, estimate

rng = np.random.default_rng(2)


def gen(spec, ps, n, rng):
    eta = rng.multivariate_normal(ps.kappa, ps.phi, size=n)
    Y = np.zeros((n, spec.p), dtype=int)
    for j in range(spec.p):
        q = spec.factor_of[j]
        mu = ps.nu[j] + ps.lam[j, q] * eta[:, q]
        ystar = rng.normal(mu, np.sqrt(ps.theta[j]))
        Y[:, j] = 1 + np.sum(ystar[:, None] > ps.tau[j][None, :], axis=1)
    return likelihood.ResponseMatrix(Y)


# truth on the traditional scale: p=5, K=5, one factor
spec = model.build_model_spec({f"x{i}": 5 for i in range(5)},
                              {"f": [f"x{i}" for i in range(5)]})
cs_tr = model.make_constraints(spec, "traditional")
lam_t = np.array([[0.5], [0.65], [0.8], [0.6], [0.7]])
tau_t = tuple(np.array([-1.3, -0.4, 0.4, 1.3]) * s for s in (1.0, 0.9, 1.1, 1.0, 0.95))
truth_trad = model.ParameterSet(
    nu=np.zeros(5), lam=lam_t, tau=tau_t, theta=np.ones(5),
    kappa=np.zeros(1), phi=np.eye(1), fixed=model.fixed_mask_from(spec, cs_tr),
)
assert model.max_constraint_residual(truth_trad, cs_tr) < 1e-12
truth_int, _ = transform.trad_to_integer(truth_trad, spec)

data = gen(spec, truth_trad, 2000, rng)
cs_int = model.make_constraints(spec, "integer")

t0 = time.time()
fit_int = estimate.fit_mml(spec, data, cs_int)
print(f"integer fit: ll={fit_int.loglik:.6f} converged={fit_int.converged} "
      f"gnorm={fit_int.gradient_norm:.2e} res={fit_int.constraint_residuals:.2e} "
      f"iters={fit_int.iterations} ({time.time()-t0:.1f}s)")
lam_err = np.max(np.abs(fit_int.params.lam[fit_int.params.lam != 0] -
                        truth_int.lam[truth_int.lam != 0]))
print("max loading abs error vs integer-scale truth:", lam_err)
assert fit_int.converged and lam_err < 0.1

# cross-regime agreement with newton polish
t0 = time.time()
fits = {}
for reg in ("traditional", "reference-indicator", "integer"):
    cs = model.make_constraints(spec, reg)
    fits[reg] = estimate.fit_mml(spec, data, cs, newton_polish=True)
    print(f"{reg:20s} ll={fits[reg].loglik:.10f} gnorm={fits[reg].gradient_norm:.2e} "
          f"conv={fits[reg].converged}")
print(f"3 regime fits: {time.time()-t0:.1f}s")
lls = [f.loglik for f in fits.values()]
print("max pairwise loglik diff:", max(lls) - min(lls))
assert max(lls) - min(lls) < 1e-6

stds = {r: estimate.standardize(f.params).loadings for r, f in fits.items()}
vals = list(stds.values())
worst = max(np.max(np.abs(vals[0] - vals[1])), np.max(np.abs(vals[0] - vals[2])),
            np.max(np.abs(vals[1] - vals[2])))
print("max pairwise standardized-loading diff:", worst)
assert worst < 1e-8

# delta regime joins the invariance set
t0 = time.time()
fit_d = estimate.fit_mml(spec, data, model.make_constraints(spec, "delta"),
                         newton_polish=True)
print(f"delta ll={fit_d.loglik:.10f} gnorm={fit_d.gradient_norm:.2e} "
      f"res={fit_d.constraint_residuals:.2e} conv={fit_d.converged} ({time.time()-t0:.1f}s)")
print("delta vs traditional ll diff:", abs(fit_d.loglik - fits["traditional"].loglik))
assert abs(fit_d.loglik - fits["traditional"].loglik) < 1e-6
sd = estimate.standardize(fit_d.params).loadings
print("delta standardized diff:", np.max(np.abs(sd - vals[0])))

# unit-variance too
fit_u = estimate.fit_mml(spec, data, model.make_constraints(spec, "unit-variance"),
                         newton_polish=True)
print("unit-variance ll diff:", abs(fit_u.loglik - fits["traditional"].loglik))
assert abs(fit_u.loglik - fits["traditional"].loglik) < 1e-6

# LR test quick run
t0 = time.time()
out = estimate.sumscore_lr_test(spec, data)
print(f"LR={out['statistic']:.3f} df={out['df']} p={out['p_value']:.3g} "
      f"({time.time()-t0:.1f}s)")
assert out["statistic"] >= 0 and out["df"] == model.free_parameter_count(spec, cs_int)
print("OK")
