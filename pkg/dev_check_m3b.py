import time

import numpy as np

from ordcfa import estimate, likelihood, model, simulate, transform

easy = simulate.reduced_study_conditions()[-1]
pop = simulate.make_population(easy)
spec = simulate.condition_spec(easy)
data = simulate.generate_dataset(pop, 500, simulate.replication_key(1, 0, 0))

css = {r: model.make_constraints(spec, r) for r in simulate.STUDY_REGIMES}
base = estimate.default_grid(spec, data, css["unit-variance"], n_nodes=11)

uv = estimate.fit_mml(spec, data, css["unit-variance"], grid=base)
print("unit-variance ll: %.10f" % uv.loglik)

# anchor other regimes' grids at the image of the fitted UV solution
for r in ("reference-indicator", "integer"):
    mapped, t = transform.trad_to_regime(uv.params, spec, r)
    grid_r = likelihood.shift_scale_grid(base, t.d, t.beta)
    st = estimate.StartValues("mapped", mapped)
    t0 = time.time()
    fit = estimate.fit_mml(spec, data, css[r], start=st, grid=grid_r)
    print("%-20s ll=%.10f diff=%.3e conv=%s gnorm=%.1e  %.1fs" % (
        r, fit.loglik, fit.loglik - uv.loglik, fit.converged,
        fit.gradient_norm, time.time() - t0))
    # also from the regime's own default start (study uses its own starts)
    st2 = estimate.starting_values(spec, data, css[r], "default")
    t0 = time.time()
    fit2 = estimate.fit_mml(spec, data, css[r], start=st2, grid=grid_r)
    print("%-20s own-start ll diff=%.3e conv=%s  %.1fs" % (
        r, fit2.loglik - uv.loglik, fit2.converged, time.time() - t0))

# absolute quadrature error scale: UV refit at 15 nodes
g15 = estimate.default_grid(spec, data, css["unit-variance"], n_nodes=15)
ll15 = likelihood.marginal_loglik(uv.params, spec, data, g15)
print("UV point under 15-node grid: %.6f (shift %.3e)" % (ll15, ll15 - uv.loglik))
