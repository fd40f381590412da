import numpy as np

from ordcfa import estimate, likelihood, model, simulate, transform

easy = simulate.reduced_study_conditions()[-1]
pop = simulate.make_population(easy)
spec = simulate.condition_spec(easy)
data = simulate.generate_dataset(pop, 500, simulate.replication_key(1, 0, 0))

css = {r: model.make_constraints(spec, r) for r in simulate.STUDY_REGIMES}
grids = {r: estimate.default_grid(spec, data, css[r], n_nodes=11) for r in simulate.STUDY_REGIMES}

uv = estimate.fit_mml(spec, data, css["unit-variance"], grid=grids["unit-variance"])
print("unit-variance ll:", uv.loglik)

# map the UV maximizer into each other regime, evaluate under that regime's grid
for r in ("reference-indicator", "integer"):
    mapped, t = transform.trad_to_regime(uv.params, spec, r)
    ll = likelihood.marginal_loglik(mapped, spec, data, grids[r])
    print("%-20s mapped-UV ll: %.6f  (diff %.3e)" % (r, ll, ll - uv.loglik))

# and evaluate the UV point under UV grid transformed by the SAME t, sanity
ps_ri, t_ri = transform.trad_to_regime(uv.params, spec, "reference-indicator")
g2 = likelihood.shift_scale_grid(grids["unit-variance"], t_ri.d, t_ri.beta)
ll2 = likelihood.marginal_loglik(ps_ri, spec, data, g2)
print("exact-image grid ll: %.6f (diff %.3e)" % (ll2, ll2 - uv.loglik))
