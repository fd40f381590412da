import time

import numpy as np

from ordcfa import estimate, likelihood, model, simulate, transform

easy = simulate.reduced_study_conditions()[-1]
pop = simulate.make_population(easy)
spec = simulate.condition_spec(easy)
data = simulate.generate_dataset(pop, 500, simulate.replication_key(1, 0, 0))
css = {r: model.make_constraints(spec, r) for r in simulate.STUDY_REGIMES}

sols = {}
for r in simulate.STUDY_REGIMES:
    g = estimate.default_grid(spec, data, css[r], n_nodes=11)
    fit = estimate.fit_mml(spec, data, css[r], grid=g)
    std, _ = transform.to_traditional(fit.params, spec)
    sols[r] = std
    print(r, "own-ll %.4f conv %s" % (fit.loglik, fit.converged))

# pairwise standardized-solution distances
ks = list(sols)
for a in range(len(ks)):
    for b in range(a + 1, len(ks)):
        d = model.max_param_deviation(sols[ks[a]], sols[ks[b]])
        print("param dist %s vs %s: %.3e" % (ks[a], ks[b], d))

for nn in (15, 21, 25, 31):
    t0 = time.time()
    grid = likelihood.gh_grid(np.zeros(3), np.ones(3), nn)
    lls = {r: likelihood.marginal_loglik(sols[r], spec, data, grid)
           for r in simulate.STUDY_REGIMES}
    vals = np.array(list(lls.values()))
    print("nodes %2d: lls %s  spread %.4e  (%.1fs)" % (
        nn, " ".join("%.6f" % v for v in vals), vals.max() - vals.min(),
        (time.time() - t0) / 3))
