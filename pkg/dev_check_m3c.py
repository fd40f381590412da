import time

import numpy as np

from ordcfa import estimate, likelihood, model, simulate

easy = simulate.reduced_study_conditions()[-1]
pop = simulate.make_population(easy)
spec = simulate.condition_spec(easy)
data = simulate.generate_dataset(pop, 500, simulate.replication_key(1, 0, 0))
css = {r: model.make_constraints(spec, r) for r in simulate.STUDY_REGIMES}

for nn in (7, 11):
    print("== %d nodes per dimension ==" % nn)
    eval_grid = likelihood.gh_grid(np.zeros(3), np.ones(3), nn)
    devs = {}
    for r in simulate.STUDY_REGIMES:
        g = estimate.default_grid(spec, data, css[r], n_nodes=nn)
        t0 = time.time()
        fit = estimate.fit_mml(spec, data, css[r], grid=g)
        dev = -2.0 * estimate.common_scale_loglik(fit, spec, data, eval_grid)
        devs[r] = dev
        print("%-20s own-ll=%.4f common-dev=%.6f conv=%s gnorm=%.1e it=%d %.1fs" % (
            r, fit.loglik, dev, fit.converged, fit.gradient_norm,
            fit.iterations, time.time() - t0))
    vals = np.array(list(devs.values()))
    print("max pairwise common-deviance diff: %.3e" % (vals.max() - vals.min()))
