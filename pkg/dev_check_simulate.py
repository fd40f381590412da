import time

import numpy as np

from ordcfa import likelihood, model, simulate

# --- threshold oracles ---
t_mid3 = simulate._thresholds_for(simulate.response_probabilities("middling", 3))
print("middling K=3 thresholds:", t_mid3)
assert np.allclose(t_mid3, [-1.6449, 1.6449], atol=5e-5), t_mid3

t_skw3 = simulate._thresholds_for(simulate.response_probabilities("skewed", 3))
print("skewed K=3 thresholds:", t_skw3)
assert np.allclose(t_skw3, [1.2816, 1.7507], atol=5e-5), t_skw3

t_sym4 = simulate._thresholds_for(simulate.response_probabilities("symmetric", 4))
print("symmetric K=4 thresholds:", t_sym4)
assert np.allclose(t_sym4, [-0.6745, 0.0, 0.6745], atol=5e-5), t_sym4

# --- population construction ---
cond = simulate.PopulationCondition(
    indicators_per_factor=6, loading=0.8, K=3,
    response_distribution="middling", prop_sparse=2 / 3,
)
pop = simulate.make_population(cond)
spec = simulate.condition_spec(cond)
assert spec.p == 18 and spec.m == 3
assert np.allclose(pop.theta, 1 - 0.64)
# sparse pattern on first ceil(2/3*6)=4 items of each factor, last 2 symmetric
for q in range(3):
    for i in range(6):
        j = q * 6 + i
        want = t_mid3 if i < 4 else simulate._thresholds_for(np.full(3, 1 / 3))
        assert np.allclose(pop.tau[j], want), (j, pop.tau[j])
print("population layout OK")

# symmetric ignores prop_sparse
cond_sym = simulate.PopulationCondition(6, 0.8, 5, "symmetric", prop_sparse=1 / 3)
pop_sym = simulate.make_population(cond_sym)
tsym5 = simulate._thresholds_for(np.full(5, 0.2))
assert all(np.allclose(t, tsym5) for t in pop_sym.tau)

# --- marginal proportions at n=1e5 within 3 binomial SEs ---
big = simulate.generate_dataset(pop, 100_000, seed=99)
probs = simulate.response_probabilities("middling", 3)
worst = 0.0
for j in range(4):  # a sparse item per factor
    for k in range(3):
        phat = np.mean(big.y[:, j] == k + 1)
        se = np.sqrt(probs[k] * (1 - probs[k]) / 100_000)
        worst = max(worst, abs(phat - probs[k]) / se)
assert worst < 3, worst
print("marginal proportions OK, worst z =", round(worst, 2))

# --- determinism ---
a = simulate.generate_dataset(pop, 200, seed=7)
b = simulate.generate_dataset(pop, 200, seed=7)
c = simulate.generate_dataset(pop, 200, seed=8)
assert np.array_equal(a.y, b.y) and not np.array_equal(a.y, c.y)
key = simulate.replication_key(20260822, 3, 17)
print("key:", key)

# --- single fit timing probe on the easy cell (m=3, p=18, n=500) ---
easy = simulate.reduced_study_conditions()[-1]
print("easy cell:", easy.label())
pop_e = simulate.make_population(easy)
spec_e = simulate.condition_spec(easy)
data = simulate.generate_dataset(pop_e, 500, simulate.replication_key(1, 0, 0))
from ordcfa import estimate

for regime in simulate.STUDY_REGIMES:
    cs = model.make_constraints(spec_e, regime)
    t0 = time.time()
    grid = estimate.default_grid(spec_e, data, cs, n_nodes=11)
    fit = estimate.fit_mml(spec_e, data, cs, grid=grid)
    print("%-20s ll=%.6f conv=%s adm=%s gnorm=%.2e it=%d  %.1fs" % (
        regime, fit.loglik, fit.converged, fit.admissible,
        fit.gradient_norm, fit.iterations, time.time() - t0))
