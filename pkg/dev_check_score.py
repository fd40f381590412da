import time
import numpy as np
from ordcfa import likelihood, score

# MAP oracles under the pinned interchangeable configuration
spec4, ps4 = score.rasch_reference_params(4, 5)
eta = score.map_score(ps4, spec4, [3, 3, 3, 3])
print("all-3 MAP:", eta, "(expect 3.0 within 1e-6)")
assert abs(eta[0] - 3.0) < 1e-6

spec3, ps3 = score.rasch_reference_params(3, 5)
eta234 = score.map_score(ps3, spec3, [2, 3, 4])
print("(2,3,4) MAP:", eta234, "(expect within 0.02 of 3.0)")
assert abs(eta234[0] - 3.0) < 0.02

# grid-search oracle at 1e-4 resolution
grid = np.arange(-5.0, 11.0, 1e-4)
vals = [likelihood.posterior_logdensity(ps3, spec3, np.array([2, 3, 4]), np.array([g]))
        for g in grid]
gbest = grid[int(np.argmax(vals))]
print("grid-search oracle:", gbest, "newton:", eta234[0])
assert abs(gbest - eta234[0]) < 2e-4

eta5 = score.map_score(ps3, spec3, [5, 5, 5])
print("all-5 MAP:", eta5[0], "finite and above interior:", eta5[0] > eta234[0])
assert np.isfinite(eta5[0]) and eta5[0] > eta234[0]

# ML divergence and interior behavior
ml_all5 = score.ml_score(ps3, spec3, [5, 5, 5])
print("ML all-5:", ml_all5.diverged, ml_all5.direction)
assert ml_all5.diverged and ml_all5.direction[0] == 1
ml_all1 = score.ml_score(ps3, spec3, [1, 1, 1])
assert ml_all1.diverged and ml_all1.direction[0] == -1
ml_int = score.ml_score(ps3, spec3, [2, 3, 4])
g_at_avg = likelihood.conditional_score_batch(
    ps3, spec3, np.array([[2, 3, 4]]), np.array([[3.0]]))[1][0, 0]
print("ML interior:", ml_int.eta, "gradient at avg:", g_at_avg)
assert not ml_int.diverged and abs(g_at_avg) < 1e-3

spec1, ps1 = score.rasch_reference_params(1, 3)
ml1 = score.ml_score(ps1, spec1, [2])
print("single item y=2:", ml1.eta[0], "(expect 2.0)")
assert abs(ml1.eta[0] - 2.0) < 1e-4

# MAP shrinkage on the full p<=4 sweeps, and permutation invariance
for p in (2, 3, 4):
    sp, ps = score.rasch_reference_params(p, 5)
    rows = score.pattern_sweep(ps, sp)
    assert len(rows) == 5 ** p
    kap = ps.kappa[0]
    seen = {}
    for r in rows:
        key = tuple(sorted(r.pattern))
        if key in seen:
            assert np.array_equal(seen[key][0], r.map)
        else:
            seen[key] = (r.map, r.ml)
        if not r.ml_diverged:
            assert abs(r.map[0] - kap) <= abs(r.ml[0] - kap) + 1e-9
print("shrinkage and permutation invariance OK for p=2..4")

# the sweep band numbers (frozen oracle from the design phase)
t0 = time.time()
expected = {2: 0.2138, 3: 0.1078, 4: 0.0636, 5: 0.0417, 6: 0.0293}
for p in range(2, 7):
    sp, ps = score.rasch_reference_params(p, 5)
    rows = score.pattern_sweep(ps, sp)
    dev = max(abs(r.map[0] - r.average) for r in rows if not r.extreme)
    gmax = 0.0
    for r in rows:
        if r.extreme:
            continue
        g = likelihood.conditional_score_batch(
            ps, sp, np.array([r.pattern]), np.array([[r.average]]))[1][0, 0]
        gmax = max(gmax, abs(g))
    lo1 = [r for r in rows if all(c == 1 for c in r.pattern)][0]
    hiK = [r for r in rows if all(c == 5 for c in r.pattern)][0]
    print(f"p={p}: max|MAP-avg| non-extreme = {dev:.4f} (oracle {expected[p]}), "
          f"max cond grad at avg = {gmax:.2e}, all-1 MAP {lo1.map[0]:.3f} "
          f"{'<' if lo1.map[0] < 1 else '>='} 1, all-K MAP {hiK.map[0]:.3f}")
    assert abs(dev - expected[p]) < 5e-3
    assert gmax < 1e-3
    assert lo1.map[0] < lo1.average and hiK.map[0] > 0
print(f"sweep p=2..6: {time.time()-t0:.1f}s")

# expected average curve
sp5, ps5 = score.rasch_reference_params(4, 5)
g = np.linspace(-3, 9, 601)
curve = score.expected_average_curve(ps5, sp5, g)
at3 = score.expected_average_curve(ps5, sp5, np.array([3.0]))[0]
print("curve at eta=3:", at3, "bounds:", curve.min(), curve.max())
assert abs(at3 - 3.0) < 1e-12
assert np.all(np.diff(curve) >= -1e-12) and curve.min() > 1.0 and curve.max() < 5.0
print("OK")
