import time

import numpy as np

from ordcfa import simulate

cells = simulate.reduced_study_conditions()
pick = [cells[3], cells[4]]  # middling-.4 hard corner, easy cell
for c in pick:
    print("cell:", c.label())

log = []
t0 = time.time()
records, summary = simulate.run_study(
    pick, reps=3, log=log,
    progress=lambda cell, rep: print("  done", cell, "rep", rep, flush=True),
)
print("elapsed %.1fs for %d fits" % (time.time() - t0, len(records)))
print("mean fit seconds: %.2f" % np.mean([r.seconds for r in records]))

for c in summary.cells:
    print("\n==", c.condition.label(), "compared", c.compared)
    print("  conv-adm:", {k: round(v, 3) for k, v in c.converged_admissible.items()})
    print("  equality rate: %.3f  max spread %.3e" % (c.equality_rate, c.max_deviance_spread))
    print("  attribution:", {k: v for k, v in c.attribution.items() if v})
for line in log:
    print("LOG:", line)

for r in records:
    print("%-28s rep%d %-20s %-8s conv=%d adm=%d dev=%.3f devc=%.3f %.1fs" % (
        r.cell, r.rep, r.regime, r.start, r.converged, r.admissible,
        r.deviance, r.deviance_common, r.seconds))
