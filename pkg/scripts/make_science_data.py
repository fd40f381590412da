"""Generate a synthetic stand-in for the 7-item attitudes-toward-science
survey (the `science` data shipped with the R ltm package; 392 respondents,
4 ordered categories per item).

Only the item-level category frequencies of that survey are public here, so
this script builds a 1-factor population whose marginals match them exactly:
loadings are set to the published unit-variance estimates and each item's
thresholds are sqrt(lambda^2 + 1) * ndtri(cumulative marginal proportion).
The joint dependence is synthetic. Fits to this file therefore land near,
but not on, estimates from the real data; nothing downstream asserts
point-estimate equality against it.

Writes data/science_like.csv and data/science_like_model.txt.
"""

import csv
import os
import sys

import numpy as np
from scipy.special import ndtri

from ordcfa import build_model_spec, fixed_mask_from, make_constraints
from ordcfa.model import ParameterSet
from ordcfa.simulate import generate_dataset

ITEMS = ("comfort", "environment", "work", "future",
         "technology", "industry", "benefit")

# observed category counts (rows: categories 1..4), n = 392
COUNTS = {
    "comfort": (5, 32, 266, 89),
    "environment": (29, 90, 145, 128),
    "work": (33, 98, 206, 55),
    "future": (14, 72, 210, 96),
    "technology": (18, 91, 157, 126),
    "industry": (10, 47, 173, 162),
    "benefit": (21, 100, 193, 78),
}

# unit-variance loadings from the published fit of the real data
LOADINGS = {
    "comfort": 0.60, "environment": 0.48, "work": 0.33, "future": 0.54,
    "technology": 0.50, "industry": 0.68, "benefit": 0.46,
}

N = 392
SEED = 20260822


def population():
    spec = build_model_spec({nm: 4 for nm in ITEMS}, {"science": list(ITEMS)})
    cs = make_constraints(spec, "traditional")
    lam = np.array([[LOADINGS[nm]] for nm in ITEMS])
    tau = []
    for nm in ITEMS:
        counts = np.asarray(COUNTS[nm], float)
        cum = np.cumsum(counts)[:-1] / counts.sum()
        scale = np.sqrt(LOADINGS[nm] ** 2 + 1.0)
        tau.append(scale * ndtri(cum))
    params = ParameterSet(
        nu=np.zeros(7), lam=lam, tau=tuple(tau), theta=np.ones(7),
        kappa=np.zeros(1), phi=np.eye(1), fixed=fixed_mask_from(spec, cs),
    )
    return spec, params


def main(out_dir="data", seed=SEED):
    spec, params = population()
    data = generate_dataset(params, N, seed)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "science_like.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ITEMS)
        w.writerows(data.y.tolist())
    model_path = os.path.join(out_dir, "science_like_model.txt")
    with open(model_path, "w", encoding="utf-8") as fh:
        fh.write("# synthetic stand-in, marginals matched to the science data\n")
        fh.write("science: " + " ".join("%s=4" % nm for nm in ITEMS) + "\n")
    print("wrote %s (%d rows) and %s" % (csv_path, N, model_path))
    print("next: ordcfa fit %s %s --constraints integer" % (csv_path, model_path))


if __name__ == "__main__":
    main(*sys.argv[1:2])
