import csv
import json
import os
import shutil
import subprocess
import sys

import numpy as np

sys.path.insert(0, "src")
from ordcfa import model, simulate

root = "/tmp/cli_smoke"
shutil.rmtree(root, ignore_errors=True)
os.makedirs(root)

# one-factor, 5 items, K=4, n=300
spec = model.build_model_spec(
    {f"it{j}": 4 for j in range(5)}, {"g": [f"it{j}" for j in range(5)]}
)
cs = model.make_constraints(spec, "traditional")
rng = np.random.default_rng(7)
lam = np.array([[0.8], [0.7], [0.6], [0.75], [0.65]])
pop = model.ParameterSet(
    nu=np.zeros(5), lam=lam,
    tau=tuple(np.array([-0.9, 0.1, 1.0]) for _ in range(5)),
    theta=1 - lam[:, 0] ** 2, kappa=np.zeros(1), phi=np.eye(1),
    fixed=model.fixed_mask_from(spec, cs),
)
data = simulate.generate_dataset(pop, 300, 424242)

csv_path = os.path.join(root, "resp.csv")
with open(csv_path, "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow([f"it{j}" for j in range(5)] + ["junkcol"])
    for i, row in enumerate(data.y):
        extra = ["x"]
        if i == 7:  # a missing cell: row should be listwise-dropped
            vals = [str(v) for v in row]
            vals[2] = ""
            w.writerow(vals + extra)
        else:
            w.writerow([str(v) for v in row] + extra)

spec_path = os.path.join(root, "model.txt")
with open(spec_path, "w") as fh:
    fh.write("# smoke design\n")
    fh.write("g: " + " ".join(f"it{j}=4" for j in range(5)) + "\n")


def run(*args):
    r = subprocess.run(
        [sys.executable, "-m", "ordcfa.cli", *args],
        capture_output=True, text=True, env={**os.environ, "PYTHONPATH": "src"},
    )
    print("$ ordcfa", " ".join(args))
    print(r.stdout.rstrip())
    if r.stderr.strip():
        print("[stderr]", r.stderr.rstrip())
    return r.returncode


pj = os.path.join(root, "params.json")
rc = run("fit", csv_path, spec_path, "--constraints", "integer", "--out", pj)
print("fit rc:", rc)
assert rc == 0

with open(pj) as fh:
    payload = json.load(fh)
print("regime tag:", payload["regime"], " mean loading:",
      np.mean(payload["parameters"]["lam"]))

tj = os.path.join(root, "trad.json")
rc = run("transform", pj, "--to", "traditional", "--out", tj)
print("transform rc:", rc)
assert rc == 0
with open(tj) as fh:
    tp = json.load(fh)
print("nu all zero:", np.allclose(tp["parameters"]["nu"], 0))

sc = os.path.join(root, "scores.csv")
rc = run("score", csv_path, pj, "--method", "map", "--out", sc)
print("score rc:", rc)
assert rc == 0
with open(sc) as fh:
    rows = list(csv.reader(fh))
print("score rows:", len(rows) - 1, "header:", rows[0])
# repr round trip: read back and compare
e0 = float(rows[1][2])
print("first eta:", e0)

scm = os.path.join(root, "scores_ml.csv")
rc = run("score", csv_path, pj, "--method", "ml", "--out", scm)
assert rc == 0
with open(scm) as fh:
    mlrows = list(csv.reader(fh))
ndiv = sum(int(r[3]) for r in mlrows[1:])
print("ml divergent rows:", ndiv)

sw = os.path.join(root, "sweep.csv")
rc = run("sweep", "--p", "2..3", "--K", "4", "--out", sw)
print("sweep rc:", rc)
assert rc == 0
with open(sw) as fh:
    swrows = list(csv.reader(fh))
print("sweep rows:", len(swrows) - 1, "(expect 16+64=80)")

# cap exceeded -> exit 1
rc = run("sweep", "--p", "9", "--K", "5", "--cap", "1000",
         "--out", os.path.join(root, "x.csv"))
print("cap-exceeded rc:", rc, "(expect 1)")
assert rc == 1

st = os.path.join(root, "sstest.json")
rc = run("sumscore-test", csv_path, spec_path, "--out", st)
print("sumscore rc:", rc)
assert rc == 0
with open(st) as fh:
    res = json.load(fh)
print("LR:", res["statistic"], "df:", res["df"], "p:", res["p_value"])

# malformed CSV -> exit 1 with line number
bad = os.path.join(root, "bad.csv")
with open(bad, "w") as fh:
    fh.write("it0,it1,it2,it3,it4\n1,2,3,4\n")
rc = run("fit", bad, spec_path, "--out", os.path.join(root, "y.json"))
print("malformed rc:", rc, "(expect 1)")
assert rc == 1

# untagged params refused
untag = os.path.join(root, "untag.json")
with open(pj) as fh:
    pl = json.load(fh)
pl["regime"] = ""
with open(untag, "w") as fh:
    json.dump(pl, fh)
rc = run("score", csv_path, untag, "--out", os.path.join(root, "z.csv"))
print("untagged rc:", rc, "(expect 1)")
assert rc == 1

print("CLI smoke OK")
