import time
import numpy as np
from ordcfa import model, identify, transform

specs = {
    "(3,1)": model.build_model_spec({f"a{i}": 4 for i in range(3)}, {"f": [f"a{i}" for i in range(3)]}),
    "(6,1)": model.build_model_spec({f"a{i}": 4 for i in range(6)}, {"f": [f"a{i}" for i in range(6)]}),
    "(9,3)": model.build_model_spec(
        {f"a{i}": 4 for i in range(9)},
        {"f1": [f"a{i}" for i in range(3)],
         "f2": [f"a{i}" for i in range(3, 6)],
         "f3": [f"a{i}" for i in range(6, 9)]},
    ),
}

t0 = time.time()
for label, sp in specs.items():
    for reg in model.MINIMAL_REGIMES:
        cs = model.make_constraints(sp, reg)
        rep = identify.verify_identification(sp, cs)
        print(f"{label} {reg:20s} -> {rep.verdict:16s} rank={rep.jacobian_rank}/{rep.transform_dimension} count={rep.constraint_count}")
        assert rep.verdict == "identifying", rep

    cs = model.make_constraints(sp, "integer")
    for which, l_drop in (("low", 0), ("high", None)):
        fixes = []
        for fx in cs.fixes:
            if fx.address[0] == "tau":
                j, l = fx.address[1], fx.address[2]
                if which == "low" and l == 0:
                    continue
                if which == "high" and l == sp.K[j] - 2:
                    continue
            fixes.append(fx)
        broken = model.ConstraintSet(
            name="integer-minus-" + which, fixes=tuple(fixes),
            linear_sums=cs.linear_sums, products=cs.products,
        )
        rep = identify.verify_identification(sp, broken)
        print(f"{label} integer minus {which:4s} -> {rep.verdict:16s} rank={rep.jacobian_rank}/{rep.transform_dimension} witness_dist={rep.witness_distance:.3g}")
        assert rep.verdict == "not identifying", rep
print(f"elapsed: {time.time()-t0:.1f}s")

# transform uniqueness: numeric solve agrees with closed form, and two starts agree
sp = specs["(6,1)"]
cs_int = model.make_constraints(sp, "integer")
ps = identify.random_parameter_set(sp, model.make_constraints(sp, "traditional"), rng=3)
_, t_closed = transform.trad_to_integer(ps, sp)
t_num1 = identify.solve_transform(ps, sp, cs_int)
t_num2 = identify.solve_transform(ps, sp, cs_int, rng=11)
for name, a, b in (("closed-vs-num", t_closed, t_num1), ("num-vs-num", t_num1, t_num2)):
    dev = max(
        np.max(np.abs(a.d - b.d)), np.max(np.abs(a.delta - b.delta)),
        np.max(np.abs(a.beta - b.beta)), np.max(np.abs(a.gamma - b.gamma)),
    )
    print(f"{name}: {dev:.2e}")
    assert dev < 1e-9, dev
print("OK")
