"""Model types and identification constraint systems for ordinal factor models.

The measurement model is probit: each item's integer response is a thresholded
version of a latent continuous response nu + lambda' eta + delta, with
eta ~ N(kappa, Phi) and independent residuals delta_j ~ N(0, theta_j).
Constraint systems ("regimes") pin enough parameters to identify the scale
and location of each factor.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

REGIME_NAMES = (
    "traditional",
    "unit-variance",
    "reference-indicator",
    "delta",
    "integer",
    "sumscore-rasch",
    "geometric-mean",
)

# regimes imposing exactly 2(p+m) constraints; sumscore-rasch pins everything,
# geometric-mean is the experimental loading-product variant of integer
MINIMAL_REGIMES = (
    "traditional",
    "unit-variance",
    "reference-indicator",
    "delta",
    "integer",
)


class SpecError(ValueError):
    """Invalid model specification."""


class ConstraintError(ValueError):
    """Invalid or unusable constraint system."""


def _ro(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Clustered measurement design: item names, category counts, factor pattern.

    pattern[q] is the tuple of item indices loading on factor q; every item
    belongs to exactly one factor.
    """

    item_names: tuple
    K: tuple
    factor_names: tuple
    pattern: tuple

    def __post_init__(self):
        object.__setattr__(self, "item_names", tuple(str(n) for n in self.item_names))
        object.__setattr__(self, "K", tuple(int(k) for k in self.K))
        object.__setattr__(self, "factor_names", tuple(str(n) for n in self.factor_names))
        object.__setattr__(
            self, "pattern", tuple(tuple(int(j) for j in S) for S in self.pattern)
        )
        p = len(self.item_names)
        if len(self.K) != p:
            raise SpecError("item_names and K have different lengths")
        if any(k < 2 for k in self.K):
            raise SpecError("every item needs at least 2 categories")
        if len(self.pattern) != len(self.factor_names):
            raise SpecError("pattern and factor_names have different lengths")
        owner = {}
        for q, S in enumerate(self.pattern):
            if not S:
                raise SpecError("factor %r has no items" % (self.factor_names[q],))
            for j in S:
                if not 0 <= j < p:
                    raise SpecError("item index %d out of range" % j)
                if j in owner:
                    raise SpecError(
                        "item %r loads on more than one factor" % (self.item_names[j],)
                    )
                owner[j] = q
        if len(owner) != p:
            left_out = [self.item_names[j] for j in range(p) if j not in owner]
            raise SpecError("items assigned to no factor: " + ", ".join(left_out))
        object.__setattr__(self, "_factor_of", tuple(owner[j] for j in range(p)))

    @property
    def p(self):
        return len(self.item_names)

    @property
    def m(self):
        return len(self.factor_names)

    @property
    def n_q(self):
        return tuple(len(S) for S in self.pattern)

    @property
    def factor_of(self):
        return self._factor_of

    def factor_kmax(self, q):
        return max(self.K[j] for j in self.pattern[q])

    def total_parameter_count(self):
        # nu, one loading per item, thresholds, theta, kappa, phi upper triangle
        p, m = self.p, self.m
        return p + p + sum(k - 1 for k in self.K) + p + m + m * (m + 1) // 2


def build_model_spec(items, pattern):
    """Build a validated ModelSpec.

    items: mapping name -> K, or sequence of (name, K) pairs.
    pattern: mapping factor name -> sequence of item names.
    """
    pairs = list(items.items()) if isinstance(items, dict) else [(n, k) for n, k in items]
    names = [str(n) for n, _ in pairs]
    if len(set(names)) != len(names):
        raise SpecError("duplicate item names")
    index = {n: j for j, n in enumerate(names)}
    factor_names = []
    sets = []
    for fname, members in pattern.items():
        factor_names.append(str(fname))
        idx = []
        for it in members:
            if str(it) not in index:
                raise SpecError("unknown item %r in factor %r" % (it, fname))
            idx.append(index[str(it)])
        sets.append(tuple(idx))
    return ModelSpec(
        tuple(names),
        tuple(int(k) for _, k in pairs),
        tuple(factor_names),
        tuple(sets),
    )


@dataclass(frozen=True, eq=False)
class FixedMask:
    """Boolean mirror of ParameterSet marking fixed entries."""

    nu: np.ndarray
    lam: np.ndarray
    tau: tuple
    theta: np.ndarray
    kappa: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nu", _ro(self.nu, bool))
        object.__setattr__(self, "lam", _ro(self.lam, bool))
        object.__setattr__(self, "tau", tuple(_ro(t, bool) for t in self.tau))
        object.__setattr__(self, "theta", _ro(self.theta, bool))
        object.__setattr__(self, "kappa", _ro(self.kappa, bool))
        object.__setattr__(self, "phi", _ro(self.phi, bool))

    @staticmethod
    def structural(spec):
        """Only the structural zero loadings are fixed."""
        lam = np.ones((spec.p, spec.m), dtype=bool)
        for q, S in enumerate(spec.pattern):
            for j in S:
                lam[j, q] = False
        return FixedMask(
            np.zeros(spec.p, bool),
            lam,
            tuple(np.zeros(k - 1, bool) for k in spec.K),
            np.zeros(spec.p, bool),
            np.zeros(spec.m, bool),
            np.zeros((spec.m, spec.m), bool),
        )


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """All model parameters plus the fixed/free mask.

    tau is a tuple of per-item arrays; row j holds the K_j - 1 strictly
    increasing thresholds of item j. theta holds residual variances.
    """

    nu: np.ndarray
    lam: np.ndarray
    tau: tuple
    theta: np.ndarray
    kappa: np.ndarray
    phi: np.ndarray
    fixed: FixedMask

    def __post_init__(self):
        object.__setattr__(self, "nu", _ro(self.nu))
        object.__setattr__(self, "lam", _ro(np.atleast_2d(self.lam)))
        object.__setattr__(self, "tau", tuple(_ro(np.atleast_1d(t)) for t in self.tau))
        object.__setattr__(self, "theta", _ro(self.theta))
        object.__setattr__(self, "kappa", _ro(np.atleast_1d(self.kappa)))
        object.__setattr__(self, "phi", _ro(np.atleast_2d(self.phi)))

    def with_(self, **kw):
        return dataclasses.replace(self, **kw)

    def sd(self):
        return np.sqrt(self.theta)

    def tau_padded(self, fill=np.nan):
        kmax = max(t.size for t in self.tau)
        out = np.full((len(self.tau), kmax), fill)
        for j, t in enumerate(self.tau):
            out[j, : t.size] = t
        return out


def check_parameter_set(params, spec, strict=True):
    """Validate shapes and invariants; raises SpecError on violation."""
    p, m = spec.p, spec.m
    if params.nu.shape != (p,):
        raise SpecError("nu must have shape (%d,)" % p)
    if params.lam.shape != (p, m):
        raise SpecError("lambda must have shape (%d, %d)" % (p, m))
    if params.theta.shape != (p,):
        raise SpecError("theta must have shape (%d,)" % p)
    if params.kappa.shape != (m,):
        raise SpecError("kappa must have shape (%d,)" % m)
    if params.phi.shape != (m, m):
        raise SpecError("phi must have shape (%d, %d)" % (m, m))
    if len(params.tau) != p:
        raise SpecError("tau needs one row per item")
    for j, t in enumerate(params.tau):
        if t.size != spec.K[j] - 1:
            raise SpecError("tau row %d must hold %d values" % (j, spec.K[j] - 1))
        if strict and t.size > 1 and np.any(np.diff(t) <= 0):
            raise SpecError("thresholds of item %d are not strictly increasing" % j)
    if strict:
        if np.any(params.theta <= 0):
            raise SpecError("residual variances must be positive")
        if np.max(np.abs(params.phi - params.phi.T)) > 1e-10:
            raise SpecError("phi must be symmetric")
        if np.min(np.linalg.eigvalsh(0.5 * (params.phi + params.phi.T))) <= 0:
            raise SpecError("phi must be positive definite")
        off = np.ones((p, m), dtype=bool)
        for q, S in enumerate(spec.pattern):
            for j in S:
                off[j, q] = False
        if np.any(params.lam[off] != 0):
            raise SpecError("off-pattern loadings must be exactly 0")


class Fix(NamedTuple):
    address: tuple
    value: float


class LinearSum(NamedTuple):
    addresses: tuple
    weights: tuple
    target: float


class Product(NamedTuple):
    addresses: tuple
    target: float


def param_value(params, address):
    kind = address[0]
    if kind == "nu":
        return float(params.nu[address[1]])
    if kind == "lambda":
        return float(params.lam[address[1], address[2]])
    if kind == "tau":
        return float(params.tau[address[1]][address[2]])
    if kind == "theta":
        return float(params.theta[address[1]])
    if kind == "kappa":
        return float(params.kappa[address[1]])
    if kind == "phi":
        return float(params.phi[address[1], address[2]])
    raise KeyError("unknown parameter kind %r" % (kind,))


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """A named identification regime realized as equality constraints.

    fixes pin single scalars; linear_sums constrain weighted sums;
    products constrain loading products (geometric-mean regime);
    unit_total_variance marks the nonlinear per-item constraint
    diag(lam phi lam' + theta) = 1 of the delta regime.
    """

    name: str
    fixes: tuple
    linear_sums: tuple = ()
    products: tuple = ()
    unit_total_variance: bool = False
    experimental: bool = False

    @property
    def count(self):
        return len(self.fixes) + len(self.linear_sums) + len(self.products)

    def count_with_nonlinear(self, spec):
        return self.count + (spec.p if self.unit_total_variance else 0)


class MixedThresholds(NamedTuple):
    lo: float
    hi: float
    fix_intercept: bool


def mixed_category_thresholds(K_j, K_max):
    """Outer threshold targets for a K_j-category item on a K_max category scale.

    Binary items get a single pinned threshold and additionally need their
    intercept fixed at 0 (fix_intercept flag).
    """
    K_j, K_max = int(K_j), int(K_max)
    if K_j < 2:
        raise ConstraintError("need at least 2 categories")
    if K_j > K_max:
        raise ConstraintError("item category count %d exceeds the scale maximum %d" % (K_j, K_max))
    lo = 0.5 + K_max / K_j
    hi = 0.5 + K_max * (K_j - 1) / K_j
    return MixedThresholds(lo, hi, K_j == 2)


def integer_threshold_targets(spec):
    """Per-item (lo, hi) threshold targets under integer constraints.

    The scale maximum is taken per factor, so each factor lands on its own
    item metric.
    """
    lo = np.empty(spec.p)
    hi = np.empty(spec.p)
    fix_nu = np.zeros(spec.p, dtype=bool)
    for q, S in enumerate(spec.pattern):
        kmax = spec.factor_kmax(q)
        for j in S:
            t = mixed_category_thresholds(spec.K[j], kmax)
            lo[j], hi[j], fix_nu[j] = t.lo, t.hi, t.fix_intercept
    return lo, hi, fix_nu


def _check_no_conflicts(fixes):
    seen = {}
    for addr, v in fixes:
        if addr in seen and seen[addr] != v:
            raise ConstraintError("conflicting fixes at %r" % (addr,))
        seen[addr] = v


def make_constraints(spec, name, *, phi_value=None, allow_experimental=False,
                     apply_binary_rule=True):
    """Build the named identification regime for the given spec.

    phi_value overrides the fixed latent (co)variance of sumscore-rasch:
    scalar for a common diagonal value, or a full m x m matrix.
    """
    if name not in REGIME_NAMES:
        raise ConstraintError(
            "unknown regime %r; choose one of %s" % (name, ", ".join(REGIME_NAMES))
        )
    p, m = spec.p, spec.m
    fixes = []
    linear_sums = []
    products = []
    unit_total_variance = False
    experimental = False

    if name in ("traditional", "unit-variance"):
        fixes += [Fix(("nu", j), 0.0) for j in range(p)]
        fixes += [Fix(("theta", j), 1.0) for j in range(p)]
        fixes += [Fix(("kappa", q), 0.0) for q in range(m)]
        fixes += [Fix(("phi", q, q), 1.0) for q in range(m)]

    elif name == "reference-indicator":
        fixes += [Fix(("nu", j), 0.0) for j in range(p)]
        fixes += [Fix(("theta", j), 1.0) for j in range(p)]
        fixes += [Fix(("kappa", q), 0.0) for q in range(m)]
        # unit loading on the lowest-indexed item of each factor
        fixes += [Fix(("lambda", min(S), q), 1.0) for q, S in enumerate(spec.pattern)]

    elif name == "delta":
        fixes += [Fix(("nu", j), 0.0) for j in range(p)]
        fixes += [Fix(("kappa", q), 0.0) for q in range(m)]
        fixes += [Fix(("phi", q, q), 1.0) for q in range(m)]
        unit_total_variance = True

    elif name in ("integer", "geometric-mean"):
        lo, hi, fix_nu = integer_threshold_targets(spec)
        for j in range(p):
            if fix_nu[j]:
                if not apply_binary_rule:
                    raise ConstraintError(
                        "item %r has 2 categories; the integer regime needs the "
                        "binary rule from mixed_category_thresholds (single "
                        "threshold fix plus a zero intercept)" % (spec.item_names[j],)
                    )
                fixes.append(Fix(("tau", j, 0), lo[j]))
                fixes.append(Fix(("nu", j), 0.0))
            else:
                fixes.append(Fix(("tau", j, 0), lo[j]))
                fixes.append(Fix(("tau", j, spec.K[j] - 2), hi[j]))
        for q, S in enumerate(spec.pattern):
            linear_sums.append(
                LinearSum(tuple(("nu", j) for j in S), (1.0,) * len(S), 0.0)
            )
            if name == "integer":
                # mean loading 1 per factor
                linear_sums.append(
                    LinearSum(tuple(("lambda", j, q) for j in S), (1.0,) * len(S), float(len(S)))
                )
            else:
                products.append(Product(tuple(("lambda", j, q) for j in S), 1.0))
        if name == "geometric-mean":
            if not allow_experimental:
                raise ConstraintError(
                    "geometric-mean is experimental; pass allow_experimental=True"
                )
            warnings.warn(
                "geometric-mean loading constraints leave loading signs "
                "undetermined (an even number of sign flips preserves the "
                "product); estimates may land on a sign-flipped solution",
                UserWarning,
                stacklevel=2,
            )
            experimental = True

    elif name == "sumscore-rasch":
        for q, S in enumerate(spec.pattern):
            Ks = {spec.K[j] for j in S}
            if len(Ks) > 1:
                raise ConstraintError(
                    "sumscore-rasch needs a single category count within factor %r"
                    % (spec.factor_names[q],)
                )
            Kq = Ks.pop()
            fixes.append(Fix(("kappa", q), (Kq + 1) / 2.0))
            for j in S:
                fixes.append(Fix(("lambda", j, q), 1.0))
                fixes.append(Fix(("nu", j), 0.0))
                fixes.append(Fix(("theta", j), 1.0))
                for l in range(Kq - 1):
                    fixes.append(Fix(("tau", j, l), 1.5 + l))
        if phi_value is None:
            diag = [float(len(S)) for S in spec.pattern]
            for q in range(m):
                fixes.append(Fix(("phi", q, q), diag[q]))
                for r in range(q + 1, m):
                    fixes.append(Fix(("phi", q, r), 0.0))
        else:
            pv = np.asarray(phi_value, dtype=float)
            if pv.ndim == 0:
                for q in range(m):
                    fixes.append(Fix(("phi", q, q), float(pv)))
                    for r in range(q + 1, m):
                        fixes.append(Fix(("phi", q, r), 0.0))
            else:
                if pv.shape != (m, m):
                    raise ConstraintError("phi_value must be scalar or m x m")
                for q in range(m):
                    for r in range(q, m):
                        fixes.append(Fix(("phi", q, r), float(pv[q, r])))

    _check_no_conflicts(fixes)
    return ConstraintSet(
        name=name,
        fixes=tuple(fixes),
        linear_sums=tuple(linear_sums),
        products=tuple(products),
        unit_total_variance=unit_total_variance,
        experimental=experimental,
    )


def fixed_mask_from(spec, cs):
    """FixedMask implied by a constraint system (structural zeros included)."""
    base = FixedMask.structural(spec)
    nu = np.array(base.nu)
    lam = np.array(base.lam)
    tau = [np.array(t) for t in base.tau]
    theta = np.array(base.theta)
    kappa = np.array(base.kappa)
    phi = np.array(base.phi)
    for addr, _ in cs.fixes:
        kind = addr[0]
        if kind == "nu":
            nu[addr[1]] = True
        elif kind == "lambda":
            lam[addr[1], addr[2]] = True
        elif kind == "tau":
            tau[addr[1]][addr[2]] = True
        elif kind == "theta":
            theta[addr[1]] = True
        elif kind == "kappa":
            kappa[addr[1]] = True
        elif kind == "phi":
            phi[addr[1], addr[2]] = True
            phi[addr[2], addr[1]] = True
    return FixedMask(nu, lam, tuple(tau), theta, kappa, phi)


def constraint_residuals(params, cs):
    """Signed residuals of every constraint, in construction order."""
    out = []
    for addr, target in cs.fixes:
        out.append(param_value(params, addr) - target)
    for ls in cs.linear_sums:
        s = 0.0
        for a, w in zip(ls.addresses, ls.weights):
            s += w * param_value(params, a)
        out.append(s - ls.target)
    for pr in cs.products:
        prod = 1.0
        for a in pr.addresses:
            prod *= param_value(params, a)
        out.append(prod - pr.target)
    if cs.unit_total_variance:
        total = np.einsum("jq,qr,jr->j", params.lam, params.phi, params.lam) + params.theta
        out.extend(total - 1.0)
    return np.asarray(out, dtype=float)


def max_constraint_residual(params, cs):
    r = constraint_residuals(params, cs)
    return float(np.max(np.abs(r))) if r.size else 0.0


def free_parameter_count(spec, cs):
    """Free parameters left once the constraint system is imposed."""
    mask = fixed_mask_from(spec, cs)
    free = int(np.sum(~mask.nu)) + int(np.sum(~mask.lam)) + int(np.sum(~mask.theta))
    free += sum(int(np.sum(~t)) for t in mask.tau)
    free += int(np.sum(~mask.kappa))
    iu = np.triu_indices(spec.m)
    free += int(np.sum(~mask.phi[iu]))
    fixed_addrs = {a for a, _ in cs.fixes}
    for ls in cs.linear_sums:
        if any(a not in fixed_addrs for a in ls.addresses):
            free -= 1
    for pr in cs.products:
        if any(a not in fixed_addrs for a in pr.addresses):
            free -= 1
    if cs.unit_total_variance:
        free -= spec.p
    return free


def project_onto_constraints(params, spec, cs):
    """Repair a parameter set so it satisfies the constraint system.

    Used on starting values: fixes are set directly, threshold rows are
    affinely mapped onto fixed endpoints, intercept sums are met by shifting
    the free entries, loading sums by rescaling, the delta regime's residual
    variances by 1 - communality (floored at 0.05).
    """
    nu = np.array(params.nu)
    lam = np.array(params.lam)
    tau = [np.array(t) for t in params.tau]
    theta = np.array(params.theta)
    kappa = np.array(params.kappa)
    phi = np.array(params.phi)

    tau_fixes = {}
    diag_fixes = {}
    offdiag_fixes = []
    for addr, v in cs.fixes:
        kind = addr[0]
        if kind == "nu":
            nu[addr[1]] = v
        elif kind == "lambda":
            lam[addr[1], addr[2]] = v
        elif kind == "theta":
            theta[addr[1]] = v
        elif kind == "kappa":
            kappa[addr[1]] = v
        elif kind == "tau":
            tau_fixes.setdefault(addr[1], {})[addr[2]] = v
        elif kind == "phi":
            if addr[1] == addr[2]:
                diag_fixes[addr[1]] = v
            else:
                offdiag_fixes.append((addr[1], addr[2], v))

    # diagonal phi fixes rescale rows/columns so correlations survive
    if diag_fixes:
        s = np.ones(spec.m)
        for q, v in diag_fixes.items():
            if phi[q, q] <= 0:
                phi[q, q] = 1.0
            s[q] = np.sqrt(v / phi[q, q])
        phi = phi * np.outer(s, s)
        for q, v in diag_fixes.items():
            phi[q, q] = v
    for q, r, v in offdiag_fixes:
        phi[q, r] = v
        phi[r, q] = v

    for j, fl in tau_fixes.items():
        row = tau[j]
        K1 = row.size
        if len(fl) == K1:
            for l, v in fl.items():
                row[l] = v
        elif set(fl) == {0, K1 - 1}:
            lo_v, hi_v = fl[0], fl[K1 - 1]
            span = row[-1] - row[0]
            if span <= 0:
                row[:] = np.linspace(lo_v, hi_v, K1)
            else:
                row[:] = lo_v + (row - row[0]) * (hi_v - lo_v) / span
            row[0], row[-1] = lo_v, hi_v
        elif set(fl) == {0}:
            row += fl[0] - row[0]
        else:
            for l, v in fl.items():
                row[l] = v
            for l in range(1, K1):
                if row[l] <= row[l - 1]:
                    row[l] = row[l - 1] + 1e-3

    fixed_addrs = {a for a, _ in cs.fixes}
    for ls in cs.linear_sums:
        kind = ls.addresses[0][0]
        free_pos = [i for i, a in enumerate(ls.addresses) if a not in fixed_addrs]
        if not free_pos:
            continue
        if kind == "nu":
            idx = [a[1] for a in ls.addresses]
            cur = sum(w * nu[j] for w, j in zip(ls.weights, idx))
            adj = (ls.target - cur) / sum(ls.weights[i] for i in free_pos)
            for i in free_pos:
                nu[idx[i]] += adj
        elif kind == "lambda":
            pos = [(a[1], a[2]) for a in ls.addresses]
            fixed_part = sum(
                ls.weights[i] * lam[pos[i]]
                for i in range(len(pos))
                if i not in free_pos
            )
            free_part = sum(ls.weights[i] * lam[pos[i]] for i in free_pos)
            need = ls.target - fixed_part
            if free_part > 1e-8 and need > 0:
                scale = need / free_part
                for i in free_pos:
                    lam[pos[i]] *= scale
            else:
                even = need / sum(ls.weights[i] for i in free_pos)
                for i in free_pos:
                    lam[pos[i]] = even

    for pr in cs.products:
        pos = [(a[1], a[2]) for a in pr.addresses]
        vals = np.array([abs(lam[t]) for t in pos])
        vals = np.where(vals < 1e-3, 1e-3, vals)
        g = np.exp(np.mean(np.log(vals)))
        scale = pr.target ** (1.0 / len(pos)) / g
        for t, v in zip(pos, vals):
            lam[t] = v * scale

    if cs.unit_total_variance:
        total = np.einsum("jq,qr,jr->j", lam, phi, lam)
        theta = np.maximum(1.0 - total, 0.05)

    return ParameterSet(
        nu=nu,
        lam=lam,
        tau=tuple(tau),
        theta=theta,
        kappa=kappa,
        phi=phi,
        fixed=fixed_mask_from(spec, cs),
    )


def max_param_deviation(a, b):
    """Largest absolute entrywise difference between two parameter sets."""
    devs = [
        float(np.max(np.abs(a.nu - b.nu), initial=0.0)),
        float(np.max(np.abs(a.lam - b.lam), initial=0.0)),
        float(np.max(np.abs(a.theta - b.theta), initial=0.0)),
        float(np.max(np.abs(a.kappa - b.kappa), initial=0.0)),
        float(np.max(np.abs(a.phi - b.phi), initial=0.0)),
    ]
    for ta, tb in zip(a.tau, b.tau):
        devs.append(float(np.max(np.abs(ta - tb), initial=0.0)))
    return max(devs)
