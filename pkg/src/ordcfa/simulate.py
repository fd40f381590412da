"""Population models, seeded data generation, and the reduced Monte Carlo
study comparing identification regimes.

Populations are three correlated factors with equal standardized loadings
on a unit-variance latent-response scale. Response distributions follow the
named target probability vectors; sparse (skewed or middling) marginals are
applied to a leading fraction of each factor's items, the remainder staying
symmetric. Replication streams are counter-based so results do not depend
on execution order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri

from . import estimate, likelihood, model

STUDY_REGIMES = ("unit-variance", "reference-indicator", "integer")
START_REGIMES = ("simple", "default")


def _cs_corr(m, rho):
    c = np.full((m, m), rho, dtype=float)
    np.fill_diagonal(c, 1.0)
    return c


@dataclass(frozen=True)
class PopulationCondition:
    indicators_per_factor: int  # 3 or 6
    loading: float  # standardized magnitude: .4, .6, .8
    K: int  # 3, 4, or 5
    response_distribution: str  # symmetric | skewed | middling
    prop_sparse: float = 1.0  # fraction of items per factor given the
    # sparse marginal; ignored for symmetric
    factor_correlations: Optional[np.ndarray] = None  # default 0.3 compound
    n: int = 500
    seed: Optional[int] = None  # cell-stream component; cell index if None

    def label(self):
        return "p%d_l%.1f_K%d_%s_s%.2f" % (
            self.indicators_per_factor, self.loading, self.K,
            self.response_distribution, self.prop_sparse,
        )


def response_probabilities(kind, K):
    """Target marginal category probabilities for one item."""
    if kind == "symmetric":
        return np.full(K, 1.0 / K)
    if kind == "skewed":
        # highest option .04, next .06, remaining mass split equally below
        rest = (1.0 - 0.10) / (K - 2)
        return np.array([rest] * (K - 2) + [0.06, 0.04])
    if kind == "middling":
        # both extremes .05, middle mass split equally
        rest = (1.0 - 0.10) / (K - 2)
        return np.array([0.05] + [rest] * (K - 2) + [0.05])
    raise ValueError("unknown response distribution %r" % kind)


def _thresholds_for(probs):
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError("category probabilities must be positive and sum to 1")
    cum = np.cumsum(probs)[:-1]
    if np.any(np.diff(cum) <= 0) or cum[0] <= 0 or cum[-1] >= 1:
        raise ValueError("infeasible probability vector %s" % probs)
    return ndtri(cum)


def condition_spec(cond):
    """The three-factor clustered measurement design of a condition."""
    nq = cond.indicators_per_factor
    items = {}
    pattern = {}
    for q in range(3):
        names = ["f%d_i%d" % (q + 1, i + 1) for i in range(nq)]
        for nm in names:
            items[nm] = cond.K
        pattern["F%d" % (q + 1)] = names
    return model.build_model_spec(items, pattern)


def make_population(cond):
    """Population parameter set on the standardized (traditional) scale."""
    spec = condition_spec(cond)
    nq = cond.indicators_per_factor
    lam_val = float(cond.loading)
    phi = (
        np.asarray(cond.factor_correlations, dtype=float)
        if cond.factor_correlations is not None
        else _cs_corr(3, 0.3)
    )
    if phi.shape != (3, 3):
        raise ValueError("factor correlations must be 3x3")

    lam = np.zeros((spec.p, spec.m))
    tau = []
    n_sparse = (
        0
        if cond.response_distribution == "symmetric"
        else int(np.ceil(cond.prop_sparse * nq))
    )
    sym = _thresholds_for(response_probabilities("symmetric", cond.K))
    spr = (
        _thresholds_for(
            response_probabilities(cond.response_distribution, cond.K)
        )
        if n_sparse
        else None
    )
    for q in range(3):
        for i in range(nq):
            j = q * nq + i
            lam[j, q] = lam_val
            tau.append((spr if i < n_sparse else sym).copy())

    ps = model.ParameterSet(
        nu=np.zeros(spec.p),
        lam=lam,
        tau=tuple(tau),
        theta=np.full(spec.p, 1.0 - lam_val**2),
        kappa=np.zeros(3),
        phi=phi,
        fixed=model.FixedMask.structural(spec),
    )
    model.check_parameter_set(ps, spec)
    return ps


def generate_dataset(pop, n, seed):
    """Draw latent vectors, chop the latent responses at the thresholds.

    Deterministic per seed (counter-based stream); needs only the parameter
    set, whose loading pattern and threshold rows fix the design.
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    p = pop.nu.size
    m = pop.kappa.size
    L = np.linalg.cholesky(pop.phi)
    eta = pop.kappa[None, :] + rng.standard_normal((n, m)) @ L.T
    ystar = pop.nu[None, :] + eta @ pop.lam.T
    ystar += rng.standard_normal((n, p)) * np.sqrt(pop.theta)[None, :]
    Y = np.ones((n, p), dtype=int)
    for j in range(p):
        Y[:, j] += np.sum(ystar[:, j][:, None] > pop.tau[j][None, :], axis=1)
    return likelihood.ResponseMatrix(Y)


def replication_key(master_seed, cell_index, rep):
    """Counter-based stream key: results cannot depend on execution order."""
    return (int(master_seed) << 64) | (int(cell_index) << 32) | int(rep)


@dataclass(frozen=True)
class FitRecord:
    cell: str
    rep: int
    regime: str
    start: str
    converged: bool
    admissible: bool
    deviance: float  # under the regime's own fitting grid
    deviance_common: float  # standardized solution under the shared grid;
    # quadrature error is common across regimes and cancels in differences
    gradient_norm: float
    iterations: int
    seconds: float


_PAIR_NAMES = tuple(
    "%s+%s" % (a, b)
    for i, a in enumerate(STUDY_REGIMES)
    for b in STUDY_REGIMES[i + 1:]
)
_PAIR_BUCKETS = {
    frozenset(name.split("+")): name for name in _PAIR_NAMES
}

ATTRIBUTION_BUCKETS = ("All",) + STUDY_REGIMES + _PAIR_NAMES + ("None",)


@dataclass(frozen=True)
class CellSummary:
    condition: PopulationCondition
    n_reps: int
    # regime -> rate, a replication counting when any start produced the event
    converged: dict
    admissible: dict
    converged_admissible: dict
    # regime -> start -> rate
    by_start: dict
    equality_rate: float  # all three rounded deviances equal, of compared reps
    compared: int  # reps where every regime had a usable fit
    max_deviance_spread: float  # before rounding, over compared reps
    attribution: dict  # bucket -> count; buckets partition the reps


@dataclass(frozen=True)
class StudySummary:
    cells: tuple
    reps: int
    master_seed: int

    def identical_fit_rows(self):
        rows = [("cell", "compared", "identical_fit_rate", "max_spread")]
        for c in self.cells:
            rows.append(
                (c.condition.label(), c.compared,
                 round(c.equality_rate, 4), c.max_deviance_spread)
            )
        return rows

    def attribution_rows(self):
        rows = [("cell",) + ATTRIBUTION_BUCKETS]
        for c in self.cells:
            rows.append(
                (c.condition.label(),)
                + tuple(c.attribution.get(b, 0) for b in ATTRIBUTION_BUCKETS)
            )
        return rows

    def rate_rows(self):
        rows = [("cell", "regime", "start", "converged", "admissible",
                 "converged_admissible")]
        for c in self.cells:
            for r in STUDY_REGIMES:
                for s in START_REGIMES:
                    d = c.by_start[r][s]
                    rows.append(
                        (c.condition.label(), r, s,
                         round(d["converged"], 4), round(d["admissible"], 4),
                         round(d["converged_admissible"], 4))
                    )
                rows.append(
                    (c.condition.label(), r, "either",
                     round(c.converged[r], 4), round(c.admissible[r], 4),
                     round(c.converged_admissible[r], 4))
                )
        return rows


def run_study(conditions, *, regimes=STUDY_REGIMES, reps=50,
              starts=START_REGIMES, master_seed=20260822, n_nodes=11,
              n_eval_nodes=31, fit_options=None, log=None, progress=None):
    """Fit every regime from every start on each replication; never fatal on
    an individual fit. Returns (records, StudySummary).

    Fits run on moderately sized per-regime grids; comparisons standardize
    each solution and evaluate it under one fine shared grid (value-only
    evaluation is cheap), so deviance differences are free of per-regime
    grid placement error.
    """
    fit_options = dict(fit_options or {})
    records = []
    for ci, cond in enumerate(conditions):
        pop = make_population(cond)
        spec = condition_spec(cond)
        cell_component = cond.seed if cond.seed is not None else ci
        css = {r: model.make_constraints(spec, r) for r in regimes}
        # one shared grid on the traditional scale; every fitted solution is
        # standardized and re-evaluated under it for comparisons
        eval_grid = likelihood.gh_grid(
            np.zeros(spec.m), np.ones(spec.m), n_eval_nodes
        )
        for rep in range(reps):
            key = replication_key(master_seed, cell_component, rep)
            data = generate_dataset(pop, cond.n, key)
            grids = {r: estimate.default_grid(spec, data, css[r], n_nodes=n_nodes)
                     for r in regimes}
            for r in regimes:
                for s in starts:
                    t0 = time.time()
                    try:
                        st = estimate.starting_values(spec, data, css[r], s)
                        fit = estimate.fit_mml(
                            spec, data, css[r], start=st, grid=grids[r],
                            **fit_options,
                        )
                        try:
                            dev_c = -2.0 * estimate.common_scale_loglik(
                                fit, spec, data, eval_grid
                            )
                        except Exception:  # unstandardizable solution
                            dev_c = float("nan")
                        rec = FitRecord(
                            cell=cond.label(), rep=rep, regime=r, start=s,
                            converged=fit.converged, admissible=fit.admissible,
                            deviance=-2.0 * fit.loglik, deviance_common=dev_c,
                            gradient_norm=fit.gradient_norm,
                            iterations=fit.iterations,
                            seconds=time.time() - t0,
                        )
                    except Exception as e:  # individual failures are data
                        rec = FitRecord(
                            cell=cond.label(), rep=rep, regime=r, start=s,
                            converged=False, admissible=False,
                            deviance=float("nan"),
                            deviance_common=float("nan"),
                            gradient_norm=float("nan"),
                            iterations=0, seconds=time.time() - t0,
                        )
                        if log is not None:
                            log.append("%s rep %d %s/%s: %s" % (
                                cond.label(), rep, r, s, e))
                    records.append(rec)
            if progress is not None:
                progress(cond.label(), rep)
    return records, summarize(records, conditions, reps=reps,
                              master_seed=master_seed)


def summarize(records, conditions, *, reps, master_seed=0,
              regimes=STUDY_REGIMES, starts=START_REGIMES):
    """Aggregate raw fit records into per-cell rates and attribution grids."""
    by_cell = {}
    for rec in records:
        by_cell.setdefault(rec.cell, []).append(rec)
    cells = []
    for cond in conditions:
        recs = by_cell.get(cond.label(), [])
        conv = {}
        adm = {}
        convadm = {}
        by_start = {}
        # usable deviance per (rep, regime): best converged+admissible fit
        usable = {}
        for r in regimes:
            conv[r] = adm[r] = convadm[r] = 0.0
            by_start[r] = {
                s: {"converged": 0.0, "admissible": 0.0,
                    "converged_admissible": 0.0}
                for s in starts
            }
        for rep in range(reps):
            rep_recs = [x for x in recs if x.rep == rep]
            for r in regimes:
                rr = [x for x in rep_recs if x.regime == r]
                if any(x.converged for x in rr):
                    conv[r] += 1
                if any(x.admissible for x in rr):
                    adm[r] += 1
                good = [x for x in rr if x.converged and x.admissible
                        and np.isfinite(x.deviance)]
                if good:
                    convadm[r] += 1
                comparable = [x.deviance_common for x in good
                              if np.isfinite(x.deviance_common)]
                if comparable:
                    usable[(rep, r)] = min(comparable)
                for s in starts:
                    xs = [x for x in rr if x.start == s]
                    if xs:
                        x = xs[0]
                        by_start[r][s]["converged"] += x.converged
                        by_start[r][s]["admissible"] += x.admissible
                        by_start[r][s]["converged_admissible"] += (
                            x.converged and x.admissible
                        )
        for r in regimes:
            conv[r] /= reps
            adm[r] /= reps
            convadm[r] /= reps
            for s in starts:
                for k in by_start[r][s]:
                    by_start[r][s][k] /= reps

        compared = 0
        equal = 0
        spread_max = 0.0
        attribution = {b: 0 for b in ATTRIBUTION_BUCKETS}
        for rep in range(reps):
            devs = {r: usable.get((rep, r)) for r in regimes}
            if any(v is None for v in devs.values()):
                attribution["None"] += 1
                continue
            compared += 1
            vals = np.array([devs[r] for r in regimes])
            spread_max = max(spread_max, float(vals.max() - vals.min()))
            rounded = np.round(vals, 3)
            if np.all(rounded == rounded[0]):
                equal += 1
                attribution["All"] += 1
                continue
            best = rounded.min()
            winners = [r for r, v in zip(regimes, rounded) if v == best]
            if len(winners) == 1:
                attribution[winners[0]] += 1
            elif len(winners) == 2:
                attribution[_PAIR_BUCKETS[frozenset(winners)]] += 1
            else:
                attribution["All"] += 1
        cells.append(
            CellSummary(
                condition=cond, n_reps=reps, converged=conv, admissible=adm,
                converged_admissible=convadm, by_start=by_start,
                equality_rate=(equal / compared) if compared else float("nan"),
                compared=compared, max_deviance_spread=spread_max,
                attribution=attribution,
            )
        )
    return StudySummary(cells=tuple(cells), reps=reps, master_seed=master_seed)


def reduced_study_conditions():
    """The four hard corners (6 indicators, K=3, loadings .4/.8, skewed and
    middling, fully sparse) plus one easy cell (6, .8, K=5, symmetric)."""
    cells = []
    for loading in (0.4, 0.8):
        for dist in ("skewed", "middling"):
            cells.append(
                PopulationCondition(
                    indicators_per_factor=6, loading=loading, K=3,
                    response_distribution=dist, prop_sparse=1.0,
                )
            )
    cells.append(
        PopulationCondition(
            indicators_per_factor=6, loading=0.8, K=5,
            response_distribution="symmetric",
        )
    )
    return cells
