"""Latent-variable prediction and the exhaustive response-pattern sweep.

MAP scores maximize the posterior density of eta given a row; ML scores
maximize the conditional likelihood alone and can diverge for extreme
patterns, which is reported as a flag rather than an error. The sweep
enumerates all K^p patterns, scoring each and comparing against the plain
observed average of the integer codes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import ndtr

from . import likelihood, model


class ScoreError(RuntimeError):
    """Latent-score optimization failed to meet its tolerance."""


def observed_average(row, spec=None):
    """Arithmetic mean of the integer-coded responses."""
    row = np.asarray(row, dtype=float)
    return float(row.mean())


def _newton_max(value_fn, grad_fn, eta0, *, lo=None, hi=None,
                step_tol=1e-8, max_iter=200, h=1e-5):
    """Safeguarded Newton ascent with box projection; FD Hessian of the
    analytic gradient."""
    eta = np.asarray(eta0, dtype=float).copy()
    m = eta.size
    f0 = value_fn(eta)
    for _ in range(max_iter):
        g = grad_fn(eta)
        H = np.empty((m, m))
        for i in range(m):
            ep = eta.copy()
            ep[i] += h
            em = eta.copy()
            em[i] -= h
            H[:, i] = (grad_fn(ep) - grad_fn(em)) / (2 * h)
        H = 0.5 * (H + H.T)
        try:
            step = np.linalg.solve(H, -g)
            if float(step @ g) <= 0:  # not an ascent direction; safeguard
                step = g / max(1.0, float(np.max(np.abs(H))))
        except np.linalg.LinAlgError:
            step = g / max(1.0, float(np.abs(H).max()))
        t = 1.0
        moved = False
        for _ in range(40):
            cand = eta + t * step
            if lo is not None:
                cand = np.clip(cand, lo, hi)
            f1 = value_fn(cand)
            if f1 >= f0 - 1e-12:
                actual = np.max(np.abs(cand - eta))
                eta, f0 = cand, f1
                moved = actual > 0
                if actual < step_tol:
                    return eta, grad_fn(eta), True
                break
            t *= 0.5
        if not moved:
            return eta, grad_fn(eta), np.max(np.abs(grad_fn(eta))) < 1e-6
    return eta, grad_fn(eta), False


def map_score(params, spec, row, *, step_tol=1e-8, max_iter=200):
    """Posterior mode of eta for one complete response row."""
    row = np.asarray(row, dtype=int)
    Y = row[None, :]

    def value(eta):
        return likelihood.posterior_logdensity(params, spec, row, eta)

    def grad(eta):
        _, g = likelihood.posterior_score_batch(params, spec, Y, eta[None, :])
        return g[0]

    eta, g, ok = _newton_max(value, grad, params.kappa)
    if not ok:
        raise ScoreError(
            "posterior-mode search did not converge (gradient %.3g at %s)"
            % (np.max(np.abs(g)), np.array2string(eta, precision=4))
        )
    return eta


class MLScore(NamedTuple):
    eta: Optional[np.ndarray]  # None when diverged
    diverged: bool
    direction: Optional[np.ndarray]  # per-factor -1/0/+1 when diverged


def ml_score(params, spec, row, *, bound_sds=10.0, step_tol=1e-8):
    """Conditional-ML score; divergence is a return state, not an error.

    The maximizer is searched inside kappa +- bound_sds prior SDs; landing
    on the boundary with an outward gradient is reported as divergence in
    that direction.
    """
    row = np.asarray(row, dtype=int)
    Y = row[None, :]
    sd = np.sqrt(np.diag(params.phi))
    lo = params.kappa - bound_sds * sd
    hi = params.kappa + bound_sds * sd

    def value(eta):
        return likelihood.conditional_loglik(params, spec, row, eta)

    def grad(eta):
        _, g = likelihood.conditional_score_batch(params, spec, Y, eta[None, :])
        return g[0]

    eta, g, _ = _newton_max(value, grad, params.kappa, lo=lo, hi=hi,
                            step_tol=step_tol)
    direction = np.zeros(eta.size, dtype=int)
    edge = 1e-8 * np.maximum(1.0, np.abs(hi - lo))
    direction[(eta >= hi - edge) & (g > 0)] = 1
    direction[(eta <= lo + edge) & (g < 0)] = -1
    if np.any(direction != 0):
        return MLScore(eta=None, diverged=True, direction=direction)
    return MLScore(eta=eta, diverged=False, direction=None)


@dataclass(frozen=True)
class SweepRow:
    pattern: tuple
    average: float
    map: np.ndarray
    ml: Optional[np.ndarray]
    ml_diverged: bool
    ml_direction: Optional[np.ndarray]
    extreme: bool  # contains a lowest or highest category


def _items_interchangeable(params, spec):
    if len(set(spec.K)) != 1 or spec.m != 1:
        return False
    lam = params.lam[:, 0]
    t0 = params.tau[0]
    return (
        np.ptp(lam) < 1e-12
        and np.ptp(params.nu) < 1e-12
        and np.ptp(params.theta) < 1e-12
        and all(np.max(np.abs(t - t0)) < 1e-12 for t in params.tau[1:])
    )


def pattern_sweep(params, spec, *, cap=10**7):
    """Score every possible response pattern.

    When the items are interchangeable (one factor, identical item
    parameters), permutation-equivalent patterns are scored once and the
    result reused; the output still carries one row per pattern.
    """
    sizes = [int(k) for k in spec.K]
    total = 1
    for k in sizes:
        total *= k
    if total > cap:
        raise ValueError(
            "pattern space has %d rows (cap %d); score a sample of rows instead"
            % (total, cap)
        )
    dedup = _items_interchangeable(params, spec)
    cache = {}
    rows = []
    for pattern in itertools.product(*(range(1, k + 1) for k in sizes)):
        key = tuple(sorted(pattern)) if dedup else pattern
        got = cache.get(key)
        if got is None:
            arr = np.asarray(pattern, dtype=int)
            mp = map_score(params, spec, arr)
            ml = ml_score(params, spec, arr)
            got = (mp, ml)
            cache[key] = got
        mp, ml = got
        extreme = any(
            c == 1 or c == k for c, k in zip(pattern, sizes)
        )
        rows.append(
            SweepRow(
                pattern=pattern,
                average=observed_average(pattern),
                map=mp,
                ml=ml.eta,
                ml_diverged=ml.diverged,
                ml_direction=ml.direction,
                extreme=extreme,
            )
        )
    return rows


def expected_average_curve(params, spec, eta_grid):
    """Expected observed average as a function of eta.

    E[Y_j | eta] = K_j - sum_l Phi((tau_jl - mu_j)/sd_j); the curve is the
    item mean of these, bounded in (1, K) and nondecreasing when loadings
    are nonnegative.
    """
    eta_grid = np.asarray(eta_grid, dtype=float)
    if eta_grid.ndim == 1:
        eta_grid = eta_grid[:, None]
    if eta_grid.shape[1] != spec.m:
        raise ValueError("eta grid must have one column per factor")
    if not np.all(np.isfinite(eta_grid)):
        raise ValueError("eta grid must be finite")
    sd = params.sd()
    mu = params.nu[None, :] + eta_grid @ params.lam.T  # (G, p)
    out = np.zeros(eta_grid.shape[0])
    for j in range(spec.p):
        z = (params.tau[j][None, :] - mu[:, j][:, None]) / sd[j]
        out += spec.K[j] - ndtr(z).sum(axis=1)
    return out / spec.p


def rasch_reference_params(p, K, *, phi=None):
    """The fully pinned interchangeable-item configuration used by the
    pattern-sweep demonstration: kappa=(K+1)/2 and prior variance p unless
    overridden."""
    spec = model.build_model_spec(
        {("item%d" % i): K for i in range(p)},
        {"f": ["item%d" % i for i in range(p)]},
    )
    cs = model.make_constraints(spec, "sumscore-rasch", phi_value=phi)
    ps = model.ParameterSet(
        nu=np.zeros(p), lam=np.ones((p, 1)),
        tau=tuple(np.arange(1, K) + 0.5 for _ in range(p)),
        theta=np.ones(p), kappa=np.array([(K + 1) / 2.0]),
        phi=np.eye(1) * (phi if phi is not None else p),
        fixed=model.fixed_mask_from(spec, cs),
    )
    if model.max_constraint_residual(ps, cs) > 1e-12:
        ps = model.project_onto_constraints(ps, spec, cs)
    return spec, ps
