"""Affine maps carrying one identified parameterization to another.

A transform rescales each factor (positive diagonal D), rescales each item's
latent response (positive diagonal Delta), and shifts locations (beta for
factors, gamma for items). Model fit is unchanged; only the parameter metric
moves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import model
from .model import ConstraintError, fixed_mask_from, make_constraints


@dataclass(frozen=True, eq=False)
class TransformSet:
    """(D, Delta, beta, gamma) stored via the diagonals d and delta."""

    d: np.ndarray
    delta: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ("d", "delta", "beta", "gamma"):
            object.__setattr__(self, name, model._ro(np.atleast_1d(getattr(self, name))))
        if np.any(self.d <= 0) or np.any(self.delta <= 0):
            raise ConstraintError("D and Delta diagonals must be strictly positive")

    @property
    def D(self):
        return np.diag(self.d)

    @property
    def Delta(self):
        return np.diag(self.delta)

    @staticmethod
    def identity(spec):
        return TransformSet(
            np.ones(spec.m), np.ones(spec.p), np.zeros(spec.m), np.zeros(spec.p)
        )

    def deviation_from_identity(self):
        return max(
            float(np.max(np.abs(self.d - 1.0))),
            float(np.max(np.abs(self.delta - 1.0))),
            float(np.max(np.abs(self.beta))),
            float(np.max(np.abs(self.gamma))),
        )


def apply_transform(params, t):
    """Parameter set on the moved metric: eta_new = D^-1 (eta - beta).

    Thresholds and intercepts pick up gamma after the Delta^-1 rescale; the
    fixed mask is carried over unchanged (callers switching regimes attach
    the target regime's mask themselves).
    """
    p, m = params.lam.shape
    if t.delta.shape != (p,) or t.d.shape != (m,):
        raise ConstraintError("transform dimensions do not match the parameter set")
    inv_delta = 1.0 / t.delta
    nu = inv_delta * (params.nu + params.lam @ t.beta) + t.gamma
    lam = inv_delta[:, None] * params.lam * t.d[None, :]
    tau = tuple(t.gamma[j] + inv_delta[j] * params.tau[j] for j in range(p))
    theta = params.theta * inv_delta**2
    kappa = (params.kappa - t.beta) / t.d
    phi = params.phi / np.outer(t.d, t.d)
    return params.with_(nu=nu, lam=lam, tau=tau, theta=theta, kappa=kappa, phi=phi)


def compose(first, then):
    """Single TransformSet equal to applying `first`, then `then`."""
    return TransformSet(
        d=first.d * then.d,
        delta=first.delta * then.delta,
        beta=first.beta + first.d * then.beta,
        gamma=then.gamma + first.gamma / then.delta,
    )


def inverse(t):
    return TransformSet(
        d=1.0 / t.d,
        delta=1.0 / t.delta,
        beta=-t.beta / t.d,
        gamma=-t.gamma * t.delta,
    )


def _check_traditional(params, spec):
    cs0 = make_constraints(spec, "traditional")
    r = model.max_constraint_residual(params, cs0)
    if r > 1e-8:
        raise ConstraintError(
            "input must satisfy the zero-mean unit-variance regime "
            "(worst residual %.2e)" % r
        )


def _item_scale_and_location(params, spec):
    """Per-item Delta/gamma plus per-factor sums for the integer-style regimes.

    delta_j maps the item's threshold span onto the fixed target span,
    gamma_j pins the first threshold, and for each factor we accumulate
    s_q = sum of delta^-1 lambda (the rescaled signal) and the location sum
    that determines beta_q from the zero-intercept-sum constraint.
    """
    lo, hi, _ = model.integer_threshold_targets(spec)
    delta = np.empty(spec.p)
    gamma = np.empty(spec.p)
    for j in range(spec.p):
        t0, t1 = float(params.tau[j][0]), float(params.tau[j][-1])
        delta[j] = (t1 - t0) / (hi[j] - lo[j])
        gamma[j] = lo[j] - t0 / delta[j]
    per_factor = []
    for q, S in enumerate(spec.pattern):
        idx = np.array(S)
        w = params.lam[idx, q] / delta[idx]
        t0s = np.array([float(params.tau[j][0]) for j in idx])
        loc = float(np.sum(lo[idx] + (params.nu[idx] - t0s) / delta[idx]))
        per_factor.append((idx, w, loc))
    return delta, gamma, per_factor


def trad_to_integer(params, spec, *, check_input=True):
    """Closed-form move from the zero-mean unit-variance regime to integer constraints."""
    if any(k == 2 for k in spec.K):
        raise ConstraintError(
            "closed-form conversion needs at least 3 categories per item "
            "(a single threshold cannot set the item scale); binary items "
            "go through the numeric transform solver instead"
        )
    if check_input:
        _check_traditional(params, spec)
    delta, gamma, per_factor = _item_scale_and_location(params, spec)
    d = np.empty(spec.m)
    beta = np.empty(spec.m)
    for q, (idx, w, loc) in enumerate(per_factor):
        s = float(np.sum(w))
        if s <= 0:
            raise ConstraintError(
                "factor %r has nonpositive summed signal; the mean-1 loading "
                "scale is undefined" % (spec.factor_names[q],)
            )
        d[q] = len(idx) / s
        beta[q] = -loc / s
    t = TransformSet(d=d, delta=delta, beta=beta, gamma=gamma)
    cs = make_constraints(spec, "integer")
    out = apply_transform(params, t).with_(fixed=fixed_mask_from(spec, cs))
    return out, t


def to_traditional(params, spec):
    """Move any identified parameter set onto the zero-mean unit-variance regime.

    Delta = sqrt(theta), D = sqrt(diag phi), beta = kappa,
    gamma = -Delta^-1 (nu + lambda kappa); the output is validated against
    the target constraints.
    """
    delta = np.sqrt(params.theta)
    d = np.sqrt(np.diag(params.phi))
    beta = np.array(params.kappa)
    gamma = -(params.nu + params.lam @ params.kappa) / delta
    t = TransformSet(d=d, delta=delta, beta=beta, gamma=gamma)
    cs = make_constraints(spec, "traditional")
    out = apply_transform(params, t).with_(fixed=fixed_mask_from(spec, cs))
    r = model.max_constraint_residual(out, cs)
    if r > 1e-10:
        raise ConstraintError("conversion left residual %.2e on the target" % r)
    return out, t


def trad_to_regime(params, spec, regime, *, check_input=True, allow_experimental=False):
    """Closed-form move from the zero-mean unit-variance regime to a named regime."""
    if check_input:
        _check_traditional(params, spec)
    if regime in ("traditional", "unit-variance"):
        cs = make_constraints(spec, regime)
        t = TransformSet.identity(spec)
        return params.with_(fixed=fixed_mask_from(spec, cs)), t
    if regime == "reference-indicator":
        d = np.empty(spec.m)
        for q, S in enumerate(spec.pattern):
            ref = min(S)
            lref = float(params.lam[ref, q])
            if lref <= 0:
                raise ConstraintError(
                    "reference loading of factor %r is not positive; cannot "
                    "pin it to 1 with a positive rescale" % (spec.factor_names[q],)
                )
            d[q] = 1.0 / lref
        t = TransformSet(d, np.ones(spec.p), np.zeros(spec.m), np.zeros(spec.p))
    elif regime == "delta":
        total = np.einsum("jq,qr,jr->j", params.lam, params.phi, params.lam) + params.theta
        t = TransformSet(np.ones(spec.m), np.sqrt(total), np.zeros(spec.m), np.zeros(spec.p))
    elif regime == "integer":
        return trad_to_integer(params, spec, check_input=False)
    elif regime == "geometric-mean":
        if any(k == 2 for k in spec.K):
            raise ConstraintError("closed-form conversion needs at least 3 categories per item")
        delta, gamma, per_factor = _item_scale_and_location(params, spec)
        d = np.empty(spec.m)
        beta = np.empty(spec.m)
        for q, (idx, w, loc) in enumerate(per_factor):
            if np.any(w <= 0):
                raise ConstraintError(
                    "loading-product constraints need positive loadings on "
                    "factor %r" % (spec.factor_names[q],)
                )
            d[q] = float(np.exp(-np.mean(np.log(w))))
            beta[q] = -loc / float(np.sum(w))
        t = TransformSet(d=d, delta=delta, beta=beta, gamma=gamma)
        cs = make_constraints(spec, "geometric-mean", allow_experimental=allow_experimental)
        return apply_transform(params, t).with_(fixed=fixed_mask_from(spec, cs)), t
    elif regime == "sumscore-rasch":
        raise ConstraintError(
            "sumscore-rasch pins every parameter; no metric move reaches it"
        )
    else:
        raise ConstraintError("unknown regime %r" % (regime,))
    cs = make_constraints(spec, regime)
    return apply_transform(params, t).with_(fixed=fixed_mask_from(spec, cs)), t


def between_regimes(params, spec, target, *, allow_experimental=False):
    """Move a parameter set satisfying any minimal regime onto `target`."""
    base, t1 = to_traditional(params, spec)
    out, t2 = trad_to_regime(
        base, spec, target, check_input=False, allow_experimental=allow_experimental
    )
    return out, compose(t1, t2)


class RoundTrip(NamedTuple):
    deviation: float
    loglik_drift: float


def roundtrip_check(params, spec, regime_a, regime_b, data=None, grid=None):
    """Transform A -> B -> A and report the largest parameter deviation.

    With data and a quadrature grid supplied, also reports how much the
    marginal log-likelihood moves across the trip (the grid is carried along
    with the metric, so the value is preserved up to roundoff).
    """
    there, t_ab = between_regimes(params, spec, regime_b)
    back, _ = between_regimes(there, spec, regime_a)
    dev = model.max_param_deviation(params, back)
    drift = float("nan")
    if data is not None and grid is not None:
        from .likelihood import marginal_loglik, shift_scale_grid

        ll_a = marginal_loglik(params, spec, data, grid)
        ll_b = marginal_loglik(there, spec, data, shift_scale_grid(grid, t_ab.d, t_ab.beta))
        ll_back = marginal_loglik(back, spec, data, grid)
        drift = max(abs(ll_b - ll_a), abs(ll_back - ll_a))
    return RoundTrip(dev, drift)
