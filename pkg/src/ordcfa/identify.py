"""Numerical check that a constraint system pins down the parameterization.

A constraint system identifies the model when the identity is the only
admissible transform mapping a constraint-satisfying parameter set onto
another constraint-satisfying one. The search runs in transform coordinates
t = (log d, log delta, beta, gamma), dimension 2(p+m): a full-rank residual
Jacobian at the identity plus a multistart root search that finds nothing
but the identity supports "identifying"; any non-identity root is returned
as a witness for "not identifying".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from . import model
from .model import ConstraintError
from .transform import TransformSet, apply_transform

_ROOT_TOL = 1e-7
_DISTINCT_TOL = 1e-5
_BOX = 20.0  # search box on every transform coordinate


def random_parameter_set(spec, cs, rng=None, attempts=8):
    """A random parameter set satisfying the constraint system exactly."""
    rng = np.random.default_rng(rng)
    last = None
    for _ in range(attempts):
        lam = np.zeros((spec.p, spec.m))
        for q, S in enumerate(spec.pattern):
            for j in S:
                lam[j, q] = rng.uniform(0.35, 0.9)
        A = rng.normal(size=(spec.m, spec.m)) * 0.25
        phi = A @ A.T + np.eye(spec.m)
        tau = []
        for k in spec.K:
            t = np.sort(rng.normal(size=k - 1) * 1.1)
            tau.append(t + np.arange(k - 1) * 0.2)
        ps = model.ParameterSet(
            nu=rng.normal(size=spec.p) * 0.4,
            lam=lam,
            tau=tuple(tau),
            theta=rng.uniform(0.6, 1.4, size=spec.p),
            kappa=rng.normal(size=spec.m) * 0.4,
            phi=phi,
            fixed=model.fixed_mask_from(spec, cs),
        )
        ps = model.project_onto_constraints(ps, spec, cs)
        last = ps
        if model.max_constraint_residual(ps, cs) < 1e-9:
            return ps
    raise ConstraintError(
        "could not construct a parameter set satisfying %r (residual %.2e)"
        % (cs.name, model.max_constraint_residual(last, cs))
    )


def _unpack(x, p, m):
    return TransformSet(
        d=np.exp(x[:m]),
        delta=np.exp(x[m : m + p]),
        beta=x[m + p : m + p + m],
        gamma=x[m + p + m :],
    )


def _pack(t):
    return np.concatenate([np.log(t.d), np.log(t.delta), t.beta, t.gamma])


def _residual_fn(base, cs):
    def f(x):
        t = _unpack(x, base.nu.size, base.kappa.size)
        return model.constraint_residuals(apply_transform(base, t), cs)

    return f


def _fd_jacobian(f, x0, h=1e-6):
    r0 = f(x0)
    J = np.empty((r0.size, x0.size))
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        J[:, i] = (f(xp) - f(xm)) / (2 * h)
    return J


@dataclass(frozen=True)
class IdentificationReport:
    verdict: str  # "identifying" | "not identifying" | "inconclusive"
    constraint_count: int
    transform_dimension: int
    jacobian_rank: int
    identity_residual: float
    witness: Optional[TransformSet]
    witness_residual: float
    witness_distance: float
    n_starts: int
    n_nonconverged: int
    notes: tuple

    def __bool__(self):
        return self.verdict == "identifying"

    def __str__(self):
        lines = [
            "verdict: %s" % self.verdict,
            "constraints: %d, transform dimension: %d, jacobian rank: %d"
            % (self.constraint_count, self.transform_dimension, self.jacobian_rank),
        ]
        if self.witness is not None:
            lines.append(
                "witness transform at distance %.3g (residual %.2e)"
                % (self.witness_distance, self.witness_residual)
            )
        lines.extend(self.notes)
        return "\n".join(lines)


def verify_identification(spec, cs, *, rng=None, n_starts=12):
    """Search transform space for non-identity maps preserving the constraints."""
    rng = np.random.default_rng(rng if rng is not None else 20260822)
    p, m = spec.p, spec.m
    dim = 2 * (p + m)
    count = cs.count_with_nonlinear(spec)
    notes = []
    if count != dim:
        notes.append(
            "constraint count %d differs from transform dimension %d" % (count, dim)
        )

    base = random_parameter_set(spec, cs, rng)
    f = _residual_fn(base, cs)
    x0 = np.zeros(dim)
    r0 = f(x0)
    id_res = float(np.max(np.abs(r0))) if r0.size else 0.0
    if id_res > 1e-8:
        return IdentificationReport(
            verdict="inconclusive",
            constraint_count=count,
            transform_dimension=dim,
            jacobian_rank=-1,
            identity_residual=id_res,
            witness=None,
            witness_residual=np.inf,
            witness_distance=0.0,
            n_starts=0,
            n_nonconverged=0,
            notes=tuple(notes + ["base parameter set does not satisfy the constraints"]),
        )

    if r0.size == 0:
        # no constraints at all: every transform is a witness
        w = _unpack(np.full(dim, 0.3), p, m)
        return IdentificationReport(
            verdict="not identifying",
            constraint_count=0,
            transform_dimension=dim,
            jacobian_rank=0,
            identity_residual=0.0,
            witness=w,
            witness_residual=0.0,
            witness_distance=0.3,
            n_starts=0,
            n_nonconverged=0,
            notes=tuple(notes + ["constraint system is empty"]),
        )

    J = _fd_jacobian(f, x0)
    sv = np.linalg.svd(J, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > max(smax, 1.0) * 1e-7))
    null_dirs = []
    if rank < dim:
        _, _, Vt = np.linalg.svd(J)
        null_dirs = [Vt[i] for i in range(rank, dim)]
        notes.append("residual jacobian is rank deficient at the identity")

    starts = []
    for v in null_dirs[:3]:
        for a in (0.25, 0.5, 1.0):
            starts.append(a * v)
    while len(starts) < n_starts:
        starts.append(rng.uniform(-0.8, 0.8, size=dim))

    witness = None
    wit_res = np.inf
    wit_dist = 0.0
    n_nonconv = 0
    for s in starts:
        sol = least_squares(
            f, np.clip(s, -_BOX + 1e-6, _BOX - 1e-6),
            method="trf", bounds=(-_BOX, _BOX), max_nfev=400 * dim,
        )
        rmax = float(np.max(np.abs(sol.fun)))
        if sol.status == 0:
            n_nonconv += 1
            continue
        if rmax < _ROOT_TOL:
            dist = float(np.max(np.abs(sol.x)))
            if dist > _DISTINCT_TOL and rmax < wit_res:
                witness = _unpack(sol.x, p, m)
                wit_res = rmax
                wit_dist = dist
                break

    if witness is not None:
        verdict = "not identifying"
    elif rank < dim:
        verdict = "inconclusive"
        notes.append("flat direction at the identity but no explicit root located")
    elif n_nonconv == len(starts):
        verdict = "inconclusive"
        notes.append("root search did not converge from any start")
    else:
        verdict = "identifying"

    return IdentificationReport(
        verdict=verdict,
        constraint_count=count,
        transform_dimension=dim,
        jacobian_rank=rank,
        identity_residual=id_res,
        witness=witness,
        witness_residual=wit_res if witness is not None else np.inf,
        witness_distance=wit_dist,
        n_starts=len(starts),
        n_nonconverged=n_nonconv,
        notes=tuple(notes),
    )


def solve_transform(params, spec, target_cs, *, x0=None, rng=None):
    """Numerically find the transform carrying params onto a constraint system.

    Used as an independent check of the closed-form converters; raises when
    no admissible transform reaches the target (input not identified or the
    target unreachable from this parameter set).
    """
    p, m = spec.p, spec.m
    dim = 2 * (p + m)
    f = _residual_fn(params, target_cs)
    if x0 is None:
        x0 = np.zeros(dim)
        if rng is not None:
            x0 = np.random.default_rng(rng).uniform(-0.3, 0.3, size=dim)
    sol = least_squares(
        f, np.asarray(x0, dtype=float), method="trf",
        bounds=(-_BOX, _BOX), max_nfev=600 * dim,
    )
    rmax = float(np.max(np.abs(sol.fun)))
    if rmax > 1e-8:
        raise ConstraintError(
            "no transform onto %r found (best residual %.2e)" % (target_cs.name, rmax)
        )
    return _unpack(sol.x, p, m)
