"""Reduced free coordinates that satisfy a constraint system by construction.

Fixed scalars are dropped, each weighted-sum constraint eliminates one
coordinate, loading products are parameterized on the log scale with a
sum-to-zero basis, threshold rows use increment coordinates that keep the
ordering strict (with fixed endpoints handled by a normalized-increment
softmax), residual variances live on the log scale, and the latent
covariance uses a normalized-Cholesky (fixed diagonal) or log-diagonal
Cholesky (free) map. Only the delta regime's per-item total-variance
constraint is not eliminated here; the estimator treats it with a penalty.
"""

from __future__ import annotations

import numpy as np

from . import model
from .model import ConstraintError, fixed_mask_from


def _tau_mode(fixed_row):
    K1 = fixed_row.size
    idx = set(np.flatnonzero(fixed_row).tolist())
    if not idx:
        return "none"
    if idx == set(range(K1)):
        return "all"
    if idx == {0} and K1 == 1:
        return "all"
    if idx == {0}:
        return "first"
    if idx == {0, K1 - 1}:
        return "both"
    raise ConstraintError("unsupported fixed-threshold pattern %s" % sorted(idx))


class Parameterization:
    """Bijection between a free coordinate vector and constraint-satisfying
    parameter sets for one (spec, constraint system) pair."""

    def __init__(self, spec, cs):
        self.spec = spec
        self.cs = cs
        self.mask = fixed_mask_from(spec, cs)
        self.fix_values = {}
        for addr, v in cs.fixes:
            self.fix_values[addr] = v

        fixed_addrs = set(self.fix_values)

        # weighted-sum groups on nu and lambda; one eliminated entry each
        self.nu_groups = []
        self.lam_groups = []
        grouped_nu = set()
        grouped_lam = set()
        for ls in cs.linear_sums:
            kind = ls.addresses[0][0]
            free = [i for i, a in enumerate(ls.addresses) if a not in fixed_addrs]
            if not free:
                continue
            fixed_part = sum(
                ls.weights[i] * self.fix_values[ls.addresses[i]]
                for i in range(len(ls.addresses))
                if ls.addresses[i] in fixed_addrs
            )
            adj_target = ls.target - fixed_part
            if kind == "nu":
                members = [ls.addresses[i][1] for i in free]
                if grouped_nu & set(members):
                    raise ConstraintError("an intercept appears in two sum constraints")
                grouped_nu.update(members)
                self.nu_groups.append(
                    (members, [ls.weights[i] for i in free], adj_target)
                )
            elif kind == "lambda":
                members = [(ls.addresses[i][1], ls.addresses[i][2]) for i in free]
                if grouped_lam & set(members):
                    raise ConstraintError("a loading appears in two sum constraints")
                grouped_lam.update(members)
                self.lam_groups.append(
                    (members, [ls.weights[i] for i in free], adj_target)
                )
            else:
                raise ConstraintError("sum constraints supported on nu and lambda only")

        self.product_groups = []
        for pr in cs.products:
            free = [a for a in pr.addresses if a not in fixed_addrs]
            if len(free) != len(pr.addresses):
                raise ConstraintError("product constraints over fixed loadings unsupported")
            if pr.target <= 0:
                raise ConstraintError("product target must be positive")
            members = [(a[1], a[2]) for a in pr.addresses]
            if grouped_lam & set(members):
                raise ConstraintError("a loading appears in both sum and product constraints")
            grouped_lam.update(members)
            self.product_groups.append((members, float(pr.target)))

        self.nu_solo = [
            j for j in range(spec.p) if not self.mask.nu[j] and j not in grouped_nu
        ]
        self.lam_solo = []
        for q, S in enumerate(spec.pattern):
            for j in S:
                if not self.mask.lam[j, q] and (j, q) not in grouped_lam:
                    self.lam_solo.append((j, q))

        self.tau_modes = [_tau_mode(np.asarray(t)) for t in self.mask.tau]
        self.theta_free = [j for j in range(spec.p) if not self.mask.theta[j]]
        self.kappa_free = [q for q in range(spec.m) if not self.mask.kappa[q]]

        m = spec.m
        diag_fixed = [bool(self.mask.phi[q, q]) for q in range(m)]
        iu = np.triu_indices(m, k=1)
        off_fixed = bool(self.mask.phi[iu].all()) if iu[0].size else True
        off_free = bool((~self.mask.phi[iu]).all()) if iu[0].size else True
        if all(diag_fixed) and off_fixed:
            self.phi_mode = "fixed"
        elif all(diag_fixed) and off_free:
            self.phi_mode = "corr"
            self.phi_diag = np.array(
                [self.fix_values[("phi", q, q)] for q in range(m)]
            )
            if np.any(self.phi_diag <= 0):
                raise ConstraintError("fixed latent variances must be positive")
        elif not any(diag_fixed) and off_free:
            self.phi_mode = "chol"
        else:
            raise ConstraintError("unsupported latent covariance constraint pattern")

        n = len(self.nu_solo) + sum(len(g[0]) - 1 for g in self.nu_groups)
        n += len(self.lam_solo) + sum(len(g[0]) - 1 for g in self.lam_groups)
        n += sum(len(g[0]) - 1 for g in self.product_groups)
        for j, mode in enumerate(self.tau_modes):
            n += self._tau_coord_count(j, mode)
        n += len(self.theta_free) + len(self.kappa_free)
        if self.phi_mode == "corr":
            n += m * (m - 1) // 2
        elif self.phi_mode == "chol":
            n += m * (m + 1) // 2
        self.size = n

        expected = model.free_parameter_count(spec, cs)
        if cs.unit_total_variance:
            expected += spec.p  # the nonlinear rows are handled by penalty, not here
        if self.size != expected:
            raise ConstraintError(
                "coordinate count %d does not match free parameter count %d"
                % (self.size, expected)
            )

    def _tau_coord_count(self, j, mode):
        K1 = self.spec.K[j] - 1
        if mode == "all":
            return 0
        if mode == "none":
            return K1
        if mode == "first":
            return K1 - 1
        return max(K1 - 2, 0)  # both endpoints pinned

    # ---- build --------------------------------------------------------

    def build(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError("expected %d coordinates, got %s" % (self.size, z.shape))
        spec = self.spec
        pos = 0

        nu = np.zeros(spec.p)
        lam = np.zeros((spec.p, spec.m))
        theta = np.ones(spec.p)
        kappa = np.zeros(spec.m)
        phi = np.eye(spec.m)
        tau = [np.zeros(k - 1) for k in spec.K]

        for addr, v in self.cs.fixes:
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
                tau[addr[1]][addr[2]] = v
            elif kind == "phi":
                phi[addr[1], addr[2]] = v
                phi[addr[2], addr[1]] = v

        for j in self.nu_solo:
            nu[j] = z[pos]
            pos += 1
        for members, weights, target in self.nu_groups:
            acc = 0.0
            for i in range(len(members) - 1):
                nu[members[i]] = z[pos]
                acc += weights[i] * z[pos]
                pos += 1
            nu[members[-1]] = (target - acc) / weights[-1]

        for j, q in self.lam_solo:
            lam[j, q] = z[pos]
            pos += 1
        for members, weights, target in self.lam_groups:
            acc = 0.0
            for i in range(len(members) - 1):
                j, q = members[i]
                lam[j, q] = z[pos]
                acc += weights[i] * z[pos]
                pos += 1
            j, q = members[-1]
            lam[j, q] = (target - acc) / weights[-1]
        for members, target in self.product_groups:
            k = len(members)
            u = np.empty(k)
            u[: k - 1] = z[pos : pos + k - 1]
            u[k - 1] = -np.sum(u[: k - 1])
            pos += k - 1
            scale = target ** (1.0 / k)
            for (j, q), uj in zip(members, u):
                lam[j, q] = scale * np.exp(uj)

        for j, mode in enumerate(self.tau_modes):
            K1 = spec.K[j] - 1
            row = tau[j]
            if mode == "all":
                continue
            if mode == "none":
                row[0] = z[pos]
                for l in range(1, K1):
                    row[l] = row[l - 1] + np.exp(z[pos + l])
                pos += K1
            elif mode == "first":
                for l in range(1, K1):
                    row[l] = row[l - 1] + np.exp(z[pos + l - 1])
                pos += K1 - 1
            else:  # both
                nfree = K1 - 2
                lo_v, hi_v = row[0], row[K1 - 1]
                w = np.zeros(K1 - 1)
                w[1:] = z[pos : pos + nfree]
                pos += nfree
                s = np.exp(w - w.max())
                s /= s.sum()
                cum = np.cumsum(s)[:-1]
                row[1 : K1 - 1] = lo_v + (hi_v - lo_v) * cum

        for j in self.theta_free:
            theta[j] = np.exp(z[pos])
            pos += 1
        for q in self.kappa_free:
            kappa[q] = z[pos]
            pos += 1

        m = spec.m
        if self.phi_mode == "corr" and m >= 1:
            L = np.zeros((m, m))
            L[0, 0] = 1.0
            for r in range(1, m):
                raw = np.empty(r + 1)
                raw[:r] = z[pos : pos + r]
                raw[r] = 1.0
                pos += r
                L[r, : r + 1] = raw / np.sqrt(1.0 + np.sum(raw[:r] ** 2))
            C = L @ L.T
            s = np.sqrt(self.phi_diag)
            phi = C * np.outer(s, s)
        elif self.phi_mode == "chol":
            C = np.zeros((m, m))
            for r in range(m):
                for c in range(r):
                    C[r, c] = z[pos]
                    pos += 1
                C[r, r] = np.exp(z[pos])
                pos += 1
            phi = C @ C.T

        assert pos == self.size
        return model.ParameterSet(
            nu=nu, lam=lam, tau=tuple(tau), theta=theta, kappa=kappa, phi=phi,
            fixed=self.mask,
        )

    # ---- inverse ------------------------------------------------------

    def init_from(self, params, check=True):
        """Coordinates reproducing a constraint-satisfying parameter set."""
        if check:
            res = model.constraint_residuals(params, self.cs)
            if self.cs.unit_total_variance:
                res = res[: res.size - self.spec.p]  # nonlinear rows may float here
            r = float(np.max(np.abs(res))) if res.size else 0.0
            if r > 1e-6:
                raise ConstraintError(
                    "parameter set violates the constraint system (residual %.2e); "
                    "project it first" % r
                )
        spec = self.spec
        z = np.empty(self.size)
        pos = 0
        for j in self.nu_solo:
            z[pos] = params.nu[j]
            pos += 1
        for members, _, _ in self.nu_groups:
            for j in members[:-1]:
                z[pos] = params.nu[j]
                pos += 1
        for j, q in self.lam_solo:
            z[pos] = params.lam[j, q]
            pos += 1
        for members, _, _ in self.lam_groups:
            for j, q in members[:-1]:
                z[pos] = params.lam[j, q]
                pos += 1
        for members, target in self.product_groups:
            k = len(members)
            vals = np.array([params.lam[j, q] for j, q in members])
            if np.any(vals <= 0):
                raise ConstraintError("product-constrained loadings must be positive")
            u = np.log(vals) - np.log(target) / k
            z[pos : pos + k - 1] = u[: k - 1]
            pos += k - 1
        for j, mode in enumerate(self.tau_modes):
            row = params.tau[j]
            K1 = row.size
            if mode == "all":
                continue
            if mode == "none":
                z[pos] = row[0]
                z[pos + 1 : pos + K1] = np.log(np.diff(row))
                pos += K1
            elif mode == "first":
                z[pos : pos + K1 - 1] = np.log(np.diff(row))
                pos += K1 - 1
            else:
                inc = np.diff(row)
                w = np.log(inc) - np.log(inc[0])
                z[pos : pos + K1 - 2] = w[1:]
                pos += K1 - 2
        for j in self.theta_free:
            z[pos] = np.log(params.theta[j])
            pos += 1
        for q in self.kappa_free:
            z[pos] = params.kappa[q]
            pos += 1
        m = spec.m
        if self.phi_mode == "corr" and m >= 1:
            s = np.sqrt(self.phi_diag)
            C = params.phi / np.outer(s, s)
            L = np.linalg.cholesky(C)
            for r in range(1, m):
                z[pos : pos + r] = L[r, :r] / L[r, r]
                pos += r
        elif self.phi_mode == "chol":
            C = np.linalg.cholesky(params.phi)
            for r in range(m):
                for c in range(r):
                    z[pos] = C[r, c]
                    pos += 1
                z[pos] = np.log(C[r, r])
                pos += 1
        assert pos == self.size
        return z

    # ---- gradient pullback --------------------------------------------

    def pullback(self, z, params, grads):
        """Chain-rule the full-parameter gradient blocks onto the coordinates."""
        z = np.asarray(z, dtype=float)
        spec = self.spec
        g = np.zeros(self.size)
        pos = 0
        for j in self.nu_solo:
            g[pos] = grads.nu[j]
            pos += 1
        for members, weights, _ in self.nu_groups:
            g_last = grads.nu[members[-1]]
            for i, j in enumerate(members[:-1]):
                g[pos] = grads.nu[j] - (weights[i] / weights[-1]) * g_last
                pos += 1
        for j, q in self.lam_solo:
            g[pos] = grads.lam[j, q]
            pos += 1
        for members, weights, _ in self.lam_groups:
            jl, ql = members[-1]
            g_last = grads.lam[jl, ql]
            for i, (j, q) in enumerate(members[:-1]):
                g[pos] = grads.lam[j, q] - (weights[i] / weights[-1]) * g_last
                pos += 1
        for members, _ in self.product_groups:
            jl, ql = members[-1]
            lam_last = params.lam[jl, ql]
            g_last = grads.lam[jl, ql] * lam_last
            for j, q in members[:-1]:
                g[pos] = grads.lam[j, q] * params.lam[j, q] - g_last
                pos += 1
        for j, mode in enumerate(self.tau_modes):
            row = params.tau[j]
            K1 = row.size
            gt = np.asarray(grads.tau[j])
            if mode == "all":
                continue
            if mode == "none":
                suffix = np.cumsum(gt[::-1])[::-1]
                g[pos] = suffix[0]
                g[pos + 1 : pos + K1] = np.diff(row) * suffix[1:]
                pos += K1
            elif mode == "first":
                suffix = np.cumsum(gt[::-1])[::-1]
                g[pos : pos + K1 - 1] = np.diff(row) * suffix[1:]
                pos += K1 - 1
            else:
                nfree = K1 - 2
                if nfree > 0:
                    lo_v, hi_v = row[0], row[-1]
                    R = hi_v - lo_v
                    s = np.diff(row) / R  # softmax values, length K1-1
                    cum = np.cumsum(s)[:-1]  # C_l for interior l = 1..K1-2
                    g_int = gt[1 : K1 - 1]
                    # d tau_l / d w_b = R s_b (1[b < l] - C_l)
                    for b in range(1, K1 - 1):
                        acc = 0.0
                        for li, l in enumerate(range(1, K1 - 1)):
                            acc += g_int[li] * R * s[b] * ((1.0 if b < l else 0.0) - cum[li])
                        g[pos] = acc
                        pos += 1
        for j in self.theta_free:
            g[pos] = grads.theta[j] * params.theta[j]
            pos += 1
        for q in self.kappa_free:
            g[pos] = grads.kappa[q]
            pos += 1
        m = spec.m
        if self.phi_mode == "corr" and m >= 1:
            s = np.sqrt(self.phi_diag)
            Cm = params.phi / np.outer(s, s)
            L = np.linalg.cholesky(Cm)
            G_C = grads.phi * np.outer(s, s)
            H = 2.0 * G_C @ L
            for r in range(1, m):
                nr = 1.0 / L[r, r]
                hl = float(H[r, : r + 1] @ L[r, : r + 1])
                for jcol in range(r):
                    g[pos] = (H[r, jcol] - hl * L[r, jcol]) / nr
                    pos += 1
        elif self.phi_mode == "chol":
            C = np.linalg.cholesky(params.phi)
            GC = 2.0 * grads.phi @ C
            for r in range(m):
                for c in range(r):
                    g[pos] = GC[r, c]
                    pos += 1
                g[pos] = GC[r, r] * C[r, r]
                pos += 1
        assert pos == self.size
        return g
