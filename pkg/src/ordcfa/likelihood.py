"""Category probabilities, marginal likelihood, and analytic gradients.

Latent variables are integrated out on a fixed tensor-product grid whose
weights carry the normal prior explicitly, so prior parameters (kappa, phi)
stay differentiable without moving any node. The clustered loading pattern
makes the conditional likelihood factor by dimension, which keeps the
multi-factor contraction cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import ndtr

PROB_FLOOR = 1e-300
Z_CLIP = 40.0
_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _npdf(z):
    return np.exp(-0.5 * z * z) / _SQRT_2PI


def _interval_prob(zlo, zhi):
    # evaluate in whichever tail keeps the CDF arguments small
    flip = zlo > 0
    a = np.where(flip, -zhi, zlo)
    b = np.where(flip, -zlo, zhi)
    return ndtr(b) - ndtr(a)


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """n x p matrix of integer response codes, 1..K_j per item."""

    y: np.ndarray

    def __post_init__(self):
        arr = np.array(self.y, dtype=np.int64)
        if arr.ndim != 2:
            raise ValueError("response matrix must be 2-dimensional")
        arr.setflags(write=False)
        object.__setattr__(self, "y", arr)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.y.shape[1]

    def indicators(self, j, K):
        """One-hot indicator matrix (n, K) for item j."""
        out = np.zeros((self.n, K), dtype=np.int64)
        out[np.arange(self.n), self.y[:, j] - 1] = 1
        return out


def ingest(y_raw, spec):
    """Listwise-delete incomplete rows (code 0 marks missing) and validate.

    Returns (ResponseMatrix, dropped_row_count).
    """
    arr = np.asarray(y_raw, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != spec.p:
        raise ValueError("data must have one column per item (%d expected)" % spec.p)
    complete = np.all(arr != 0, axis=1)
    dropped = int(arr.shape[0] - complete.sum())
    kept = arr[complete]
    for j in range(spec.p):
        col = kept[:, j]
        bad = (col < 1) | (col > spec.K[j])
        if np.any(bad):
            raise ValueError(
                "item %r has codes outside 1..%d (first bad value %d)"
                % (spec.item_names[j], spec.K[j], int(col[bad][0]))
            )
    return ResponseMatrix(kept), dropped


@dataclass(frozen=True, eq=False)
class LatentState:
    eta: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if not np.all(np.isfinite(arr)):
            raise ValueError("latent state must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "eta", arr)


def _eta_vec(eta):
    if isinstance(eta, LatentState):
        return eta.eta
    return np.atleast_1d(np.asarray(eta, dtype=float))


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Fixed per-dimension nodes with prior-free log weights.

    log_weights exclude the N(kappa, phi) factor; the marginal evaluation
    multiplies it in, so one grid serves any prior parameter value.
    """

    nodes: tuple
    log_weights: tuple
    kind: str
    anchor_mean: np.ndarray
    anchor_sd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(np.asarray(v, float) for v in self.nodes))
        object.__setattr__(
            self, "log_weights", tuple(np.asarray(v, float) for v in self.log_weights)
        )
        object.__setattr__(self, "anchor_mean", np.atleast_1d(np.asarray(self.anchor_mean, float)))
        object.__setattr__(self, "anchor_sd", np.atleast_1d(np.asarray(self.anchor_sd, float)))

    @property
    def m(self):
        return len(self.nodes)

    @property
    def node_count(self):
        return tuple(v.size for v in self.nodes)


def _check_anchor(mean, sd):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.atleast_1d(np.asarray(sd, dtype=float))
    if mean.shape != sd.shape or mean.ndim != 1:
        raise ValueError("anchor mean and sd must be matching vectors")
    if mean.size > 3:
        raise ValueError("tensor-product integration supports at most 3 factors")
    if np.any(sd <= 0):
        raise ValueError("anchor sd must be positive")
    return mean, sd


def gh_grid(anchor_mean, anchor_sd, n_nodes=61):
    """Gauss-Hermite placement scaled to the anchor location and spread."""
    mean, sd = _check_anchor(anchor_mean, anchor_sd)
    x, w = hermgauss(int(n_nodes))
    nodes, logw = [], []
    for q in range(mean.size):
        nodes.append(mean[q] + np.sqrt(2.0) * sd[q] * x)
        # Gauss-Hermite weight divided by the anchor normal density at the node
        logw.append(np.log(w) + x * x + np.log(sd[q]) + 0.5 * np.log(2.0))
    return QuadratureGrid(tuple(nodes), tuple(logw), "gauss-hermite-adapted", mean, sd)


def rect_grid(anchor_mean, anchor_sd, n_nodes=61, span=6.0):
    """Equally spaced nodes covering anchor_mean +/- span * anchor_sd."""
    mean, sd = _check_anchor(anchor_mean, anchor_sd)
    nodes, logw = [], []
    for q in range(mean.size):
        v = np.linspace(mean[q] - span * sd[q], mean[q] + span * sd[q], int(n_nodes))
        h = v[1] - v[0]
        nodes.append(v)
        logw.append(np.full(v.size, np.log(h)))
    return QuadratureGrid(tuple(nodes), tuple(logw), "rectangular", mean, sd)


def shift_scale_grid(grid, d, beta):
    """Carry a grid onto the metric eta_new = D^-1 (eta - beta)."""
    d = np.atleast_1d(np.asarray(d, float))
    beta = np.atleast_1d(np.asarray(beta, float))
    if d.shape != (grid.m,) or beta.shape != (grid.m,):
        raise ValueError("transform dimensions do not match the grid")
    nodes = tuple((grid.nodes[q] - beta[q]) / d[q] for q in range(grid.m))
    logw = tuple(grid.log_weights[q] - np.log(d[q]) for q in range(grid.m))
    return QuadratureGrid(
        nodes, logw, grid.kind, (grid.anchor_mean - beta) / d, grid.anchor_sd / d
    )


def _bounds_for(params, spec, j, yj):
    """Per-response lower/upper thresholds with open ends at -inf/+inf."""
    K = spec.K[j]
    tauj = params.tau[j]
    upper = np.where(yj == K, np.inf, tauj[np.minimum(yj - 1, K - 2)])
    lower = np.where(yj == 1, -np.inf, tauj[np.maximum(yj - 2, 0)])
    return lower, upper


def category_prob(params, spec, j, k, eta):
    """P(Y_j = k | eta) under the probit measurement model."""
    K = spec.K[j]
    if not 1 <= k <= K:
        raise ValueError("category %d outside 1..%d" % (k, K))
    tauj = params.tau[j]
    if tauj.size > 1 and np.any(np.diff(tauj) <= 0):
        raise ValueError("thresholds of item %d are not increasing" % j)
    eta = _eta_vec(eta)
    mu = params.nu[j] + float(params.lam[j] @ eta)
    sd = np.sqrt(params.theta[j])
    hi = np.inf if k == K else (tauj[k - 1] - mu) / sd
    lo = -np.inf if k == 1 else (tauj[k - 2] - mu) / sd
    hi = np.clip(hi, -Z_CLIP, Z_CLIP)
    lo = np.clip(lo, -Z_CLIP, Z_CLIP)
    return float(_interval_prob(np.asarray(lo), np.asarray(hi)))


def conditional_loglik(params, spec, row, eta):
    """log P(y_i | eta): sum of item category log probabilities."""
    row = np.asarray(row, dtype=np.int64).reshape(-1)
    ll, _ = conditional_score_batch(params, spec, row[None, :], _eta_vec(eta)[None, :])
    return float(ll[0])


def conditional_score_batch(params, spec, Y, Eta):
    """Vectorized conditional log-likelihood and its eta gradient.

    Y: (n, p) codes; Eta: (n, m). Returns (loglik (n,), grad (n, m)).
    """
    Y = np.asarray(Y, dtype=np.int64)
    Eta = np.atleast_2d(np.asarray(Eta, dtype=float))
    n = Y.shape[0]
    mu = params.nu[None, :] + Eta @ params.lam.T  # (n, p)
    ll = np.zeros(n)
    snu = np.empty((n, spec.p))
    for j in range(spec.p):
        yj = Y[:, j]
        sd = np.sqrt(params.theta[j])
        lower, upper = _bounds_for(params, spec, j, yj)
        zhi = np.clip((upper - mu[:, j]) / sd, -Z_CLIP, Z_CLIP)
        zlo = np.clip((lower - mu[:, j]) / sd, -Z_CLIP, Z_CLIP)
        P = np.maximum(_interval_prob(zlo, zhi), PROB_FLOOR)
        ll += np.log(P)
        phihi = np.where(np.isposinf(upper), 0.0, _npdf(zhi))
        philo = np.where(np.isneginf(lower), 0.0, _npdf(zlo))
        snu[:, j] = (philo - phihi) / (sd * P)
    grad = snu @ params.lam  # (n, m)
    return ll, grad


def _chol_phi(phi):
    try:
        return cho_factor(phi, lower=True)
    except (LinAlgError, ValueError):
        raise ValueError("phi is singular or not positive definite") from None


def posterior_logdensity(params, spec, row, eta):
    """Conditional log-likelihood plus the normal prior kernel.

    The prior's normalizing constant is omitted (it does not depend on eta).
    """
    eta = _eta_vec(eta)
    cf = _chol_phi(params.phi)
    diff = eta - params.kappa
    quad = float(diff @ cho_solve(cf, diff))
    return conditional_loglik(params, spec, row, eta) - 0.5 * quad


def posterior_score_batch(params, spec, Y, Eta):
    """Posterior log-density (constant omitted) and eta gradient, row-wise."""
    Eta = np.atleast_2d(np.asarray(Eta, dtype=float))
    ll, grad = conditional_score_batch(params, spec, Y, Eta)
    cf = _chol_phi(params.phi)
    diff = Eta - params.kappa[None, :]
    sol = cho_solve(cf, diff.T).T  # (n, m)
    ll = ll - 0.5 * np.sum(diff * sol, axis=1)
    return ll, grad - sol


def _log_mvn_on_grid(nodes, kappa, phi):
    mesh = np.meshgrid(*nodes, indexing="ij")
    X = np.stack([g.reshape(-1) for g in mesh], axis=1) - kappa[None, :]
    cf = _chol_phi(phi)
    sol = cho_solve(cf, X.T)
    quad = np.sum(X.T * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    out = -0.5 * (quad + logdet + len(nodes) * np.log(2.0 * np.pi))
    return out.reshape([v.size for v in nodes])


def prior_mass_on_grid(params, grid):
    """Log of the quadrature estimate of the prior's total mass, with its
    kappa and phi gradients.

    The estimate is exactly 0 (mass 1) wherever the grid resolves the
    N(kappa, phi) density; it drifts positive when the density collapses
    between nodes and negative when it walks off the node hull, so it
    measures quadrature breakdown as a function of the prior parameters.
    """
    mesh = np.meshgrid(*grid.nodes, indexing="ij")
    X = np.stack([g.reshape(-1) for g in mesh], axis=1)
    lp = _log_mvn_on_grid(grid.nodes, params.kappa, params.phi)
    for q in range(grid.m):
        shape = [1] * grid.m
        shape[q] = -1
        lp = lp + grid.log_weights[q].reshape(shape)
    lp = lp.reshape(-1)
    c = float(lp.max())
    w = np.exp(lp - c)
    total = float(w.sum())
    log_mass = np.log(total) + c
    p = w / total
    diff = X - params.kappa[None, :]
    cf = _chol_phi(params.phi)
    phi_inv = cho_solve(cf, np.eye(grid.m))
    mu = p @ diff
    S = (diff * p[:, None]).T @ diff
    g_kappa = phi_inv @ mu
    g_phi = 0.5 * (phi_inv @ S @ phi_inv - phi_inv)
    return log_mass, g_kappa, g_phi


def _factor_tables(params, spec, y, nodes, q, want_scores):
    """Summed item log-probabilities for factor q at each node.

    Returns (la, cache): la is (n, G); cache holds per-item score fields
    (nu score, theta score, upper/lower threshold scores) for the gradient.
    """
    n = y.shape[0]
    la = np.zeros((n, nodes.size))
    cache = []
    # extreme parameter excursions (line-search probes) produce NaN/inf here;
    # callers treat any non-finite result as an infeasible point
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for j in spec.pattern[q]:
            yj = y[:, j]
            sd = np.sqrt(params.theta[j])
            mu = params.nu[j] + params.lam[j, q] * nodes  # (G,)
            lower, upper = _bounds_for(params, spec, j, yj)
            zhi = np.clip((upper[:, None] - mu[None, :]) / sd, -Z_CLIP, Z_CLIP)
            zlo = np.clip((lower[:, None] - mu[None, :]) / sd, -Z_CLIP, Z_CLIP)
            P = np.maximum(_interval_prob(zlo, zhi), PROB_FLOOR)
            la += np.log(P)
            if want_scores:
                phihi = np.where(np.isposinf(upper)[:, None], 0.0, _npdf(zhi))
                philo = np.where(np.isneginf(lower)[:, None], 0.0, _npdf(zlo))
                cache.append(
                    dict(
                        j=j,
                        yj=yj,
                        snu=(philo - phihi) / (sd * P),
                        stheta=(philo * zlo - phihi * zhi)
                        / (2.0 * params.theta[j] * P),
                        ghi=phihi / (sd * P),
                        glo=philo / (sd * P),
                    )
                )
    return la, cache


@dataclass
class GradientBlocks:
    nu: np.ndarray
    lam: np.ndarray
    tau: tuple
    theta: np.ndarray
    kappa: np.ndarray
    phi: np.ndarray


def marginal_value_and_grad(params, spec, data, grid, want_grad=True, chunk=256):
    """Marginal log-likelihood on the grid, optionally with its gradient.

    The gradient is the exact derivative of the quadrature approximation:
    item blocks come from posterior-weighted per-node scores, prior blocks
    from posterior moments of eta.
    """
    y = data.y
    n, m = y.shape[0], spec.m
    if grid.m != m:
        raise ValueError("grid has %d dimensions, model has %d factors" % (grid.m, m))
    if m > 3:
        raise ValueError("tensor-product integration supports at most 3 factors")

    LA, caches = [], []
    for q in range(m):
        la, cache = _factor_tables(params, spec, y, grid.nodes[q], q, want_grad)
        LA.append(la)
        caches.append(cache)

    lp = _log_mvn_on_grid(grid.nodes, params.kappa, params.phi)
    for q in range(m):
        shape = [1] * m
        shape[q] = -1
        lp = lp + grid.log_weights[q].reshape(shape)
    wmax = float(np.max(lp))
    Wt = np.exp(lp - wmax)

    shifts = [la.max(axis=1) for la in LA]
    A = [np.exp(la - c[:, None]) for la, c in zip(LA, shifts)]

    Q = [np.empty_like(a) for a in A]  # per-dim posterior node masses
    Eeta = np.empty((n, m))
    E2 = np.empty((n, m))
    cross = {}
    if m >= 2:
        for q in range(m):
            for r in range(q + 1, m):
                cross[(q, r)] = np.empty(n)

    nodes = [grid.nodes[q] for q in range(m)]
    if m == 1:
        M = A[0] @ Wt
        M = np.maximum(M, PROB_FLOOR)
        Q[0][:] = A[0] * Wt[None, :] / M[:, None]
    elif m == 2:
        R1 = A[1] @ Wt.T
        M = np.maximum(np.sum(A[0] * R1, axis=1), PROB_FLOOR)
        Q[0][:] = A[0] * R1 / M[:, None]
        R2 = A[0] @ Wt
        Q[1][:] = A[1] * R2 / M[:, None]
        cross[(0, 1)][:] = (
            np.sum((A[0] * nodes[0][None, :]) * ((A[1] * nodes[1][None, :]) @ Wt.T), axis=1) / M
        )
    else:
        M = np.empty(n)
        for s0 in range(0, n, chunk):
            sl = slice(s0, min(s0 + chunk, n))
            A1, A2, A3 = A[0][sl], A[1][sl], A[2][sl]
            B12 = np.einsum("tsr,ir->its", Wt, A3)
            Mc = np.maximum(np.einsum("it,is,its->i", A1, A2, B12), PROB_FLOOR)
            M[sl] = Mc
            R1 = np.einsum("is,its->it", A2, B12)
            R2 = np.einsum("it,its->is", A1, B12)
            Q[0][sl] = A1 * R1 / Mc[:, None]
            Q[1][sl] = A2 * R2 / Mc[:, None]
            B13 = np.einsum("tsr,is->itr", Wt, A2)
            R3 = np.einsum("it,itr->ir", A1, B13)
            Q[2][sl] = A3 * R3 / Mc[:, None]
            n1A1 = A1 * nodes[0][None, :]
            n2A2 = A2 * nodes[1][None, :]
            n3A3 = A3 * nodes[2][None, :]
            cross[(0, 1)][sl] = np.einsum("it,is,its->i", n1A1, n2A2, B12) / Mc
            cross[(0, 2)][sl] = np.einsum("it,ir,itr->i", n1A1, n3A3, B13) / Mc
            B23 = np.einsum("tsr,it->isr", Wt, A1)
            cross[(1, 2)][sl] = np.einsum("is,ir,isr->i", n2A2, n3A3, B23) / Mc

    loglik = float(np.sum(np.log(M)) + np.sum([c.sum() for c in shifts]) + n * wmax)
    if not want_grad:
        return loglik, None

    for q in range(m):
        Eeta[:, q] = Q[q] @ nodes[q]
        E2[:, q] = Q[q] @ (nodes[q] ** 2)

    g_nu = np.zeros(spec.p)
    g_lam = np.zeros((spec.p, m))
    g_theta = np.zeros(spec.p)
    g_tau = [np.zeros(k - 1) for k in spec.K]
    for q in range(m):
        w = Q[q]
        for item in caches[q]:
            j, yj = item["j"], item["yj"]
            K = spec.K[j]
            g_nu[j] = np.sum(w * item["snu"])
            g_lam[j, q] = np.sum(w * item["snu"] * nodes[q][None, :])
            g_theta[j] = np.sum(w * item["stheta"])
            ghi_row = np.sum(w * item["ghi"], axis=1)
            glo_row = np.sum(w * item["glo"], axis=1)
            has_hi = yj < K
            has_lo = yj > 1
            g_tau[j] += np.bincount(
                (yj - 1)[has_hi], weights=ghi_row[has_hi], minlength=K - 1
            )[: K - 1]
            g_tau[j] -= np.bincount(
                (yj - 2)[has_lo], weights=glo_row[has_lo], minlength=K - 1
            )[: K - 1]

    # prior blocks via posterior moments
    sum_mu = Eeta.sum(axis=0)
    S = np.empty((m, m))
    for q in range(m):
        S[q, q] = E2[:, q].sum()
        for r in range(q + 1, m):
            S[q, r] = S[r, q] = cross[(q, r)].sum()
    kap = params.kappa
    S_cent = S - np.outer(kap, sum_mu) - np.outer(sum_mu, kap) + n * np.outer(kap, kap)
    cf = _chol_phi(params.phi)
    phi_inv = cho_solve(cf, np.eye(m))
    g_kappa = phi_inv @ (sum_mu - n * kap)
    g_phi = 0.5 * (phi_inv @ S_cent @ phi_inv - n * phi_inv)

    grads = GradientBlocks(
        nu=g_nu, lam=g_lam, tau=tuple(g_tau), theta=g_theta, kappa=g_kappa, phi=g_phi
    )
    return loglik, grads


def marginal_loglik(params, spec, data, grid):
    """Sum over respondents of the log marginal probability of their row."""
    ll, _ = marginal_value_and_grad(params, spec, data, grid, want_grad=False)
    return ll


def loglik_gradient(params, spec, data, grid):
    """Gradient blocks of marginal_loglik with fixed entries zeroed."""
    _, g = marginal_value_and_grad(params, spec, data, grid, want_grad=True)
    mask = params.fixed
    g.nu = np.where(mask.nu, 0.0, g.nu)
    g.lam = np.where(mask.lam, 0.0, g.lam)
    g.theta = np.where(mask.theta, 0.0, g.theta)
    g.kappa = np.where(mask.kappa, 0.0, g.kappa)
    g.phi = np.where(mask.phi, 0.0, g.phi)
    g.tau = tuple(np.where(mt, 0.0, gt) for mt, gt in zip(mask.tau, g.tau))
    return g
