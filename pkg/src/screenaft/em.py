"""Maximum-likelihood EM for the lognormal-lognormal model.

The E-step needs conditional first and second moments of the latent log
times.  For delta = 1 they are closed form: with a = (log l - mu_x)/sigma_x
and the inverse Mills ratio psi(a) = phi(a)/(1 - Phi(a)),

    E[log x] = mu_x + sigma_x psi(a)
    E[(log x)^2] = mu_x^2 + sigma_x^2 + sigma_x (log l + mu_x) psi(a)

while log t is unconstrained.  (The phi/(1 - Phi) convention is the one
that matches brute-force conditional moments; see the oracle tests.)  For
delta in {2, 3} the moments are self-normalized importance-sampling
estimates with a truncated-normal proposal matched to the normal factor of
the integrand, so the weights reduce to the other transition's CDF factor.
The M-step is ordinary least squares on the expected log times, with the
scale update using the freshly updated coefficients.  Common random numbers
are reused across iterations so the likelihood trajectory is smooth enough
for a tolerance-based stop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcx, ndtr, ndtri

from .model import AftParams, ModelSpec
from . import modelsel

__all__ = [
    "EmConfig",
    "EmResult",
    "DegenerateProposalError",
    "e_step_closed",
    "e_step_is",
    "m_step",
    "run_em",
]

_SPEC = ModelSpec("lognormal", "lognormal")
_CHUNK_ROWS = 256


class DegenerateProposalError(RuntimeError):
    """All importance weights vanished for some observation."""

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(int(i) for i in np.atleast_1d(indices))


@dataclass(frozen=True)
class EmConfig:
    """Two-phase accuracy schedule: a cheap pilot run refined by a
    warm-started run with more importance samples and a tighter limit."""

    m_pilot: int = 100
    m_refine: int = 20_000
    tol_pilot: float = 1e-4
    tol_refine: float = 1e-5
    max_iter: int = 500
    n_starts: int = 1

    def __post_init__(self):
        if self.m_pilot < 2 or self.m_refine < 2:
            raise ValueError("importance sample sizes must be >= 2")
        if self.tol_pilot <= 0 or self.tol_refine <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class EmResult:
    params: AftParams
    loglik: float
    converged: bool
    iterations: int
    trajectory: list
    start_table: list = field(default_factory=list)


def _mills_lower(alpha):
    """phi(alpha) / (1 - Phi(alpha)), stable for any alpha via erfcx."""
    return np.sqrt(2.0 / np.pi) / erfcx(alpha / np.sqrt(2.0))


def _closed_moments_d1(mu_x, sigma_x, mu_t, sigma_t, log_l):
    """Closed-form delta=1 moments; log_l may be -inf (no truncation)."""
    mu_x = np.asarray(mu_x, float)
    trunc = np.isfinite(log_l)
    alpha = np.where(trunc, (log_l - mu_x) / sigma_x, 0.0)
    lam = np.where(trunc, _mills_lower(alpha), 0.0)
    edge = np.where(trunc, (np.where(trunc, log_l, 0.0) + mu_x) * lam, 0.0)
    ex = mu_x + sigma_x * lam
    ex2 = mu_x**2 + sigma_x**2 + sigma_x * edge
    et = np.broadcast_to(np.asarray(mu_t, float), np.shape(ex)).copy()
    et2 = np.broadcast_to(np.asarray(mu_t, float)**2 + sigma_t**2,
                          np.shape(ex)).copy()
    return ex, ex2, et, et2


def _mu_of(beta, z):
    z = np.asarray(z, float)
    if beta.size == 1:
        return float(beta[0])
    if z.size != beta.size - 1:
        raise ValueError("covariate vector does not match coefficient length")
    return float(beta[0] + beta[1:] @ z)


def e_step_closed(params, observation):
    """Delta=1 moments (E[log x], E[(log x)^2], E[log t], E[(log t)^2])."""
    if observation.delta != 1:
        raise ValueError("closed-form E-step applies to delta=1 only")
    mu_x = np.atleast_1d(_mu_of(params.beta_x, observation.z))
    mu_t = np.atleast_1d(_mu_of(params.beta_t, observation.z))
    log_l = np.atleast_1d(math.log(observation.l) if observation.l > 0
                          else -math.inf)
    out = _closed_moments_d1(mu_x, params.sigma_x, mu_t, params.sigma_t, log_l)
    return tuple(float(v[0]) for v in out)


def _tn_draws(mu, sigma, e_lo, e_hi, u):
    """Inverse-CDF truncated-normal draws; e_lo/e_hi standardized bounds."""
    p_lo = ndtr(e_lo)
    p_hi = ndtr(e_hi)
    return mu + sigma * ndtri(p_lo + u * (p_hi - p_lo))


def _self_normalized(w, s, base):
    tot = w.sum(axis=1)
    bad = ~(tot > 0)
    if bad.any():
        raise DegenerateProposalError(
            "all importance weights are zero",
            indices=np.atleast_1d(base)[np.nonzero(bad)[0]])
    m1 = (w * s).sum(axis=1) / tot
    m2 = (w * s * s).sum(axis=1) / tot
    return m1, m2


def _is_moments_x(mu_x, sigma_x, mu_t, sigma_t, l, r, delta2, u, base):
    """Moments of log x for a batch of same-delta rows (delta2: bool).

    Proposal: normal(mu_x, sigma_x) truncated to (log l, log r); weight:
    1 - F_t(r - x) for delta=2, F_t(r - x) for delta=3.
    """
    with np.errstate(all="ignore"):
        e_lo = np.where(l > 0, np.log(np.maximum(l, 1e-320)), -np.inf)
        e_lo = (e_lo - mu_x) / sigma_x
        e_hi = (np.log(r) - mu_x) / sigma_x
        s = _tn_draws(mu_x[:, None], sigma_x, e_lo[:, None], e_hi[:, None], u)
        rest = np.maximum(r[:, None] - np.exp(s), 0.0)
        g = ndtr((np.log(rest) - mu_t[:, None]) / sigma_t)
        if delta2:
            g = 1.0 - g
        return _self_normalized(g, s, base)


def _is_moments_t_d2(mu_x, sigma_x, mu_t, sigma_t, l, r, u, base):
    """Moments of log t for delta=2 rows: untruncated normal proposal,
    weight F_x(r) - F_x(max(l, r - t))."""
    with np.errstate(all="ignore"):
        s = mu_t[:, None] + sigma_t * ndtri(u)
        arg = np.maximum(l[:, None], r[:, None] - np.exp(s))
        h = ndtr((np.log(r) - mu_x) / sigma_x)[:, None] - ndtr(
            (np.log(np.maximum(arg, 0.0)) - mu_x[:, None]) / sigma_x)
        h = np.maximum(h, 0.0)
        return _self_normalized(h, s, base)


def _is_moments_t_d3(mu_x, sigma_x, mu_t, sigma_t, l, r, u, base):
    """Moments of log t for delta=3 rows: normal proposal truncated above at
    log(r - l), weight F_x(r - t) - F_x(l)."""
    with np.errstate(all="ignore"):
        e_hi = (np.log(r - l) - mu_t) / sigma_t
        s = _tn_draws(mu_t[:, None], sigma_t, np.full_like(e_hi, -np.inf)[:, None],
                      e_hi[:, None], u)
        rest = np.maximum(r[:, None] - np.exp(s), 0.0)
        log_l = np.where(l > 0, np.log(np.maximum(l, 1e-320)), -np.inf)
        h = ndtr((np.log(rest) - mu_x[:, None]) / sigma_x) - ndtr(
            (log_l - mu_x) / sigma_x)[:, None]
        h = np.maximum(h, 0.0)
        return _self_normalized(h, s, base)


def e_step_is(params, observation, m, rng):
    """Importance-sampled moments for one delta in {2, 3} observation."""
    if observation.delta not in (2, 3):
        raise ValueError("importance-sampled E-step applies to delta in {2, 3}")
    mu_x = np.atleast_1d(_mu_of(params.beta_x, observation.z))
    mu_t = np.atleast_1d(_mu_of(params.beta_t, observation.z))
    l = np.atleast_1d(float(observation.l))
    r = np.atleast_1d(float(observation.r))
    ex, ex2 = _is_moments_x(mu_x, params.sigma_x, mu_t, params.sigma_t, l, r,
                            observation.delta == 2, rng.random((1, m)),
                            np.zeros(1, int))
    if observation.delta == 2:
        et, et2 = _is_moments_t_d2(mu_x, params.sigma_x, mu_t, params.sigma_t,
                                   l, r, rng.random((1, m)), np.zeros(1, int))
    else:
        et, et2 = _is_moments_t_d3(mu_x, params.sigma_x, mu_t, params.sigma_t,
                                   l, r, rng.random((1, m)), np.zeros(1, int))
    return float(ex[0]), float(ex2[0]), float(et[0]), float(et2[0])


def m_step(moments, zx, zt):
    """Closed-form M-step: OLS coefficients on the expected log times and
    the matching root-mean-square scales (using the fresh coefficients)."""
    ex, ex2, et, et2 = moments
    try:
        bx = np.linalg.solve(zx.T @ zx, zx.T @ ex)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "singular normal equations for the onset design") from None
    try:
        bt = np.linalg.solve(zt.T @ zt, zt.T @ et)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "singular normal equations for the progression design") from None
    mx = zx @ bx
    mt = zt @ bt
    sx = math.sqrt(float(np.mean(ex2 - 2.0 * ex * mx + mx * mx)))
    st = math.sqrt(float(np.mean(et2 - 2.0 * et * mt + mt * mt)))
    return AftParams(bx, sx, bt, st)


class _EmData:
    """Dataset unpacked for EM, delta in {2, 3} rows grouped for chunking."""

    def __init__(self, dataset):
        self.zx = dataset.design_matrix("x")
        self.zt = dataset.design_matrix("t")
        self.delta = dataset.delta.astype(int)
        self.l = dataset.l
        self.r = dataset.r
        with np.errstate(divide="ignore"):
            self.log_l = np.log(self.l)
        self.d1 = np.nonzero(self.delta == 1)[0]
        self.d2 = np.nonzero(self.delta == 2)[0]
        self.d3 = np.nonzero(self.delta == 3)[0]


def _e_step_all(params, em, m, seed_u):
    """Moment vectors for the whole dataset.

    Uniforms are regenerated from ``seed_u`` in a fixed chunk order, so a
    repeat call with the same seed integrates with common random numbers.
    """
    n = em.delta.shape[0]
    mu_x = em.zx @ params.beta_x
    mu_t = em.zt @ params.beta_t
    ex = np.empty(n)
    ex2 = np.empty(n)
    et = np.empty(n)
    et2 = np.empty(n)
    if em.d1.size:
        out = _closed_moments_d1(mu_x[em.d1], params.sigma_x, mu_t[em.d1],
                                 params.sigma_t, em.log_l[em.d1])
        ex[em.d1], ex2[em.d1], et[em.d1], et2[em.d1] = out
    rng_u = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=list(seed_u), spawn_key=(7,))))
    for idx, t_fn in ((em.d2, _is_moments_t_d2), (em.d3, _is_moments_t_d3)):
        delta2 = t_fn is _is_moments_t_d2
        for s in range(0, idx.size, _CHUNK_ROWS):
            rows = idx[s: s + _CHUNK_ROWS]
            u1 = rng_u.random((rows.size, m))
            u2 = rng_u.random((rows.size, m))
            ex[rows], ex2[rows] = _is_moments_x(
                mu_x[rows], params.sigma_x, mu_t[rows], params.sigma_t,
                em.l[rows], em.r[rows], delta2, u1, rows)
            et[rows], et2[rows] = t_fn(
                mu_x[rows], params.sigma_x, mu_t[rows], params.sigma_t,
                em.l[rows], em.r[rows], u2, rows)
    return ex, ex2, et, et2


def _random_start(dataset, rng):
    """Dispersed but data-anchored starting values."""
    mid = np.where(np.isfinite(dataset.r), 0.5 * (dataset.l + dataset.r),
                   dataset.l + 1.0)
    anchor_x = float(np.log(np.median(np.maximum(mid, 0.5))))
    finite = np.isfinite(dataset.r)
    width = dataset.r[finite] - dataset.l[finite]
    anchor_t = float(np.log(max(float(np.median(width)) if width.size
                                else 1.0, 0.5)))
    px = 1 + len(dataset.design_x)
    pt = 1 + len(dataset.design_t)
    bx = np.concatenate([[anchor_x + rng.normal(0, 1.0)],
                         rng.normal(0, 0.5, px - 1)])
    bt = np.concatenate([[anchor_t + rng.normal(0, 1.0)],
                         rng.normal(0, 0.5, pt - 1)])
    sx = float(np.exp(rng.uniform(np.log(0.1), np.log(2.0))))
    st = float(np.exp(rng.uniform(np.log(0.1), np.log(2.0))))
    return AftParams(bx, sx, bt, st)


def _run_phase(params, dataset, em, m, tol, max_iter, seed_u, trajectory):
    """Iterate E/M until the observed log likelihood moves less than tol."""
    ll_prev = modelsel.dataset_loglik(params, _SPEC, dataset)
    if not np.isfinite(ll_prev):
        raise FloatingPointError("non-finite likelihood at the start values")
    trajectory.append(ll_prev)
    iters = 0
    ll = ll_prev
    for _ in range(max_iter):
        moments = _e_step_all(params, em, m, seed_u)
        params = m_step(moments, em.zx, em.zt)
        ll = modelsel.dataset_loglik(params, _SPEC, dataset)
        if not np.isfinite(ll):
            raise FloatingPointError("observed log likelihood became non-finite")
        trajectory.append(ll)
        iters += 1
        if abs(ll - ll_prev) < tol:
            return params, ll, True, iters
        ll_prev = ll
    return params, ll, False, iters


def run_em(dataset, config=None, seed=0):
    """Multi-start two-phase EM driver for the lognormal-lognormal model.

    Phase 1 runs from a random start at (m_pilot, tol_pilot); phase 2
    refines it at (m_refine, tol_refine).  Returns the best run by observed
    log likelihood; the per-start table reports every run.  Starts hitting a
    non-finite likelihood are reinitialized, up to 20 attempts each.
    """
    config = config or EmConfig()
    dataset.check_identifiable()
    em = _EmData(dataset)

    best = None
    table = []
    for start in range(config.n_starts):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=seed, spawn_key=(start,))))
        result = None
        for attempt in range(20):
            params0 = _random_start(dataset, rng)
            trajectory = []
            try:
                params, ll, conv1, it1 = _run_phase(
                    params0, dataset, em, config.m_pilot, config.tol_pilot,
                    config.max_iter, (seed, start, attempt, 1), trajectory)
                params, ll, conv2, it2 = _run_phase(
                    params, dataset, em, config.m_refine, config.tol_refine,
                    config.max_iter, (seed, start, attempt, 2), trajectory)
            except (FloatingPointError, DegenerateProposalError):
                continue
            result = EmResult(params=params, loglik=ll,
                              converged=conv1 and conv2,
                              iterations=it1 + it2, trajectory=trajectory)
            break
        if result is None:
            raise RuntimeError(
                f"start {start}: no finite-likelihood run in 20 attempts")
        table.append({
            "start": start,
            "loglik": result.loglik,
            "converged": result.converged,
            "iterations": result.iterations,
            "params": result.params,
        })
        if best is None or result.loglik > best.loglik:
            best = result
    best.start_table = table
    return best
