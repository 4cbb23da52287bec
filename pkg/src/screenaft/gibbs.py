"""Metropolis-within-Gibbs sampler with truncated-distribution data augmentation.

One sweep updates, in order: (beta, sigma) jointly by a random-walk
Metropolis step against the complete-data posterior, then every latent onset
time x_i from its truncated full conditional, then every latent progression
time t_i from its truncated full conditional.  The truncation bounds follow
from the censoring state:

    x | t:  delta=1 (l, inf)   delta=2 (max(r-t, l), r]   delta=3 (l, r-t]
    t | x:  delta=1 (0, inf)   delta=2 (r-x, inf)         delta=3 (0, r-x]

Scales are proposed on the log scale inside the joint normal proposal (the
Jacobian enters the acceptance ratio), keeping the proposal symmetric while
sigma stays positive.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .families import DegenerateIntervalError, MASS_FLOOR
from .model import AftParams, ModelSpec
from . import diagnostics

__all__ = [
    "Priors",
    "SensitivitySpec",
    "StoppingRule",
    "ChainState",
    "PosteriorDraws",
    "TuningError",
    "bounds_x",
    "bounds_t",
    "augment",
    "metropolis_update",
    "tune_proposal",
    "run",
]


@dataclass(frozen=True)
class Priors:
    """Weakly informative priors: Student-t(tau) on every coefficient and
    half-normal(sd lambda) on every free scale.

    Defaults tau=4, lambda=sqrt(10).  Note on the implied scale range: the
    equal-tailed 95% half-normal interval for sigma is (0.099, 7.088)
    (quantiles at 2.5% and 97.5%), while the one-sided 1.96*lambda convention
    gives (0, 6.198); both conventions circulate and neither is asserted as a
    constant anywhere in this package.
    """

    tau_x: float = 4.0
    tau_t: float = 4.0
    lambda_x: float = math.sqrt(10.0)
    lambda_t: float = math.sqrt(10.0)

    def __post_init__(self):
        if min(self.tau_x, self.tau_t, self.lambda_x, self.lambda_t) <= 0:
            raise ValueError("prior hyperparameters must be positive")


@dataclass(frozen=True)
class SensitivitySpec:
    """Fixed loadings of the latent standard-normal common cause."""

    beta_xw: float
    beta_tw: float

    def __post_init__(self):
        if not (np.isfinite(self.beta_xw) and np.isfinite(self.beta_tw)):
            raise ValueError("sensitivity loadings must be finite")


@dataclass(frozen=True)
class StoppingRule:
    """Convergence rule: R below r_max and ESS above ess_min for every
    parameter, checked every ``block`` draws on the retained halves."""

    r_max: float = 1.1
    ess_min: float = 30.0
    max_draws: int = 2_000_000
    block: int = 10_000


class TuningError(RuntimeError):
    """Proposal tuning failed to reach the target acceptance band."""


# ---------------------------------------------------------------------------
# Truncation bounds (vectorized; scalars work too)
# ---------------------------------------------------------------------------


def bounds_x(l, r, delta, t):
    """Truncation interval (a, b] for the onset time given the current t."""
    l = np.asarray(l, float)
    r = np.asarray(r, float)
    delta = np.asarray(delta)
    t = np.asarray(t, float)
    a = np.where(delta == 1, l, np.where(delta == 2, np.maximum(r - t, l), l))
    b = np.where(delta == 1, np.inf, np.where(delta == 2, r, r - t))
    if np.any((delta == 3) & (b <= a)):
        raise ValueError("infeasible state: delta=3 with r - t <= l")
    return a, b


def bounds_t(l, r, delta, x):
    """Truncation interval (c, d] for the progression time given the current x."""
    l = np.asarray(l, float)
    r = np.asarray(r, float)
    delta = np.asarray(delta)
    x = np.asarray(x, float)
    if np.any((delta == 3) & (x >= r)):
        raise ValueError("infeasible state: delta=3 with x >= r")
    c = np.where(delta == 2, r - x, 0.0)
    d = np.where(delta == 1, np.inf, np.where(delta == 2, np.inf, r - x))
    return c, d


# ---------------------------------------------------------------------------
# Internal fit context and chain state
# ---------------------------------------------------------------------------


class _FitData:
    """Dataset reorganized for sweeping: rows sorted by delta, design
    matrices cached, log bounds precomputed."""

    def __init__(self, dataset, spec, priors, sensitivity=None, w=None):
        order = np.argsort(dataset.delta, kind="stable")
        self.spec = spec
        self.priors = priors
        self.n = len(dataset)
        self.delta = dataset.delta[order]
        self.l = dataset.l[order]
        self.r = dataset.r[order]
        with np.errstate(divide="ignore"):
            self.log_l = np.log(self.l)
            self.log_r = np.log(self.r)
        self.zx = dataset.design_matrix("x")[order]
        self.zt = dataset.design_matrix("t")[order]
        self.g1 = slice(0, int(np.sum(self.delta == 1)))
        self.g2 = slice(self.g1.stop, self.g1.stop + int(np.sum(self.delta == 2)))
        self.g3 = slice(self.g2.stop, self.n)
        self.order = order
        self.px = self.zx.shape[1]
        self.pt = self.zt.shape[1]
        self.free_x = not spec.fam_x.fixed_scale
        self.free_t = not spec.fam_t.fixed_scale
        self.dim = self.px + self.pt + self.free_x + self.free_t
        if sensitivity is not None and w is not None:
            self.off_x = sensitivity.beta_xw * w[order]
            self.off_t = sensitivity.beta_tw * w[order]
        else:
            self.off_x = None
            self.off_t = None

    def param_names(self, dataset):
        return dataset.param_names("x") + dataset.param_names("t") + [
            "sigma_x", "sigma_t"]


@dataclass
class ChainState:
    """Mutable per-chain state: parameters plus the augmented latent times."""

    beta_x: np.ndarray
    beta_t: np.ndarray
    sigma_x: float
    sigma_t: float
    x: np.ndarray
    log_x: np.ndarray
    t: np.ndarray
    log_t: np.ndarray
    proposal_sd: float
    # Cached kernel pieces: prior at current params, complete-data log
    # likelihoods of the current augmentation (refreshed by augment()).
    _prior_cur: float = field(default=np.nan)
    _loglik_x: float = field(default=np.nan)
    _loglik_t: float = field(default=np.nan)

    def params(self):
        return AftParams(self.beta_x.copy(), self.sigma_x,
                         self.beta_t.copy(), self.sigma_t)

    def theta(self, fit):
        parts = [self.beta_x, self.beta_t]
        if fit.free_x:
            parts.append([math.log(self.sigma_x)])
        if fit.free_t:
            parts.append([math.log(self.sigma_t)])
        return np.concatenate([np.atleast_1d(p) for p in parts])

    def row(self):
        return np.concatenate([self.beta_x, self.beta_t,
                               [self.sigma_x, self.sigma_t]])


def _unpack_theta(theta, fit):
    bx = theta[: fit.px]
    bt = theta[fit.px: fit.px + fit.pt]
    k = fit.px + fit.pt
    sx = math.exp(theta[k]) if fit.free_x else 1.0
    st = math.exp(theta[k + fit.free_x]) if fit.free_t else 1.0
    return bx, bt, sx, st


def _log_t_prior(beta, tau):
    beta = np.atleast_1d(beta)
    c = gammaln((tau + 1) / 2) - gammaln(tau / 2) - 0.5 * math.log(tau * math.pi)
    return float(beta.size * c - (tau + 1) / 2 * np.sum(np.log1p(beta * beta / tau)))


def _log_halfnormal_prior(sigma, lam):
    return 0.5 * math.log(2.0 / (math.pi * lam * lam)) - sigma * sigma / (2 * lam * lam)


def _kernel_parts(theta, fit, log_x, log_t):
    """(prior term, x log likelihood, t log likelihood) at packed theta.

    The likelihood parts omit the parameter-free -sum(log v) Jacobian of the
    change of variables (it cancels in every Metropolis ratio); the prior
    part includes the +log sigma Jacobians of proposing scales on the log
    scale.
    """
    bx, bt, sx, st = _unpack_theta(theta, fit)
    prior = _log_t_prior(bx, fit.priors.tau_x) + _log_t_prior(bt, fit.priors.tau_t)
    if fit.free_x:
        prior += _log_halfnormal_prior(sx, fit.priors.lambda_x) + math.log(sx)
    if fit.free_t:
        prior += _log_halfnormal_prior(st, fit.priors.lambda_t) + math.log(st)
    mu_x = fit.zx @ bx
    if fit.off_x is not None:
        mu_x = mu_x + fit.off_x
    ex = (log_x - mu_x) / sx
    ll_x = float(np.sum(fit.spec.fam_x.error.log_pdf(ex))) - fit.n * math.log(sx)
    mu_t = fit.zt @ bt
    if fit.off_t is not None:
        mu_t = mu_t + fit.off_t
    et = (log_t - mu_t) / st
    ll_t = float(np.sum(fit.spec.fam_t.error.log_pdf(et))) - fit.n * math.log(st)
    return prior, ll_x, ll_t


def _log_kernel(theta, fit, log_x, log_t):
    """Complete-data log posterior kernel at packed parameters theta."""
    return sum(_kernel_parts(theta, fit, log_x, log_t))


def metropolis_update(state, fit, rng):
    """Joint random-walk update of (beta_x, beta_t, log sigma_x, log sigma_t).

    Returns True when the proposal was accepted.
    """
    theta = state.theta(fit)
    if np.isnan(state._prior_cur) or np.isnan(state._loglik_x):
        state._prior_cur, state._loglik_x, state._loglik_t = _kernel_parts(
            theta, fit, state.log_x, state.log_t)
    cur = state._prior_cur + state._loglik_x + state._loglik_t
    if not np.isfinite(cur):
        raise RuntimeError("non-finite log posterior at the current state")
    prop = theta + state.proposal_sd * rng.standard_normal(theta.size)
    parts = _kernel_parts(prop, fit, state.log_x, state.log_t)
    if math.log(rng.random()) < sum(parts) - cur:
        bx, bt, sx, st = _unpack_theta(prop, fit)
        state.beta_x = np.array(bx)
        state.beta_t = np.array(bt)
        state.sigma_x, state.sigma_t = sx, st
        state._prior_cur, state._loglik_x, state._loglik_t = parts
        return True
    return False


def _check_mass(mass, base_index, mass_floor=MASS_FLOOR):
    bad = ~(mass >= mass_floor)
    if bad.any():
        raise DegenerateIntervalError(
            "empty truncation interval during augmentation",
            indices=base_index + np.nonzero(bad)[0])


def _eps_lower(error, e_a, u, base):
    """Standardized draw from (e_a, inf); exact in the right tail."""
    s_a = error.sf(e_a)
    _check_mass(s_a, base)
    return error.isf(s_a * (1.0 - u))


def _eps_upper(error, e_b, u, base):
    """Standardized draw from (-inf, e_b]; exact in the left tail."""
    p_b = error.cdf(e_b)
    _check_mass(p_b, base)
    return error.ppf(p_b * u)


def _eps_interval(error, e_a, e_b, u, base):
    """Standardized draw from (e_a, e_b], survival side above the median."""
    upper = e_a > error.median
    eps = np.empty_like(u)
    if upper.any():
        idx = np.nonzero(upper)[0]
        s_a = error.sf(e_a[idx])
        s_b = error.sf(e_b[idx])
        _check_mass(s_a - s_b, base + idx)
        eps[idx] = error.isf(s_a + u[idx] * (s_b - s_a))
    low = ~upper
    if low.any():
        idx = np.nonzero(low)[0]
        p_a = error.cdf(e_a[idx])
        p_b = error.cdf(e_b[idx])
        _check_mass(p_b - p_a, base + idx)
        eps[idx] = error.ppf(p_a + u[idx] * (p_b - p_a))
    return eps


def _clip_to_interval(v, log_v, lo, hi):
    """Nudge rounding casualties back into (lo, hi] (hi may be +inf)."""
    adj = v <= lo
    if adj.any():
        v = np.where(adj, np.nextafter(lo, np.inf), v)
        log_v = np.where(adj, np.log(v), log_v)
    adj = v > hi
    if adj.any():
        v = np.where(adj, hi, v)
        log_v = np.where(adj, np.log(v), log_v)
    return v, log_v


def augment(state, fit, rng):
    """Refresh every latent x_i then every latent t_i from the truncated
    full conditionals (x before t, using the just-updated x)."""
    mu_x = fit.zx @ state.beta_x
    if fit.off_x is not None:
        mu_x = mu_x + fit.off_x
    mu_t = fit.zt @ state.beta_t
    if fit.off_t is not None:
        mu_t = mu_t + fit.off_t
    err_x = fit.spec.fam_x.error
    err_t = fit.spec.fam_t.error
    sx, st = state.sigma_x, state.sigma_t
    n = fit.n
    g1, g2, g3 = fit.g1, fit.g2, fit.g3
    eps = np.empty(n)
    with np.errstate(all="ignore"):
        # x | t: delta=1 (l, inf); delta=2 (max(r-t, l), r]; delta=3 (l, r-t]
        u = rng.random(n)
        eps[g1] = _eps_lower(err_x, (fit.log_l[g1] - mu_x[g1]) / sx, u[g1],
                             g1.start)
        lo2 = np.maximum(fit.r[g2] - state.t[g2], fit.l[g2])
        eps[g2] = _eps_interval(
            err_x, (np.log(lo2) - mu_x[g2]) / sx,
            (fit.log_r[g2] - mu_x[g2]) / sx, u[g2], g2.start)
        hi3 = fit.r[g3] - state.t[g3]
        eps[g3] = _eps_interval(
            err_x, (fit.log_l[g3] - mu_x[g3]) / sx,
            (np.log(hi3) - mu_x[g3]) / sx, u[g3], g3.start)
        log_x = mu_x + sx * eps
        x = np.exp(log_x)
        x[g2], log_x[g2] = _clip_to_interval(x[g2], log_x[g2], lo2, fit.r[g2])
        x[g3], log_x[g3] = _clip_to_interval(x[g3], log_x[g3], fit.l[g3], hi3)
        xl = x[g1] <= fit.l[g1]
        if xl.any():
            x[g1] = np.where(xl, np.nextafter(fit.l[g1], np.inf), x[g1])
            log_x[g1] = np.where(xl, np.log(x[g1]), log_x[g1])
        state.x = x
        state.log_x = log_x
        state._loglik_x = float(np.sum(err_x.log_pdf(eps))) - n * math.log(sx)

        # t | x: delta=1 (0, inf); delta=2 (r-x, inf); delta=3 (0, r-x]
        u = rng.random(n)
        eps_t = np.empty(n)
        eps_t[g1] = err_t.ppf(u[g1])
        lo2t = fit.r[g2] - x[g2]
        eps_t[g2] = _eps_lower(err_t, (np.log(lo2t) - mu_t[g2]) / st, u[g2],
                               g2.start)
        hi3t = fit.r[g3] - x[g3]
        eps_t[g3] = _eps_upper(err_t, (np.log(hi3t) - mu_t[g3]) / st, u[g3],
                               g3.start)
        log_t = mu_t + st * eps_t
        t = np.exp(log_t)
        t2l = t[g2] <= lo2t
        if t2l.any():
            t[g2] = np.where(t2l, np.nextafter(lo2t, np.inf), t[g2])
            log_t[g2] = np.where(t2l, np.log(t[g2]), log_t[g2])
        t[g3], log_t[g3] = _clip_to_interval(t[g3], log_t[g3],
                                             np.zeros(g3.stop - g3.start),
                                             hi3t)
        state.t = t
        state.log_t = log_t
        state._loglik_t = float(np.sum(err_t.log_pdf(eps_t))) - n * math.log(st)
    return state


def _initial_state(fit, rng, proposal_sd, max_tries=100):
    """Over-dispersed initialization: beta from the t prior, sigma from the
    half-normal prior clamped to [0.05, 8]; latent times at interval
    midpoints (delta=3: x at l + (r-l)/3, t at (r-x)/2), retried until the
    log posterior is finite."""
    n = fit.n
    x = np.empty(n)
    t = np.empty(n)
    g1, g2, g3 = fit.g1, fit.g2, fit.g3
    x[g1] = fit.l[g1] + 1.0
    t[g1] = 1.0
    x[g2] = 0.5 * (fit.l[g2] + fit.r[g2])
    t[g2] = (fit.r[g2] - x[g2]) + 1.0
    x[g3] = fit.l[g3] + (fit.r[g3] - fit.l[g3]) / 3.0
    t[g3] = (fit.r[g3] - x[g3]) / 2.0
    log_x = np.log(x) if n else np.empty(0)
    log_t = np.log(t) if n else np.empty(0)
    for _ in range(max_tries):
        state = ChainState(
            beta_x=rng.standard_t(fit.priors.tau_x, fit.px),
            beta_t=rng.standard_t(fit.priors.tau_t, fit.pt),
            sigma_x=(float(np.clip(abs(rng.normal(0, fit.priors.lambda_x)),
                                   0.05, 8.0)) if fit.free_x else 1.0),
            sigma_t=(float(np.clip(abs(rng.normal(0, fit.priors.lambda_t)),
                                   0.05, 8.0)) if fit.free_t else 1.0),
            x=x.copy(), log_x=log_x.copy(), t=t.copy(), log_t=log_t.copy(),
            proposal_sd=proposal_sd,
        )
        if not np.isfinite(_log_kernel(state.theta(fit), fit, state.log_x,
                                       state.log_t)):
            continue
        try:
            # Parameters far in the prior tails can leave an augmentation
            # interval without mass; such draws do not count as feasible.
            augment(state, fit, rng)
        except DegenerateIntervalError:
            continue
        return state
    raise RuntimeError("could not find a feasible initialization")


def _chain_rng(seed, chain):
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=(0, int(chain)))))


def _sweep_block(state, fit, rng, n_sweeps, out):
    accepted = 0
    for i in range(n_sweeps):
        accepted += metropolis_update(state, fit, rng)
        augment(state, fit, rng)
        out[i] = state.row()
    return accepted


def _block_worker(payload):
    state, fit, rng_state, n_sweeps = payload
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = rng_state
    out = np.empty((n_sweeps, state.row().size))
    accepted = _sweep_block(state, fit, rng, n_sweeps, out)
    return state, rng.bit_generator.state, out, accepted


@dataclass
class PosteriorDraws:
    """Multi-chain draw store; first halves are discarded as warm-up."""

    param_names: list
    chains: list                      # per chain: (k, d) array, sigma natural
    converged: bool
    history: list                     # per check: dict of draws/R/ESS
    proposal_sd: float
    acceptance_rate: float
    seed: int
    spec: ModelSpec
    n_obs: int
    final_states: list = field(default_factory=list)
    sensitivity: tuple | None = None

    @property
    def n_chains(self):
        return len(self.chains)

    @property
    def draws_per_chain(self):
        return int(self.chains[0].shape[0])

    def retained(self):
        """Second half of every chain."""
        return [c[c.shape[0] // 2:] for c in self.chains]

    def retained_matrix(self):
        return np.concatenate(self.retained(), axis=0)

    def diagnostics_now(self):
        ret = self.retained()
        k = min(c.shape[0] for c in ret)
        out = {}
        for j, name in enumerate(self.param_names):
            cm = np.stack([c[:k, j] for c in ret])
            if np.allclose(cm.var(axis=1), 0.0):
                continue
            out[name] = {
                "r": diagnostics.gelman_rubin(cm),
                "ess": diagnostics.ess(cm),
            }
        return out

    def summaries(self, probs=(0.025, 0.5, 0.975)):
        mat = self.retained_matrix()
        qs = diagnostics.summarize(mat, probs)
        return {
            name: {f"p{p}": float(qs[i, j]) for i, p in enumerate(probs)}
            for j, name in enumerate(self.param_names)
        }


def _diag_over_params(chains_mat, cols, names):
    """R and ESS per watched column, on the retained (second) halves."""
    out = {}
    for j, name in zip(cols, names):
        halves = [c[c.shape[0] // 2:, j] for c in chains_mat]
        k = min(h.shape[0] for h in halves)
        cm = np.stack([h[-k:] for h in halves])
        try:
            out[name] = (diagnostics.gelman_rubin(cm), diagnostics.ess(cm))
        except diagnostics.DegenerateChainError:
            out[name] = (np.inf, 0.0)
    return out


def run(dataset, spec, priors=None, n_chains=3, seed=0, stopping=None,
        sensitivity=None, proposal_sd=None, threads=1, tuning=None):
    """Run the Gibbs sampler to the stopping rule and return the draw store.

    Chains get independent RNG streams derived from (seed, chain index);
    identical seeds and configs reproduce draw streams bit-exactly,
    sequentially or with ``threads`` > 1.  Non-convergence at max_draws is
    reported by the ``converged`` flag, not an exception.  When
    ``proposal_sd`` is None the tuning heuristic runs first and its pilot
    draws are discarded.
    """
    priors = priors or Priors()
    stopping = stopping or StoppingRule()
    spec = spec if isinstance(spec, ModelSpec) else ModelSpec(*spec)
    dataset.check_identifiable()
    w = None
    if sensitivity is not None:
        w_rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=seed, spawn_key=(1,))))
        w = w_rng.standard_normal(len(dataset))
    fit = _FitData(dataset, spec, priors, sensitivity, w)
    if proposal_sd is None:
        proposal_sd = tune_proposal(dataset, spec, priors, seed=seed,
                                    n_chains=n_chains, sensitivity=sensitivity,
                                    **(tuning or {}))

    rngs = [_chain_rng(seed, c) for c in range(n_chains)]
    states = [_initial_state(fit, rngs[c], proposal_sd) for c in range(n_chains)]

    names = fit.param_names(dataset)
    sig_free = [True] * (fit.px + fit.pt) + [fit.free_x, fit.free_t]
    watch = [j for j, f in enumerate(sig_free) if f]

    blocks = [[] for _ in range(n_chains)]
    accepted = np.zeros(n_chains, dtype=int)
    history = []
    draws_done = 0
    converged = False
    pool = ProcessPoolExecutor(threads) if threads > 1 else None
    try:
        while draws_done < stopping.max_draws and not converged:
            n_sweeps = min(stopping.block, stopping.max_draws - draws_done)
            if pool is None:
                for c in range(n_chains):
                    out = np.empty((n_sweeps, len(names)))
                    accepted[c] += _sweep_block(states[c], fit, rngs[c],
                                                n_sweeps, out)
                    blocks[c].append(out)
            else:
                payloads = [(states[c], fit, rngs[c].bit_generator.state,
                             n_sweeps) for c in range(n_chains)]
                for c, (st, rstate, out, acc) in enumerate(
                        pool.map(_block_worker, payloads)):
                    states[c] = st
                    rngs[c].bit_generator.state = rstate
                    blocks[c].append(out)
                    accepted[c] += acc
            draws_done += n_sweeps
            chains_mat = [np.concatenate(b, axis=0) for b in blocks]
            stats = _diag_over_params(chains_mat, watch,
                                      [names[j] for j in watch])
            history.append({
                "draws_per_chain": draws_done,
                "r": {k: float(v[0]) for k, v in stats.items()},
                "ess": {k: float(v[1]) for k, v in stats.items()},
            })
            converged = all(
                v[0] < stopping.r_max and v[1] >= stopping.ess_min
                for v in stats.values()
            )
    finally:
        if pool is not None:
            pool.shutdown()

    chains_mat = [np.concatenate(b, axis=0) for b in blocks]
    acc_rate = float(np.sum(accepted)) / max(n_chains * draws_done, 1)
    return PosteriorDraws(
        param_names=names,
        chains=chains_mat,
        converged=converged,
        history=history,
        proposal_sd=float(proposal_sd),
        acceptance_rate=acc_rate,
        seed=int(seed),
        spec=spec,
        n_obs=len(dataset),
        final_states=[s.params() for s in states],
        sensitivity=(None if sensitivity is None else
                     (sensitivity.beta_xw, sensitivity.beta_tw)),
    )


def tune_proposal(dataset, spec, priors=None, seed=0, n_chains=3, s0=0.1,
                  target=(0.22, 0.24), max_rescale=20, sensitivity=None):
    """Heuristic proposal-sd search targeting ~23% acceptance.

    Pilot of 5,000 sweeps per chain at s = s0; while the pooled acceptance
    rate w falls outside ``target``, rescale s multiplicatively (s * w/J1
    when w is above the band, s * w/J2 when below, i.e. proportional control
    towards the nearer band edge) and re-pilot with 3,000 then 6,000 then
    12,000 sweeps.  All pilot draws are discarded.
    """
    priors = priors or Priors()
    spec = spec if isinstance(spec, ModelSpec) else ModelSpec(*spec)
    j1, j2 = target
    w_vec = None
    if sensitivity is not None:
        w_rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=seed, spawn_key=(1,))))
        w_vec = w_rng.standard_normal(len(dataset))
    fit = _FitData(dataset, spec, priors, sensitivity, w_vec)
    rngs = [np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=(2, c))))
        for c in range(n_chains)]
    states = [_initial_state(fit, rngs[c], s0) for c in range(n_chains)]

    s = float(s0)
    schedule = [5000, 3000, 6000]
    for round_idx in range(max_rescale + 1):
        n_sweeps = schedule[round_idx] if round_idx < len(schedule) else 12000
        acc = 0
        for c in range(n_chains):
            states[c].proposal_sd = s
            for _ in range(n_sweeps):
                acc += metropolis_update(states[c], fit, rngs[c])
                augment(states[c], fit, rngs[c])
        w = acc / (n_chains * n_sweeps)
        if j1 <= w <= j2:
            return s
        # Proportional rescale; w floored so a dead pilot still moves s.
        w_eff = max(w, j1 / 10.0)
        s = s * (w_eff / j1 if w > j2 else w_eff / j2)
    raise TuningError(
        f"acceptance rate did not enter [{j1}, {j2}] after {max_rescale} "
        f"rescales (last s={s:.4g}, w={w:.4f})")
