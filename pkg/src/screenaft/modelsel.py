"""Observed-data likelihood and information criteria (DIC, WAIC-1, WAIC-2).

The per-observation likelihood terms are

    delta = 1:  1 - F_x(l)
    delta = 2:  int_l^r f_x(x) [1 - F_t(r - x)] dx
    delta = 3:  int_l^r f_x(x) F_t(r - x) dx

integrated by adaptive Gauss-Kronrod quadrature with interval bisection.
Integration runs on the log-time axis (no endpoint singularity, l = 0
allowed) with the integrand evaluated in the log domain and exponentiated
around a per-observation shift, so likelihoods far below the floating-point
range of the linear scale keep full relative precision.  All criteria use
log-mean-exp with a max shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import AftParams

__all__ = [
    "CriterionUndefinedError",
    "PointwiseLik",
    "obs_loglik",
    "pointwise",
    "dic",
    "waic",
    "information_criteria",
]

DEFAULT_ABS_TOL = 1e-10
DEFAULT_REL_TOL = 1e-8

# 15-point Kronrod nodes with Kronrod and (embedded 7-point) Gauss weights.
_GK_NODES = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0,
    0.207784955007898, 0.405845151377397, 0.586087235467691,
    0.741531185599394, 0.864864423359769, 0.949107912342759,
    0.991455371120813,
])
_GK_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
    0.204432940075298, 0.190350578064785, 0.169004726639267,
    0.140653259715525, 0.104790010322250, 0.063092092629979,
    0.022935322010529,
])
_GK_WG = np.zeros(15)
_GK_WG[1::2] = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870,
])


class CriterionUndefinedError(ValueError):
    """A criterion hit -inf pointwise likelihoods; lists the observations."""

    def __init__(self, message, observations=()):
        obs = sorted(int(i) for i in set(observations))
        super().__init__(f"{message} (observations {obs})")
        self.observations = obs


def _integrate_log_cells(log_f, lo, hi, abs_tol=DEFAULT_ABS_TOL,
                         rel_tol=DEFAULT_REL_TOL, max_depth=30, prescan=65):
    """log of int_lo^hi exp(log_f) du for a batch of cells.

    ``log_f(u, cell)`` evaluates the log integrand at positions ``u`` for the
    given (broadcast) cell indices.  Each cell is integrated by G7-K15 rules
    on a stack of segments, bisecting segments until the accumulated error
    estimate meets max(abs_tol, rel_tol*|I|) on the shifted scale.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    ncell = lo.shape[0]
    if ncell == 0:
        return np.empty(0), np.ones(0, bool)

    # Per-cell shift from a uniform prescan of the log integrand.
    grid = (np.arange(prescan) + 0.5) / prescan
    u = lo[:, None] + (hi - lo)[:, None] * grid
    with np.errstate(all="ignore"):
        shift = np.max(log_f(u, np.arange(ncell)[:, None]), axis=1)
    dead = ~np.isfinite(shift)  # integrand vanished everywhere on the scan

    conv_val = np.zeros(ncell)
    conv_err = np.zeros(ncell)
    seg_cell = np.arange(ncell)[~dead]
    seg_lo = lo[~dead]
    seg_hi = hi[~dead]

    for _ in range(max_depth):
        if seg_cell.size == 0:
            break
        half = 0.5 * (seg_hi - seg_lo)
        mid = 0.5 * (seg_lo + seg_hi)
        u = mid[:, None] + half[:, None] * _GK_NODES
        with np.errstate(all="ignore"):
            h = np.exp(log_f(u, seg_cell[:, None]) - shift[seg_cell, None])
        h = np.nan_to_num(h, nan=0.0, posinf=1e300)
        i15 = h @ _GK_WK
        i7 = h @ _GK_WG
        val = half * i15
        err = half * np.abs(i15 - i7)

        # Cell totals with the still-active segments included.
        tot_val = conv_val + np.bincount(seg_cell, val, minlength=ncell)
        tot_err = conv_err + np.bincount(seg_cell, err, minlength=ncell)
        tol = np.maximum(abs_tol, rel_tol * np.abs(tot_val))
        cell_done = tot_err[seg_cell] <= tol[seg_cell]
        # A segment may also settle individually: its share of the budget.
        width_tot = np.bincount(seg_cell, 2.0 * half, minlength=ncell)
        seg_done = err <= 0.5 * tol[seg_cell] * (2.0 * half) / width_tot[seg_cell]
        done = cell_done | seg_done

        np.add.at(conv_val, seg_cell[done], val[done])
        np.add.at(conv_err, seg_cell[done], err[done])
        keep = ~done
        seg_cell, seg_lo, seg_hi = seg_cell[keep], seg_lo[keep], seg_hi[keep]
        mid = mid[keep]
        if seg_cell.size:
            seg_cell = np.concatenate([seg_cell, seg_cell])
            seg_lo, seg_hi = (np.concatenate([seg_lo, mid]),
                              np.concatenate([mid, seg_hi]))
    else:
        # Depth exhausted: bank whatever the remaining segments hold.
        if seg_cell.size:
            half = 0.5 * (seg_hi - seg_lo)
            mid = 0.5 * (seg_lo + seg_hi)
            u = mid[:, None] + half[:, None] * _GK_NODES
            with np.errstate(all="ignore"):
                h = np.exp(log_f(u, seg_cell[:, None]) - shift[seg_cell, None])
            h = np.nan_to_num(h, nan=0.0, posinf=1e300)
            np.add.at(conv_val, seg_cell, half * (h @ _GK_WK))

    with np.errstate(divide="ignore"):
        log_i = np.where(conv_val > 0, np.log(np.maximum(conv_val, 1e-320)), -np.inf)
    log_i = log_i + np.where(dead, 0.0, shift)
    log_i[dead] = -np.inf
    ok = np.isfinite(log_i)
    return log_i, ok


def _log_time_integrand(spec, loc_x, sc_x, loc_t, sc_t, r, delta):
    """Log integrand on the u = log x axis for delta in {2, 3} cells."""
    fx = spec.fam_x.error
    ft = spec.fam_t.error

    def log_f(u, cell):
        ex = (u - loc_x[cell]) / sc_x[cell]
        out = fx.log_pdf(ex) - np.log(sc_x[cell])
        rest = np.maximum(r[cell] - np.exp(u), 0.0)
        with np.errstate(divide="ignore"):
            et = (np.log(rest) - loc_t[cell]) / sc_t[cell]
        d = delta[cell]
        lt = np.where(d == 3, ft.log_cdf(et), ft.log_sf(et))
        return out + lt

    return log_f


def _integration_window(spec, loc_x, sc_x, l):
    """(u_lo, u_hi) bounds on the log-time axis; l = 0 cut where f_x mass
    below the cut is < 1e-280."""
    eps_min = spec.fam_x.error.ppf(1e-280)
    with np.errstate(divide="ignore"):
        u_lo = np.maximum(np.log(l), loc_x + sc_x * eps_min)
    return u_lo


def _pointwise_one_draw(params, spec, dataset, abs_tol, rel_tol):
    return _pointwise_matrix(params.flat()[None, :], spec, dataset,
                             abs_tol, rel_tol)[0]


def _pointwise_matrix(theta, spec, dataset, abs_tol=DEFAULT_ABS_TOL,
                      rel_tol=DEFAULT_REL_TOL, chunk_cells=200_000):
    """(K, n) matrix of per-observation log likelihood terms.

    ``theta`` rows are flat parameter vectors [beta_x..., beta_t..., sigma_x,
    sigma_t] matching the dataset designs.
    """
    theta = np.atleast_2d(np.asarray(theta, float))
    K = theta.shape[0]
    n = len(dataset)
    px = 1 + len(dataset.design_x)
    bx = theta[:, :px]
    bt = theta[:, px:-2]
    sx = theta[:, -2]
    st = theta[:, -1]
    zx = dataset.design_matrix("x")
    zt = dataset.design_matrix("t")

    out = np.empty((K, n))
    d1 = np.nonzero(dataset.delta == 1)[0]
    d23 = np.nonzero(dataset.delta != 1)[0]

    if d1.size:
        mu = bx @ zx[d1].T                      # (K, n1)
        with np.errstate(divide="ignore"):
            e = (np.log(dataset.l[d1]) - mu) / sx[:, None]
        out[:, d1] = spec.fam_x.error.log_sf(e)

    if d23.size:
        mu_x = bx @ zx[d23].T
        mu_t = bt @ zt[d23].T
        l = np.broadcast_to(dataset.l[d23], (K, d23.size))
        r = np.broadcast_to(dataset.r[d23], (K, d23.size))
        dl = np.broadcast_to(dataset.delta[d23], (K, d23.size))
        flat = [a.reshape(-1) for a in (
            mu_x, np.broadcast_to(sx[:, None], mu_x.shape), mu_t,
            np.broadcast_to(st[:, None], mu_t.shape), l, r, dl)]
        loc_x, sc_x, loc_t, sc_t, lf, rf, df = [np.ascontiguousarray(a) for a in flat]
        vals = np.empty(loc_x.shape[0])
        for s in range(0, loc_x.shape[0], chunk_cells):
            sl = slice(s, min(s + chunk_cells, loc_x.shape[0]))
            log_f = _log_time_integrand(spec, loc_x[sl], sc_x[sl],
                                        loc_t[sl], sc_t[sl], rf[sl], df[sl])
            u_lo = _integration_window(spec, loc_x[sl], sc_x[sl], lf[sl])
            u_lo = np.minimum(u_lo, np.log(rf[sl]))  # never an empty window
            vals[sl], _ = _integrate_log_cells(
                log_f, u_lo, np.log(rf[sl]), abs_tol=abs_tol, rel_tol=rel_tol)
        out[:, d23] = vals.reshape(K, d23.size)
    return out


def obs_loglik(params, spec, observation, abs_tol=DEFAULT_ABS_TOL,
               rel_tol=DEFAULT_REL_TOL):
    """Log observed-data likelihood term of one observation.

    Returns -inf (with no exception) when the term underflows to zero; the
    criteria treat that as undefined, EM treats it as fatal.
    """
    from .data import Dataset

    ds = Dataset(observation.z[None, :], [observation.delta],
                 [observation.l], [observation.r])
    return float(_pointwise_one_draw(params, spec, ds, abs_tol, rel_tol)[0])


def dataset_loglik(params, spec, dataset, abs_tol=DEFAULT_ABS_TOL,
                   rel_tol=DEFAULT_REL_TOL):
    """Observed-data log likelihood summed over a whole dataset."""
    return float(_pointwise_one_draw(params, spec, dataset,
                                     abs_tol, rel_tol).sum())


@dataclass(frozen=True)
class PointwiseLik:
    """Per-draw, per-observation log likelihood matrix (K draws x n)."""

    log_lik: np.ndarray

    @property
    def n_draws(self):
        return self.log_lik.shape[0]

    @property
    def n_obs(self):
        return self.log_lik.shape[1]

    def flagged_observations(self):
        return np.nonzero(~np.isfinite(self.log_lik).all(axis=0))[0]


def _thin_rows(mat, thin_to):
    if thin_to is None or mat.shape[0] <= thin_to:
        return mat
    idx = np.linspace(0, mat.shape[0] - 1, thin_to).round().astype(int)
    return mat[idx]


def pointwise(draws, spec, dataset, thin_to=None, abs_tol=DEFAULT_ABS_TOL,
              rel_tol=DEFAULT_REL_TOL):
    """Evaluate the observed-data log likelihood for every (draw, observation).

    ``draws`` is a (K, d) matrix of flat parameter vectors (optionally
    thinned down to ``thin_to`` rows, evenly spaced).
    """
    theta = _thin_rows(np.atleast_2d(np.asarray(draws, float)), thin_to)
    return PointwiseLik(_pointwise_matrix(theta, spec, dataset,
                                          abs_tol, rel_tol))


def _require_finite(pw):
    bad = pw.flagged_observations()
    if bad.size:
        raise CriterionUndefinedError(
            "pointwise likelihood underflowed to zero", bad)


def dic(pw, log_lik_at_mean):
    """DIC = 2 [log L(posterior-mean params) - 2 E_post(log L)]; lower is better."""
    _require_finite(pw)
    log_lik_at_mean = np.asarray(log_lik_at_mean, float)
    if not np.all(np.isfinite(log_lik_at_mean)):
        raise CriterionUndefinedError(
            "likelihood at the posterior mean underflowed",
            np.nonzero(~np.isfinite(log_lik_at_mean))[0])
    e_log = pw.log_lik.sum(axis=1).mean()
    return float(2.0 * (log_lik_at_mean.sum() - 2.0 * e_log))


def waic(pw):
    """(WAIC-1, WAIC-2); per-observation log-mean-exp uses a max shift."""
    _require_finite(pw)
    ll = pw.log_lik
    K = ll.shape[0]
    lppd = logsumexp(ll, axis=0) - np.log(K)
    e_log = ll.mean(axis=0)
    waic1 = float(-2.0 * np.sum(-lppd + 2.0 * e_log))
    if K < 2:
        return waic1, waic1
    v_log = ll.var(axis=0, ddof=1)
    waic2 = float(-2.0 * np.sum(lppd - v_log))
    return waic1, waic2


def information_criteria(draws, spec, dataset, thin_to=None,
                         abs_tol=DEFAULT_ABS_TOL, rel_tol=DEFAULT_REL_TOL):
    """Convenience wrapper: WAIC-1/WAIC-2/DIC from a draw matrix."""
    theta = _thin_rows(np.atleast_2d(np.asarray(draws, float)), thin_to)
    pw = PointwiseLik(_pointwise_matrix(theta, spec, dataset, abs_tol, rel_tol))
    at_mean = _pointwise_matrix(theta.mean(axis=0)[None, :], spec, dataset,
                                abs_tol, rel_tol)[0]
    waic1, waic2 = waic(pw)
    return {
        "waic1": waic1,
        "waic2": waic2,
        "dic": dic(pw, at_mean),
        "draws_used": int(theta.shape[0]),
    }
