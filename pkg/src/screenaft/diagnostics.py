"""Convergence and summary statistics for multi-chain MCMC output.

Implements the classic potential scale reduction factor
R = sqrt((((k-1)/k) W + B/k) / W) with W the mean within-chain variance and
B = k * var(chain means), and an effective sample size based on chain-mean
autocorrelations truncated by Geyer's initial monotone sequence.
"""

from __future__ import annotations

import numpy as np

__all__ = ["DegenerateChainError", "gelman_rubin", "ess", "summarize"]


class DegenerateChainError(ValueError):
    """All draws identical within chains; W = 0 so R and ESS are undefined."""


def _as_chain_matrix(cm):
    cm = np.asarray(cm, dtype=float)
    if cm.ndim != 2:
        raise ValueError("expected a (chains, draws) matrix")
    m, k = cm.shape
    if m < 2:
        raise ValueError(f"need at least 2 chains, got {m}")
    if k < 4:
        raise ValueError(f"need at least 4 draws per chain, got {k}")
    if not np.all(np.isfinite(cm)):
        raise ValueError("chains contain non-finite draws")
    return cm


def gelman_rubin(cm):
    """Potential scale reduction factor for one parameter.

    ``cm`` is an (m chains, k draws) matrix; returns ~1 for exchangeable
    chains and grows with between-chain disagreement.
    """
    cm = _as_chain_matrix(cm)
    m, k = cm.shape
    within = cm.var(axis=1, ddof=1).mean()
    if not within > 0:
        raise DegenerateChainError("within-chain variance is zero")
    between_over_k = cm.mean(axis=1).var(ddof=1)  # B/k with B = k*var(means)
    var_plus = (k - 1) / k * within + between_over_k
    return float(np.sqrt(var_plus / within))


def _mean_autocovariance(cm):
    """Autocovariance by lag, averaged over chains (FFT, biased 1/k norm)."""
    m, k = cm.shape
    centered = cm - cm.mean(axis=1, keepdims=True)
    nfft = 1 << (2 * k - 1).bit_length()
    f = np.fft.rfft(centered, nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :k] / k
    return acov.mean(axis=0)


def ess(cm):
    """Effective sample size m*k / (1 + 2*sum of autocorrelations).

    Autocorrelations are summed in Geyer pairs up to the first non-positive
    pair, with the pair sums forced non-increasing; the result is capped at
    the total draw count.
    """
    cm = _as_chain_matrix(cm)
    m, k = cm.shape
    if not cm.var(axis=1, ddof=1).mean() > 0:
        raise DegenerateChainError("within-chain variance is zero")
    acov = _mean_autocovariance(cm)
    rho = acov / acov[0]
    # Geyer pairs G_j = rho_{2j} + rho_{2j+1} (G_0 contains rho_0 = 1): sum
    # initial positive pairs, forced non-increasing; tau = 2*sum(G) - 1.
    npairs = k // 2
    pairs = rho[: 2 * npairs].reshape(npairs, 2).sum(axis=1)
    total = 0.0
    prev = np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        total += g
        prev = g
    tau = max(2.0 * total - 1.0, 1.0 / (m * k))
    return float(min(m * k, m * k / tau))


def summarize(draws, probs=(0.025, 0.5, 0.975)):
    """Empirical quantiles by linear interpolation of order statistics.

    ``draws`` is 1-D (one parameter) or (ndraws, nparams); returns an array
    of shape (len(probs),) or (len(probs), nparams).
    """
    draws = np.asarray(draws, dtype=float)
    if draws.size == 0:
        raise ValueError("no draws to summarize")
    return np.quantile(draws, list(probs), axis=0)
