"""Synthetic three-state screening data.

Transition times come from the two AFT models; censoring comes from a
recursive visit process: the first visit lands uniform(c_min, c_max) after
time zero and always takes place, each later visit adds a uniform(c_min,
c_max) gap, and the series stops at the first candidate visit falling more
than an exponential(mean theta) right-censoring time after the first visit.
The censoring clock starting at the first visit (rather than at zero) is
what reproduces the published state proportions for this process.

All randomness is consumed as uniforms from a counter-based generator
(Philox) in fixed per-individual positions, so a run is bit-reproducible and
independent of how individuals would be split across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .data import Dataset
from .families import get_family

__all__ = [
    "ScreeningConfig",
    "TransitionModel",
    "GenModel",
    "gen_times",
    "gen_screening",
    "censor",
    "simulate_dataset",
    "load_gen_config",
]


@dataclass(frozen=True)
class ScreeningConfig:
    """Visit-process parameters: inter-visit gap bounds and mean censoring time."""

    c_min: float
    c_max: float
    theta: float

    def __post_init__(self):
        if not 0 < self.c_min < self.c_max:
            raise ValueError(f"need 0 < c_min < c_max, got {self.c_min}, {self.c_max}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")


@dataclass(frozen=True)
class TransitionModel:
    """Family plus regression/scale parameters for one transition."""

    family: str
    beta: tuple
    sigma: float

    def __post_init__(self):
        fam = get_family(self.family)
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if fam.fixed_scale and self.sigma != 1.0:
            raise ValueError(f"{self.family} requires sigma == 1")


# Covariate generators: ("standard-normal",) or ("bernoulli", q).
def _check_covariates(covariates):
    out = []
    for g in covariates:
        if isinstance(g, str):
            g = (g,)
        kind = g[0]
        if kind == "standard-normal":
            out.append(("standard-normal",))
        elif kind == "bernoulli":
            q = float(g[1])
            if not 0 <= q <= 1:
                raise ValueError(f"bernoulli q must be in [0, 1], got {q}")
            out.append(("bernoulli", q))
        else:
            raise ValueError(f"unknown covariate generator {kind!r}")
    return tuple(out)


@dataclass(frozen=True)
class GenModel:
    """Generating model: one TransitionModel per transition plus covariates."""

    x_model: TransitionModel
    t_model: TransitionModel
    covariates: tuple = ()
    design_x: tuple | None = None
    design_t: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", _check_covariates(self.covariates))
        p = len(self.covariates)
        dx = tuple(range(p)) if self.design_x is None else tuple(self.design_x)
        dt = tuple(range(p)) if self.design_t is None else tuple(self.design_t)
        object.__setattr__(self, "design_x", dx)
        object.__setattr__(self, "design_t", dt)
        if len(self.x_model.beta) != 1 + len(dx):
            raise ValueError("x_model.beta length must be 1 + len(design_x)")
        if len(self.t_model.beta) != 1 + len(dt):
            raise ValueError("t_model.beta length must be 1 + len(design_t)")


def _draw_covariates(covariates, u):
    """Map a (n, p) uniform block to covariate values."""
    z = np.empty_like(u)
    for j, g in enumerate(covariates):
        if g[0] == "standard-normal":
            z[:, j] = ndtri(u[:, j])
        else:
            z[:, j] = (u[:, j] < g[1]).astype(float)
    return z


def _times_from_uniform(model, z, design, u):
    fam = get_family(model.family)
    beta = np.asarray(model.beta)
    mu = beta[0] + (z[:, design] @ beta[1:] if design else 0.0)
    return np.exp(mu + model.sigma * fam.error.ppf(u))


def gen_times(model, z, rng):
    """Draw (x, t) from the two AFT models given covariate rows z.

    z may be a single row (p,) or a batch (n, p); returns matching scalars
    or arrays.  x and t are conditionally independent given z.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim <= 1
    z2 = z.reshape(1, -1) if single else z
    n = z2.shape[0]
    x = _times_from_uniform(model.x_model, z2, model.design_x, rng.random(n))
    t = _times_from_uniform(model.t_model, z2, model.design_t, rng.random(n))
    if single:
        return float(x[0]), float(t[0])
    return x, t


def gen_screening(config, rng):
    """One visit vector (0, v_1, ..., v_m, +inf), m >= 1.

    v_1 ~ uniform(c_min, c_max) always takes place; each later candidate adds
    a uniform(c_min, c_max) gap and is retained while it falls within an
    exponential(mean theta) right-censoring time of the first visit.
    """
    v_rc = rng.exponential(config.theta)
    v1 = rng.uniform(config.c_min, config.c_max)
    visits = [0.0, v1]
    v = v1
    while True:
        v = rng.uniform(v + config.c_min, v + config.c_max)
        if v > v1 + v_rc:
            break
        visits.append(v)
    visits.append(math.inf)
    return np.asarray(visits)


def censor(x, t, v):
    """Reduce latent times (x, t) and a visit vector to (delta, l, r).

    (l, r] is the consecutive visit pair with l < x <= r; when x exceeds the
    last finite visit, l is that visit (0 if there is none) and r = +inf.
    delta is 1 when r = +inf, 2 when r < x + t, and 3 when x + t <= r.
    """
    v = np.asarray(v, dtype=float)
    if x <= 0 or t <= 0:
        raise ValueError("x and t must be positive")
    # First visit >= x; ties x == v_j fall in (v_{j-1}, v_j].
    j = int(np.searchsorted(v, x, side="left"))
    l, r = float(v[j - 1]), float(v[j])
    if math.isinf(r):
        return 1, l, math.inf
    return (3, l, r) if x + t <= r else (2, l, r)


def simulate_dataset(n, model, config, seed, return_latent=False):
    """Simulate n individuals and reduce them to screening observations.

    Latent (x, t) are only returned when ``return_latent`` is set; real
    pipelines must not see them.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    p = len(model.covariates)
    z = _draw_covariates(model.covariates, gen.random((n, p))) if p else np.empty((n, 0))
    x = _times_from_uniform(model.x_model, z, model.design_x, gen.random(n))
    t = _times_from_uniform(model.t_model, z, model.design_t, gen.random(n))
    v_rc = -config.theta * np.log1p(-gen.random(n))

    # Round-by-round visit recursion; every round consumes one full n-vector
    # of uniforms so individual i always reads position (round, i).
    gap = config.c_max - config.c_min
    v1 = config.c_min + gap * gen.random(n)
    limit = v1 + v_rc                # candidates past this end the series
    bracketed = x <= v1
    l = np.zeros(n)
    r = np.where(bracketed, v1, np.inf)
    v_prev = v1.copy()               # last retained visit
    active = np.ones(n, dtype=bool)
    while np.any(active):
        cand = v_prev + config.c_min + gap * gen.random(n)
        retain = active & (cand <= limit)
        hit = retain & ~bracketed & (x <= cand)
        l[hit] = v_prev[hit]
        r[hit] = cand[hit]
        bracketed |= hit
        v_prev[retain] = cand[retain]
        active = retain

    delta = np.ones(n, dtype=np.int8)
    delta[bracketed] = np.where(x[bracketed] + t[bracketed] <= r[bracketed], 3, 2)
    l[~bracketed] = v_prev[~bracketed]

    dataset = Dataset(z, delta, l, r,
                      covariate_names=[f"z{j + 1}" for j in range(p)],
                      design_x=model.design_x, design_t=model.design_t)
    if return_latent:
        return dataset, x, t
    return dataset


def load_gen_config(obj):
    """Build (n, GenModel, ScreeningConfig, seed) from a JSON config dict or path."""
    if not isinstance(obj, dict):
        with open(obj, encoding="utf-8") as fh:
            obj = json.load(fh)
    model = GenModel(
        x_model=TransitionModel(**obj["x_model"]),
        t_model=TransitionModel(**obj["t_model"]),
        covariates=tuple(tuple(g) if isinstance(g, list) else g
                         for g in obj.get("covariates", ())),
        design_x=obj.get("design_x"),
        design_t=obj.get("design_t"),
    )
    screening = ScreeningConfig(**obj["screening"])
    return int(obj["n"]), model, screening, int(obj["seed"])
