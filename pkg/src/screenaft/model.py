"""Shared containers: the family pair under fit and one parameter set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .families import get_family

__all__ = ["ModelSpec", "AftParams"]


@dataclass(frozen=True)
class ModelSpec:
    """Families for the onset (x) and progression (t) transitions."""

    family_x: str
    family_t: str

    def __post_init__(self):
        object.__setattr__(self, "family_x", get_family(self.family_x).tag)
        object.__setattr__(self, "family_t", get_family(self.family_t).tag)

    @property
    def fam_x(self):
        return get_family(self.family_x)

    @property
    def fam_t(self):
        return get_family(self.family_t)

    @property
    def name(self):
        return f"{self.family_x}-{self.family_t}"


@dataclass(frozen=True)
class AftParams:
    """One parameter set: regression coefficients and scales for both models."""

    beta_x: np.ndarray
    sigma_x: float
    beta_t: np.ndarray
    sigma_t: float

    def __post_init__(self):
        object.__setattr__(self, "beta_x", np.atleast_1d(np.asarray(self.beta_x, float)))
        object.__setattr__(self, "beta_t", np.atleast_1d(np.asarray(self.beta_t, float)))
        if not (self.sigma_x > 0 and self.sigma_t > 0):
            raise ValueError("scales must be positive")

    def flat(self):
        return np.concatenate([self.beta_x, self.beta_t,
                               [self.sigma_x, self.sigma_t]])
