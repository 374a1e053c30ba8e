"""Dose-toxicity models and closed-form MTD maps.

Everything here is a pure function of its inputs. The logistic link is the
only one wired up; the ``Link`` enum exists so an alternative strictly
increasing cdf can be added without touching callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateModelError, DomainError, InvalidDesignError

__all__ = [
    "Link",
    "DesignConstants",
    "OneParamDesign",
    "TwoParamState",
    "CovariateState",
    "NaturalParams",
    "link_cdf",
    "link_inv",
    "link_log_cdf",
    "phi",
    "prob_dlt_one_param",
    "mtd_one_param",
    "natural_params",
    "prob_dlt_two_param",
    "prob_dlt_covariate",
    "conditional_mtd",
    "covariate_natural_params",
    "scale_covariate",
]


class Link(str, Enum):
    LOGISTIC = "logistic"


def link_cdf(u):
    """Logistic cdf F(u) = e^u / (1 + e^u), overflow-safe for |u| ~ 700.

    Accepts scalars or arrays; non-finite input is a domain error.
    """
    if isinstance(u, (float, int)):
        if not math.isfinite(u):
            raise DomainError("link_cdf requires finite input")
        # evaluate on the side whose exp() cannot overflow
        if u >= 0:
            return 1.0 / (1.0 + math.exp(-u))
        e = math.exp(u)
        return e / (1.0 + e)
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("link_cdf requires finite input")
    out = np.where(arr >= 0, 1.0 / (1.0 + np.exp(-np.abs(arr))),
                   np.exp(-np.abs(arr)) / (1.0 + np.exp(-np.abs(arr))))
    return float(out) if arr.ndim == 0 else out


def link_inv(p):
    """Logit, the inverse of :func:`link_cdf`."""
    if isinstance(p, (float, int)):
        if not 0.0 < p < 1.0:
            raise DomainError("link_inv requires probabilities strictly inside (0, 1)")
        return math.log(p / (1.0 - p))
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("link_inv requires probabilities strictly inside (0, 1)")
    out = np.log(arr / (1.0 - arr))
    return float(out) if arr.ndim == 0 else out


def link_log_cdf(u):
    """log F(u) without overflow or log-of-zero for any float input."""
    arr = np.asarray(u, dtype=float)
    out = np.minimum(arr, 0.0) - np.log1p(np.exp(-np.abs(arr)))
    return float(out) if arr.ndim == 0 else out


def phi(theta: float, epsilon: float) -> float:
    """Logit gap F⁻¹(1−ε) − F⁻¹(θ) between the toxicity ceiling and the target.

    Positive whenever θ < 1 − ε; that ordering is required.
    """
    if not (0.0 < theta < 1.0 and 0.0 < epsilon < 1.0):
        raise InvalidDesignError("theta and epsilon must lie in (0, 1)")
    if theta >= 1.0 - epsilon:
        raise InvalidDesignError(
            f"target DLT probability {theta} must be below 1 - epsilon = {1.0 - epsilon}"
        )
    return float(link_inv(1.0 - epsilon) - link_inv(theta))


@dataclass(frozen=True)
class DesignConstants:
    """Trial-level constants shared by every model.

    ``epsilon`` is only consumed by the one-parameter model, where it pins
    the DLT probability at the top anchor dose to 1 − ε.
    """

    theta: float
    x_min: float
    x_max: float
    epsilon: float = 0.05
    link: Link = Link.LOGISTIC

    def __post_init__(self):
        if not (0.0 < self.theta < 1.0):
            raise InvalidDesignError(f"theta must be in (0, 1), got {self.theta}")
        if not (0.0 < self.epsilon < 1.0):
            raise InvalidDesignError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.theta >= 1.0 - self.epsilon:
            raise InvalidDesignError(
                f"theta={self.theta} must be below 1 - epsilon = {1.0 - self.epsilon}"
            )
        if not self.x_min < self.x_max:
            raise InvalidDesignError(f"x_min={self.x_min} must be below x_max={self.x_max}")
        if Link(self.link) is not Link.LOGISTIC:
            raise InvalidDesignError(f"unsupported link {self.link!r}")


@dataclass(frozen=True)
class OneParamDesign:
    """Single-slope tolerance model anchored at two doses.

    The DLT probability is pinned to 0 at ``x_floor`` and to 1 − ε at
    ``x_ceil``; the unknown slope lives in [beta_lo, beta_hi].
    """

    beta_lo: float
    beta_hi: float
    x_floor: float
    x_ceil: float
    phi: float

    def __post_init__(self):
        if not (0.0 < self.beta_lo <= self.beta_hi):
            raise InvalidDesignError("slope bounds must satisfy 0 < beta_lo <= beta_hi")
        if not self.x_floor < self.x_ceil:
            raise InvalidDesignError("anchor doses must satisfy x_floor < x_ceil")
        if not self.phi > 0.0:
            raise InvalidDesignError("phi must be positive")

    @classmethod
    def from_constants(cls, c: DesignConstants, beta_lo: float, beta_hi: float,
                       x_floor: float | None = None, x_ceil: float | None = None) -> "OneParamDesign":
        return cls(
            beta_lo=beta_lo,
            beta_hi=beta_hi,
            x_floor=c.x_min if x_floor is None else x_floor,
            x_ceil=c.x_max if x_ceil is None else x_ceil,
            phi=phi(c.theta, c.epsilon),
        )

    @property
    def feasible_log_range(self) -> tuple[float, float]:
        """Interval of log-standardised doses reachable by the design."""
        return (-self.phi / self.beta_lo, -self.phi / self.beta_hi)

    def log_standardised(self, x) -> float:
        """Map a dose into log((x − x_floor)/(x_ceil − x_floor))."""
        arr = np.asarray(x, dtype=float)
        if np.any(arr <= self.x_floor):
            raise DomainError("log-standardised dose undefined at or below x_floor")
        out = np.log((arr - self.x_floor) / (self.x_ceil - self.x_floor))
        return float(out) if arr.ndim == 0 else out


def prob_dlt_one_param(x: float, beta, d: OneParamDesign, c: DesignConstants):
    """DLT probability F(F⁻¹(1−ε) + β·log((x−x_floor)/(x_ceil−x_floor))).

    Defined on (x_floor, x_ceil]; the limit value 0 is returned exactly at
    x = x_floor. ``beta`` may be an array.
    """
    if not np.isfinite(x):
        raise DomainError("dose must be finite")
    if x < d.x_floor:
        raise DomainError(f"dose {x} below the zero-toxicity anchor {d.x_floor}")
    if x > d.x_ceil:
        raise DomainError(f"dose {x} above the ceiling anchor {d.x_ceil}")
    beta_arr = np.asarray(beta, dtype=float)
    if np.any(beta_arr <= 0.0):
        raise DomainError("beta must be positive")
    if x == d.x_floor:
        return 0.0 if beta_arr.ndim == 0 else np.zeros_like(beta_arr)
    z = math.log((x - d.x_floor) / (d.x_ceil - d.x_floor))
    return link_cdf(link_inv(1.0 - c.epsilon) + beta_arr * z)


def mtd_one_param(beta, d: OneParamDesign):
    """MTD under the one-parameter model: x_floor + (x_ceil − x_floor)·e^(−φ/β)."""
    beta_arr = np.asarray(beta, dtype=float)
    if np.any(beta_arr <= 0.0):
        raise DomainError("beta must be positive")
    out = d.x_floor + (d.x_ceil - d.x_floor) * np.exp(-d.phi / beta_arr)
    return float(out) if beta_arr.ndim == 0 else out


@dataclass(frozen=True)
class TwoParamState:
    """Two-parameter logistic model expressed as (rho0, gamma).

    ``rho0`` is the DLT probability at the minimum dose and ``gamma`` the
    MTD; clinicians can put priors on both directly.
    """

    rho0: float
    gamma: float

    def validate(self, c: DesignConstants) -> None:
        if not (0.0 < self.rho0 < c.theta):
            raise DomainError(f"rho0 must be in (0, theta={c.theta}), got {self.rho0}")
        if self.gamma == c.x_min:
            raise DegenerateModelError("gamma equal to x_min gives an infinite slope")
        if not (c.x_min < self.gamma <= c.x_max):
            raise DomainError(
                f"gamma must be in (x_min={c.x_min}, x_max={c.x_max}], got {self.gamma}"
            )


@dataclass(frozen=True)
class NaturalParams:
    """Logistic regression coefficients: intercept, dose slope, covariate effects."""

    beta0: float
    beta1: float
    eta: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.beta1 > 0.0:
            raise DomainError(f"dose slope must be positive, got {self.beta1}")


def natural_params(s: TwoParamState, c: DesignConstants) -> NaturalParams:
    """Convert (rho0, gamma) into intercept/slope coefficients.

    Inverts the pair of identities p(x_min) = rho0 and p(gamma) = theta.
    """
    s.validate(c)
    slope = (link_inv(c.theta) - link_inv(s.rho0)) / (s.gamma - c.x_min)
    intercept = link_inv(s.rho0) - slope * c.x_min
    return NaturalParams(beta0=intercept, beta1=slope)


def prob_dlt_two_param(x, s: TwoParamState, c: DesignConstants):
    """DLT probability at dose x under the two-parameter logistic model."""
    p = natural_params(s, c)
    if isinstance(x, (float, int)):
        return link_cdf(p.beta0 + p.beta1 * x)
    return link_cdf(p.beta0 + p.beta1 * np.asarray(x, dtype=float))


def prob_dlt_covariate(x, w, p: NaturalParams):
    """DLT probability at dose x for a patient with covariate vector w."""
    w_arr = np.atleast_1d(np.asarray(w, dtype=float))
    if w_arr.shape[-1] != len(p.eta):
        raise DomainError(
            f"covariate vector has {w_arr.shape[-1]} entries, model expects {len(p.eta)}"
        )
    shift = w_arr @ np.asarray(p.eta) if p.eta else 0.0
    return link_cdf(p.beta0 + p.beta1 * np.asarray(x, dtype=float) + shift)


def conditional_mtd(w, p: NaturalParams, theta: float):
    """Covariate-specific MTD: the dose where the DLT probability hits theta."""
    w_arr = np.atleast_1d(np.asarray(w, dtype=float))
    if w_arr.shape[-1] != len(p.eta):
        raise DomainError(
            f"covariate vector has {w_arr.shape[-1]} entries, model expects {len(p.eta)}"
        )
    shift = w_arr @ np.asarray(p.eta) if p.eta else 0.0
    out = (link_inv(theta) - p.beta0 - shift) / p.beta1
    return float(out) if np.asarray(out).ndim == 0 else out


def scale_covariate(c, lo: float, hi: float):
    """Affine map of a covariate onto [0, 1] given its declared bounds.

    Internal computations run on this scale; all I/O stays in original units.
    """
    if not lo < hi:
        raise DomainError(f"covariate bounds must satisfy lo < hi, got [{lo}, {hi}]")
    return (np.asarray(c, dtype=float) - lo) / (hi - lo)


@dataclass(frozen=True)
class CovariateState:
    """Covariate model expressed through interpretable probabilities.

    ``gamma_max`` is the MTD at the reference covariate value c2;
    ``rho1``/``rho2`` are the DLT probabilities at the minimum dose for
    covariate values c1 and c2 (reference group); ``rho3`` is the same
    quantity at c1 for the second group when a binary group covariate is
    in the model.
    """

    gamma_max: float
    rho1: float
    rho2: float
    c1: float
    c2: float
    rho3: float | None = None

    def validate(self, c: DesignConstants) -> None:
        if not (0.0 < self.rho2 <= self.rho1 <= c.theta):
            raise DomainError(
                f"need 0 < rho2 <= rho1 <= theta={c.theta}, got rho1={self.rho1}, rho2={self.rho2}"
            )
        if self.gamma_max == c.x_min:
            raise DegenerateModelError("gamma_max equal to x_min gives an infinite slope")
        if not (c.x_min < self.gamma_max <= c.x_max):
            raise DomainError(
                f"gamma_max must be in (x_min={c.x_min}, x_max={c.x_max}], got {self.gamma_max}"
            )
        if not self.c1 < self.c2:
            raise DomainError(f"covariate bounds must satisfy c1 < c2, got {self.c1}, {self.c2}")
        if self.rho3 is not None and not (0.0 < self.rho3 <= c.theta):
            raise DomainError(f"rho3 must be in (0, theta={c.theta}], got {self.rho3}")


def covariate_natural_params(cs: CovariateState, c: DesignConstants,
                             z_levels: tuple[float, float] | None = None) -> NaturalParams:
    """Invert the probability parameterisation of the covariate model.

    Solves the linear system pinning p(x_min, c1) = rho1, p(x_min, c2) = rho2,
    p(gamma_max, c2) = theta, and (with a binary group covariate at levels
    ``z_levels`` = (reference, other)) p(x_min, c1, z_other) = rho3. The solve
    runs on the [0, 1]-scaled covariate and is converted back to original
    units, so the returned coefficients apply to unscaled covariates.
    """
    cs.validate(c)
    if (cs.rho3 is None) != (z_levels is None):
        raise DomainError("rho3 and z_levels must be supplied together")
    l_r1 = link_inv(cs.rho1)
    l_r2 = link_inv(cs.rho2)
    l_th = link_inv(c.theta)
    span = cs.c2 - cs.c1
    slope = (l_th - l_r2) / (cs.gamma_max - c.x_min)
    eta1_scaled = l_r2 - l_r1  # effect of moving the covariate from c1 to c2
    if cs.rho3 is None:
        intercept_scaled = l_r2 - slope * c.x_min - eta1_scaled
        return NaturalParams(
            beta0=intercept_scaled - eta1_scaled * cs.c1 / span,
            beta1=slope,
            eta=(eta1_scaled / span,),
        )
    z_ref, z_other = z_levels
    if z_ref == z_other:
        raise DomainError("group levels must be distinct")
    eta2_scaled = l_r1 - link_inv(cs.rho3)  # effect of the reference group vs the other
    intercept_scaled = link_inv(cs.rho3) - slope * c.x_min
    z_span = z_ref - z_other
    return NaturalParams(
        beta0=intercept_scaled - eta1_scaled * cs.c1 / span - eta2_scaled * z_other / z_span,
        beta1=slope,
        eta=(eta1_scaled / span, eta2_scaled / z_span),
    )
