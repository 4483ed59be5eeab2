"""Isotropic spectral densities for stationary DPPs.

Three families are provided:

* power exponential (PES), parametrised by intensity ``rho``, shape ``nu``
  and ceiling ``s`` so that ``phi(0) = s**d``;
* Whittle-Matern and generalized Cauchy, parametrised by intensity ``rho``,
  scale ``alpha`` and shape ``nu``; these require ``rho < rho_max``.

All densities are evaluated as functions of the Euclidean norm of the
frequency, which is all an isotropic model needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import gammaln, kve


class ParameterError(ValueError):
    """Raised when spectral parameters fall outside their valid domain."""


class Family(str, Enum):
    POWER_EXPONENTIAL = "pes"
    WHITTLE_MATERN = "whittle_matern"
    GENERALIZED_CAUCHY = "cauchy"


def m_threshold(s, epsilon, nu):
    """Smallest PES intensity for which ``phi(2) > epsilon`` (d = 1).

    For ``nu = 2`` and ``s = 1/2`` this reduces to
    ``sqrt(pi / log(1 / (2 * epsilon)))``.
    """
    if not 0.0 < epsilon < s < 1.0:
        raise ParameterError(f"need 0 < epsilon < s < 1, got epsilon={epsilon}, s={s}")
    if nu <= 0:
        raise ParameterError(f"nu must be positive, got {nu}")
    log_ratio = math.log(s / epsilon)
    return (
        2.0 * s * math.gamma(1.0 / nu + 1.0) * math.sqrt(math.pi)
        / (math.gamma(1.5) * log_ratio ** (1.0 / nu))
    )


@dataclass(frozen=True)
class SpectralModel:
    """A parametric isotropic spectral density.

    ``alpha`` is only used by the Whittle-Matern and Cauchy families and
    ``s`` only by the power exponential one.
    """

    family: Family
    rho: float
    nu: float
    s: float = 0.5
    alpha: float = 1.0
    d: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.d < 1:
            raise ParameterError("dimension must be >= 1")
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ParameterError(f"rho must be positive and finite, got {self.rho}")
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ParameterError(f"nu must be positive and finite, got {self.nu}")
        if self.family is Family.POWER_EXPONENTIAL:
            if not 0.0 < self.s < 1.0:
                raise ParameterError(f"s must lie in (0, 1), got {self.s}")
        else:
            if not self.alpha > 0:
                raise ParameterError(f"alpha must be positive, got {self.alpha}")
            if self.rho >= self.rho_max:
                raise ParameterError(
                    f"rho={self.rho} must be below rho_max={self.rho_max:.6g}"
                )

    @classmethod
    def pes(cls, rho, nu, s=0.5, d=1):
        return cls(Family.POWER_EXPONENTIAL, rho=rho, nu=nu, s=s, d=d)

    @classmethod
    def whittle_matern(cls, rho, nu, alpha, d=1):
        return cls(Family.WHITTLE_MATERN, rho=rho, nu=nu, alpha=alpha, d=d)

    @classmethod
    def cauchy(cls, rho, nu, alpha, d=1):
        return cls(Family.GENERALIZED_CAUCHY, rho=rho, nu=nu, alpha=alpha, d=d)

    def with_params(self, rho=None, nu=None):
        return SpectralModel(
            self.family,
            rho=self.rho if rho is None else rho,
            nu=self.nu if nu is None else nu,
            s=self.s,
            alpha=self.alpha,
            d=self.d,
        )

    @property
    def rho_max(self):
        """Upper bound on ``rho`` guaranteeing ``phi < 1`` (``inf`` for PES)."""
        d, nu = self.d, self.nu
        if self.family is Family.POWER_EXPONENTIAL:
            return math.inf
        if self.family is Family.WHITTLE_MATERN:
            log_m = gammaln(nu) - d * math.log(2.0) - 0.5 * d * math.log(math.pi) - gammaln(nu + d / 2)
        else:
            log_m = gammaln(nu + d / 2) - gammaln(nu) - 0.5 * d * math.log(math.pi)
        return math.exp(log_m - d * math.log(self.alpha))

    def pes_exponent_scale(self):
        """Coefficient ``c`` with ``phi(x) = s**d * exp(-c * |x|**nu)``."""
        d, nu = self.d, self.nu
        # log of alpha_max(rho, nu) for the power exponential model
        log_amax = (
            0.5 * d * math.log(math.pi) + gammaln(d / nu + 1) - math.log(self.rho) - gammaln(d / 2 + 1)
        ) / d
        return math.exp(nu * (math.log(self.s) + log_amax))

    def __call__(self, x):
        """Evaluate ``phi`` at frequency norms (or vectors along the last axis when d > 1)."""
        x = np.asarray(x, dtype=float)
        if self.d > 1 and x.ndim >= 1 and x.shape[-1] == self.d:
            r = np.linalg.norm(x, axis=-1)
        else:
            r = np.abs(x)
        return self.phi_norm(r)

    def phi_norm(self, r):
        r = np.asarray(r, dtype=float)
        d, nu = self.d, self.nu
        if self.family is Family.POWER_EXPONENTIAL:
            return self.s ** d * np.exp(-self.pes_exponent_scale() * r ** nu)
        z = 2.0 * math.pi * self.alpha * r
        ratio = self.rho / self.rho_max
        if self.family is Family.WHITTLE_MATERN:
            return ratio * (1.0 + z * z) ** (-(nu + d / 2))
        # generalized Cauchy: z**nu K_nu(z) -> 2**(nu-1) Gamma(nu) as z -> 0
        out = np.full(z.shape, ratio)
        pos = z > 0
        if np.any(pos):
            zp = z[pos]
            log_val = (
                (1.0 - nu) * math.log(2.0) - gammaln(nu) + nu * np.log(zp)
                + np.log(kve(nu, zp)) - zp
            )
            out[pos] = ratio * np.exp(log_val)
        return out
