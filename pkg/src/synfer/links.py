"""Mean-function registry.

Each family bundles the mean function ``mu`` of the linear predictor with
its first two analytic derivatives, plus the metadata the solver and the
variance machinery need (monotonicity direction, canonical family, domain
constraint). All callables accept scalars or numpy arrays and are
vectorized; scalar in, scalar out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DomainViolation, Overflow

# exp(t) overflows binary64 just above 709.78; saturate with an error
# rather than silently returning inf.
_EXP_MAX = 709.0

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _logistic_cdf(t: np.ndarray) -> np.ndarray:
    # Symmetric two-branch form: never exponentiates a positive argument.
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logistic_density(t: np.ndarray) -> np.ndarray:
    q = np.exp(-np.abs(t))
    return q / (1.0 + q) ** 2


def _logistic_second(t: np.ndarray) -> np.ndarray:
    p = _logistic_cdf(t)
    return p * (1.0 - p) * (1.0 - 2.0 * p)


def _exp_guarded(t: np.ndarray) -> np.ndarray:
    if np.any(t > _EXP_MAX):
        raise Overflow(f"exp link overflows for linear predictor > {_EXP_MAX}")
    return np.exp(t)


def _normal_pdf(t: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * t * t) / _SQRT_2PI


@dataclass(frozen=True)
class LinkFamily:
    """A mean function with analytic derivatives and domain metadata.

    `lower_bound`, when set, is an open lower bound on the linear
    predictor (the reciprocal family requires t > bound > 0).
    `increasing` records the monotonicity direction; every family is
    strictly monotone on its domain.
    """

    name: str
    canonical_for: str | None
    increasing: bool
    lower_bound: float | None
    _mu: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _dmu: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _d2mu: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _inv: Callable[[float], float] = field(repr=False)

    def _prepare(self, t) -> tuple[np.ndarray, bool]:
        arr = np.asarray(t, dtype=float)
        if self.lower_bound is not None and np.any(arr <= self.lower_bound):
            raise DomainViolation(
                f"{self.name} link requires linear predictor > {self.lower_bound}"
            )
        return np.atleast_1d(arr), arr.ndim == 0

    @staticmethod
    def _restore(values: np.ndarray, scalar: bool):
        return float(values[0]) if scalar else values

    def mu(self, t):
        """Mean-function value at linear predictor `t`."""
        arr, scalar = self._prepare(t)
        return self._restore(self._mu(arr), scalar)

    def mu_prime(self, t):
        """First derivative of the mean function at `t`."""
        arr, scalar = self._prepare(t)
        return self._restore(self._dmu(arr), scalar)

    def mu_second(self, t):
        """Second derivative of the mean function at `t`."""
        arr, scalar = self._prepare(t)
        return self._restore(self._d2mu(arr), scalar)

    def mu_inverse(self, y: float) -> float:
        """Linear predictor with mean `y`; used to seed Newton iterations.

        Raises DomainViolation when `y` is outside the range of the mean
        function.
        """
        return self._inv(float(y))


def _inv_identity(y: float) -> float:
    return y


def _inv_logistic(y: float) -> float:
    if not 0.0 < y < 1.0:
        raise DomainViolation("logistic mean must lie in (0, 1)")
    return math.log(y / (1.0 - y))


def _inv_exp(y: float) -> float:
    if y <= 0.0:
        raise DomainViolation("exp mean must be positive")
    return math.log(y)


def _inv_probit(y: float) -> float:
    if not 0.0 < y < 1.0:
        raise DomainViolation("probit mean must lie in (0, 1)")
    return float(ndtri(y))


def _inv_cauchy(y: float) -> float:
    if not 0.0 < y < 1.0:
        raise DomainViolation("cauchy-cdf mean must lie in (0, 1)")
    return math.tan(math.pi * (y - 0.5))


def _inv_reciprocal(y: float) -> float:
    if y <= 0.0:
        raise DomainViolation("reciprocal mean must be positive")
    return 1.0 / y


def _inv_arctan(y: float) -> float:
    if not -math.pi / 2 < y < math.pi / 2:
        raise DomainViolation("arctan mean must lie in (-pi/2, pi/2)")
    return math.tan(y)


LINK_NAMES = (
    "identity",
    "logistic",
    "exp",
    "probit",
    "cauchy-cdf",
    "reciprocal",
    "arctan",
)

DEFAULT_RECIPROCAL_BOUND = 1e-3


def get_link(name: str, bound: float = DEFAULT_RECIPROCAL_BOUND) -> LinkFamily:
    """Look up a mean-function family by name.

    `bound` is only consulted for the reciprocal family, whose mean
    function needs a strictly positive lower bound on the linear
    predictor.
    """
    if name == "identity":
        return LinkFamily(
            "identity", "gaussian", True, None,
            lambda t: t.copy(),
            lambda t: np.ones_like(t),
            lambda t: np.zeros_like(t),
            _inv_identity,
        )
    if name == "logistic":
        return LinkFamily(
            "logistic", "bernoulli", True, None,
            _logistic_cdf, _logistic_density, _logistic_second, _inv_logistic,
        )
    if name == "exp":
        return LinkFamily(
            "exp", "poisson", True, None,
            _exp_guarded, _exp_guarded, _exp_guarded, _inv_exp,
        )
    if name == "probit":
        return LinkFamily(
            "probit", None, True, None,
            lambda t: ndtr(t),
            _normal_pdf,
            lambda t: -t * _normal_pdf(t),
            _inv_probit,
        )
    if name == "cauchy-cdf":
        return LinkFamily(
            "cauchy-cdf", None, True, None,
            lambda t: 0.5 + np.arctan(t) / np.pi,
            lambda t: 1.0 / (np.pi * (1.0 + t * t)),
            lambda t: -2.0 * t / (np.pi * (1.0 + t * t) ** 2),
            _inv_cauchy,
        )
    if name == "reciprocal":
        if bound <= 0.0:
            raise ValueError("reciprocal link bound must be positive")
        return LinkFamily(
            "reciprocal", "gamma", False, bound,
            lambda t: 1.0 / t,
            lambda t: -1.0 / (t * t),
            lambda t: 2.0 / (t * t * t),
            _inv_reciprocal,
        )
    if name == "arctan":
        return LinkFamily(
            "arctan", None, True, None,
            lambda t: np.arctan(t),
            lambda t: 1.0 / (1.0 + t * t),
            lambda t: -2.0 * t / (1.0 + t * t) ** 2,
            _inv_arctan,
        )
    raise ValueError(f"unknown link {name!r}; expected one of {LINK_NAMES}")
