"""Hyperprior catalogue on the penalty weight lambda.

Each prior exposes rho(lambda) = -log p(lambda) up to an additive constant
together with its first two derivatives.  Profiling the per-coefficient
objective tau*lambda*|beta| - log(lambda) + rho(lambda) over lambda yields
an adaptive penalty g_tau(|beta|) whose derivative is tau*lambda_star; the
fixed point lambda_star = 1/(tau*|beta| + rho'(lambda_star)) is solved by
safeguarded bisection.

Orthogonal-design closed forms (one coefficient, Gaussian error) are
provided for the Half-Gaussian and Half-Cauchy priors; they serve as
independent oracles for the iterative machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "HyperPrior",
    "HalfCauchy",
    "HalfGaussian",
    "Exponential",
    "PowerInverse",
    "Uniform",
    "ProfiledPenaltyPoint",
    "UnboundedObjectiveError",
    "BracketError",
    "parse_prior",
    "solve_lambda_star",
    "g_tau",
    "orthogonal_halfgaussian_solution",
    "orthogonal_halfcauchy_solution",
]

BISECT_TOL = 1e-12
MAX_DOUBLINGS = 60


class UnboundedObjectiveError(ValueError):
    """Raised when the chosen hyperprior leaves the objective unbounded."""


class BracketError(ArithmeticError):
    """Raised when no sign change is found for the profile fixed point."""


class HyperPrior:
    """Base class; subclasses implement rho and its derivatives on lambda > 0."""

    #: objective is unbounded for this prior (optimizer requires an override)
    unbounded_objective = False
    #: accepted by solve_lambda_star / the profiled penalty
    profile_supported = True

    def rho(self, lam):
        raise NotImplementedError

    def rho_prime(self, lam):
        raise NotImplementedError

    def rho_double_prime(self, lam):
        raise NotImplementedError

    def spec_string(self) -> str:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.spec_string()!r})"


@dataclass(frozen=True, repr=False)
class HalfCauchy(HyperPrior):
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("Half-Cauchy scale must be > 0")

    def rho(self, lam):
        return np.log1p((np.asarray(lam) / self.scale) ** 2)

    def rho_prime(self, lam):
        lam = np.asarray(lam)
        return 2.0 * lam / (self.scale**2 + lam**2)

    def rho_double_prime(self, lam):
        lam = np.asarray(lam)
        return 2.0 * (self.scale**2 - lam**2) / (self.scale**2 + lam**2) ** 2

    def spec_string(self):
        return f"half-cauchy:{self.scale:g}"


@dataclass(frozen=True, repr=False)
class HalfGaussian(HyperPrior):
    """Density proportional to exp(-(lambda - location)^2 / scale^2)."""

    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.location < 0 or not self.scale > 0:
            raise ValueError("Half-Gaussian needs location >= 0 and scale > 0")

    def rho(self, lam):
        return (np.asarray(lam) - self.location) ** 2 / self.scale**2

    def rho_prime(self, lam):
        return 2.0 * (np.asarray(lam) - self.location) / self.scale**2

    def rho_double_prime(self, lam):
        return np.full_like(np.asarray(lam, dtype=float), 2.0 / self.scale**2)

    def spec_string(self):
        return f"half-gaussian:{self.location:g},{self.scale:g}"


@dataclass(frozen=True, repr=False)
class Exponential(HyperPrior):
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("Exponential scale must be > 0")

    def rho(self, lam):
        return np.asarray(lam) / self.scale

    def rho_prime(self, lam):
        return np.full_like(np.asarray(lam, dtype=float), 1.0 / self.scale)

    def rho_double_prime(self, lam):
        return np.zeros_like(np.asarray(lam, dtype=float))

    def spec_string(self):
        return f"exponential:{self.scale:g}"


@dataclass(frozen=True, repr=False)
class PowerInverse(HyperPrior):
    """Density proportional to lambda^(-exponent); improper."""

    exponent: float = 1.0

    def __post_init__(self):
        if not self.exponent > 0:
            raise ValueError("Power-inverse exponent must be > 0")

    @property
    def unbounded_objective(self):
        # exponent 1 cancels the Laplace normalization term exactly; any
        # other exponent leaves the joint objective unbounded
        return self.exponent != 1.0

    @property
    def profile_supported(self):
        # exponent > 1 passes validation but the profile residual never
        # changes sign, so solving ends in a BracketError
        return self.exponent > 1.0

    def rho(self, lam):
        return self.exponent * np.log(np.asarray(lam))

    def rho_prime(self, lam):
        return self.exponent / np.asarray(lam)

    def rho_double_prime(self, lam):
        return -self.exponent / np.asarray(lam) ** 2

    def spec_string(self):
        return f"power-inverse:{self.exponent:g}"


@dataclass(frozen=True, repr=False)
class Uniform(HyperPrior):
    unbounded_objective = True
    profile_supported = False

    def rho(self, lam):
        return np.zeros_like(np.asarray(lam, dtype=float))

    def rho_prime(self, lam):
        return np.zeros_like(np.asarray(lam, dtype=float))

    def rho_double_prime(self, lam):
        return np.zeros_like(np.asarray(lam, dtype=float))

    def spec_string(self):
        return "uniform"


def parse_prior(spec: str) -> HyperPrior:
    """Parse a prior spec like 'half-cauchy:1.0' or 'half-gaussian:0,2'."""
    name, _, args = spec.strip().partition(":")
    name = name.lower()
    try:
        if name == "half-cauchy":
            return HalfCauchy(float(args) if args else 1.0)
        if name == "half-gaussian":
            m, b = (float(v) for v in args.split(","))
            return HalfGaussian(m, b)
        if name == "exponential":
            return Exponential(float(args) if args else 1.0)
        if name == "power-inverse":
            return PowerInverse(float(args) if args else 1.0)
        if name == "uniform":
            if args:
                raise ValueError("uniform prior takes no arguments")
            return Uniform()
    except ValueError as exc:
        raise ValueError(f"bad prior spec {spec!r}: {exc}") from exc
    raise ValueError(f"unknown prior {name!r}")


@dataclass(frozen=True)
class ProfiledPenaltyPoint:
    """Profiled penalty and derivatives at one (|beta|, tau)."""

    beta_abs: float
    tau: float
    lambda_star: float
    g_value: float
    g_prime: float
    g_double_prime: float


def _fixed_point_residual_fn(beta_abs, tau, prior):
    def h(lam):
        return lam * (tau * beta_abs + float(prior.rho_prime(lam))) - 1.0

    return h


def solve_lambda_star(beta_abs: float, tau: float, prior: HyperPrior) -> ProfiledPenaltyPoint:
    """Solve the profile fixed point lambda = 1/(tau*|beta| + rho'(lambda)).

    Bisection on h(lam) = lam*(tau*|beta| + rho'(lam)) - 1 bracketed on
    (1e-12, lam_hi) with lam_hi doubled until a sign change, then polished
    with a few fixed-point sweeps.  Fills the penalty value and its first
    two derivatives at the optimum.
    """
    if beta_abs < 0 or not np.isfinite(beta_abs):
        raise ValueError(f"|beta| must be finite and >= 0, got {beta_abs}")
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if not prior.profile_supported:
        raise UnboundedObjectiveError(
            f"{prior!r} leaves the profiled objective unbounded; "
            "choose a prior with bounded, positive rho'"
        )

    h = _fixed_point_residual_fn(beta_abs, tau, prior)
    lo = 1e-12
    if h(lo) >= 0:
        raise BracketError(f"no bracket: residual already >= 0 at lambda={lo}")
    hi = max(lo * 2, 1.0 / (tau * beta_abs + 1e-300) if beta_abs > 0 else 1.0)
    n_doubles = 0
    while h(hi) < 0:
        hi *= 2.0
        n_doubles += 1
        if n_doubles > MAX_DOUBLINGS:
            raise BracketError(f"no sign change after {MAX_DOUBLINGS} doublings")
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if h(mid) < 0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    # Newton polish on h; h'(lam*) = 1/lam* + lam*rho'' > 0 for every
    # supported prior, so steps this close to the root are safe
    for _ in range(4):
        hp = tau * beta_abs + float(prior.rho_prime(lam)) + lam * float(
            prior.rho_double_prime(lam)
        )
        if hp <= 0:
            break
        step = h(lam) / hp
        if lam - step <= 0:
            break
        lam -= step

    rho = float(prior.rho(lam))
    rho2 = float(prior.rho_double_prime(lam))
    g_value = tau * lam * beta_abs - math.log(lam) + rho
    g_prime = tau * lam
    g_double_prime = -(tau**2) / (1.0 / lam**2 + rho2)
    return ProfiledPenaltyPoint(beta_abs, tau, lam, g_value, g_prime, g_double_prime)


def g_tau(beta_abs: float, tau: float, prior: HyperPrior) -> float:
    """Profiled penalty tau*lam*|beta| - log(lam) + rho(lam) at the optimum."""
    return solve_lambda_star(beta_abs, tau, prior).g_value


def _orthogonal_profile_cost(lam, beta_hat, s, tau, prior):
    """Profile (over beta) cost of the orthogonal one-coefficient problem."""
    lam = np.asarray(lam, dtype=float)
    lam_c = abs(beta_hat) / (s * tau) if beta_hat != 0 else 0.0
    lower = tau * abs(beta_hat) * lam - 0.5 * s * tau**2 * lam**2
    upper = beta_hat**2 / (2.0 * s)
    fit = np.where(lam < lam_c, lower, upper)
    return fit - np.log(lam) + prior.rho(lam)


def _orthogonal_solution(beta_hat, sum_x_sq, sigma_sq, tau, prior, lower_stationary):
    """Shared cost comparison: candidate stationary points plus the region edge."""
    if not (sum_x_sq > 0 and sigma_sq > 0 and tau > 0):
        raise ValueError("sum_x_sq, sigma_sq and tau must be positive")
    s = sigma_sq / sum_x_sq
    lam_c = abs(beta_hat) / (s * tau) if beta_hat != 0 else 0.0

    candidates = list(lower_stationary(s, lam_c))
    if lam_c > 0:
        candidates.append(lam_c)
    upper = _upper_region_stationary(prior)
    candidates.append(max(upper, lam_c) if lam_c > 0 else upper)
    candidates = [c for c in candidates if np.isfinite(c) and c > 0]

    costs = [float(_orthogonal_profile_cost(c, beta_hat, s, tau, prior)) for c in candidates]
    lam_star = candidates[int(np.argmin(costs))]
    beta_star = float(np.sign(beta_hat) * max(abs(beta_hat) - s * tau * lam_star, 0.0))
    return beta_star, float(lam_star)


def _upper_region_stationary(prior):
    # minimizer of -log(lam) + rho(lam), i.e. 1/lam = rho'(lam)
    if isinstance(prior, HalfGaussian):
        m, b = prior.location, prior.scale
        return 0.5 * (m + math.sqrt(m**2 + 2.0 * b**2))
    if isinstance(prior, HalfCauchy):
        return prior.scale
    raise NotImplementedError(type(prior).__name__)


def orthogonal_halfgaussian_solution(beta_hat, sum_x_sq, sigma_sq, tau, m_lambda, b_lambda):
    """Closed-form orthogonal-design solution under a Half-Gaussian prior.

    The lower (beta active) region's stationary condition reduces to the
    quadratic (2/b^2 - s*tau^2)*lam^2 + (tau*|beta_hat| - 2m/b^2)*lam - 1 = 0;
    its positive roots inside the region compete with the upper-region
    stationary point (m + sqrt(m^2 + 2 b^2))/2 on the piecewise cost.
    """
    prior = HalfGaussian(m_lambda, b_lambda)

    def lower_roots(s, lam_c):
        if lam_c <= 0:
            return []
        a = 2.0 / b_lambda**2 - s * tau**2
        b = tau * abs(beta_hat) - 2.0 * m_lambda / b_lambda**2
        if a == 0.0:
            roots = [1.0 / b] if b > 0 else []
        else:
            disc = b * b + 4.0 * a
            if disc < 0:
                return []
            roots = [(-b + math.sqrt(disc)) / (2 * a), (-b - math.sqrt(disc)) / (2 * a)]
        return [r for r in roots if 0 < r <= lam_c]

    return _orthogonal_solution(beta_hat, sum_x_sq, sigma_sq, tau, prior, lower_roots)


def orthogonal_halfcauchy_solution(beta_hat, sum_x_sq, sigma_sq, tau, a_lambda):
    """Orthogonal-design solution under a Half-Cauchy prior.

    The lower-region stationary condition is a quartic; rather than the
    closed form we bracket sign changes of the cost derivative on the
    region and bisect, then compare piecewise costs.
    """
    prior = HalfCauchy(a_lambda)

    def deriv(lam, s):
        return (
            tau * abs(beta_hat)
            - s * tau**2 * lam
            - 1.0 / lam
            + 2.0 * lam / (a_lambda**2 + lam**2)
        )

    def lower_roots(s, lam_c):
        if lam_c <= 0:
            return []
        grid = np.geomspace(1e-10, lam_c, 400)
        vals = deriv(grid, s)
        roots = []
        for i in range(len(grid) - 1):
            if np.sign(vals[i]) * np.sign(vals[i + 1]) < 0:
                lo, hi = grid[i], grid[i + 1]
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    if deriv(mid, s) * np.sign(vals[i]) > 0:
                        lo = mid
                    else:
                        hi = mid
                    if hi - lo < 1e-14 * max(1.0, hi):
                        break
                roots.append(0.5 * (lo + hi))
        return roots

    return _orthogonal_solution(beta_hat, sum_x_sq, sigma_sq, tau, prior, lower_roots)
