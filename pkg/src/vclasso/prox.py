"""Soft thresholding and the joint (x, lambda) proximal operator.

The penalty lambda*|x| treated as a function of both the coefficient x and
its penalty weight lambda is biconvex, and its proximal operator

    argmin_{x, lambda >= 0}  lambda*|x| + (x - x0)^2/(2*s_x)
                             + (lambda - lambda0)^2/(2*s_lambda)

is available in closed form.  For step products s_x*s_lambda < 1 the
operator is single valued and continuous; at s_x*s_lambda >= 1 it is
discontinuous and can have two global optima (the ``tie`` case).

A lattice oracle (exact minimization of the proximal cost over a uniform
grid) is provided for verification and exposed through the CLI's ``prox``
subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ProxQuery",
    "ProxResult",
    "soft_threshold",
    "prox_cost",
    "prox_vc_l1",
    "prox_vc_l1_vec",
    "reduced_prox_lambda",
    "prox_grid_oracle",
]

# lambda0 values in [-LAMBDA0_DRIFT_TOL, 0) are treated as floating-point
# drift and clamped to 0; anything more negative is rejected.
LAMBDA0_DRIFT_TOL = 1e-12


@dataclass(frozen=True)
class ProxQuery:
    """Inputs of the joint proximal program.

    x0, lambda0 are the current iterates; s_x, s_lambda the effective
    (preconditioned) step sizes for each block.
    """

    x0: float
    lambda0: float
    s_x: float
    s_lambda: float

    def __post_init__(self):
        vals = (self.x0, self.lambda0, self.s_x, self.s_lambda)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite prox query: {vals}")
        if self.s_x <= 0 or self.s_lambda <= 0:
            raise ValueError(
                f"step sizes must be positive, got s_x={self.s_x}, s_lambda={self.s_lambda}"
            )
        if self.lambda0 < 0:
            if self.lambda0 >= -LAMBDA0_DRIFT_TOL:
                object.__setattr__(self, "lambda0", 0.0)
            else:
                raise ValueError(f"lambda0 must be >= 0, got {self.lambda0}")


@dataclass(frozen=True)
class ProxResult:
    """Optimum of the joint proximal program.

    ``tie`` is True when the program has two global optima (only possible
    for s_x*s_lambda >= 1); the reported (x_star, lambda_star) then follows
    the keep-lambda convention lambda_star = lambda0.
    """

    x_star: float
    lambda_star: float
    tie: bool


def soft_threshold(x, threshold):
    """(|x| - threshold)^+ * sgn(x); proximal operator of threshold*|.|."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(threshold, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
        raise ValueError("soft_threshold requires finite inputs")
    if np.any(t < 0):
        raise ValueError("threshold must be >= 0")
    out = np.sign(x) * np.maximum(np.abs(x) - t, 0.0)
    return float(out) if out.ndim == 0 else out


def prox_cost(x, lam, q: ProxQuery):
    """Objective of the joint proximal program at (x, lam)."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("lambda must be >= 0 in the proximal cost")
    out = (
        lam * np.abs(x)
        + (x - q.x0) ** 2 / (2.0 * q.s_x)
        + (lam - q.lambda0) ** 2 / (2.0 * q.s_lambda)
    )
    return float(out) if out.ndim == 0 else out


def _prox_vec(x0, lam0, s_x, s_lam):
    """Vectorized closed form; returns (x_star, lam_star, tie).

    Branches follow the sign of s_x*s_lambda - 1.  Comparisons in the
    discontinuous regime use the cross-multiplied form
    lambda0^2*s_x vs x0^2*s_lambda, which is exact at the tie point.
    """
    abs_x0 = np.abs(x0)
    prod = s_x * s_lam

    # continuous regime: ramp between lambda0 and the profiled stationary point
    lam_ramp = np.maximum(lam0 - s_lam * abs_x0, 0.0) / (1.0 - np.where(prod < 1.0, prod, 0.0))
    lam_cont = np.where(lam0 * s_x >= abs_x0, lam0, lam_ramp)

    # discontinuous regime: optimum at lambda0 or 0, tie when costs match
    left = lam0 * lam0 * s_x
    right = x0 * x0 * s_lam
    lam_disc = np.where(left > right, lam0, 0.0)
    tie = (prod >= 1.0) & (left == right)
    lam_disc = np.where(tie, lam0, lam_disc)

    lam_star = np.where(prod < 1.0, lam_cont, lam_disc)
    x_star = np.sign(x0) * np.maximum(abs_x0 - s_x * lam_star, 0.0)
    return x_star, lam_star, tie


def prox_vc_l1(q: ProxQuery) -> ProxResult:
    """Closed-form solution of the joint proximal program for one block."""
    x0 = np.asarray([q.x0])
    lam0 = np.asarray([q.lambda0])
    s_x = np.asarray([q.s_x])
    s_lam = np.asarray([q.s_lambda])
    x_star, lam_star, tie = _prox_vec(x0, lam0, s_x, s_lam)
    return ProxResult(float(x_star[0]), float(lam_star[0]), bool(tie[0]))


def prox_vc_l1_vec(x0, lambda0, s_x, s_lambda):
    """Coordinatewise joint prox; returns (x_star, lambda_star) arrays."""
    x0 = np.asarray(x0, dtype=float)
    lam0 = np.asarray(lambda0, dtype=float)
    s_x = np.asarray(s_x, dtype=float)
    s_lam = np.asarray(s_lambda, dtype=float)
    if not (x0.shape == lam0.shape == s_x.shape == s_lam.shape):
        raise ValueError(
            f"length mismatch: {x0.shape}, {lam0.shape}, {s_x.shape}, {s_lam.shape}"
        )
    if not (
        np.all(np.isfinite(x0))
        and np.all(np.isfinite(lam0))
        and np.all(np.isfinite(s_x))
        and np.all(np.isfinite(s_lam))
    ):
        raise ValueError("non-finite prox inputs")
    if np.any(s_x <= 0) or np.any(s_lam <= 0):
        raise ValueError("step sizes must be positive")
    if np.any(lam0 < -LAMBDA0_DRIFT_TOL):
        raise ValueError("lambda0 must be >= 0")
    lam0 = np.maximum(lam0, 0.0)
    x_star, lam_star, _ = _prox_vec(x0, lam0, s_x, s_lam)
    return x_star, lam_star


def reduced_prox_lambda(lambda0, a, b):
    """Reduced three-variable form of the optimizing lambda for b < 1.

    Equals the full prox lambda under a = |x0|/s_x, b = s_x*s_lambda.
    """
    if not (np.isfinite(lambda0) and np.isfinite(a) and np.isfinite(b)):
        raise ValueError("non-finite inputs")
    if lambda0 < 0 or a < 0:
        raise ValueError("lambda0 and a must be >= 0")
    if not 0.0 <= b < 1.0:
        raise ValueError(f"b must lie in [0, 1), got {b}; use prox_vc_l1 for b >= 1")
    if lambda0 >= a:
        return float(lambda0)
    return float(max(lambda0 - a * b, 0.0) / (1.0 - b))


def _half_candidates(vertex, lo, hi, grid_lo, dx, n):
    """Grid indices bracketing clip(vertex, lo, hi) on one convexity half."""
    v = np.clip(vertex, lo, hi)
    base = np.floor((v - grid_lo) / dx).astype(np.int64)
    idx = base[:, None] + np.arange(-1, 3)
    lo_idx = int(np.ceil((lo - grid_lo) / dx - 1e-9))
    hi_idx = int(np.floor((hi - grid_lo) / dx + 1e-9))
    return np.clip(idx, max(lo_idx, 0), min(hi_idx, n - 1))


def prox_grid_oracle(
    q: ProxQuery,
    n_x: int = 2001,
    n_lambda: int = 2001,
    x_range=(-3.0, 3.0),
    lambda_range=(0.0, 3.0),
):
    """Exact minimizer of the proximal cost over a uniform lattice.

    Equivalent to enumerating the full n_lambda-by-n_x lattice: for each
    lattice lambda the cost is convex in x on each side of the kink at 0,
    so the row minimum over the x grid is attained at a grid neighbor of
    one of the two clamped quadratic vertices (x0 -/+ s_x*lambda).  Returns
    (x_at_min, lambda_at_min, min_cost).
    """
    x_lo, x_hi = x_range
    lam_lo, lam_hi = lambda_range
    xg = np.linspace(x_lo, x_hi, n_x)
    lamg = np.linspace(lam_lo, lam_hi, n_lambda)
    dx = (x_hi - x_lo) / (n_x - 1)

    # candidate x indices per lambda row: neighbors of each half's vertex
    # plus the kink at 0 (guaranteed lattice point for symmetric odd grids)
    v_right = q.x0 - q.s_x * lamg
    v_left = q.x0 + q.s_x * lamg
    cand_r = _half_candidates(v_right, max(0.0, x_lo), x_hi, x_lo, dx, n_x)
    cand_l = _half_candidates(v_left, x_lo, min(0.0, x_hi), x_lo, dx, n_x)
    cand = np.concatenate([cand_r, cand_l], axis=1)
    if x_lo <= 0.0 <= x_hi:
        kink = np.full((n_lambda, 1), int(round((0.0 - x_lo) / dx)))
        cand = np.concatenate([cand, kink], axis=1)

    xc = xg[cand]
    cost = (
        lamg[:, None] * np.abs(xc)
        + (xc - q.x0) ** 2 / (2.0 * q.s_x)
        + (lamg[:, None] - q.lambda0) ** 2 / (2.0 * q.s_lambda)
    )
    row_arg = np.argmin(cost, axis=1)
    row_min = cost[np.arange(n_lambda), row_arg]
    i = int(np.argmin(row_min))
    j = int(cand[i, row_arg[i]])
    return float(xg[j]), float(lamg[i]), float(row_min[i])
