"""Accelerated proximal-gradient solver with a jointly-updated penalty weight.

Each iteration takes a preconditioned gradient step on all blocks at the
Nesterov extrapolation point, then applies the joint (beta, lambda)
proximal operator to the penalized coordinates, and finally accepts or
rejects the candidate with a trust-region test on the penalty-inclusive
surrogate model.  Rejected or poorly-modelled steps shrink the step size;
well-modelled steps expand it; three shrinks in a row reset the momentum
variables (and restore the step that momentum spoiled).

The smooth objective is supplied as a bundle of callables over the three
blocks (penalized coefficients, their penalty weights, everything else);
the nonsmooth tau*lambda_p*|beta_p| term is owned by this module and never
appears in the bundle's gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .glm import GlmProblem, nll_batch
from .hyperpriors import HyperPrior, UnboundedObjectiveError
from .prox import prox_vc_l1_vec

__all__ = [
    "VistaConfig",
    "VistaState",
    "VistaDiagnostics",
    "NumericError",
    "vista_step",
    "vista_run",
    "MapGlmBundle",
    "scaled_prox",
]

ABLATIONS = ("full", "no-precond", "no-nesterov", "plain-gradient")

# keep the per-coordinate step product strictly inside the prox operator's
# continuous single-valued regime
PROX_PRODUCT_CAP = 0.99


class NumericError(ArithmeticError):
    """Non-finite cost or gradient; carries the iterate for diagnosis."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class VistaConfig:
    tau: float = 1.0
    max_iter: int = 5000
    tol: float = 1e-8
    init_step: float = 1.0
    tr_shrink: float = 0.25
    tr_expand: float = 2.0
    tr_low: float = 0.25
    tr_high: float = 0.75
    nesterov_reset_after: int = 3
    ema_decay: float = 0.999
    ema_eps: float = 1e-8
    ablation: str = "full"
    allow_unbounded_prior: bool = False
    allow_multivalued_prox: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if not 0 < self.ema_decay < 1:
            raise ValueError("ema_decay must lie in (0, 1)")

    @property
    def use_nesterov(self):
        return self.ablation in ("full", "no-precond")

    @property
    def use_precond(self):
        return self.ablation in ("full", "no-nesterov")

    @property
    def use_trust_region(self):
        # plain-gradient keeps only the reject-on-worsening safeguard
        return self.ablation != "plain-gradient"


@dataclass
class VistaState:
    beta: np.ndarray            # penalized coefficients
    lam: np.ndarray             # their penalty weights, elementwise >= 0
    theta: np.ndarray           # all other smooth parameters
    step: float
    cost: float
    iter: int = 0
    ema_beta: np.ndarray = None
    ema_lam: np.ndarray = None
    ema_theta: np.ndarray = None
    ema_count: int = 0
    nesterov_t: float = 1.0
    prev_beta: np.ndarray = None
    prev_lam: np.ndarray = None
    prev_theta: np.ndarray = None
    consecutive_shrinks: int = 0
    step_before_shrinks: float = None
    momentum_at_shrink_start: bool = False

    def __post_init__(self):
        if self.ema_beta is None:
            self.ema_beta = np.zeros_like(self.beta)
            self.ema_lam = np.zeros_like(self.lam)
            self.ema_theta = np.zeros_like(self.theta)
        if self.prev_beta is None:
            self.prev_beta = self.beta.copy()
            self.prev_lam = self.lam.copy()
            self.prev_theta = self.theta.copy()


@dataclass
class VistaDiagnostics:
    converged: bool = False
    n_iter: int = 0
    n_rejected: int = 0
    trace: list = field(default_factory=list)  # (iter, cost, step, sparsity)


def scaled_prox(beta_tilde, lam_tilde, s_beta, s_lam, tau, allow_multivalued=False):
    """Joint prox of tau*lambda*|beta| via the unit-tau operator.

    Substituting mu = tau*lambda turns the penalty into mu*|beta| with the
    lambda step rescaled by tau^2.  The product s_beta*s_mu is capped below
    one unless the discontinuous regime is explicitly allowed.
    """
    mu0 = tau * np.maximum(lam_tilde, 0.0)
    s_mu = tau * tau * s_lam
    if not allow_multivalued:
        s_mu = np.minimum(s_mu, PROX_PRODUCT_CAP / s_beta)
    x_star, mu_star = prox_vc_l1_vec(beta_tilde, mu0, s_beta, s_mu)
    return x_star, mu_star / tau, s_mu / (tau * tau)


def _penalty(beta, lam, tau):
    return tau * float(np.sum(lam * np.abs(beta)))


def _quad(diff, s_eff):
    return float(np.sum(diff * diff / (2.0 * s_eff))) if diff.size else 0.0


def _precond(ema, grad, count, cfg):
    rms = np.sqrt(ema / (1.0 - cfg.ema_decay**count)) if count else np.zeros_like(ema)
    return np.maximum(rms, np.abs(grad)) + cfg.ema_eps


def vista_step(state: VistaState, smooth_cost, smooth_grad, cfg: VistaConfig) -> VistaState:
    """One accept/reject iteration; returns the new state.

    smooth_cost(beta, lam, theta) -> float and smooth_grad(...) ->
    (g_beta, g_lam, g_theta) cover everything differentiable, including the
    -log(lambda) + rho(lambda) terms; the bilinear tau*lambda*|beta| part
    is handled here by the prox and the penalty-inclusive surrogate.
    """
    momentum_active = cfg.use_nesterov and state.nesterov_t > 1.0
    if momentum_active:
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * state.nesterov_t**2))
        m = (state.nesterov_t - 1.0) / t_next
        y_beta = state.beta + m * (state.beta - state.prev_beta)
        y_lam = state.lam + m * (state.lam - state.prev_lam)
        y_theta = state.theta + m * (state.theta - state.prev_theta)
        # extrapolation must not cross the lambda > 0 barrier
        y_lam = np.maximum(y_lam, 0.05 * state.lam)
    else:
        t_next = 0.5 * (1.0 + math.sqrt(5.0)) if cfg.use_nesterov else 1.0
        y_beta, y_lam, y_theta = state.beta, state.lam, state.theta

    g_beta, g_lam, g_theta = smooth_grad(y_beta, y_lam, y_theta)
    if not (
        np.all(np.isfinite(g_beta))
        and np.all(np.isfinite(g_lam))
        and np.all(np.isfinite(g_theta))
    ):
        raise NumericError("non-finite gradient", state)

    if cfg.use_precond:
        # floored by the current gradient so no coordinate ever moves more
        # than the trust-region step, even with a stale or empty accumulator
        c_beta = _precond(state.ema_beta, g_beta, state.ema_count, cfg)
        c_lam = _precond(state.ema_lam, g_lam, state.ema_count, cfg)
        c_theta = _precond(state.ema_theta, g_theta, state.ema_count, cfg)
    else:
        c_beta, c_lam, c_theta = (
            np.ones_like(state.beta),
            np.ones_like(state.lam),
            np.ones_like(state.theta),
        )

    s_beta = state.step / c_beta
    s_lam = state.step / c_lam
    s_theta = state.step / c_theta

    beta_tilde = y_beta - s_beta * g_beta
    lam_tilde = y_lam - s_lam * g_lam
    theta_cand = y_theta - s_theta * g_theta
    beta_cand, lam_cand, s_lam_eff = scaled_prox(
        beta_tilde, np.maximum(lam_tilde, 0.0), s_beta, s_lam, cfg.tau,
        cfg.allow_multivalued_prox,
    )
    # fraction-to-boundary safeguard: the -log(lambda) barrier makes
    # lambda = 0 non-optimal, so cap the per-step collapse; this keeps the
    # barrier gradients entering the preconditioner bounded
    lam_cand = np.maximum(lam_cand, 0.01 * state.lam)

    cand_smooth = smooth_cost(beta_cand, lam_cand, theta_cand)
    if math.isnan(cand_smooth):
        raise NumericError("NaN candidate cost", state)
    cand_cost = cand_smooth + _penalty(beta_cand, lam_cand, cfg.tau)
    actual = state.cost - cand_cost

    new = replace_state(state)
    accepted = math.isfinite(cand_cost) and actual >= 0.0

    shrink = False
    expand = False
    if not accepted:
        shrink = True
    elif cfg.use_trust_region:
        # surrogate anchored at the extrapolation point; its constant term
        # cancels in the predicted reduction
        def model(beta, lam, theta):
            lin = (
                float(g_beta @ (beta - y_beta))
                + float(g_lam @ (lam - y_lam))
                + float(g_theta @ (theta - y_theta))
            )
            quad = (
                _quad(beta - y_beta, s_beta)
                + _quad(lam - y_lam, s_lam_eff)
                + _quad(theta - y_theta, s_theta)
            )
            return lin + quad + _penalty(beta, lam, cfg.tau)

        predicted = model(state.beta, state.lam, state.theta) - model(
            beta_cand, lam_cand, theta_cand
        )
        if predicted > 1e-15 * max(1.0, abs(state.cost)):
            rho_tr = actual / predicted
            if rho_tr < cfg.tr_low:
                shrink = True
            elif rho_tr > cfg.tr_high:
                expand = True

    if accepted:
        new.prev_beta, new.prev_lam, new.prev_theta = state.beta, state.lam, state.theta
        new.beta, new.lam, new.theta = beta_cand, lam_cand, theta_cand
        new.cost = cand_cost
        if cfg.use_nesterov:
            new.nesterov_t = t_next
        if cfg.use_precond:
            d = cfg.ema_decay
            new.ema_beta = d * state.ema_beta + (1 - d) * g_beta**2
            new.ema_lam = d * state.ema_lam + (1 - d) * g_lam**2
            new.ema_theta = d * state.ema_theta + (1 - d) * g_theta**2
            new.ema_count = state.ema_count + 1

    if shrink:
        if new.consecutive_shrinks == 0:
            new.step_before_shrinks = state.step
            new.momentum_at_shrink_start = momentum_active
        new.step *= cfg.tr_shrink
        new.consecutive_shrinks += 1
        if cfg.use_nesterov and new.consecutive_shrinks >= cfg.nesterov_reset_after:
            if new.momentum_at_shrink_start:
                # momentum spoiled this stretch: drop it and undo the shrinks
                new.step = new.step_before_shrinks
            new.nesterov_t = 1.0
            new.prev_beta = new.beta.copy()
            new.prev_lam = new.lam.copy()
            new.prev_theta = new.theta.copy()
            new.consecutive_shrinks = 0
    else:
        new.consecutive_shrinks = 0
        if expand:
            new.step *= cfg.tr_expand

    new.iter = state.iter + 1
    return new


def replace_state(state: VistaState) -> VistaState:
    return replace(state)


def vista_run(bundle, cfg: VistaConfig, init: VistaState = None):
    """Iterate vista_step to convergence.

    Stops when both the relative cost change and the accepted-step norm
    fall below cfg.tol, or at max_iter (flagged, not raised).  Returns
    (final_state, VistaDiagnostics).
    """
    state = bundle.init_state(cfg) if init is None else init
    if not math.isfinite(state.cost):
        raise NumericError("non-finite cost at the initial iterate", state)
    diag = VistaDiagnostics()
    n_pen = max(len(state.beta), 1)
    quiet = 0  # consecutive accepted steps inside tolerance
    for _ in range(cfg.max_iter):
        prev_cost = state.cost
        prev = (state.beta, state.lam, state.theta)
        new = vista_step(state, bundle.smooth_cost, bundle.smooth_grad, cfg)
        accepted = new.cost < prev_cost or (
            new.cost == prev_cost and new.beta is not prev[0]
        )
        sparsity = float(np.sum(new.beta == 0.0)) / n_pen
        diag.trace.append((new.iter, new.cost, new.step, sparsity))
        if not accepted:
            diag.n_rejected += 1
        state = new
        if accepted:
            rel_change = abs(prev_cost - state.cost) / max(1.0, abs(state.cost))
            move = math.sqrt(
                float(np.sum((state.beta - prev[0]) ** 2))
                + float(np.sum((state.lam - prev[1]) ** 2))
                + float(np.sum((state.theta - prev[2]) ** 2))
            )
            # a single sub-tolerance move right after a shrink cascade is
            # not convergence; demand a quiet stretch
            quiet = quiet + 1 if (rel_change < cfg.tol and move < cfg.tol) else 0
            if quiet >= 3:
                diag.converged = True
                break
    diag.n_iter = state.iter
    return state, diag


class MapGlmBundle:
    """Penalized-likelihood objective for a GLM.

    Optimizer blocks: beta = penalized coefficients, lam = their weights,
    theta = [unpenalized coefficients, auxiliary parameter].  The smooth
    cost is nll(beta_full, aux) - sum(log lam) + sum(rho(lam)).
    """

    def __init__(self, problem: GlmProblem, prior: HyperPrior, allow_unbounded=False):
        if prior.unbounded_objective and not allow_unbounded:
            raise UnboundedObjectiveError(
                f"{prior!r} makes the joint objective unbounded; pass "
                "allow_unbounded_prior=True to explore its local optima anyway"
            )
        self.problem = problem
        self.prior = prior
        self.mask = problem.penalized_mask
        self.n_pen = int(self.mask.sum())
        self.n_free = problem.p - self.n_pen
        self.n_aux = problem.likelihood.n_aux

    def _unpack(self, beta, theta):
        full = np.empty(self.problem.p)
        full[self.mask] = beta
        full[~self.mask] = theta[: self.n_free]
        aux = theta[self.n_free] if self.n_aux else self.problem.likelihood.aux
        return full, aux

    def smooth_cost(self, beta, lam, theta):
        if np.any(lam <= 0.0):
            return math.inf
        full, aux = self._unpack(beta, theta)
        value, _, _ = nll_batch(self.problem, full[None, :], np.asarray([aux]))
        return float(value[0]) - float(np.sum(np.log(lam))) + float(
            np.sum(self.prior.rho(lam))
        )

    def smooth_grad(self, beta, lam, theta):
        full, aux = self._unpack(beta, theta)
        _, g_full, g_aux = nll_batch(self.problem, full[None, :], np.asarray([aux]))
        g_full = g_full[0]
        g_lam = -1.0 / lam + self.prior.rho_prime(lam)
        g_theta = np.concatenate(
            [g_full[~self.mask], [float(g_aux[0])] if self.n_aux else []]
        )
        return g_full[self.mask], np.asarray(g_lam), g_theta

    def init_state(self, cfg: VistaConfig, beta0=None, lam0=None, theta0=None):
        beta = np.zeros(self.n_pen) if beta0 is None else np.asarray(beta0, float)
        lam = np.ones(self.n_pen) if lam0 is None else np.asarray(lam0, float)
        if theta0 is None:
            theta = np.zeros(self.n_free + self.n_aux)
            if self.n_aux:
                theta[-1] = self.problem.likelihood.aux
        else:
            theta = np.asarray(theta0, float)
        cost = self.smooth_cost(beta, lam, theta) + _penalty(beta, lam, cfg.tau)
        return VistaState(beta=beta, lam=lam, theta=theta, step=cfg.init_step, cost=cost)

    def extract(self, state: VistaState):
        """Return (beta_full, aux) from an optimizer state."""
        return self._unpack(state.beta, state.theta)
