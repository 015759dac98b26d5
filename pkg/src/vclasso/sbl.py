"""Sparse variational Bayes with a thresholdable Laplace family.

Each coefficient gets a Laplace variational distribution with location eta
and scale nu.  The exact Laplace-to-Laplace KL penalty is smooth in eta at
zero, so it cannot threshold; replacing nu*exp(-|eta|/nu) + |eta| by
nu + |eta| yields a nonsmooth surrogate penalty whose bilinear
tau*lambda*|eta| part the joint prox can drive to exact zeros while the
-log(nu) barrier keeps every scale strictly positive: sparse modes, live
uncertainty.

The expected negative log-likelihood is estimated by a sample average
approximation: one antithetically-paired standard-normal draw, fixed for
the entire optimization, makes the objective deterministic.  Gradients go
through the location-scale reparameterization in closed form.  For the
Gaussian linear model the expected log-likelihood is also available in
closed form and serves as an oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from .glm import Family, GlmProblem, nll_batch
from .hyperpriors import HyperPrior
from .vista import NumericError, VistaConfig, VistaState, vista_run

__all__ = [
    "VariationalState",
    "SaaDraw",
    "g_kl",
    "g_ns",
    "kl_smooth",
    "saa_elbo",
    "mc_expected_nll",
    "closed_form_gaussian_elbo",
    "fit_sbl",
    "credible_interval",
    "SblBundle",
]

NU_FLOOR = 1e-10

# weak fixed prior scale for coefficients excluded from the sparsity penalty
UNPENALIZED_PRIOR_SCALE = 100.0

# weak prior on the unconstrained auxiliary parameter: Normal(0, variance 10)
AUX_PRIOR_MEAN = 0.0
AUX_PRIOR_VAR = 10.0


@dataclass(frozen=True)
class VariationalState:
    """Laplace(eta, nu) per coefficient, Gaussian families for the rest.

    nu_theta holds the variance of the underlying Gaussian for the
    auxiliary block (LogNormal / LogitNormal / Normal are all Gaussians
    after their transform).  lam carries the learned penalty weights; for
    unpenalized coefficients the entry is inert and stays at 1.
    """

    eta_beta: np.ndarray
    nu_beta: np.ndarray
    lam: np.ndarray
    eta_theta: np.ndarray
    nu_theta: np.ndarray
    theta_families: tuple
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "eta_beta", np.asarray(self.eta_beta, float))
        object.__setattr__(self, "nu_beta", np.asarray(self.nu_beta, float))
        object.__setattr__(self, "lam", np.asarray(self.lam, float))
        object.__setattr__(self, "eta_theta", np.asarray(self.eta_theta, float))
        object.__setattr__(self, "nu_theta", np.asarray(self.nu_theta, float))
        if np.any(self.nu_beta <= 0) or np.any(self.nu_theta <= 0):
            raise ValueError("variational scales must be > 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")

    @property
    def sparsity_pattern(self):
        return self.eta_beta == 0.0


@dataclass(frozen=True)
class SaaDraw:
    """Fixed standard-normal draw, rows paired antithetically.

    eps has shape (B, D) with eps[2k+1] = -eps[2k]; it is generated once
    and reused at every iteration so the variational objective is a
    deterministic function.
    """

    eps: np.ndarray
    seed: int
    antithetic: bool = True

    @classmethod
    def create(cls, n_samples: int, dim: int, seed: int, antithetic: bool = True):
        if antithetic and n_samples % 2 != 0:
            raise ValueError("antithetic pairing needs an even sample count")
        rng = np.random.default_rng(seed)
        if antithetic:
            half = rng.standard_normal((n_samples // 2, dim))
            eps = np.empty((n_samples, dim))
            eps[0::2] = half
            eps[1::2] = -half
        else:
            eps = rng.standard_normal((n_samples, dim))
        return cls(eps=eps, seed=seed, antithetic=antithetic)

    @property
    def n_samples(self):
        return self.eps.shape[0]


def g_kl(eta, nu, lam, tau):
    """Exact KL from Laplace(eta, nu) to Laplace(0, 1/(lam*tau))."""
    eta, nu, lam = np.asarray(eta, float), np.asarray(nu, float), np.asarray(lam, float)
    if np.any(nu <= 0) or np.any(lam <= 0) or tau <= 0:
        raise ValueError("nu, lambda and tau must be > 0")
    out = tau * lam * (nu * np.exp(-np.abs(eta) / nu) + np.abs(eta)) - np.log(nu) - np.log(lam)
    return float(out) if out.ndim == 0 else out


def g_ns(eta, nu, lam, tau):
    """Nonsmooth surrogate: tau*lam*(nu + |eta|) - log(nu) - log(lam) - 1."""
    eta, nu, lam = np.asarray(eta, float), np.asarray(nu, float), np.asarray(lam, float)
    if np.any(nu <= 0) or np.any(lam <= 0) or tau <= 0:
        raise ValueError("nu, lambda and tau must be > 0")
    out = tau * lam * (nu + np.abs(eta)) - np.log(nu) - np.log(lam) - 1.0
    return float(out) if out.ndim == 0 else out


def kl_smooth(family, eta_q, nu_q, eta_p, nu_p):
    """Normal-Normal KL on the underlying Gaussian parameters.

    Applies unchanged to Normal, LogNormal and LogitNormal pairs (the
    deterministic transform cancels); nu are variances.
    """
    if family not in ("normal", "lognormal", "logitnormal"):
        raise ValueError(f"unsupported variational family {family!r}")
    eta_q, nu_q = np.asarray(eta_q, float), np.asarray(nu_q, float)
    eta_p, nu_p = np.asarray(eta_p, float), np.asarray(nu_p, float)
    if np.any(nu_q <= 0) or np.any(nu_p <= 0):
        raise ValueError("variances must be > 0")
    out = 0.5 * (np.log(nu_p / nu_q) + (nu_q + (eta_q - eta_p) ** 2) / nu_p - 1.0)
    return float(out) if out.ndim == 0 else out


def _laplace_std(eps):
    """Map standard normal draws to standard Laplace via the CDF transform."""
    u = ndtr(eps) - 0.5
    return -np.sign(u) * np.log1p(-2.0 * np.abs(u))


def sample_coefficients(vs: VariationalState, draw: SaaDraw):
    """Per-draw coefficient vectors under the Laplace variational family."""
    L = _laplace_std(draw.eps[:, : vs.eta_beta.size])
    return vs.eta_beta[None, :] + vs.nu_beta[None, :] * L, L


def sample_aux(vs: VariationalState, draw: SaaDraw):
    """Per-draw auxiliary parameters on their unconstrained scale."""
    k = vs.eta_theta.size
    if k == 0:
        return np.zeros((draw.n_samples, 0)), np.zeros((draw.n_samples, 0))
    eps = draw.eps[:, vs.eta_beta.size : vs.eta_beta.size + k]
    return vs.eta_theta[None, :] + np.sqrt(vs.nu_theta)[None, :] * eps, eps


def mc_expected_nll(problem: GlmProblem, vs: VariationalState, draw: SaaDraw):
    """(mean, per-draw values) of the negative log-likelihood over the draw."""
    betas, _ = sample_coefficients(vs, draw)
    auxs, _ = sample_aux(vs, draw)
    aux_col = auxs[:, 0] if auxs.shape[1] else np.full(draw.n_samples, problem.likelihood.aux)
    values, _, _ = nll_batch(problem, betas, aux_col)
    return float(values.mean()), values


def _penalty_terms(problem, vs, prior):
    """Smooth penalty pieces: everything except the tau*lam*|eta| term."""
    mask = problem.penalized_mask
    nu, lam = vs.nu_beta[mask], vs.lam[mask]
    pen = vs.tau * lam * nu - np.log(nu) - np.log(lam) - 1.0
    total = float(np.sum(pen)) + float(np.sum(prior.rho(lam)))
    if (~mask).any():
        # exact Laplace KL to a fixed weak Laplace(0, scale) prior
        e, n = vs.eta_beta[~mask], vs.nu_beta[~mask]
        total += float(
            np.sum(
                (n * np.exp(-np.abs(e) / n) + np.abs(e)) / UNPENALIZED_PRIOR_SCALE
                - np.log(n)
                + np.log(UNPENALIZED_PRIOR_SCALE)
                - 1.0
            )
        )
    if vs.eta_theta.size:
        total += float(
            np.sum(kl_smooth("normal", vs.eta_theta, vs.nu_theta, AUX_PRIOR_MEAN, AUX_PRIOR_VAR))
        )
    return total


def nonsmooth_l1(problem: GlmProblem, vs: VariationalState):
    """The tau*lambda*|eta| part of the cost (handled by the prox)."""
    mask = problem.penalized_mask
    return vs.tau * float(np.sum(vs.lam[mask] * np.abs(vs.eta_beta[mask])))


def saa_elbo(problem: GlmProblem, vs: VariationalState, draw: SaaDraw, prior: HyperPrior):
    """Deterministic (fixed-draw) variational cost and analytic gradients.

    Returns (cost, grads) where cost includes the nonsmooth tau*lam*|eta|
    term but grads exclude it: that piece belongs to the proximal step.
    grads is a dict over 'eta_beta', 'nu_beta', 'lam', 'eta_theta',
    'nu_theta' in the natural (not log) parameterization.
    """
    expected = problem.p + problem.likelihood.n_aux
    if draw.eps.shape[1] < expected:
        raise ValueError(f"draw dimension {draw.eps.shape[1]} < required {expected}")
    betas, L = sample_coefficients(vs, draw)
    auxs, eps_aux = sample_aux(vs, draw)
    aux_col = auxs[:, 0] if auxs.shape[1] else np.full(draw.n_samples, problem.likelihood.aux)
    values, g_beta_draws, g_aux_draws = nll_batch(problem, betas, aux_col)
    if np.any(np.isnan(values)):
        bad = int(np.argmax(np.isnan(values)))
        raise NumericError(f"NaN in Monte-Carlo term at draw row {bad}")

    B = draw.n_samples
    mc = float(values.mean())
    cost = mc + _penalty_terms(problem, vs, prior) + nonsmooth_l1(problem, vs)

    mask = problem.penalized_mask
    g_eta = g_beta_draws.mean(axis=0)
    g_nu = (g_beta_draws * L).mean(axis=0)
    # smooth part of the penalty: tau*lam*nu - log(nu) (- log(lam) + rho)
    g_nu = g_nu + np.where(mask, vs.tau * vs.lam, 1.0 / UNPENALIZED_PRIOR_SCALE * _kl_nu_factor(vs))
    g_nu = g_nu - 1.0 / vs.nu_beta
    g_eta = g_eta + np.where(mask, 0.0, _kl_eta_grad(vs))
    g_lam = np.where(
        mask,
        vs.tau * vs.nu_beta - 1.0 / vs.lam + prior.rho_prime(vs.lam),
        0.0,
    )
    if vs.eta_theta.size:
        g_eta_theta = g_aux_draws.mean(axis=0) * np.ones(1)
        g_eta_theta = g_eta_theta + (vs.eta_theta - AUX_PRIOR_MEAN) / AUX_PRIOR_VAR
        g_nu_theta = (g_aux_draws[:, None] * eps_aux).mean(axis=0) / (2.0 * np.sqrt(vs.nu_theta))
        g_nu_theta = g_nu_theta + 0.5 * (1.0 / AUX_PRIOR_VAR - 1.0 / vs.nu_theta)
    else:
        g_eta_theta = np.zeros(0)
        g_nu_theta = np.zeros(0)

    grads = {
        "eta_beta": g_eta,
        "nu_beta": g_nu,
        "lam": g_lam,
        "eta_theta": g_eta_theta,
        "nu_theta": g_nu_theta,
    }
    return cost, grads


def _kl_nu_factor(vs):
    # d/dnu of nu*exp(-|eta|/nu): (1 + |eta|/nu) * exp(-|eta|/nu)
    r = np.abs(vs.eta_beta) / vs.nu_beta
    return (1.0 + r) * np.exp(-r)


def _kl_eta_grad(vs):
    # d/deta of (nu*exp(-|eta|/nu) + |eta|) / prior_scale; smooth at 0
    r = np.abs(vs.eta_beta) / vs.nu_beta
    return np.sign(vs.eta_beta) * (1.0 - np.exp(-r)) / UNPENALIZED_PRIOR_SCALE


def closed_form_gaussian_elbo(problem: GlmProblem, vs: VariationalState):
    """Exact expected negative log-likelihood for the Gaussian linear model.

    Requires Laplace coefficient variationals (variance 2 nu^2) and a
    LogNormal variational on sigma^2 whose underlying Gaussian has mean
    eta_theta[0] and variance nu_theta[0]:

        E[nll] = (xi/2) E[1/sigma^2] + (N/2) E[log sigma^2] + (N/2) log(2 pi)

    with xi = tr[X'X diag(2 nu^2)] + (eta - b)'X'X(eta - b) + y'(I - P_X)y
    and b the least-squares solution.
    """
    if problem.likelihood.family != Family.NORMAL:
        raise ValueError("closed-form expected log-likelihood needs the normal family")
    X, y = problem.X, problem.y
    xtx = X.T @ X
    beta_hat, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta_hat
    diff = vs.eta_beta - beta_hat
    xi = (
        float(np.sum(np.diag(xtx) * 2.0 * vs.nu_beta**2))
        + float(diff @ xtx @ diff)
        + float(resid @ resid)
    )
    e_inv_sigma2 = math.exp(-vs.eta_theta[0] + vs.nu_theta[0] / 2.0)
    e_log_sigma2 = vs.eta_theta[0]
    n = problem.n
    return 0.5 * xi * e_inv_sigma2 + 0.5 * n * e_log_sigma2 + 0.5 * n * math.log(2 * math.pi)


def credible_interval(vs: VariationalState, level: float = 0.95):
    """Equal-tailed Laplace interval per coefficient: eta +/- nu*log(1/(2a))."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    alpha = (1.0 - level) / 2.0
    half = vs.nu_beta * math.log(1.0 / (2.0 * alpha))
    return vs.eta_beta - half, vs.eta_beta + half


class SblBundle:
    """Adapter exposing the variational cost to the proximal optimizer.

    Optimizer blocks: beta = penalized eta coordinates, lam = their penalty
    weights, theta = [unpenalized eta, log nu (all coefficients), aux eta,
    log aux variance].
    """

    def __init__(self, problem: GlmProblem, prior: HyperPrior, tau, draw: SaaDraw,
                 allow_unbounded=False):
        from .hyperpriors import UnboundedObjectiveError

        if prior.unbounded_objective and not allow_unbounded:
            raise UnboundedObjectiveError(
                f"{prior!r} makes the variational objective unbounded; pass "
                "allow_unbounded_prior=True to explore its local optima anyway"
            )
        self.problem = problem
        self.prior = prior
        self.tau = float(tau)
        self.draw = draw
        self.mask = problem.penalized_mask
        self.n_pen = int(self.mask.sum())
        self.n_free = problem.p - self.n_pen
        self.n_aux = problem.likelihood.n_aux

    def _to_vs(self, beta, lam_pen, theta):
        p = self.problem.p
        eta = np.empty(p)
        eta[self.mask] = beta
        eta[~self.mask] = theta[: self.n_free]
        nu = np.maximum(np.exp(theta[self.n_free : self.n_free + p]), NU_FLOOR)
        lam = np.ones(p)
        lam[self.mask] = lam_pen
        k = self.n_free + p
        if self.n_aux:
            eta_theta = theta[k : k + 1]
            nu_theta = np.maximum(np.exp(theta[k + 1 : k + 2]), NU_FLOOR)
        else:
            eta_theta = np.zeros(0)
            nu_theta = np.zeros(0)
        families = ("lognormal",) * self.n_aux
        return VariationalState(eta, nu, lam, eta_theta, nu_theta, families, self.tau)

    def smooth_cost(self, beta, lam_pen, theta):
        if np.any(lam_pen <= 0.0):
            return math.inf
        vs = self._to_vs(beta, lam_pen, theta)
        cost, _ = saa_elbo(self.problem, vs, self.draw, self.prior)
        return cost - nonsmooth_l1(self.problem, vs)

    def smooth_grad(self, beta, lam_pen, theta):
        vs = self._to_vs(beta, lam_pen, theta)
        _, g = saa_elbo(self.problem, vs, self.draw, self.prior)
        g_beta = g["eta_beta"][self.mask]
        g_lam = g["lam"][self.mask]
        pieces = [g["eta_beta"][~self.mask], g["nu_beta"] * vs.nu_beta]
        if self.n_aux:
            pieces.append(g["eta_theta"])
            pieces.append(g["nu_theta"] * vs.nu_theta)
        return g_beta, g_lam, np.concatenate(pieces)

    def init_state(self, cfg: VistaConfig, vs: VariationalState = None):
        if vs is None:
            # penalized scales start at the prior-matching value 1/(tau*lam0):
            # the penalty block is then stationary at the cold start, so the
            # first steps cannot crush the penalty weights
            log_nu0 = np.where(
                self.mask, np.log(min(1.0, 1.0 / self.tau)), 0.0
            )
            theta = np.concatenate(
                [
                    np.zeros(self.n_free),
                    log_nu0,
                    [self.problem.likelihood.aux] if self.n_aux else [],
                    [0.0] if self.n_aux else [],
                ]
            )
            beta = np.zeros(self.n_pen)
            lam = np.ones(self.n_pen)
        else:
            beta = vs.eta_beta[self.mask]
            lam = vs.lam[self.mask]
            theta = np.concatenate(
                [
                    vs.eta_beta[~self.mask],
                    np.log(vs.nu_beta),
                    vs.eta_theta,
                    np.log(vs.nu_theta) if self.n_aux else [],
                ]
            )
        cost = self.smooth_cost(beta, lam, theta) + self.tau * float(
            np.sum(lam * np.abs(beta))
        )
        return VistaState(beta=beta, lam=lam, theta=theta, step=cfg.init_step, cost=cost)

    def extract(self, state: VistaState) -> VariationalState:
        return self._to_vs(state.beta, state.lam, state.theta)


def fit_sbl(
    problem: GlmProblem,
    prior: HyperPrior,
    cfg: VistaConfig,
    draw_seed: int = 0,
    n_samples: int = 40,
    init: VariationalState = None,
    draw: SaaDraw = None,
):
    """Fit the sparse variational model with the proximal optimizer.

    The Monte-Carlo draw is created once from draw_seed (or passed in for
    warm-started trajectories) and shared across all iterations.  Returns
    (VariationalState, diagnostics).
    """
    if draw is None:
        draw = SaaDraw.create(n_samples, problem.p + problem.likelihood.n_aux, draw_seed)
    bundle = SblBundle(problem, prior, cfg.tau, draw, cfg.allow_unbounded_prior)
    state0 = bundle.init_state(cfg, init) if init is not None else None
    state, diag = vista_run(bundle, cfg, state0)
    return bundle.extract(state), diag
