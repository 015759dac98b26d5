import numpy as np
import pytest

from vclasso.glm import generate_working_example
from vclasso.hyperpriors import HalfCauchy, Uniform, UnboundedObjectiveError
from vclasso.vista import (
    MapGlmBundle,
    NumericError,
    VistaConfig,
    VistaState,
    scaled_prox,
    vista_run,
    vista_step,
)


class QuadraticBundle:
    """Pure quadratic in the theta block: f = sum(theta^2) / (2*curv)."""

    def __init__(self, theta0, curv):
        self.theta0 = np.asarray(theta0, float)
        self.curv = curv

    def smooth_cost(self, beta, lam, theta):
        return float(np.sum(theta**2)) / (2.0 * self.curv)

    def smooth_grad(self, beta, lam, theta):
        return np.zeros(0), np.zeros(0), theta / self.curv

    def init_state(self, cfg):
        return VistaState(
            beta=np.zeros(0),
            lam=np.zeros(0),
            theta=self.theta0.copy(),
            step=cfg.init_step,
            cost=self.smooth_cost(None, None, self.theta0),
        )


@pytest.fixture(scope="module")
def toy():
    prob, beta_true = generate_working_example(
        n=100, p=2, active_values=[-2.0, 2.0], seed=3
    )
    return prob, beta_true


@pytest.fixture(scope="module")
def working():
    return generate_working_example(seed=11)


class TestConfig:
    def test_defaults_match_contract(self):
        cfg = VistaConfig()
        assert (cfg.tr_shrink, cfg.tr_expand, cfg.tr_low, cfg.tr_high) == (0.25, 2.0, 0.25, 0.75)
        assert cfg.nesterov_reset_after == 3
        assert cfg.ema_decay == 0.999 and cfg.ema_eps == 1e-8
        assert cfg.max_iter == 5000 and cfg.tol == 1e-8

    def test_validation(self):
        with pytest.raises(ValueError):
            VistaConfig(tau=0.0)
        with pytest.raises(ValueError):
            VistaConfig(ablation="fancy")


class TestStep:
    def test_exact_quadratic_expands_step(self):
        # objective Hessian equals the surrogate curvature 1/step, so the
        # trust-region ratio is exactly 1 and the step doubles
        cfg = VistaConfig(init_step=0.5, ablation="no-precond")
        bundle = QuadraticBundle([1.0, -2.0], curv=0.5)
        state = bundle.init_state(cfg)
        new = vista_step(state, bundle.smooth_cost, bundle.smooth_grad, cfg)
        np.testing.assert_allclose(new.theta, 0.0, atol=1e-15)
        assert new.step == 1.0

    def test_one_step_decreases_cost_on_toy(self, toy):
        prob, _ = toy
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        cfg = VistaConfig(tau=1.0)
        state = bundle.init_state(cfg)
        new = vista_step(state, bundle.smooth_cost, bundle.smooth_grad, cfg)
        assert new.cost < state.cost

    def test_huge_tau_keeps_beta_exactly_zero(self, toy):
        prob, _ = toy
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        cfg = VistaConfig(tau=1e6)
        state, diag = vista_run(bundle, cfg)
        assert np.all(state.beta == 0.0)

    def test_numeric_error_carries_state(self, toy):
        prob, _ = toy
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        cfg = VistaConfig(tau=1.0)
        state = bundle.init_state(cfg)

        def bad_grad(beta, lam, theta):
            return np.full_like(beta, np.nan), np.zeros_like(lam), np.zeros_like(theta)

        with pytest.raises(NumericError) as err:
            vista_step(state, bundle.smooth_cost, bad_grad, cfg)
        assert err.value.state is state


class TestScaledProx:
    def test_product_cap(self):
        x, lam, s_eff = scaled_prox(
            np.array([1.0]), np.array([1.0]), np.array([10.0]), np.array([10.0]), tau=5.0
        )
        # effective mu-step times beta-step stays below 1
        assert s_eff[0] * 25.0 * 10.0 <= 0.99 + 1e-12

    def test_reduces_to_plain_prox_at_unit_tau(self):
        from vclasso.prox import ProxQuery, prox_vc_l1

        x, lam, _ = scaled_prox(
            np.array([1.0]), np.array([0.8]), np.array([0.5]), np.array([0.5]), tau=1.0
        )
        r = prox_vc_l1(ProxQuery(1.0, 0.8, 0.5, 0.5))
        assert x[0] == r.x_star and lam[0] == r.lambda_star

    def test_tau_scaling_matches_direct_minimization(self):
        # brute-force the 2-D objective tau*lam*|x| + quadratic anchors;
        # steps kept small enough that the product cap never binds
        rng = np.random.default_rng(8)
        for _ in range(20):
            tau = rng.uniform(0.2, 2.0)
            x0, lam0 = rng.uniform(-2, 2), rng.uniform(0, 2)
            s_x, s_l = rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)
            xs, ls, _ = scaled_prox(
                np.array([x0]), np.array([lam0]), np.array([s_x]), np.array([s_l]), tau
            )
            xg = np.linspace(-2.5, 2.5, 1201)
            lg = np.linspace(0, 3.5, 1201)
            cost = (
                tau * lg[:, None] * np.abs(xg)[None, :]
                + (xg[None, :] - x0) ** 2 / (2 * s_x)
                + (lg[:, None] - lam0) ** 2 / (2 * s_l)
            )
            i, j = np.unravel_index(np.argmin(cost), cost.shape)
            mine = tau * ls[0] * abs(xs[0]) + (xs[0] - x0) ** 2 / (2 * s_x) + (
                ls[0] - lam0
            ) ** 2 / (2 * s_l)
            assert mine <= cost[i, j] + 1e-9


class TestRun:
    def test_tiny_tau_recovers_least_squares(self, toy):
        prob, _ = toy
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        state, diag = vista_run(bundle, VistaConfig(tau=1e-8))
        assert diag.converged
        full, aux = bundle.extract(state)
        ls, *_ = np.linalg.lstsq(prob.X, prob.y, rcond=None)
        np.testing.assert_allclose(full, ls, atol=1e-4)

    def test_working_example_support_recovery(self, working):
        prob, beta_true = working
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        state, diag = vista_run(bundle, VistaConfig(tau=100.0))
        assert diag.converged
        full, _ = bundle.extract(state)
        assert set(np.nonzero(full)[0]) == set(range(6))
        assert np.max(np.abs(full[:6] - beta_true[:6])) < 0.2

    def test_cost_monotone_on_accepted_steps(self, toy):
        prob, _ = toy
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        state, diag = vista_run(bundle, VistaConfig(tau=10.0))
        costs = [c for _, c, _, _ in diag.trace]
        assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))

    def test_lambda_stays_positive(self, toy):
        prob, _ = toy
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        cfg = VistaConfig(tau=10.0)
        state = bundle.init_state(cfg)
        for _ in range(200):
            state = vista_step(state, bundle.smooth_cost, bundle.smooth_grad, cfg)
            assert np.all(state.lam > 0)

    def test_determinism(self, toy):
        prob, _ = toy
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        s1, d1 = vista_run(bundle, VistaConfig(tau=5.0))
        s2, d2 = vista_run(bundle, VistaConfig(tau=5.0))
        assert d1.trace == d2.trace
        assert np.array_equal(s1.beta, s2.beta)
        assert np.array_equal(s1.lam, s2.lam)

    def test_converged_state_is_fixed_point(self, toy):
        prob, _ = toy
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        cfg = VistaConfig(tau=10.0)
        state, diag = vista_run(bundle, cfg)
        assert diag.converged
        after = vista_step(state, bundle.smooth_cost, bundle.smooth_grad, cfg)
        move = np.sqrt(
            np.sum((after.beta - state.beta) ** 2)
            + np.sum((after.lam - state.lam) ** 2)
            + np.sum((after.theta - state.theta) ** 2)
        )
        assert move < 10 * cfg.tol

    def test_nonconvergence_flagged_not_raised(self, toy):
        prob, _ = toy
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        state, diag = vista_run(bundle, VistaConfig(tau=1.0, max_iter=3))
        assert not diag.converged
        assert state.iter == 3

    def test_all_ablations_run_on_toy(self, toy):
        # every mode must make monotone progress; the accelerated and
        # preconditioned modes must actually converge on this budget
        prob, _ = toy
        bundle = MapGlmBundle(prob, HalfCauchy(1.0))
        for ablation in ("full", "no-precond", "no-nesterov", "plain-gradient"):
            cfg = VistaConfig(tau=50.0, ablation=ablation, max_iter=10000, tol=1e-6)
            state, diag = vista_run(bundle, cfg)
            assert np.isfinite(state.cost)
            assert state.cost < bundle.init_state(cfg).cost
            if ablation in ("full", "no-nesterov"):
                assert diag.converged, ablation

    def test_unbounded_prior_needs_override(self, toy):
        prob, _ = toy
        with pytest.raises(UnboundedObjectiveError):
            MapGlmBundle(prob, Uniform())
        bundle = MapGlmBundle(prob, Uniform(), allow_unbounded=True)
        state, diag = vista_run(bundle, VistaConfig(tau=50.0, max_iter=500, tol=1e-6))
        assert np.all(np.isfinite(state.beta))
