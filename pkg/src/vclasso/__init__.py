"""Sparse regression with learnable per-coefficient l1 penalty weights.

The penalty tau * sum_p lambda_p |beta_p| is optimized jointly in the
coefficients and their weights through a closed-form biconvex proximal
operator, driven by an accelerated, preconditioned, trust-region proximal
gradient loop.  The same machinery powers a sparse variational-Bayes
model whose Laplace posteriors have exactly-zero modes but live scales,
plus warm-started regularization trajectories and a simulation harness.
"""

__version__ = "0.1.0"

from .glm import (
    Family,
    GlmProblem,
    LikelihoodSpec,
    generate_working_example,
    nll,
    nll_grad,
)
from .hyperpriors import (
    Exponential,
    HalfCauchy,
    HalfGaussian,
    HyperPrior,
    PowerInverse,
    Uniform,
    g_tau,
    parse_prior,
    solve_lambda_star,
)
from .prox import (
    ProxQuery,
    ProxResult,
    prox_cost,
    prox_grid_oracle,
    prox_vc_l1,
    prox_vc_l1_vec,
    reduced_prox_lambda,
    soft_threshold,
)
from .sbl import (
    SaaDraw,
    VariationalState,
    closed_form_gaussian_elbo,
    credible_interval,
    fit_sbl,
    g_kl,
    g_ns,
    kl_smooth,
    saa_elbo,
)
from .trajectory import (
    SimMetrics,
    TauGrid,
    TrajectoryRecord,
    lasso_baseline,
    run_trajectory,
    simulate_table,
)
from .vista import (
    MapGlmBundle,
    NumericError,
    VistaConfig,
    VistaState,
    vista_run,
    vista_step,
)
