"""Exact and Monte Carlo laboratory for masked (absorbing-rate) discrete diffusion samplers."""

from .state import (
    DenseDistribution,
    ExactSizeError,
    Vocab,
    decode,
    encode,
    entropy,
    hamming,
    kl,
    load_distribution,
    mask_count,
    random_distribution,
    tv,
)
from .forward import (
    Generator,
    alpha,
    alpha_inverse,
    build_forward_generator,
    build_reverse_generator,
    clean_conditional,
    compute_gamma_ratio,
    concrete_score,
    construct_q_gamma,
    ctmc_propagate,
    forward_cond_prob,
    init_tv_closed_form,
    marginal,
)
from .predictors import (
    ExactPredictor,
    MixturePredictor,
    Predictor,
    RhoCorruptedPredictor,
    exact_predictor,
    mixture_corrupted_predictor,
    mu_bar,
    predictor_from_spec,
    rho_corrupted_predictor,
)
from .samplers import (
    FhsEvent,
    StepSchedule,
    StepTooLarge,
    build_schedule,
    euler_exact_output,
    euler_sample,
    euler_sample_batch,
    euler_transition_row,
    fhs_exact_output,
    fhs_sample,
    fhs_sample_batch,
    histogram,
    p_mask_product,
    write_trajectory_log,
)
from .losses import (
    QuadratureSpec,
    conditional_entropy_sum,
    integrated_score_entropy,
    l_tv_error,
    loss_report,
    nelbo,
    nelbo_discrete,
    prop2_identity_gap,
    score_entropy_at,
    expected_rate_gap,
    expected_nelbo,
)
from .experiments import (
    EXPERIMENTS,
    ExperimentConfig,
    ResultTable,
    load_config,
    run,
    run_config,
    path_tv_sides,
)

__version__ = "0.1.0"
