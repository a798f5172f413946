"""Naive mean-field variational Bayes for linear regression with bounded priors."""

from .errors import (
    DomainError,
    InvalidInputError,
    NvbError,
    ParseError,
    RangeError,
    SizeError,
)
from .limit import (
    GridFunction,
    LimitProblem,
    StepFunction,
    StepKernel,
    build_limit_problem,
    compare_empirical_to_limit,
    cut_norm,
    embed_matrix,
    empirical_triple,
    evaluate_functional,
    solve_rde,
)
from .meanfield import (
    ConditionReport,
    MeanFieldSolution,
    condition_report,
    conditional_means,
    evaluate_Mp,
    local_fields,
    optimize,
    separation_probe,
)
from .oracle import (
    GibbsChain,
    OracleEstimate,
    b_gap_check,
    gibbs_sample,
    logz_importance_mc,
    logz_quadrature,
    posterior_lln_check,
)
from .priors import (
    CumulantBundle,
    Prior,
    Tilt,
    cumulant,
    invert_mean,
    rate_G,
    rate_G_derivatives,
    sample_tilted,
    tilted_moment,
)
from .regression import (
    Decomposition,
    DesignSpec,
    RegressionInstance,
    decompose,
    generate_design,
    load_instance,
    sample_response,
    save_instance,
)

__version__ = "0.1.0"
