"""GLM inference from synthetic data plus Gram-matrix summaries."""

from .errors import (
    BootstrapUnstable,
    DegreesOfFreedom,
    DomainViolation,
    ExperimentUnstable,
    InputError,
    InstabilityError,
    InvalidDf,
    MissingOutcome,
    NonConvergence,
    NotPositiveDefinite,
    NumericalError,
    Overflow,
    RankDeficient,
    Separation,
    SingularGram,
    SingularInformation,
    SynferError,
)
from .estimator import (
    AlignedSynthetic,
    FitResult,
    SolveOptions,
    cholesky_upper,
    fit_glm_mle,
    observed_information,
    psi,
    solve_corrected,
    solve_moment_alternative,
    whiten_recolor,
)
from .genrand import (
    GENERATOR_KINDS,
    GeneratorModel,
    RngStream,
    fit_generator,
    mvn_sample,
    sample_synthetic,
)
from .links import LINK_NAMES, LinkFamily, get_link
from .simlab import (
    BiasDiagnostic,
    ExperimentConfig,
    ExperimentTable,
    bias_diagnostic,
    gen_outcome,
    gen_setting_a,
    gen_setting_b,
    run_experiment,
    true_beta,
)
from .summary import (
    Dataset,
    GramSummary,
    OlsEstimate,
    build_gram,
    load_dataset_csv,
    load_gram,
    mean_cov_from_gram,
    ols_from_gram,
    save_gram,
)
from .variance import (
    BootstrapConfig,
    BootstrapReport,
    SandwichComponents,
    assemble_variance,
    attach_variance,
    bootstrap_psi_variance,
    sample_joint_beta_theta,
    sandwich_components,
    wald_ci,
    wishart_sample,
)

__version__ = "0.1.0"
