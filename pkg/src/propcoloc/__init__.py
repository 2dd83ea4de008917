"""Frequentist proportional colocalization tests from GWAS summary statistics."""

__version__ = "0.1.0"

from .chisq import chi_sq_quantile, chi_sq_upper
from .errors import (
    CriterionSingularError,
    DegeneracyError,
    DegenerateProjectionError,
    InputError,
    LowAcceptanceError,
    PropColocError,
    SingularLDError,
)
from .gmm import (
    GmmProblem,
    Method,
    TestResult,
    estimating_function,
    minimize_q,
    omega,
    prop_coloc_full,
    q_criterion,
)
from .selective import (
    ConditionalMachinery,
    SelectionContext,
    Verdict,
    build_selection,
    combined_verdict,
    conditional_machinery,
    lm_test,
    prop_coloc_cond,
    prop_coloc_naive,
)
from .simulate import (
    RejectionTable,
    SimConfig,
    gen_dataset,
    gen_ld,
    run_experiment,
    wishart_perturb,
)
from .summary import (
    JointEffects,
    SummaryDataset,
    load_summary,
    order_traits,
    prune,
    select_top_k,
    to_joint_effects,
    write_summary,
)
