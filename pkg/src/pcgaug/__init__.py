"""GLS / BLUE estimation by preconditioned conjugate gradients on the augmented system."""

from .errors import (
    BadMultiplicities,
    IllPosedError,
    NotSymmetric,
    NullspaceSingular,
    PcgAugError,
    RankDeficient,
    SingularCovariance,
    SingularD,
    SingularProjectedGram,
    SingularTriangular,
    TooLarge,
    UnstableSimulation,
)
from .glm import (
    BlockZeroPadded,
    DenseSymmetric,
    Glm,
    GlsSolution,
    KroneckerIdentity,
    Termination,
    blue_augmented_direct,
    check_positivity_on_nullspace,
    gls_estimate_direct,
    ols_estimate,
    projector_pn,
)
from .pcg import (
    PcgConfig,
    PcgTrace,
    eigs_of_gk,
    pcg_aug,
    pcg_aug_alt,
    pcg_aug_full,
    pcg_generic,
    pcg_normal_equations,
    reduced_diagnostics,
)
from .structured import (
    MvRglm,
    RestrictedGlm,
    SurModel,
    cost_counters,
    dense_preconditioner,
    mv_reduce,
    mvrglm_preconditioner,
    rglm_preconditioner,
    sur_preconditioner,
    sur_reduce,
)

__version__ = "0.1.0"
