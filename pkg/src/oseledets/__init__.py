"""
Numerical multiplicative ergodic theory for semi-invertible matrix cocycles.

Lyapunov spectra, Oseledets splittings (including the -inf space of
singular cocycles), regularity constants, exponential dichotomies and
Hoelder continuity of the splitting on large-measure sets.
"""

__version__ = "0.1.0"

from .cocycle import (  # noqa: E402
    BaseSystem,
    CocycleSystem,
    Generator,
    adjoint_cocycle,
    compose,
    make_builtin,
    orbit,
    system_from_dict,
    torus_metric,
)
from .errors import *  # noqa: E402,F401,F403
from .holder import (  # noqa: E402
    BrinParams,
    HolderEstimate,
    LambdaSet,
    brin_bound,
    brin_consistency,
    build_lambda_set,
    choose_level,
    cocycle_holder_check,
    estimate_holder,
    intersect_lambda_sets,
)
from .met import (  # noqa: E402
    SpectrumReport,
    SplittingField,
    SplittingSample,
    adjoint_duality_residual,
    duality_residuals,
    equivariance_residual,
    fast_sum,
    lyapunov_spectrum,
    oseledets_splitting,
    random_invariant_measure,
    slow_filtration,
    space_growth_rate,
    splitting_field,
)
from .regularity import (  # noqa: E402
    DichotomyParams,
    RegularityProfile,
    angle_constant,
    default_epsilon,
    det_integrability_check,
    dichotomy_check,
    dichotomy_params,
    full_constant,
    lower_constant,
    orbit_constants,
    regularity_profiles,
    tempered_hull,
    temperedness_check,
    upper_constant,
)
from .subspace import (  # noqa: E402
    Subspace,
    direct_sum,
    intersect,
    min_sum_gap,
    orthogonal_complement,
    orthonormalize,
    principal_cosines,
    projector,
    subspace_distance,
    sup_distance,
    vector_distance,
)
