"""Transportation-cost inequalities for reflected diffusions and competing particles.

Simulators for normally reflected diffusions in convex polyhedra and for
rank-based particle systems, exact and entropic optimal transport on path
space, and a harness that checks ``W_2(P, Q) <= sqrt(2 C H(Q|P))`` through
the synchronous coupling.
"""

__version__ = "0.1.0"

from .bundle import BundleFormatError, PathBundle, read_bundle, write_bundle
from .domain import (
    DomainProjector,
    HalfSpace,
    PolyhedralDomain,
    box,
    contains,
    from_halfspaces,
    half_line,
    half_space,
    normal_cone_direction,
    project,
    wedge,
    whole_space,
)
from .particles import (
    CompetingParticles,
    ConstantPositions,
    LinearSpacing,
    RankCoefficients,
    ranked_from_named,
    ranking_permutation,
    rearrangement_gap,
    simulate_named,
    simulate_truncated_infinite,
    truncation_diagnostic,
    validate_coefficients,
)
from .reflect import (
    DiffusionMatrix,
    DriftField,
    DriftPerturbation,
    OneSidedBound,
    ReflectedDiffusion,
    gronwall_bound,
    one_sided_lipschitz_check,
    pathwise_gronwall_check,
    simulate_coupled_pair,
    simulate_reflected,
)
from .tci import (
    NamedParticleSystem,
    PathFunctional,
    RankedParticleSystem,
    ReflectedSystem,
    TciConstantSpec,
    TciReport,
    TciVerifier,
    TruncatedInfiniteSystem,
    concentration_tail,
    tci_constant,
    tci_constant_cbp,
    verify_tci,
)
from .transport import (
    EmpiricalMeasure,
    cost_matrix,
    entropic_ladder,
    relative_entropy_drift,
    wasserstein_entropic,
    wasserstein_exact,
)
from .validation import ConfigError, HypothesisError, NumericalError
