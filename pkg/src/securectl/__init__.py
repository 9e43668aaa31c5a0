"""Safe feedback control of discrete-time linear systems under sparse sensor attacks.

Reconstructs the states consistent with attacked input-output data (exactly,
or per invariant subspace), bounds the barrier-condition right-hand side
without full reconstruction, and filters nominal inputs through a
least-deviation program subject to the resulting linear constraint.
"""

from .cbf import (
    CbfConstraint,
    CbfGains,
    SafetyEvaluation,
    assemble_constraint,
    default_partial_subset,
    exact_M,
    h_eval,
    partial_bound_M,
    q_of_U,
    upper_bound_M,
)
from .eigenspace import (
    EigenStructure,
    ObservabilityReport,
    eig_cluster_tol,
    eigen_decompose,
    eigenvalue_observable,
    eigenvalue_observability_flags,
    observability_report,
    projection_from_bases,
)
from .errors import (
    AssumptionViolatedError,
    DefectiveToleranceError,
    EmptySetError,
    EmptySubspaceError,
    FilterStepError,
    GenerationRetryExceeded,
    NoPlausibleStateError,
    RankDeficientError,
    ScenarioFormatError,
    SecurectlError,
    WindowTooShortError,
)
from .harness import (
    ClosedLoopResult,
    StepRecord,
    bench_sensors,
    bench_subspaces,
    open_loop_window,
    run_closed_loop,
    worst_case_combinations,
)
from .plant import (
    IoWindow,
    LtiSystem,
    SafetySet,
    StackedData,
    SubspaceData,
    SubspaceProjector,
    project_data,
    stack,
    step,
)
from .qp import QpResult, solve_least_deviation
from .scenario import (
    FakeTrajectoryAttack,
    NominalSchedule,
    Scenario,
    attack_group_sizes,
    fixture_scenario,
    load_scenario,
    make_attack,
    random_scenario,
    random_system,
    save_scenario,
)
from .ssr import (
    IndexedSubstates,
    PlausibleSet,
    SubspaceVoteSet,
    VoteCluster,
    brute_force_ssr,
    preprocess,
    propagate,
    ssr_combine,
    ssr_majority,
    threshold_vote,
)

__version__ = "0.1.0"
