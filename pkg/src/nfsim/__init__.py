"""Closed-loop active-inference simulation of motor-imagery neurofeedback training."""

from .beliefs import (
    BinGrid,
    Categorical,
    ConditionalTensor,
    DirichletCounts,
    discretize_gaussian,
    entropy,
    expected_log,
    kl_divergence,
    normalize,
    softmax,
)
from .engine import (
    ActiveInferenceEngine,
    BeliefState,
    EfeComponents,
    PlanInfo,
    PolicyNode,
    expected_free_energy,
    infer_states,
    plan,
    predict_states,
    select_action,
    update_a,
    update_b,
)
from .environment import (
    StepOutcome,
    TrialLog,
    TrialProtocol,
    TrueState,
    asymmetry_index,
    emit,
    erd_levels,
    run_session,
    run_trial,
    step_process,
)
from .errors import (
    ConfigError,
    DegenerateDistribution,
    DegenerateState,
    InvalidInput,
    InvalidObservation,
    NfsimError,
    ShapeError,
)
from .harness import (
    ExperimentConfig,
    GridResult,
    RunRecord,
    export_records,
    performance_metric,
    replay,
    run_experiment_familiar,
    run_experiment_naive,
    run_grid,
    run_simulate,
    seed_for,
)
from .models import (
    ActionSpace,
    AgentModel,
    PriorConfig,
    ProcessModel,
    StateSpace,
    build_preferences,
    build_prior_a,
    build_prior_b,
    build_process_emissions,
    build_process_transitions,
)

__version__ = "0.1.0"
