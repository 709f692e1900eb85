"""The true neurofeedback process and the trial protocol.

Maintains the hidden (intensity, orientation) state, computes the left and
right ERD levels and their asymmetry index, samples state transitions and
discretized feedback, and drives the rest + imagery trial structure
against an agent. Each run owns its RNG; runs are independent and safe to
execute in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .beliefs import sample_index
from .errors import ConfigError, DegenerateState
from .models import ProcessModel, StateSpace

REST, MI = "rest", "mi"


@dataclass(frozen=True)
class TrueState:
    """Hidden physiological state: indices into the two factor grids."""

    intensity: int
    orientation: int

    def as_tuple(self) -> tuple[int, int]:
        return (self.intensity, self.orientation)


@dataclass(frozen=True)
class TrialProtocol:
    """Rest/imagery block lengths and the number of training trials."""

    t_rest: int = 40
    t_mi: int = 40
    n_trials: int = 1

    def __post_init__(self):
        if self.t_rest < 0 or self.t_mi < 0:
            raise ConfigError("block lengths must be >= 0")
        if self.n_trials < 1:
            raise ConfigError("need at least one trial")


@dataclass(frozen=True)
class StepOutcome:
    """What one process step emitted.

    Feedback is present exactly during imagery; the left-ERD index and the
    noiseless (pre-discretization) asymmetry are log-only channels the
    subject never observes.
    """

    feedback: int | None
    l_erd: int
    noiseless_asi: float


@dataclass
class StepRecord:
    t: int
    phase: str
    state: TrueState
    outcome: StepOutcome
    action: tuple[int, int] | None = None
    vfe: float = 0.0
    risk: float = 0.0
    ambiguity: float = 0.0
    a_novelty: float = 0.0
    b_novelty: float = 0.0


@dataclass
class TrialLog:
    trial: int
    steps: list[StepRecord] = field(default_factory=list)

    def mi_steps(self) -> list[StepRecord]:
        return [s for s in self.steps if s.phase == MI]


def erd_levels(state: TrueState, space: StateSpace, epsilon: float = 0.01) -> tuple[float, float]:
    """Left/right ERD strengths: intensity projected by cos/sin of the angle."""
    i_val = space.intensity_values[state.intensity]
    angle = space.orientation_angles[state.orientation]
    return (i_val * math.cos(angle) + epsilon, i_val * math.sin(angle) + epsilon)


def asymmetry_index(erd_left: float, erd_right: float) -> float:
    """Normalized left/right difference in [-1, 1]."""
    total = erd_left + erd_right
    if total <= 0:
        raise DegenerateState("asymmetry undefined for non-positive total ERD")
    return (erd_left - erd_right) / total


def step_process(
    state: TrueState,
    action: tuple[int, int],
    process: ProcessModel,
    rng: np.random.Generator,
) -> TrueState:
    """Sample each factor's next state from its transition slice."""
    i = sample_index(rng, process.b_intensity.table[:, state.intensity, action[0]])
    o = sample_index(rng, process.b_orientation.table[:, state.orientation, action[1]])
    return TrueState(intensity=i, orientation=o)


def emit(
    state: TrueState,
    process: ProcessModel,
    phase: str,
    rng: np.random.Generator,
) -> StepOutcome:
    """Sample the observation channels for the current state.

    Feedback is only produced during imagery; the left-ERD channel and
    the noiseless asymmetry are always recorded for analysis.
    """
    feedback = None
    if phase == MI:
        feedback = sample_index(rng, process.a_asi.table[:, state.intensity, state.orientation])
    l_erd = sample_index(rng, process.a_lerd.table[:, state.intensity, state.orientation])
    left, right = erd_levels(state, process.space, process.epsilon)
    return StepOutcome(feedback=feedback, l_erd=l_erd, noiseless_asi=asymmetry_index(left, right))


def rest_action(process: ProcessModel) -> tuple[int, int]:
    """The designated neutral action applied while the subject rests."""
    u = process.actions.neutral[0]
    return (u, u)


def run_trial(
    engine,
    process: ProcessModel,
    protocol: TrialProtocol,
    rng: np.random.Generator,
    state: TrueState,
    trial: int = 0,
) -> tuple[TrialLog, TrueState]:
    """One rest + imagery trial; returns the log and the final true state.

    During rest the process drifts under the neutral action and the agent
    is idle. At imagery onset the agent's beliefs reset to its initial
    prior; each imagery step then runs plan -> act -> transition -> emit
    -> infer -> learn. The engine only needs `reset_beliefs`, `act` and
    `integrate`.
    """
    if process.actions.n_actions < 3:
        raise ConfigError("process needs at least one neutral action")
    log = TrialLog(trial=trial)
    t = 0
    for _ in range(protocol.t_rest):
        state = step_process(state, rest_action(process), process, rng)
        outcome = emit(state, process, REST, rng)
        log.steps.append(StepRecord(t=t, phase=REST, state=state, outcome=outcome))
        t += 1

    engine.reset_beliefs()
    for _ in range(protocol.t_mi):
        action, info = engine.act(rng)
        state = step_process(state, action, process, rng)
        outcome = emit(state, process, MI, rng)
        diag = engine.integrate(action, outcome.feedback)
        record = StepRecord(t=t, phase=MI, state=state, outcome=outcome, action=action, vfe=diag.vfe)
        if info is not None:
            n_u = process.actions.n_actions
            flat = int(np.ravel_multi_index(action, (n_u, n_u)))
            comps = info.components_for(flat)
            record.risk = comps.risk
            record.ambiguity = comps.ambiguity
            record.a_novelty = comps.a_novelty
            record.b_novelty = comps.b_novelty
        log.steps.append(record)
        t += 1
    return log, state


def run_session(
    engine,
    process: ProcessModel,
    protocol: TrialProtocol,
    rng: np.random.Generator,
) -> list[TrialLog]:
    """A full training session; the true state carries over between trials."""
    state = TrueState(*process.initial_state())
    logs = []
    for trial in range(protocol.n_trials):
        log, state = run_trial(engine, process, protocol, rng, state, trial=trial)
        logs.append(log)
    return logs
