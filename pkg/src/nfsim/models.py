"""Generative models of the neurofeedback loop.

Builds both sides of the training setup: the true process (emission
tensors over the intensity x orientation grid, per-factor transition
tensors, deterministic start state) and the subject's internal model
(biased likelihood counts, transition priors with concentration /
stickiness / pre-training terms, feedback preferences, habits).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .beliefs import BinGrid, Categorical, ConditionalTensor, DirichletCounts, discretize_gaussian
from .errors import ConfigError

COUNT_FLOOR = 1e-16  # keeps Dirichlet counts strictly positive when a prior term is zero

FACTOR_INTENSITY = 0
FACTOR_ORIENTATION = 1

PRIOR_MEAN_MODES = ("product", "additive", "intensity")
FEEDBACK_POLARITIES = ("right", "left")


@dataclass(frozen=True)
class StateSpace:
    """The two hidden factors: ERD intensity and ERD orientation.

    Intensity levels are equispaced on [0, 1]; orientation angles span
    [0, pi/2] from fully left- to fully right-lateralized.
    """

    intensity_values: tuple = (0.0, 1 / 3, 2 / 3, 1.0)
    intensity_labels: tuple = ("null", "low", "medium", "high")
    orientation_angles: tuple = (0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2)
    orientation_labels: tuple = ("L", "CL", "C", "CR", "R")
    resting_intensity: int = 0
    resting_orientation: int = 2

    def __post_init__(self):
        if len(self.intensity_values) != len(self.intensity_labels):
            raise ConfigError("intensity labels/values length mismatch")
        if len(self.orientation_angles) != len(self.orientation_labels):
            raise ConfigError("orientation labels/angles length mismatch")
        if np.any(np.diff(self.intensity_values) <= 0):
            raise ConfigError("intensity values must be strictly increasing")
        if np.any(np.diff(self.orientation_angles) <= 0):
            raise ConfigError("orientation angles must be strictly increasing")
        if not 0 <= self.resting_intensity < len(self.intensity_values):
            raise ConfigError("resting intensity index out of range")
        if not 0 <= self.resting_orientation < len(self.orientation_angles):
            raise ConfigError("resting orientation index out of range")

    @property
    def n_intensity(self) -> int:
        return len(self.intensity_values)

    @property
    def n_orientation(self) -> int:
        return len(self.orientation_angles)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_intensity, self.n_orientation)

    @property
    def resting(self) -> tuple[int, int]:
        return (self.resting_intensity, self.resting_orientation)


@dataclass(frozen=True)
class ActionSpace:
    """Per-factor mental actions: one effective step each way plus neutrals."""

    n_up: int = 1
    n_down: int = 1
    n_neutral: int = 10

    def __post_init__(self):
        if self.n_up != 1 or self.n_down != 1:
            raise ConfigError("exactly one effective action per direction is supported")
        if self.n_neutral < 1:
            raise ConfigError("need at least one neutral action")

    @property
    def n_actions(self) -> int:
        return self.n_up + self.n_down + self.n_neutral

    @property
    def up(self) -> int:
        return 0

    @property
    def down(self) -> int:
        return 1

    @property
    def neutral(self) -> tuple[int, ...]:
        return tuple(range(2, self.n_actions))

    def label(self, index: int) -> str:
        if index == self.up:
            return "up"
        if index == self.down:
            return "down"
        return f"neutral{index - 2}"


def asi_grid() -> BinGrid:
    """Five feedback bins spanning the asymmetry-index range [-1, 1]."""
    return BinGrid.linspace(-1.0, 1.0, 5)


def lerd_grid() -> BinGrid:
    """Five bins for the (unobserved) left-ERD channel on [0, 1]."""
    return BinGrid.linspace(0.0, 1.0, 5)


def polarity_sign(feedback_polarity: str) -> float:
    """Sign applied to the raw asymmetry index before grid mapping.

    The raw index (left - right)/(left + right) is most negative for
    right-lateralized ERD; "right" polarity (default) flips it so the
    trained direction maps to the top feedback bin.
    """
    if feedback_polarity not in FEEDBACK_POLARITIES:
        raise ConfigError(f"feedback_polarity must be one of {FEEDBACK_POLARITIES}")
    return -1.0 if feedback_polarity == "right" else 1.0


def angular_asymmetry(angle: float) -> float:
    """Raw asymmetry signature of an orientation angle: (cos - sin)/(cos + sin)."""
    c, s = math.cos(angle), math.sin(angle)
    return (c - s) / (c + s)


def build_process_emissions(
    space: StateSpace,
    asi: BinGrid,
    lerd: BinGrid,
    sigma_proc: float,
    epsilon: float = 0.01,
    feedback_polarity: str = "right",
) -> tuple[ConditionalTensor, ConditionalTensor]:
    """True emission tensors [outcome, intensity, orientation] for both modalities.

    Both channels discretize a Gaussian centred on the noiseless signal;
    sigma_proc is expressed in units of one bin width.
    """
    sign = polarity_sign(feedback_polarity)
    a_asi = np.zeros((asi.n_bins,) + space.shape)
    a_lerd = np.zeros((lerd.n_bins,) + space.shape)
    for i, i_val in enumerate(space.intensity_values):
        for k, angle in enumerate(space.orientation_angles):
            erd_l = i_val * math.cos(angle) + epsilon
            erd_r = i_val * math.sin(angle) + epsilon
            raw = (erd_l - erd_r) / (erd_l + erd_r)
            a_asi[:, i, k] = discretize_gaussian(sign * raw, sigma_proc * asi.bin_width, asi).probs
            a_lerd[:, i, k] = discretize_gaussian(erd_l, sigma_proc * lerd.bin_width, lerd).probs
    return ConditionalTensor(a_asi), ConditionalTensor(a_lerd)


def _factor_transitions(n_states: int, resting: int, actions: ActionSpace, p_effect: float, p_decay: float) -> np.ndarray:
    """One factor's transition tensor [next, current, action].

    "up" shifts toward the top index and "down" toward 0 with mass
    p_effect (residual stays put, no reflection at the boundaries);
    neutral actions leak mass p_decay one step toward the resting index.
    """
    b = np.zeros((n_states, n_states, actions.n_actions))
    for k in range(n_states):
        up_target = min(k + 1, n_states - 1)
        b[up_target, k, actions.up] += p_effect
        b[k, k, actions.up] += 1.0 - p_effect
        down_target = max(k - 1, 0)
        b[down_target, k, actions.down] += p_effect
        b[k, k, actions.down] += 1.0 - p_effect
        for u in actions.neutral:
            if k == resting:
                b[k, k, u] = 1.0
            else:
                toward = k - 1 if k > resting else k + 1
                b[toward, k, u] += p_decay
                b[k, k, u] += 1.0 - p_decay
    return b


def build_process_transitions(
    space: StateSpace,
    actions: ActionSpace,
    p_effect: float = 0.99,
    p_decay: float = 0.1,
) -> tuple[ConditionalTensor, ConditionalTensor]:
    """True per-factor transition tensors [next, current, action]."""
    if not (0.0 <= p_effect <= 1.0 and 0.0 <= p_decay <= 1.0):
        raise ConfigError("p_effect and p_decay must lie in [0, 1]")
    b_i = _factor_transitions(space.n_intensity, space.resting_intensity, actions, p_effect, p_decay)
    b_o = _factor_transitions(space.n_orientation, space.resting_orientation, actions, p_effect, p_decay)
    return ConditionalTensor(b_i), ConditionalTensor(b_o)


@dataclass(frozen=True)
class PriorConfig:
    """Parameters of the subject's initial likelihood and transition beliefs."""

    c_a: float = 1.0
    s_a: float = 100.0
    sigma_model: float = 0.5
    c_b: float = 1.0
    s_b: float = 1.0
    b_pre_intensity: float = 1.0
    b_pre_orientation: float = 1.0
    prior_mean_mode: str = "product"

    def __post_init__(self):
        if self.c_a < 0 or self.s_a < 0 or self.c_b < 0 or self.s_b < 0:
            raise ConfigError("concentration/confidence parameters must be >= 0")
        if self.sigma_model <= 0:
            raise ConfigError("sigma_model must be > 0")
        if self.b_pre_intensity < 0 or self.b_pre_orientation < 0:
            raise ConfigError("b_pre must be >= 0")
        if self.prior_mean_mode not in PRIOR_MEAN_MODES:
            raise ConfigError(f"prior_mean_mode must be one of {PRIOR_MEAN_MODES}")

    def b_pre(self, factor: int) -> float:
        return self.b_pre_intensity if factor == FACTOR_INTENSITY else self.b_pre_orientation


def prior_feedback_mean(i_val: float, angle: float, sign: float, mode: str = "product") -> float:
    """Believed noiseless feedback for a state, in asymmetry units.

    The default product coupling encodes the expectation that feedback
    grows with imagery intensity as well as lateralization; the
    alternates keep only one ingredient.
    """
    lat = sign * angular_asymmetry(angle)
    if mode == "product":
        return i_val * lat
    if mode == "additive":
        return 0.5 * (i_val + lat)
    if mode == "intensity":
        return 2.0 * i_val - 1.0
    raise ConfigError(f"unknown prior mean mode {mode!r}")


def build_prior_a(
    space: StateSpace,
    grid: BinGrid,
    cfg: PriorConfig,
    feedback_polarity: str = "right",
) -> DirichletCounts:
    """Biased likelihood counts [feedback, intensity, orientation].

    Each state column gets c_a flat mass plus s_a confidence on a
    discretized Gaussian around the believed feedback level, with
    sigma_model in bin widths.
    """
    sign = polarity_sign(feedback_polarity)
    counts = np.zeros((grid.n_bins,) + space.shape)
    for i, i_val in enumerate(space.intensity_values):
        for k, angle in enumerate(space.orientation_angles):
            mean = prior_feedback_mean(i_val, angle, sign, cfg.prior_mean_mode)
            bias = discretize_gaussian(mean, cfg.sigma_model * grid.bin_width, grid).probs
            counts[:, i, k] = cfg.c_a + cfg.s_a * bias
    return DirichletCounts(np.maximum(counts, COUNT_FLOOR))


def build_prior_b(b_true: ConditionalTensor, cfg: PriorConfig, factor: int) -> DirichletCounts:
    """Transition prior counts: concentration + stickiness + pre-training term."""
    n = b_true.table.shape[0]
    identity = np.eye(n)[:, :, None]
    counts = cfg.c_b + cfg.s_b * identity + cfg.b_pre(factor) * b_true.table
    return DirichletCounts(np.maximum(counts, COUNT_FLOOR))


def build_preferences(n_levels: int = 5, scale: float = 2.0) -> np.ndarray:
    """Log-preferences linear in the feedback level, shifted to zero max."""
    if scale < 0:
        raise ConfigError("preference scale must be >= 0")
    c = scale * np.arange(n_levels, dtype=float)
    return c - c.max()


@dataclass(frozen=True)
class ProcessModel:
    """The true BCI loop: emissions, transitions and deterministic start."""

    space: StateSpace
    actions: ActionSpace
    a_asi: ConditionalTensor
    a_lerd: ConditionalTensor
    b_intensity: ConditionalTensor
    b_orientation: ConditionalTensor
    asi: BinGrid
    lerd: BinGrid
    epsilon: float
    sigma_proc: float
    feedback_polarity: str

    @staticmethod
    def build(
        sigma_proc: float = 1.5,
        p_effect: float = 0.99,
        p_decay: float = 0.1,
        epsilon: float = 0.01,
        feedback_polarity: str = "right",
        space: StateSpace | None = None,
        actions: ActionSpace | None = None,
    ) -> "ProcessModel":
        space = space or StateSpace()
        actions = actions or ActionSpace()
        grid_a, grid_l = asi_grid(), lerd_grid()
        a_asi, a_lerd = build_process_emissions(space, grid_a, grid_l, sigma_proc, epsilon, feedback_polarity)
        b_i, b_o = build_process_transitions(space, actions, p_effect, p_decay)
        return ProcessModel(
            space=space,
            actions=actions,
            a_asi=a_asi,
            a_lerd=a_lerd,
            b_intensity=b_i,
            b_orientation=b_o,
            asi=grid_a,
            lerd=grid_l,
            epsilon=epsilon,
            sigma_proc=sigma_proc,
            feedback_polarity=feedback_polarity,
        )

    @property
    def transitions(self) -> tuple[ConditionalTensor, ConditionalTensor]:
        return (self.b_intensity, self.b_orientation)

    def initial_state(self) -> tuple[int, int]:
        return self.space.resting


@dataclass
class AgentModel:
    """The subject's generative model plus planning parameters.

    Shape-generic: `a` maps a single observed modality onto the product of
    the state factors, `b` holds one transition count tensor per factor,
    `d` one initial belief per factor, and `e` covers the joint action
    space (the product of per-factor action counts).
    """

    a: DirichletCounts
    b: tuple[DirichletCounts, ...]
    c: np.ndarray
    d: tuple[Categorical, ...]
    e: Categorical
    horizon: int = 2
    gamma: float = 32.0
    lr_a: float = 1.0
    lr_b: float = 1.0
    novelty_a: bool = True
    novelty_b: bool = True
    prune_threshold: float = 1.0 / 16.0
    expected_log_method: str = "digamma"

    def __post_init__(self):
        state_shape = self.a.counts.shape[1:]
        if len(state_shape) != len(self.b):
            raise ConfigError("one transition tensor per state factor is required")
        for f, bf in enumerate(self.b):
            if bf.counts.shape[0] != bf.counts.shape[1] or bf.counts.shape[0] != state_shape[f]:
                raise ConfigError(f"transition counts for factor {f} do not match the state space")
        if self.c.shape != (self.a.counts.shape[0],):
            raise ConfigError("preference vector must cover the feedback levels")
        for f, df in enumerate(self.d):
            if len(df) != state_shape[f]:
                raise ConfigError(f"initial belief for factor {f} has the wrong length")
        if len(self.e) != self.n_joint_actions:
            raise ConfigError("habit vector must cover the joint action space")
        if self.horizon < 1:
            raise ConfigError("planning horizon must be >= 1")
        if self.gamma < 0:
            raise ConfigError("action precision must be >= 0")

    @property
    def state_shape(self) -> tuple[int, ...]:
        return self.a.counts.shape[1:]

    @property
    def n_actions_per_factor(self) -> tuple[int, ...]:
        return tuple(bf.counts.shape[2] for bf in self.b)

    @property
    def n_joint_actions(self) -> int:
        return int(np.prod(self.n_actions_per_factor))

    @staticmethod
    def build(
        process: ProcessModel,
        prior: PriorConfig,
        preference_scale: float = 2.0,
        horizon: int = 2,
        gamma: float = 32.0,
        lr_a: float = 1.0,
        lr_b: float = 1.0,
        novelty_a: bool = True,
        novelty_b: bool = True,
        prune_threshold: float = 1.0 / 16.0,
    ) -> "AgentModel":
        """Assemble the BCI subject model from the paper's parameterization.

        Only the feedback modality enters the likelihood model; the
        left-ERD channel is never shown to the subject. Initial state
        beliefs match the resting start of the process; habits are flat.
        """
        space = process.space
        a0 = build_prior_a(space, process.asi, prior, process.feedback_polarity)
        b0 = (
            build_prior_b(process.b_intensity, prior, FACTOR_INTENSITY),
            build_prior_b(process.b_orientation, prior, FACTOR_ORIENTATION),
        )
        d = tuple(
            Categorical(np.eye(n)[idx])
            for n, idx in zip(space.shape, space.resting)
        )
        n_joint = process.actions.n_actions ** 2
        e = Categorical(np.full(n_joint, 1.0 / n_joint))
        return AgentModel(
            a=a0,
            b=b0,
            c=build_preferences(process.asi.n_bins, preference_scale),
            d=d,
            e=e,
            horizon=horizon,
            gamma=gamma,
            lr_a=lr_a,
            lr_b=lr_b,
            novelty_a=novelty_a,
            novelty_b=novelty_b,
            prune_threshold=prune_threshold,
        )
