"""The active-inference loop.

Exact Bayesian state inference over the joint state space, expected free
energy with risk / ambiguity / parameter-novelty terms, recursive planning
that branches on predicted observations over a temporal horizon, action
sampling, and count-based learning of the likelihood and transition models.

Beliefs are carried as exact joints over the (small) product state space;
per-factor marginals are derived views. Because transitions factorize,
pushing the joint through them is consistent with the per-factor contract.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .beliefs import (
    PROB_FLOOR,
    Categorical,
    DirichletCounts,
    expected_log,
    sample_index,
    softmax,
)
from .errors import ConfigError, InvalidObservation, ShapeError
from .models import AgentModel

# Child batches at deep horizons are evaluated in slices to bound memory.
_BATCH_CHUNK = 8192


def _ln(x: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(x, PROB_FLOOR))


@dataclass(frozen=True)
class BeliefState:
    """Posterior over the hidden factors: per-factor marginals plus joint."""

    marginals: tuple[np.ndarray, ...]
    joint: np.ndarray | None = None

    def __post_init__(self):
        marginals = tuple(np.asarray(m, dtype=float) for m in self.marginals)
        object.__setattr__(self, "marginals", marginals)
        for m in marginals:
            if m.ndim != 1 or not np.isclose(m.sum(), 1.0, atol=1e-9):
                raise ShapeError("marginals must be normalized vectors")
        if self.joint is not None:
            joint = np.asarray(self.joint, dtype=float)
            object.__setattr__(self, "joint", joint)
            if joint.shape != tuple(len(m) for m in marginals):
                raise ShapeError("joint shape does not match the marginals")
            if not np.isclose(joint.sum(), 1.0, atol=1e-9):
                raise ShapeError("joint must sum to 1")
            for f, m in enumerate(marginals):
                axes = tuple(i for i in range(joint.ndim) if i != f)
                if not np.allclose(joint.sum(axis=axes), m, atol=1e-9):
                    raise ShapeError(f"joint does not marginalize to factor {f}")

    @staticmethod
    def from_joint(joint: np.ndarray) -> "BeliefState":
        joint = np.asarray(joint, dtype=float)
        marginals = tuple(
            joint.sum(axis=tuple(i for i in range(joint.ndim) if i != f))
            for f in range(joint.ndim)
        )
        return BeliefState(marginals=marginals, joint=joint)

    @staticmethod
    def from_marginals(*marginals) -> "BeliefState":
        arrays = [np.asarray(m, dtype=float) for m in marginals]
        joint = arrays[0]
        for m in arrays[1:]:
            joint = np.multiply.outer(joint, m)
        return BeliefState(marginals=tuple(arrays), joint=joint)

    def joint_or_outer(self) -> np.ndarray:
        if self.joint is not None:
            return self.joint
        mats = self.marginals[0]
        for m in self.marginals[1:]:
            mats = np.multiply.outer(mats, m)
        return mats


@dataclass(frozen=True)
class EfeComponents:
    """One action's expected-free-energy breakdown, in nats."""

    risk: float
    ambiguity: float
    a_novelty: float
    b_novelty: float

    @property
    def total(self) -> float:
        return self.risk + self.ambiguity - self.a_novelty - self.b_novelty


@dataclass
class PolicyNode:
    """One evaluated action in the planning tree."""

    action: tuple[int, ...]
    G: float
    depth: int
    children: dict[int, list["PolicyNode"]] = field(default_factory=dict)


@dataclass
class PlanInfo:
    """Diagnostics from one planning call (all arrays over joint actions)."""

    G: np.ndarray
    risk: np.ndarray
    ambiguity: np.ndarray
    a_novelty: np.ndarray
    b_novelty: np.ndarray
    tree: list[PolicyNode] | None = None

    def components_for(self, flat_action: int) -> EfeComponents:
        return EfeComponents(
            risk=float(self.risk[flat_action]),
            ambiguity=float(self.ambiguity[flat_action]),
            a_novelty=float(self.a_novelty[flat_action]),
            b_novelty=float(self.b_novelty[flat_action]),
        )


def infer_states(
    prior: BeliefState,
    obs: int | None,
    a: DirichletCounts,
    method: str = "digamma",
) -> tuple[BeliefState, float]:
    """Exact posterior over the joint state space given one observation.

    The likelihood is exp of the Dirichlet expected log of `a`; the
    returned free energy is the negative log of the unnormalized mass,
    i.e. -ln(evidence), which is tight under exact inference. With no
    observation the prior passes through and the free energy is 0.
    """
    joint = prior.joint_or_outer()
    if obs is None:
        return BeliefState.from_joint(joint), 0.0
    n_obs = a.counts.shape[0]
    if not isinstance(obs, (int, np.integer)) or not (0 <= obs < n_obs):
        raise InvalidObservation(f"observation {obs!r} outside 0..{n_obs - 1}")
    likelihood = np.exp(expected_log(a, method=method))
    unnorm = likelihood[obs] * joint
    evidence = unnorm.sum()
    vfe = -float(np.log(evidence))
    return BeliefState.from_joint(unnorm / evidence), vfe


def predict_states(
    belief: BeliefState,
    action: tuple[int, ...],
    b: tuple[DirichletCounts, ...],
) -> BeliefState:
    """Push the belief one step forward through the expected transitions."""
    if len(action) != len(b):
        raise ShapeError("need one action index per factor")
    joint = belief.joint_or_outer()
    for f, (bf, uf) in enumerate(zip(b, action)):
        mat = bf.counts[:, :, uf] / bf.counts[:, :, uf].sum(axis=0, keepdims=True)
        joint = np.moveaxis(np.tensordot(mat, joint, axes=(1, f)), 0, f)
    return BeliefState.from_joint(joint)


def update_a(
    a: DirichletCounts,
    obs: int,
    posterior_joint: np.ndarray,
    lr: float = 1.0,
) -> DirichletCounts:
    """Accumulate one observation/state co-occurrence into the likelihood counts."""
    n_obs = a.counts.shape[0]
    if obs is None or not (0 <= int(obs) < n_obs):
        raise InvalidObservation(f"observation {obs!r} outside 0..{n_obs - 1}")
    counts = a.counts.copy()
    counts[int(obs)] += lr * posterior_joint
    return DirichletCounts(counts)


def update_b(
    b: tuple[DirichletCounts, ...],
    action: tuple[int, ...],
    posterior: BeliefState,
    previous: BeliefState,
    lr: float = 1.0,
) -> tuple[DirichletCounts, ...]:
    """Accumulate the inferred transition under the taken action, per factor."""
    if len(action) != len(b):
        raise ShapeError("need one action index per factor")
    updated = []
    for f, (bf, uf) in enumerate(zip(b, action)):
        counts = bf.counts.copy()
        counts[:, :, uf] += lr * np.outer(posterior.marginals[f], previous.marginals[f])
        updated.append(DirichletCounts(counts))
    return tuple(updated)


def select_action(
    dist: Categorical,
    rng: np.random.Generator,
    n_actions_per_factor: tuple[int, ...],
) -> tuple[int, ...]:
    """Sample a joint action and decode it into per-factor indices."""
    if len(dist) != int(np.prod(n_actions_per_factor)):
        raise ShapeError("action distribution does not match the action space")
    flat = sample_index(rng, dist.probs)
    return tuple(int(i) for i in np.unravel_index(flat, n_actions_per_factor))


def action_distribution(g_total: np.ndarray, gamma: float, habits: Categorical) -> Categorical:
    """Softmax over negative expected free energy with additive log-habits."""
    return softmax(-gamma * np.asarray(g_total, dtype=float) + _ln(habits.probs), precision=1.0)


class _PlannerTensors:
    """Per-call cache of the arrays the batched planner needs."""

    def __init__(self, model: AgentModel):
        self.state_shape = model.state_shape
        self.n_factors = len(self.state_shape)
        self.n_actions = model.n_actions_per_factor
        self.n_joint = model.n_joint_actions
        self.gamma = model.gamma
        self.prune = model.prune_threshold
        self.novelty_a = model.novelty_a
        self.novelty_b = model.novelty_b

        a = model.a.counts
        self.likelihood = np.exp(expected_log(model.a, method=model.expected_log_method))
        self.a_bar = a / a.sum(axis=0, keepdims=True)
        self.entropy_by_state = -np.sum(self.a_bar * _ln(self.a_bar), axis=0)
        w_a = 1.0 / a.sum(axis=0, keepdims=True) - 1.0 / a
        self.a_gain_by_state = -np.sum(self.a_bar * w_a, axis=0)

        self.b_bar = []
        self.b_gain = []  # per factor: [state, action] expected info gain
        for bf in model.b:
            counts = bf.counts
            bar = counts / counts.sum(axis=0, keepdims=True)
            w_b = 1.0 / counts.sum(axis=0, keepdims=True) - 1.0 / counts
            self.b_bar.append(bar)
            self.b_gain.append(-np.sum(bar * w_b, axis=0))

        self.ln_pref = _ln(softmax(model.c, precision=1.0).probs)
        self.ln_habits = _ln(model.e.probs)

        # einsum subscripts for the batched joint push-forward; the letter
        # scheme reserves 'o' and 'z', which caps the factor count
        if self.n_factors > 7:
            raise ConfigError("planner supports at most 7 state factors")
        ins = string.ascii_lowercase[: self.n_factors]
        outs = string.ascii_uppercase[: self.n_factors]
        acts = string.ascii_lowercase[self.n_factors : 2 * self.n_factors]
        operands = [f"{outs[f]}{ins[f]}{acts[f]}" for f in range(self.n_factors)]
        self._predict_spec = ",".join(operands) + f",z{ins}->z{acts}{outs}"
        self._obs_spec = f"o{outs},z{acts}{outs}->z{acts}o"
        self._joint_spec = ",".join(operands) + f"->{acts}{outs}{ins}"
        self._leaf = None

    def _leaf_maps(self):
        """Per-action linear maps from a flat belief to the leaf G terms.

        The joint transition of action k is the tensor product of its
        per-factor slices; composing it with the observation model turns
        outcome prediction, ambiguity and likelihood-novelty into plain
        matrix products against the (flattened) belief.
        """
        if self._leaf is None:
            n_states = int(np.prod(self.state_shape))
            joint_b = np.einsum(self._joint_spec, *self.b_bar, optimize=True)
            joint_b = joint_b.reshape(self.n_joint, n_states, n_states)
            obs_map = np.einsum(
                "oS,kSt->kot", self.a_bar.reshape(-1, n_states), joint_b, optimize=True
            )
            amb_map = joint_b.transpose(0, 2, 1) @ self.entropy_by_state.ravel()
            gain_map = joint_b.transpose(0, 2, 1) @ self.a_gain_by_state.ravel()
            self._leaf = (
                obs_map.reshape(self.n_joint * self.a_bar.shape[0], n_states),
                amb_map,
                gain_map,
            )
        return self._leaf

    def step_terms_leaf(self, beliefs: np.ndarray):
        """G and components for a batch of beliefs, without predicted joints."""
        n = beliefs.shape[0]
        flat = beliefs.reshape(n, -1)
        obs_map, amb_map, gain_map = self._leaf_maps()
        q_obs = (flat @ obs_map.T).reshape(n, self.n_joint, -1)
        risk = np.sum(q_obs * (np.log(q_obs) - self.ln_pref), axis=-1)
        ambiguity = flat @ amb_map.T
        a_nov = flat @ gain_map.T if self.novelty_a else np.zeros((n, self.n_joint))
        b_nov = self._b_novelty(beliefs) if self.novelty_b else np.zeros((n, self.n_joint))
        g = risk + ambiguity - a_nov - b_nov
        return g, risk, ambiguity, a_nov, b_nov

    def _b_novelty(self, beliefs: np.ndarray) -> np.ndarray:
        """Per-factor transition-count information gain on the action mesh."""
        n = beliefs.shape[0]
        b_nov = np.zeros((n,) + self.n_actions)
        for f in range(self.n_factors):
            axes = tuple(i + 1 for i in range(self.n_factors) if i != f)
            marg = beliefs.sum(axis=axes) if axes else beliefs
            gains = marg @ self.b_gain[f]
            shape = [n] + [1] * self.n_factors
            shape[f + 1] = self.n_actions[f]
            b_nov = b_nov + gains.reshape(shape)
        return b_nov.reshape(n, self.n_joint)

    def predict_all(self, beliefs: np.ndarray) -> np.ndarray:
        """All joint actions applied to a batch of joint beliefs.

        beliefs: [n, *state_shape] -> [n, n_joint, *state_shape].
        """
        n = beliefs.shape[0]
        out = np.einsum(self._predict_spec, *self.b_bar, beliefs, optimize=True)
        return out.reshape((n, self.n_joint) + self.state_shape)

    def step_terms(self, beliefs: np.ndarray):
        """G and its components for every joint action of every belief.

        Returns (G, risk, ambiguity, a_novelty, b_novelty, predicted, q_obs),
        all leading with [n, n_joint].
        """
        n = beliefs.shape[0]
        predicted = self.predict_all(beliefs)
        pred_flat = predicted.reshape(n, self.n_joint, -1)

        q_obs = np.einsum(
            self._obs_spec,
            self.a_bar,
            predicted.reshape((n,) + self.n_actions + self.state_shape),
            optimize=True,
        ).reshape(n, self.n_joint, -1)
        risk = np.sum(q_obs * (_ln(q_obs) - self.ln_pref), axis=-1)
        ambiguity = pred_flat @ self.entropy_by_state.ravel()

        if self.novelty_a:
            a_nov = pred_flat @ self.a_gain_by_state.ravel()
        else:
            a_nov = np.zeros((n, self.n_joint))
        b_nov = self._b_novelty(beliefs) if self.novelty_b else np.zeros((n, self.n_joint))

        g = risk + ambiguity - a_nov - b_nov
        return g, risk, ambiguity, a_nov, b_nov, predicted, q_obs


@dataclass
class _Level:
    g_step: np.ndarray
    risk: np.ndarray
    ambiguity: np.ndarray
    a_novelty: np.ndarray
    b_novelty: np.ndarray
    g_total: np.ndarray
    parent_n: np.ndarray | None = None  # indexing arrays of the NEXT level's beliefs
    parent_k: np.ndarray | None = None
    parent_o: np.ndarray | None = None
    branch_w: np.ndarray | None = None


def _softmin(values: np.ndarray, gamma: float, axis: int = -1) -> np.ndarray:
    """Smoothed minimum with precision gamma (plain mean when gamma == 0)."""
    if gamma == 0:
        return values.mean(axis=axis)
    z = -gamma * values
    m = z.max(axis=axis, keepdims=True)
    return -(np.log(np.sum(np.exp(z - m), axis=axis)) + np.squeeze(m, axis=axis)) / gamma


def _chunked(beliefs: np.ndarray, fn, n_outputs: int):
    if beliefs.shape[0] <= _BATCH_CHUNK:
        return fn(beliefs)
    chunks = [fn(beliefs[i : i + _BATCH_CHUNK]) for i in range(0, beliefs.shape[0], _BATCH_CHUNK)]
    return tuple(np.concatenate([c[j] for c in chunks], axis=0) for j in range(n_outputs))


def _evaluate_levels(tensors: _PlannerTensors, belief: np.ndarray, horizon: int) -> list[_Level]:
    """Breadth-first evaluation of the observation-branching action tree."""
    levels: list[_Level] = []
    beliefs = belief[None, ...]
    for depth in range(1, horizon + 1):
        if depth == horizon:
            g, risk, amb, a_nov, b_nov = _chunked(beliefs, tensors.step_terms_leaf, 5)
            levels.append(
                _Level(g_step=g, risk=risk, ambiguity=amb, a_novelty=a_nov, b_novelty=b_nov, g_total=g.copy())
            )
            break
        g, risk, amb, a_nov, b_nov, predicted, q_obs = _chunked(beliefs, tensors.step_terms, 7)
        level = _Level(g_step=g, risk=risk, ambiguity=amb, a_novelty=a_nov, b_novelty=b_nov, g_total=g.copy())
        levels.append(level)

        keep = q_obs >= tensors.prune
        # a branch set can only be empty if every outcome mass sits below the
        # threshold; keep the likeliest branch so the expectation stays defined
        empty = ~keep.any(axis=-1)
        if empty.any():
            idx = np.argmax(q_obs, axis=-1)
            keep[np.nonzero(empty) + (idx[empty],)] = True
        parent_n, parent_k, parent_o = np.nonzero(keep)
        kept_mass = np.where(keep, q_obs, 0.0).sum(axis=-1)
        level.parent_n, level.parent_k, level.parent_o = parent_n, parent_k, parent_o
        level.branch_w = q_obs[parent_n, parent_k, parent_o] / kept_mass[parent_n, parent_k]

        posterior = tensors.likelihood[parent_o] * predicted[parent_n, parent_k]
        flat = posterior.reshape(posterior.shape[0], -1)
        posterior = (flat / flat.sum(axis=1, keepdims=True)).reshape(posterior.shape)
        beliefs = posterior

    # backward pass: fold each level's branch continuations into its parent
    for depth in range(len(levels) - 1, 0, -1):
        child, parent = levels[depth], levels[depth - 1]
        branch_value = _softmin(child.g_total, tensors.gamma, axis=-1)
        cont = np.zeros_like(parent.g_total)
        np.add.at(cont, (parent.parent_n, parent.parent_k), parent.branch_w * branch_value)
        parent.g_total = parent.g_step + cont
    return levels


def _build_tree(levels: list[_Level], tensors: _PlannerTensors) -> list[PolicyNode]:
    """Materialize PolicyNodes from the level arrays (small models only)."""
    def nodes_for(depth: int, n: int) -> list[PolicyNode]:
        level = levels[depth]
        nodes = []
        for k in range(level.g_total.shape[1]):
            action = tuple(int(i) for i in np.unravel_index(k, tensors.n_actions))
            node = PolicyNode(action=action, G=float(level.g_total[n, k]), depth=depth + 1)
            if level.parent_n is not None:
                mask = (level.parent_n == n) & (level.parent_k == k)
                for child_idx, obs in zip(np.nonzero(mask)[0], level.parent_o[mask]):
                    node.children[int(obs)] = nodes_for(depth + 1, int(child_idx))
            nodes.append(node)
        return nodes

    return nodes_for(0, 0)


def plan(
    belief: BeliefState,
    model: AgentModel,
    horizon: int | None = None,
    return_tree: bool = False,
) -> tuple[Categorical, PlanInfo]:
    """Evaluate all joint actions over the temporal horizon.

    Each action's expected free energy accumulates its single-step terms
    plus, below the horizon, the branch-probability-weighted softmin of
    the best continuations under each sufficiently likely observation
    (predictive probability >= the prune threshold). The returned
    distribution is softmax(-gamma * G) blended with log-habits.
    """
    horizon = model.horizon if horizon is None else horizon
    if horizon < 1:
        raise ConfigError("planning horizon must be >= 1")
    tensors = _PlannerTensors(model)
    levels = _evaluate_levels(tensors, belief.joint_or_outer(), horizon)
    top = levels[0]
    g_total = top.g_total[0]
    dist = action_distribution(g_total, tensors.gamma, model.e)
    info = PlanInfo(
        G=g_total,
        risk=top.risk[0],
        ambiguity=top.ambiguity[0],
        a_novelty=top.a_novelty[0],
        b_novelty=top.b_novelty[0],
        tree=_build_tree(levels, tensors) if return_tree else None,
    )
    return dist, info


def expected_free_energy(
    predicted: BeliefState,
    a: DirichletCounts,
    c: np.ndarray,
    include_novelty: bool = True,
    b: tuple[DirichletCounts, ...] | None = None,
    previous: BeliefState | None = None,
    action: tuple[int, ...] | None = None,
) -> tuple[float, EfeComponents]:
    """Single-action expected free energy and its components.

    risk = KL(predicted outcomes || softmax(c)); ambiguity = expected
    outcome entropy given the state; novelty terms are the expected
    Dirichlet information gains for the likelihood counts and, when the
    transition context (b, previous, action) is supplied, for the taken
    transition's counts.
    """
    joint = predicted.joint_or_outer()
    counts = a.counts
    a_bar = counts / counts.sum(axis=0, keepdims=True)
    state_axes = tuple(range(1, a_bar.ndim))
    q_o = np.tensordot(a_bar, joint, axes=(state_axes, tuple(range(joint.ndim))))
    pref = softmax(np.asarray(c, dtype=float), precision=1.0).probs
    risk = float(np.sum(q_o * (_ln(q_o) - _ln(pref))))
    h_by_state = -np.sum(a_bar * _ln(a_bar), axis=0)
    ambiguity = float(np.sum(joint * h_by_state))

    a_nov = 0.0
    b_nov = 0.0
    if include_novelty:
        w_a = 1.0 / counts.sum(axis=0, keepdims=True) - 1.0 / counts
        a_nov = float(-np.sum(joint * np.sum(a_bar * w_a, axis=0)))
        if b is not None and previous is not None and action is not None:
            for f, (bf, uf) in enumerate(zip(b, action)):
                sl = bf.counts[:, :, uf]
                bar = sl / sl.sum(axis=0, keepdims=True)
                w_b = 1.0 / sl.sum(axis=0, keepdims=True) - 1.0 / sl
                gain_by_state = -np.sum(bar * w_b, axis=0)
                b_nov += float(previous.marginals[f] @ gain_by_state)

    comps = EfeComponents(risk=risk, ambiguity=ambiguity, a_novelty=a_nov, b_novelty=b_nov)
    return comps.total, comps


@dataclass
class StepDiagnostics:
    vfe: float
    components: EfeComponents | None = None


class ActiveInferenceEngine:
    """One agent's perception-action-learning loop over a single run.

    Owns the mutable Dirichlet counts; never share an instance between
    concurrent workers.
    """

    def __init__(self, model: AgentModel):
        self.model = model
        self.belief = BeliefState.from_marginals(*(d.probs for d in model.d))

    def reset_beliefs(self) -> None:
        """Reset state beliefs to the initial prior (start of an MI phase)."""
        self.belief = BeliefState.from_marginals(*(d.probs for d in self.model.d))

    def act(self, rng: np.random.Generator) -> tuple[tuple[int, ...], PlanInfo]:
        dist, info = plan(self.belief, self.model)
        action = select_action(dist, rng, self.model.n_actions_per_factor)
        return action, info

    def integrate(self, action: tuple[int, ...], feedback: int | None) -> StepDiagnostics:
        """Advance the belief through the taken action and observed feedback.

        Learning (count accumulation) happens only when feedback is
        present; the previous posterior pairs with the new one for the
        transition update.
        """
        previous = self.belief
        predicted = predict_states(previous, action, self.model.b)
        posterior, vfe = infer_states(
            predicted, feedback, self.model.a, method=self.model.expected_log_method
        )
        if feedback is not None:
            self.model.a = update_a(self.model.a, feedback, posterior.joint, lr=self.model.lr_a)
            self.model.b = update_b(self.model.b, action, posterior, previous, lr=self.model.lr_b)
        self.belief = posterior
        return StepDiagnostics(vfe=vfe)
