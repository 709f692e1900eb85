"""Experiment configuration, execution, metrics and persistence.

Reproduces the three training studies: familiar agents (informed action
priors, few trials), naive agents (no lateralization prior, long
training) and the prior-strength grid sweep. Runs are embarrassingly
parallel; every run's randomness derives only from (master seed, cell,
agent), so results are byte-identical regardless of worker count.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import ActiveInferenceEngine
from .environment import TrialLog, TrialProtocol, run_session
from .errors import ConfigError
from .models import AgentModel, PriorConfig, ProcessModel

TRIALS_COLUMNS = (
    "experiment",
    "cell_i",
    "cell_a",
    "agent",
    "trial",
    "mean_intensity_idx",
    "mean_orientation_idx",
    "mean_noiseless_asi",
    "mean_feedback",
    "mean_vfe",
    "mean_G_risk",
    "mean_G_ambiguity",
    "mean_G_novelty",
)

STEPS_COLUMNS = (
    "experiment",
    "cell_i",
    "cell_a",
    "agent",
    "trial",
    "t",
    "phase",
    "intensity_idx",
    "orientation_idx",
    "action_i",
    "action_a",
    "feedback",
    "l_erd",
    "noiseless_asi",
    "vfe",
    "G_risk",
    "G_ambiguity",
    "G_novelty",
)

METRICS = ("asymmetry", "feedback", "occupancy")


@dataclass
class ExperimentConfig:
    """Effective settings for one experiment; defaults materialize here."""

    # process
    sigma_proc: float = 1.5
    p_effect: float = 0.99
    p_decay: float = 0.1
    epsilon: float = 0.01
    feedback_polarity: str = "right"
    # agent
    b_pre_intensity: float = 1.0
    b_pre_orientation: float = 1.0
    c_a: float = 1.0
    s_a: float = 100.0
    sigma_model: float = 0.5
    c_b: float = 1.0
    s_b: float = 1.0
    horizon: int = 2
    gamma: float = 32.0
    preference_scale: float = 2.0
    novelty_a: bool = True
    novelty_b: bool = True
    lr_a: float = 1.0
    lr_b: float = 1.0
    prune_threshold: float = 1.0 / 16.0
    prior_mean_mode: str = "product"
    expected_log_method: str = "digamma"
    # protocol
    t_rest: int = 40
    t_mi: int = 40
    n_trials: int = 10
    # experiment
    name: str = "custom"
    n_agents: int = 10
    master_seed: int = 12345
    jobs: int = 1
    record_steps: bool = False
    out_dir: str = "out"
    grid_min: float = 0.0
    grid_max: float = 2.0
    grid_points: int = 21
    grid_trials: int = 40
    grid_horizon: int = 1
    before_window: int = 5
    after_window: int = 5
    metric: str = "asymmetry"

    SECTIONS = {
        "process": ("sigma_proc", "p_effect", "p_decay", "epsilon", "feedback_polarity"),
        "agent": (
            "b_pre_intensity",
            "b_pre_orientation",
            "c_a",
            "s_a",
            "sigma_model",
            "c_b",
            "s_b",
            "horizon",
            "gamma",
            "preference_scale",
            "novelty_a",
            "novelty_b",
            "lr_a",
            "lr_b",
            "prune_threshold",
            "prior_mean_mode",
            "expected_log_method",
        ),
        "protocol": ("t_rest", "t_mi", "n_trials"),
        "experiment": (
            "name",
            "n_agents",
            "master_seed",
            "jobs",
            "record_steps",
            "out_dir",
            "grid_min",
            "grid_max",
            "grid_points",
            "grid_trials",
            "grid_horizon",
            "before_window",
            "after_window",
            "metric",
        ),
    }

    def __post_init__(self):
        for name in ("p_effect", "p_decay", "epsilon"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.n_agents < 1 or self.n_trials < 1 or self.grid_trials < 1:
            raise ConfigError("n_agents and trial counts must be >= 1")
        if self.grid_points < 1:
            raise ConfigError("grid resolution must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.before_window < 1 or self.after_window < 1:
            raise ConfigError("metric windows must be >= 1")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        if self.sigma_proc <= 0:
            raise ConfigError("sigma_proc must be > 0")

    @classmethod
    def from_sections(cls, sections: dict) -> "ExperimentConfig":
        """Build from a {section: {key: value}} mapping; unknown keys are errors."""
        known = {s: set(keys) for s, keys in cls.SECTIONS.items()}
        kwargs = {}
        for section, body in sections.items():
            if section not in known:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"config section {section!r} must be a table")
            for key, value in body.items():
                if key not in known[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        """Load a TOML or JSON config document (picked by extension)."""
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".json":
            sections = json.loads(text)
        else:
            try:
                import tomllib as toml_mod  # py >= 3.11
            except ModuleNotFoundError:
                import tomli as toml_mod
            sections = toml_mod.loads(text)
        if not isinstance(sections, dict):
            raise ConfigError("config document must be a table of sections")
        return cls.from_sections(sections)

    def to_sections(self) -> dict:
        """Full effective config as {section: {key: value}}."""
        return {
            section: {key: getattr(self, key) for key in keys}
            for section, keys in self.SECTIONS.items()
        }

    def overridden(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TrialAggregate:
    """Per-trial means over the imagery steps."""

    trial: int
    mean_intensity_idx: float
    mean_orientation_idx: float
    mean_noiseless_asi: float  # polarity-corrected: positive = trained direction
    mean_feedback: float
    mean_vfe: float
    mean_risk: float
    mean_ambiguity: float
    mean_novelty: float
    target_occupancy: float


@dataclass
class RunRecord:
    """One agent's full training run."""

    experiment: str
    cell_index: int
    cell_i: float
    cell_a: float
    agent: int
    seed: int
    trials: list[TrialAggregate]
    steps: list[dict] | None = None
    a_final: np.ndarray | None = None
    b_final: tuple | None = None


@dataclass
class RunFailure:
    cell_index: int
    cell_i: float
    cell_a: float
    agent: int
    seed: int
    message: str


@dataclass
class GridResult:
    axis_i: np.ndarray
    axis_a: np.ndarray
    before: np.ndarray  # [len(axis_i), len(axis_a)]
    after: np.ndarray
    records: list[RunRecord]
    failures: list[RunFailure]


_MASK64 = (1 << 64) - 1
_AGENT_BITS = 20


def _splitmix64(z: int) -> int:
    """One splitmix64 scrambling round (a 64-bit bijection)."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def seed_for(master_seed: int, cell_index: int, agent_index: int) -> int:
    """Derive a run seed: splitmix64(master) XOR (cell << 20 | agent).

    splitmix64 is a bijection, so distinct masters scramble every seed;
    the XOR mask is injective in (cell, agent) for agent < 2^20 and
    cell < 2^44, which makes the derivation provably collision-free.
    """
    if not 0 <= agent_index < (1 << _AGENT_BITS):
        raise ConfigError("agent index out of the seeding range")
    if not 0 <= cell_index < (1 << (64 - _AGENT_BITS)):
        raise ConfigError("cell index out of the seeding range")
    return _splitmix64(master_seed & _MASK64) ^ ((cell_index << _AGENT_BITS) | agent_index)


def build_process(cfg: ExperimentConfig) -> ProcessModel:
    return ProcessModel.build(
        sigma_proc=cfg.sigma_proc,
        p_effect=cfg.p_effect,
        p_decay=cfg.p_decay,
        epsilon=cfg.epsilon,
        feedback_polarity=cfg.feedback_polarity,
    )


def build_agent(
    cfg: ExperimentConfig,
    process: ProcessModel,
    b_pre: tuple[float, float],
    horizon: int,
) -> AgentModel:
    prior = PriorConfig(
        c_a=cfg.c_a,
        s_a=cfg.s_a,
        sigma_model=cfg.sigma_model,
        c_b=cfg.c_b,
        s_b=cfg.s_b,
        b_pre_intensity=b_pre[0],
        b_pre_orientation=b_pre[1],
        prior_mean_mode=cfg.prior_mean_mode,
    )
    agent = AgentModel.build(
        process,
        prior,
        preference_scale=cfg.preference_scale,
        horizon=horizon,
        gamma=cfg.gamma,
        lr_a=cfg.lr_a,
        lr_b=cfg.lr_b,
        novelty_a=cfg.novelty_a,
        novelty_b=cfg.novelty_b,
        prune_threshold=cfg.prune_threshold,
    )
    agent.expected_log_method = cfg.expected_log_method
    return agent


def _polarity_sign(cfg: ExperimentConfig) -> float:
    return -1.0 if cfg.feedback_polarity == "right" else 1.0


def _aggregate_trial(log: TrialLog, sign: float, target: tuple[int, int]) -> TrialAggregate:
    mi = log.mi_steps()
    if not mi:
        nan = float("nan")
        return TrialAggregate(log.trial, nan, nan, nan, nan, nan, nan, nan, nan, nan)
    mean = lambda xs: float(np.mean(xs))
    return TrialAggregate(
        trial=log.trial,
        mean_intensity_idx=mean([s.state.intensity for s in mi]),
        mean_orientation_idx=mean([s.state.orientation for s in mi]),
        mean_noiseless_asi=sign * mean([s.outcome.noiseless_asi for s in mi]),
        mean_feedback=mean([s.outcome.feedback for s in mi]),
        mean_vfe=mean([s.vfe for s in mi]),
        mean_risk=mean([s.risk for s in mi]),
        mean_ambiguity=mean([s.ambiguity for s in mi]),
        mean_novelty=mean([s.a_novelty + s.b_novelty for s in mi]),
        target_occupancy=mean([float(s.state.as_tuple() == target) for s in mi]),
    )


def _step_rows(logs: list[TrialLog], base: dict, sign: float) -> list[dict]:
    rows = []
    for log in logs:
        for s in log.steps:
            rows.append(
                {
                    **base,
                    "trial": log.trial,
                    "t": s.t,
                    "phase": s.phase,
                    "intensity_idx": s.state.intensity,
                    "orientation_idx": s.state.orientation,
                    "action_i": -1 if s.action is None else s.action[0],
                    "action_a": -1 if s.action is None else s.action[1],
                    "feedback": -1 if s.outcome.feedback is None else s.outcome.feedback,
                    "l_erd": s.outcome.l_erd,
                    "noiseless_asi": sign * s.outcome.noiseless_asi,
                    "vfe": s.vfe,
                    "G_risk": s.risk,
                    "G_ambiguity": s.ambiguity,
                    "G_novelty": s.a_novelty + s.b_novelty,
                }
            )
    return rows


def run_single(
    cfg: ExperimentConfig,
    cell_index: int,
    b_pre: tuple[float, float],
    agent_index: int,
    n_trials: int,
    horizon: int,
    process: ProcessModel | None = None,
) -> RunRecord:
    """Execute one (environment, agent) pair deterministically from its seed."""
    seed = seed_for(cfg.master_seed, cell_index, agent_index)
    rng = np.random.default_rng(seed)
    process = process if process is not None else build_process(cfg)
    agent = build_agent(cfg, process, b_pre, horizon)
    engine = ActiveInferenceEngine(agent)
    protocol = TrialProtocol(t_rest=cfg.t_rest, t_mi=cfg.t_mi, n_trials=n_trials)
    logs = run_session(engine, process, protocol, rng)
    sign = _polarity_sign(cfg)
    target = (process.space.n_intensity - 1, process.space.n_orientation - 1)
    record = RunRecord(
        experiment=cfg.name,
        cell_index=cell_index,
        cell_i=b_pre[0],
        cell_a=b_pre[1],
        agent=agent_index,
        seed=seed,
        trials=[_aggregate_trial(log, sign, target) for log in logs],
        a_final=agent.a.counts,
        b_final=tuple(bf.counts for bf in agent.b),
    )
    if cfg.record_steps:
        base = {
            "experiment": cfg.name,
            "cell_i": b_pre[0],
            "cell_a": b_pre[1],
            "agent": agent_index,
        }
        record.steps = _step_rows(logs, base, sign)
    return record


def _agent_task(args) -> tuple[list[RunRecord], list[RunFailure]]:
    cfg, cell_index, b_pre, agent_index, n_trials, horizon = args
    try:
        return [run_single(cfg, cell_index, b_pre, agent_index, n_trials, horizon)], []
    except Exception as exc:  # noqa: BLE001 - a failed run must not abort the sweep
        seed = seed_for(cfg.master_seed, cell_index, agent_index)
        return [], [RunFailure(cell_index, b_pre[0], b_pre[1], agent_index, seed, repr(exc))]


def _cell_task(args) -> tuple[list[RunRecord], list[RunFailure]]:
    """Run a whole grid cell; the process model is built once and shared."""
    cfg, cell_index, b_pre, n_trials, horizon = args
    records, failures = [], []
    try:
        process = build_process(cfg)
    except Exception as exc:  # noqa: BLE001
        for agent_index in range(cfg.n_agents):
            seed = seed_for(cfg.master_seed, cell_index, agent_index)
            failures.append(RunFailure(cell_index, b_pre[0], b_pre[1], agent_index, seed, repr(exc)))
        return records, failures
    for agent_index in range(cfg.n_agents):
        try:
            records.append(run_single(cfg, cell_index, b_pre, agent_index, n_trials, horizon, process))
        except Exception as exc:  # noqa: BLE001
            seed = seed_for(cfg.master_seed, cell_index, agent_index)
            failures.append(RunFailure(cell_index, b_pre[0], b_pre[1], agent_index, seed, repr(exc)))
    return records, failures


def _execute(tasks: list, worker, jobs: int) -> tuple[list[RunRecord], list[RunFailure]]:
    records: list[RunRecord] = []
    failures: list[RunFailure] = []
    if jobs <= 1:
        results = [worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(worker, tasks))
    for recs, fails in results:
        records.extend(recs)
        failures.extend(fails)
    records.sort(key=lambda r: (r.experiment, r.cell_index, r.agent))
    failures.sort(key=lambda f: (f.cell_index, f.agent))
    return records, failures


def run_simulate(cfg: ExperimentConfig) -> tuple[list[RunRecord], list[RunFailure]]:
    """All agents of a single configuration cell."""
    b_pre = (cfg.b_pre_intensity, cfg.b_pre_orientation)
    tasks = [(cfg, 0, b_pre, agent, cfg.n_trials, cfg.horizon) for agent in range(cfg.n_agents)]
    return _execute(tasks, _agent_task, cfg.jobs)


def run_experiment_familiar(**overrides) -> tuple[list[RunRecord], list[RunFailure], ExperimentConfig]:
    """Agents already skilled at imagery: informed priors, noisy feedback."""
    cfg = ExperimentConfig(
        name="familiar",
        n_agents=10,
        n_trials=10,
        b_pre_intensity=1.0,
        b_pre_orientation=1.0,
        sigma_proc=1.5,
    ).overridden(**overrides)
    records, failures = run_simulate(cfg)
    return records, failures, cfg


def run_experiment_naive(**overrides) -> tuple[list[RunRecord], list[RunFailure], ExperimentConfig]:
    """Agents without lateralization priors: long training, reliable feedback."""
    cfg = ExperimentConfig(
        name="naive",
        n_agents=10,
        n_trials=100,
        b_pre_intensity=0.1,
        b_pre_orientation=0.0,
        sigma_proc=0.5,
    ).overridden(**overrides)
    records, failures = run_simulate(cfg)
    return records, failures, cfg


def performance_metric(record: RunRecord, window: tuple[int, int], metric: str = "asymmetry") -> float:
    """Mean training-direction performance over a window of trials.

    window = (start, count) indexes whole trials; the value lies in
    [-1, 1] for every metric choice.
    """
    start, count = window
    if start < 0 or count < 1 or start + count > len(record.trials):
        raise ConfigError("metric window outside the run's trials")
    trials = record.trials[start : start + count]
    if metric == "asymmetry":
        return float(np.mean([t.mean_noiseless_asi for t in trials]))
    if metric == "feedback":
        half_span = (5 - 1) / 2.0
        return float(np.mean([(t.mean_feedback - half_span) / half_span for t in trials]))
    if metric == "occupancy":
        return float(np.mean([2.0 * t.target_occupancy - 1.0 for t in trials]))
    raise ConfigError(f"unknown metric {metric!r}")


def before_after(record: RunRecord, cfg: ExperimentConfig, n_trials: int) -> tuple[float, float]:
    if cfg.before_window + cfg.after_window > n_trials:
        raise ConfigError("before/after windows overlap; reduce them or add trials")
    before = performance_metric(record, (0, cfg.before_window), cfg.metric)
    after = performance_metric(record, (n_trials - cfg.after_window, cfg.after_window), cfg.metric)
    return before, after


def run_grid(cfg: ExperimentConfig) -> GridResult:
    """Sweep the (b_pre intensity, b_pre orientation) plane cell by cell."""
    axis = np.linspace(cfg.grid_min, cfg.grid_max, cfg.grid_points)
    grid_cfg = cfg if cfg.name != "custom" else cfg.overridden(name="grid")
    tasks = []
    for ci, bi in enumerate(axis):
        for ca, ba in enumerate(axis):
            cell_index = ci * cfg.grid_points + ca
            tasks.append((grid_cfg, cell_index, (float(bi), float(ba)), cfg.grid_trials, cfg.grid_horizon))
    records, failures = _execute(tasks, _cell_task, cfg.jobs)

    n = cfg.grid_points
    before = np.full((n, n), np.nan)
    after = np.full((n, n), np.nan)
    by_cell: dict[int, list[RunRecord]] = {}
    for rec in records:
        by_cell.setdefault(rec.cell_index, []).append(rec)
    for cell_index, recs in by_cell.items():
        ci, ca = divmod(cell_index, n)
        pairs = [before_after(r, cfg, cfg.grid_trials) for r in recs]
        before[ci, ca] = float(np.mean([p[0] for p in pairs]))
        after[ci, ca] = float(np.mean([p[1] for p in pairs]))
    return GridResult(axis_i=axis, axis_a=axis, before=before, after=after, records=records, failures=failures)


def _fmt(value) -> str:
    """CSV cell formatting; floats carry 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def _write_csv(path: Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    try:
        with path.open("w", newline="") as fh:
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def _trial_rows(records: list[RunRecord]) -> list[dict]:
    rows = []
    for rec in records:
        for t in rec.trials:
            rows.append(
                {
                    "experiment": rec.experiment,
                    "cell_i": rec.cell_i,
                    "cell_a": rec.cell_a,
                    "agent": rec.agent,
                    "trial": t.trial,
                    "mean_intensity_idx": t.mean_intensity_idx,
                    "mean_orientation_idx": t.mean_orientation_idx,
                    "mean_noiseless_asi": t.mean_noiseless_asi,
                    "mean_feedback": t.mean_feedback,
                    "mean_vfe": t.mean_vfe,
                    "mean_G_risk": t.mean_risk,
                    "mean_G_ambiguity": t.mean_ambiguity,
                    "mean_G_novelty": t.mean_novelty,
                }
            )
    return rows


def _write_matrix(path: Path, matrix: np.ndarray, axis_i: np.ndarray, axis_a: np.ndarray) -> None:
    """Matrix CSV: first row is the orientation axis, first column the intensity axis."""
    try:
        with path.open("w", newline="") as fh:
            fh.write("b_pre_i/b_pre_a," + ",".join(_fmt(float(v)) for v in axis_a) + "\n")
            for i, bi in enumerate(axis_i):
                fh.write(_fmt(float(bi)) + "," + ",".join(_fmt(float(v)) for v in matrix[i]) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def export_records(
    records: list[RunRecord],
    out_dir: str | Path,
    cfg: ExperimentConfig,
    command: str,
    failures: list[RunFailure] | None = None,
    grid: GridResult | None = None,
    wall_time_s: float = 0.0,
) -> dict:
    """Write trials.csv, optional steps.csv and grid matrices, and summary.json."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc

    _write_csv(out / "trials.csv", TRIALS_COLUMNS, _trial_rows(records))

    step_rows = [row for rec in records if rec.steps for row in rec.steps]
    if step_rows:
        _write_csv(out / "steps.csv", STEPS_COLUMNS, step_rows)

    if grid is not None:
        _write_matrix(out / "grid_before.csv", grid.before, grid.axis_i, grid.axis_a)
        _write_matrix(out / "grid_after.csv", grid.after, grid.axis_i, grid.axis_a)

    failures = failures or []
    finals = [t.mean_noiseless_asi for rec in records for t in rec.trials[-1:]]
    summary = {
        "command": command,
        "config": cfg.to_sections(),
        "n_runs": len(records),
        "n_trials_total": sum(len(r.trials) for r in records),
        "n_failures": len(failures),
        "failures": [dataclasses.asdict(f) for f in failures],
        "wall_time_s": wall_time_s,
        "mean_final_trial_asi": float(np.mean(finals)) if finals else None,
    }
    try:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {out / 'summary.json'}: {exc}") from exc
    return summary


@dataclass
class ReplayResult:
    identical: bool
    compared: list[str]
    mismatched: list[str]


def replay(summary_path: str | Path, out_dir: str | Path | None = None) -> ReplayResult:
    """Re-run the experiment echoed in a summary and diff the data files."""
    summary_path = Path(summary_path)
    summary = json.loads(summary_path.read_text())
    cfg = ExperimentConfig.from_sections(summary["config"])
    original_dir = summary_path.parent
    out = Path(out_dir) if out_dir is not None else original_dir / "replay"
    cfg = cfg.overridden(out_dir=str(out))

    command = summary.get("command", "simulate")
    start = time.perf_counter()
    if command == "grid":
        grid = run_grid(cfg)
        export_records(grid.records, out, cfg, command, grid.failures, grid, time.perf_counter() - start)
        names = ["trials.csv", "grid_before.csv", "grid_after.csv"]
    else:
        records, failures = run_simulate(cfg)
        export_records(records, out, cfg, command, failures, None, time.perf_counter() - start)
        names = ["trials.csv"]
    if (original_dir / "steps.csv").exists():
        names.append("steps.csv")

    compared, mismatched = [], []
    for name in names:
        compared.append(name)
        a, b = original_dir / name, out / name
        if not a.exists() or not b.exists() or a.read_bytes() != b.read_bytes():
            mismatched.append(name)
    return ReplayResult(identical=not mismatched, compared=compared, mismatched=mismatched)
