"""Scenario configs, batch runner, baseline comparison and result files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .estimator import NoiseSpec, init_estimator
from .model import MLP_HIDDEN, QUAD_TRUE_FINAL, MlpModel, QuadrotorModel
from .plant import GoalSchedule, GroundTruthRun, generate_truth, observe_run, random_goal
from .predictor import MemoryBuffer, predict_step

log = logging.getLogger(__name__)

MODEL_KINDS = ("quadrotor", "mlp-2121", "mlp-3889", "mlp-5793")
HARDWARE_GOAL = (2.0, 0.0, 0.6, 0, 0, 0, 0, 0, 0, 1.0, 0, 0, 0)
STEP_COLUMNS = ("t", "t_hat", "loss", "residual_norm", "solver_iters", "solver_status",
                "wall_ms", "updated")
# keys that do not influence results and are left out of the config hash
NON_RESULT_KEYS = ("out", "record_theta", "name", "description")


@dataclass
class ScenarioConfig:
    """One experiment case. ``memory`` is a step count or ``"inf"``."""

    name: str = "nominal"
    description: str = ""
    model: str = "quadrotor"
    cost: str = "standard"
    T: int = 100
    dt: float = 0.15
    noise: str = "none"
    sigma: float = 0.0
    memory: int | str = 10
    seeds: int | list = 20
    num_switches: int = 0
    delta: int | None = None
    schedule: list | None = None  # explicit [[t, goal13], ...]; overrides random goals
    start: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    goal_box: float = 4.0
    spread: float = 0.25
    p_diag: list | None = None
    r_diag: list | None = None
    max_iter: int = 100
    tol: float = 1e-6
    out: str | None = None
    record_theta: bool = False

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}")
        if self.cost not in ("standard", "hardware"):
            raise ValueError("cost must be 'standard' or 'hardware'")
        if self.T < 2:
            raise ValueError("T must be at least 2")
        NoiseSpec(self.noise, self.sigma)
        if self.noise == "none":
            self.sigma = 0.0
        if isinstance(self.memory, str):
            if self.memory.lower() not in ("inf", "infinite"):
                self.memory = int(self.memory)
            else:
                self.memory = "inf"
        elif isinstance(self.memory, float) and math.isinf(self.memory):
            self.memory = "inf"
        if self.memory != "inf" and int(self.memory) < 1:
            raise ValueError("memory must be >= 1 or 'inf'")
        if self.num_switches:
            if self.delta is None or self.delta < 1:
                raise ValueError("switching scenarios need a positive delta")
            if self.delta * self.num_switches >= self.T:
                raise ValueError("delta * num_switches must be below T")
        if self.schedule is not None:
            GoalSchedule([s[0] for s in self.schedule], [s[1] for s in self.schedule]).validate(self.T)

    @property
    def memory_steps(self) -> int | None:
        return None if self.memory == "inf" else int(self.memory)

    @property
    def seed_list(self) -> list:
        return list(range(self.seeds)) if isinstance(self.seeds, int) else [int(s) for s in self.seeds]

    @property
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.noise, self.sigma)

    @property
    def switch_times(self) -> list:
        if self.schedule is not None:
            return [int(s[0]) for s in self.schedule]
        return [k * self.delta for k in range(self.num_switches + 1)] if self.num_switches else [0]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in NON_RESULT_KEYS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


SCENARIOS = {}


def _register(cfg: ScenarioConfig):
    SCENARIOS[cfg.name] = cfg


for _kind in ("gaussian", "uniform"):
    for _sigma in (0.1, 0.5, 1.0):
        _register(ScenarioConfig(name=f"noise-{_kind}-{_sigma:g}", noise=_kind, sigma=_sigma,
                                 memory="inf", description=f"fixed goal, {_kind} noise sigma={_sigma:g}"))
_register(ScenarioConfig(name="noise-none", memory="inf", description="fixed goal, exact observations"))
_register(ScenarioConfig(name="nominal", memory=10, description="fixed goal, memory 10, no noise"))
_register(ScenarioConfig(name="two-switch", num_switches=2, delta=30,
                         description="goal switches at t=30 and t=60"))
_register(ScenarioConfig(name="three-switch", num_switches=3, delta=25,
                         description="goal switches at t=25, 50, 75"))
_register(ScenarioConfig(name="delta-20", num_switches=2, delta=20,
                         description="two switches 20 steps apart"))
_register(ScenarioConfig(name="delta-30", num_switches=2, delta=30,
                         description="two switches 30 steps apart"))
_register(ScenarioConfig(name="hardware", cost="hardware", start=[0.0, 0.0, 0.6],
                         schedule=[[0, list(HARDWARE_GOAL)]], memory="inf",
                         description="altitude hold and planar attraction cost, goal at (2, 0, 0.6)"))
for _size in MLP_HIDDEN:
    _register(ScenarioConfig(name=f"mlp-{_size}", model=f"mlp-{_size}", memory="inf",
                             description=f"MLP dynamics model with {_size} weights"))


def get_scenario(name: str) -> ScenarioConfig:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}")
    return replace(SCENARIOS[name])


def load_config(source) -> ScenarioConfig:
    """A scenario name from the library or a path to a JSON config."""
    path = Path(source)
    if path.suffix == ".json" or path.exists():
        return ScenarioConfig.from_json(path)
    return get_scenario(str(source))


def prediction_loss(goal_hat, goal_true) -> float:
    goal_hat = np.asarray(goal_hat, dtype=float)
    goal_true = np.asarray(goal_true, dtype=float)
    if goal_hat.shape != goal_true.shape:
        raise ValueError("goal estimate and truth differ in shape")
    return float(np.sum((goal_hat - goal_true) ** 2))


@dataclass
class RunRecord:
    seed: int
    config_hash: str
    rows: list  # dicts keyed by STEP_COLUMNS (+ theta_i)
    stream_hash: str
    error: str | None = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.rows])

    @property
    def wall_ms(self) -> np.ndarray:
        return np.array([r["wall_ms"] for r in self.rows])

    def summary(self) -> dict:
        if self.error is not None or not self.rows:
            return dict(seed=self.seed, error=self.error)
        loss = self.losses
        return dict(seed=self.seed, final_loss=float(loss[-1]),
                    final20_mean=float(loss[-20:].mean()), mean_loss=float(loss.mean()),
                    finite=bool(np.all(np.isfinite(loss))),
                    skipped_updates=int(sum(not r["updated"] for r in self.rows)))

    def to_csv(self, include_wall: bool = False) -> str:
        """RFC-4180 CSV with a header row; the config hash is a column.

        Wall time is excluded by default so the file is byte-stable per
        (config, seed); it goes to a separate timing file.
        """
        buf = io.StringIO()
        extra = sorted((k for k in (self.rows[0] if self.rows else {}) if k.startswith("theta_")),
                       key=lambda k: int(k.split("_")[1]))
        cols = ["config_hash", "seed"] + [c for c in STEP_COLUMNS if include_wall or c != "wall_ms"] + extra
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\r\n", extrasaction="ignore")
        w.writeheader()
        for r in self.rows:
            w.writerow({"config_hash": self.config_hash, "seed": self.seed,
                        **{k: repr(v) if isinstance(v, float) else v for k, v in r.items()}})
        return buf.getvalue()


def _seed_streams(seed: int):
    goal_ss, noise_ss, init_ss, weight_ss = np.random.SeedSequence(seed).spawn(4)
    return (np.random.default_rng(goal_ss), np.random.default_rng(noise_ss),
            np.random.default_rng(init_ss), np.random.default_rng(weight_ss))


def build_truth(config: ScenarioConfig, seed: int):
    """Plant model, true parameters and ground-truth run for one seed (noise-free)."""
    goal_rng, _, _, _ = _seed_streams(seed)
    plant = QuadrotorModel(dt=config.dt, cost=config.cost)
    if config.schedule is not None:
        schedule = GoalSchedule([s[0] for s in config.schedule], [s[1] for s in config.schedule])
    else:
        times = config.switch_times
        schedule = GoalSchedule(times, [random_goal(goal_rng, config.goal_box) for _ in times])
    x0 = QuadrotorModel.rest_state(config.start)
    theta_star = plant.true_theta(schedule.goals[0])
    run = generate_truth(plant, theta_star, schedule, config.T, x0)
    run.seed = seed
    return plant, theta_star, run


def stream_hash(observations) -> str:
    return hashlib.sha256(np.ascontiguousarray(observations, dtype=np.float64).tobytes()).hexdigest()[:16]


def _predictor_model(config: ScenarioConfig, plant: QuadrotorModel):
    if config.model == "quadrotor":
        return plant
    return MlpModel.from_size(int(config.model.split("-")[1]))


def run_seed(config: ScenarioConfig, seed: int, truth=None) -> RunRecord:
    """Generate truth, observe it and stream the observations through the predictor."""
    chash = config.config_hash()
    plant, theta_star, run = truth if truth is not None else build_truth(config, seed)
    _, noise_rng, init_rng, weight_rng = _seed_streams(seed)
    obs = observe_run(run, config.noise_spec, noise_rng)
    model = _predictor_model(config, plant)
    layout = model.layout
    if config.model == "quadrotor":
        state = init_estimator(layout, theta_star, obs[0], init_rng, config.noise_spec,
                               spread=config.spread, p_diag=config.p_diag, r_diag=config.r_diag)
    else:
        weights = model.random_weights(weight_rng)
        nominal = layout.pack(weights, [], QUAD_TRUE_FINAL, obs[0])
        state = init_estimator(layout, nominal, obs[0], init_rng, config.noise_spec,
                               spread=config.spread, mlp_weights=weights,
                               p_diag=config.p_diag, r_diag=config.r_diag)
    goals = run.goals()
    buffer = MemoryBuffer(config.memory_steps)
    buffer.push(obs[0])
    traj = None
    rows = []
    opts = dict(max_iter=config.max_iter, tol=config.tol)
    for t in range(1, config.T + 1):
        out, state, traj = predict_step(model, buffer, state, obs[t], config.T, traj, opts)
        row = dict(t=t, t_hat=out.t_hat, loss=prediction_loss(out.goal, goals[t]),
                   residual_norm=out.residual_norm, solver_iters=out.solver_iters,
                   solver_status=out.solver_status, wall_ms=out.wall_ms, updated=int(out.updated))
        if config.record_theta:
            row.update({f"theta_{i}": float(v) for i, v in enumerate(out.theta)})
        rows.append(row)
        if not np.isfinite(row["loss"]):
            break
    return RunRecord(seed=seed, config_hash=chash, rows=rows, stream_hash=stream_hash(obs))


def run_scenario(config: ScenarioConfig, seeds=None, write: bool = True) -> list:
    """All seeds of a scenario; a failing seed is recorded and the batch continues."""
    records = []
    for seed in (seeds if seeds is not None else config.seed_list):
        try:
            rec = run_seed(config, seed)
        except Exception as exc:  # noqa: BLE001 - surfaced in the record and summary
            log.error("seed %d failed: %s", seed, exc)
            rec = RunRecord(seed=seed, config_hash=config.config_hash(), rows=[], stream_hash="",
                            error=f"{type(exc).__name__}: {exc}")
        records.append(rec)
    if write and config.out:
        write_outputs(config, records)
    return records


def aggregate(records) -> dict:
    """Per-step mean and population std of the loss across records."""
    good = [r for r in records if r.error is None and r.rows]
    if not good:
        raise ValueError("no successful records to aggregate")
    n = min(len(r.rows) for r in good)
    L = np.array([r.losses[:n] for r in good])
    return dict(t=np.arange(1, n + 1), mean=L.mean(axis=0), std=L.std(axis=0),
                final_window_mean=float(L[:, -20:].mean()), n_records=len(good))


def post_switch_windows(switch_times, T: int, delta=None) -> list:
    """Steps scored after each switch: the last min(20, delta - 1) before the next switch or T."""
    windows = []
    times = list(switch_times)
    for k, s in enumerate(times[1:], start=1):
        end = times[k + 1] if k + 1 < len(times) else T + 1
        gap = delta if delta is not None else end - s
        w = min(20, gap - 1, end - s)
        windows.append(range(end - w, end))
    return windows


def window_loss(record: RunRecord, windows) -> float:
    loss = {r["t"]: r["loss"] for r in record.rows}
    vals = [loss[t] for w in windows for t in w if t in loss]
    return float(np.mean(vals)) if vals else float("nan")


def compare_baseline(config: ScenarioConfig, seeds=None, write: bool = True) -> dict:
    """Finite memory against the full-history baseline on shared truth and noise."""
    finite_cfg = replace(config, memory=config.memory if config.memory != "inf" else 10)
    base_cfg = replace(config, memory="inf")
    windows = post_switch_windows(config.switch_times, config.T,
                                  config.delta if config.num_switches else None)
    per_seed = []
    finite_recs, base_recs = [], []
    for seed in (seeds if seeds is not None else config.seed_list):
        truth = build_truth(config, seed)
        a = run_seed(finite_cfg, seed, truth)
        b = run_seed(base_cfg, seed, truth)
        if a.stream_hash != b.stream_hash:
            raise AssertionError(f"seed {seed}: arms saw different observation streams")
        finite_recs.append(a)
        base_recs.append(b)
        la, lb = window_loss(a, windows), window_loss(b, windows)
        per_seed.append(dict(seed=seed, finite=la, baseline=lb, finite_wins=bool(la < lb),
                             stream_hash=a.stream_hash))
    fa = np.array([p["finite"] for p in per_seed])
    fb = np.array([p["baseline"] for p in per_seed])
    summary = dict(
        name=config.name, config_hash=config.config_hash(), delta=config.delta,
        memory=finite_cfg.memory, switch_times=config.switch_times,
        windows=[[w.start, w.stop - 1] for w in windows],
        win_fraction=float(np.mean([p["finite_wins"] for p in per_seed])) if per_seed else float("nan"),
        finite_mean=float(fa.mean()), baseline_mean=float(fb.mean()),
        ratio=float(fb.mean() / fa.mean()) if fa.mean() > 0 else float("inf"),
        assert_ordering=bool(windows), per_seed=per_seed)
    if write and config.out:
        out = Path(config.out)
        write_outputs(finite_cfg, finite_recs, out / "finite")
        write_outputs(base_cfg, base_recs, out / "baseline")
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def batch_summary(config: ScenarioConfig, records) -> dict:
    d = dict(name=config.name, config_hash=config.config_hash(), config=config.to_dict(),
             seeds=[r.summary() for r in records],
             failed=[r.seed for r in records if r.error is not None])
    try:
        agg = aggregate(records)
        d["final_window_mean"] = agg["final_window_mean"]
        d["median_final20"] = float(np.median([r.losses[-20:].mean() for r in records if r.error is None]))
    except ValueError:
        pass
    return d


def write_outputs(config: ScenarioConfig, records, out=None) -> Path:
    """One CSV per seed, an aggregate CSV and a JSON batch summary."""
    out = Path(out if out is not None else config.out)
    out.mkdir(parents=True, exist_ok=True)
    for r in records:
        if r.rows:
            (out / f"{config.name}_seed{r.seed}.csv").write_text(r.to_csv(), encoding="utf-8", newline="")
    timing = {str(r.seed): dict(mean_wall_ms=float(r.wall_ms.mean()), wall_ms=r.wall_ms.tolist())
              for r in records if r.rows}
    (out / f"{config.name}_timing.json").write_text(
        json.dumps(dict(config_hash=config.config_hash(), seeds=timing)) + "\n")
    try:
        agg = aggregate(records)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["config_hash", "t", "mean_loss", "std_loss"])
        for t, m, s in zip(agg["t"], agg["mean"], agg["std"]):
            w.writerow([config.config_hash(), int(t), repr(float(m)), repr(float(s))])
        (out / f"{config.name}_aggregate.csv").write_text(buf.getvalue(), encoding="utf-8", newline="")
    except ValueError:
        pass
    (out / f"{config.name}_summary.json").write_text(
        json.dumps(batch_summary(config, records), indent=2, default=float) + "\n")
    return out

