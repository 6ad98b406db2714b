"""Highway driving scenario, noisy frame generation, filter runs and RMS metrics.

The scenario is a straight multi-lane highway about a kilometer long.  The
ego vehicle drives the middle lane, two rigid four-corner vehicles change
lanes around it, a single-point pedestrian walks across the road, and static
landmarks line both shoulders.  All positions are in meters, headings in
radians.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import backend_opt, backend_std
from .errors import DynEKFError, MetricError
from .models import (
    NoiseModel,
    inverse_object_transform,
    measure,
    odometry_between,
    rot,
)
from .quadcost import (
    EgoPose,
    ObjectPose,
    StaticFeature,
    belief_deviation,
    belief_violation,
    wrap_angle,
)
from .state import FilterConfig, FrameData

# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class ScenarioConfig:
    duration: float = 60.0
    dt: float = 0.5
    ego_speed: float = 16.7
    lane_width: float = 3.5
    n_landmarks: int = 40
    road_length: float = 1000.0
    landmark_offset: tuple = (8.0, 15.0)
    pedestrian_speed: float = 1.4
    sensing_radius: float | None = None

    @property
    def steps(self) -> int:
        return round(self.duration / self.dt) + 1

    def validate(self) -> None:
        if not (self.duration >= 0 and self.dt > 0):
            raise ValueError("scenario needs duration >= 0 and dt > 0")
        if self.n_landmarks < 1:
            raise ValueError("scenario is empty: it needs at least one landmark")
        if self.sensing_radius is not None and not self.sensing_radius > 0:
            raise ValueError("sensing_radius must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown scenario options {sorted(unknown)}")
        d = dict(d)
        if "landmark_offset" in d:
            d["landmark_offset"] = tuple(d["landmark_offset"])
        return cls(**d)


@dataclass
class Agent:
    """A rigid moving object: feature offsets in its body frame and its poses."""

    name: str
    body: np.ndarray  # (n, 2)
    poses: np.ndarray  # (T, 3) body frame in the world

    def cloud(self, t: int) -> np.ndarray:
        p = self.poses[t]
        return self.body @ rot(p[2]).T + p[:2]

    def clouds(self) -> np.ndarray:
        return np.stack([self.cloud(t) for t in range(self.poses.shape[0])])


@dataclass
class Scenario:
    config: ScenarioConfig
    seed: int
    ego: np.ndarray  # (T, 3)
    agents: list
    landmarks: np.ndarray  # (L, 2)

    @property
    def steps(self) -> int:
        return self.ego.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps) * self.config.dt

    def visible(self, t: int, points) -> bool:
        r = self.config.sensing_radius
        if r is None:
            return True
        d = np.asarray(points).reshape(-1, 2) - self.ego[t, :2]
        return bool(np.all(np.hypot(d[:, 0], d[:, 1]) <= r))

    def first_seen(self, a: int) -> int | None:
        ag = self.agents[a]
        for t in range(self.steps):
            if self.visible(t, ag.cloud(t)):
                return t
        return None


def _lane_change(t, t0, t1, y0, y1):
    """Smooth (raised-cosine) lateral transition and its time derivative."""
    s = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)
    y = y0 + (y1 - y0) * 0.5 * (1 - np.cos(np.pi * s))
    inside = (t > t0) & (t < t1)
    dy = np.where(inside, (y1 - y0) * 0.5 * np.pi / (t1 - t0) * np.sin(np.pi * s), 0.0)
    return y, dy


def _drive(times, x0, speed, y, dy):
    poses = np.empty((times.size, 3))
    poses[:, 0] = x0 + speed * times
    poses[:, 1] = y
    poses[:, 2] = np.arctan2(dy, speed)
    return poses


def build_scenario(seed: int = 0, config: ScenarioConfig | None = None) -> Scenario:
    """Deterministic highway scenario; ``seed`` places the landmarks."""
    cfg = config or ScenarioConfig()
    rng = np.random.default_rng(seed)
    times = np.arange(cfg.steps) * cfg.dt
    lw = cfg.lane_width

    # ego: middle lane with one excursion to the left lane and back
    y, dy = _lane_change(times, 20.0, 26.0, 0.0, lw)
    y2, dy2 = _lane_change(times, 44.0, 50.0, 0.0, -lw)
    ego = _drive(times, 0.0, cfg.ego_speed, y + y2, dy + dy2)

    car = np.array([[2.25, 0.9], [2.25, -0.9], [-2.25, -0.9], [-2.25, 0.9]])
    # lead car: left lane to middle lane, then back
    y, dy = _lane_change(times, 10.0, 15.0, lw, 0.0)
    y2, dy2 = _lane_change(times, 35.0, 40.0, 0.0, lw)
    lead = _drive(times, 30.0, cfg.ego_speed + 0.8, y + y2, dy + dy2)
    # overtaking car: right lane to middle lane ahead of the ego
    y, dy = _lane_change(times, 18.0, 23.0, -lw, 0.0)
    fast = _drive(times, -20.0, cfg.ego_speed + 3.3, y, dy)
    # pedestrian crossing the road at constant velocity
    ped = np.empty((times.size, 3))
    ped[:, 0] = 420.0
    ped[:, 1] = -20.0 + cfg.pedestrian_speed * times
    ped[:, 2] = np.pi / 2
    agents = [
        Agent("lead_car", car.copy(), lead),
        Agent("fast_car", car.copy(), fast),
        Agent("pedestrian", np.zeros((1, 2)), ped),
    ]

    n = cfg.n_landmarks
    xs = np.sort(rng.uniform(0.0, cfg.road_length, n))
    side = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    ys = side * rng.uniform(cfg.landmark_offset[0], cfg.landmark_offset[1], n)
    landmarks = np.column_stack([xs, ys])
    return Scenario(cfg, seed, ego, agents, landmarks)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Per-step positions of every entity; NaN where not (yet) estimated."""

    ego: np.ndarray  # (T, 3)
    static: np.ndarray  # (T, L, 2)
    agent_features: list  # per agent (T, n, 2)
    agent_poses: list  # per agent (T, 3), relative to the first-seen cloud

    @property
    def steps(self) -> int:
        return self.ego.shape[0]


def ground_truth(scenario: Scenario) -> Trajectory:
    T = scenario.steps
    static = np.broadcast_to(scenario.landmarks, (T,) + scenario.landmarks.shape).copy()
    feats, poses = [], []
    for a, ag in enumerate(scenario.agents):
        clouds = ag.clouds()
        feats.append(clouds)
        xi = np.full((T, 3), np.nan)
        t0 = scenario.first_seen(a)
        if t0 is not None:
            for t in range(t0, T):
                xi[t] = inverse_object_transform(clouds[t0], clouds[t]).xi
        poses.append(xi)
    return Trajectory(scenario.ego.copy(), static, feats, poses)


# ---------------------------------------------------------------------------
# noisy frames


def _sqrt_psd(m) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def _streams(rng_seed):
    if isinstance(rng_seed, np.random.SeedSequence):
        # a fresh copy, so that spawning never depends on earlier calls
        ss = np.random.SeedSequence(rng_seed.entropy, spawn_key=rng_seed.spawn_key)
    else:
        ss = np.random.SeedSequence(rng_seed)
    prior_ss, frame_ss = ss.spawn(2)
    return np.random.default_rng(prior_ss), np.random.default_rng(frame_ss)


def sample_prior(scenario: Scenario, noise: NoiseModel, rng_seed, inject: bool = True):
    """Prior ``N(mu0, Sigma_w)`` with ``mu0`` drawn around the true start pose."""
    rng, _ = _streams(rng_seed)
    cov = noise.sigma_w.copy()
    mean = scenario.ego[0].copy()
    if inject:
        mean = mean + _sqrt_psd(cov) @ rng.standard_normal(3)
    return mean, cov


def simulate_frames(scenario: Scenario, noise: NoiseModel, rng_seed, inject: bool = True) -> list:
    """Noisy odometry and measurements for every step of ``scenario``.

    Odometry is the true pose increment plus ``N(0, Sigma_w)`` and each
    measurement ``h(x, f) + N(0, Sigma_v)``.  With ``inject=False`` the
    frames are exact.  The same seed gives the same underlying normal draws
    at every noise level.
    """
    _, rng = _streams(rng_seed)
    sw = _sqrt_psd(noise.sigma_w) if inject else np.zeros((3, 3))
    sv = _sqrt_psd(noise.sigma_v) if inject else np.zeros((2, 2))
    T = scenario.steps
    seen = set()
    frames = []
    for t in range(T):
        x = scenario.ego[t]
        static = {}
        for k, lm in enumerate(scenario.landmarks):
            if scenario.visible(t, lm):
                static[k] = measure(x, lm) + sv @ rng.standard_normal(2)
        objects, new = {}, set()
        for a, ag in enumerate(scenario.agents):
            cloud = ag.cloud(t)
            if not scenario.visible(t, cloud):
                continue
            z = np.array([measure(x, f) for f in cloud])
            objects[a] = z + rng.standard_normal(z.shape) @ sv.T
            if a not in seen:
                new.add(a)
                seen.add(a)
        odom = None
        if t + 1 < T:
            odom = odometry_between(x, scenario.ego[t + 1]) + sw @ rng.standard_normal(3)
        frames.append(FrameData(t, odom, static, objects, frozenset(new)))
    return frames


# ---------------------------------------------------------------------------
# running a filter


@dataclass
class FilterRun:
    backend: str
    estimate: Trajectory
    ego_cov: np.ndarray  # (T, 3, 3)
    step_times: np.ndarray  # (T,) seconds
    beliefs: list | None = None  # per-step estimate beliefs, when kept
    psd_violations: list = field(default_factory=list)


def _extract(scenario: Scenario, state, traj: Trajectory, t: int) -> None:
    b = state.estimate
    lay = b.layout
    traj.ego[t] = b.mean_of(EgoPose(t))
    for k in state.static_ids:
        traj.static[t, k] = b.mean_of(StaticFeature(k))
    for a, tr in state.objects.items():
        keys = state.cur_keys(a) if tr.current == t else state.ref_keys(a) if tr.first_seen == t else []
        if keys:
            traj.agent_features[a][t] = b.mean[lay.index(keys)].reshape(-1, 2)
        if ObjectPose(t, a) in lay:
            traj.agent_poses[a][t] = b.mean_of(ObjectPose(t, a))


def run_filter(
    scenario: Scenario,
    frames: list,
    prior,
    config: FilterConfig,
    backend: str = "std",
    keep_beliefs: bool = False,
    check_psd: bool = False,
) -> FilterRun:
    """Run one backend over ``frames`` from ``prior = (mean, cov)``."""
    T = len(frames)
    L = scenario.landmarks.shape[0]
    est = Trajectory(
        np.full((T, 3), np.nan),
        np.full((T, L, 2), np.nan),
        [np.full((T, ag.body.shape[0], 2), np.nan) for ag in scenario.agents],
        [np.full((T, 3), np.nan) for _ in scenario.agents],
    )
    ego_cov = np.full((T, 3, 3), np.nan)
    times = np.zeros(T)
    beliefs = [] if keep_beliefs else None
    violations = []
    if backend == "std":
        carrier = backend_std.init(prior[0], prior[1], config)
        step = backend_std.step
    elif backend == "opt":
        carrier = backend_opt.init(prior[0], prior[1], config)
        step = backend_opt.step
    else:
        raise ValueError(f"backend must be 'std' or 'opt', got {backend!r}")
    for t, frame in enumerate(frames):
        t0 = time.perf_counter()
        carrier = step(carrier, frame)
        times[t] = time.perf_counter() - t0
        state = carrier if backend == "std" else carrier.state
        _extract(scenario, state, est, t)
        ego_cov[t] = state.estimate.block(EgoPose(t))
        if keep_beliefs:
            beliefs.append(state.estimate)
        if check_psd:
            for tag, b in (("estimate", state.estimate), ("propagated", state.belief)):
                msg = belief_violation(b.cov)
                if msg:
                    violations.append((t, tag, msg))
    return FilterRun(backend, est, ego_cov, times, beliefs, violations)


# ---------------------------------------------------------------------------
# metrics


GROUP_AXES = {"ego": ("x", "y", "theta"), "static": ("x", "y")}


def _group_errors(estimate: Trajectory, truth: Trajectory) -> dict:
    if estimate.steps != truth.steps:
        raise MetricError(f"estimate has {estimate.steps} steps, truth {truth.steps}")
    pairs = {"ego": (estimate.ego, truth.ego), "static": (estimate.static, truth.static)}
    if len(estimate.agent_features) != len(truth.agent_features):
        raise MetricError("estimate and truth have different numbers of agents")
    for a, (ef, tf) in enumerate(zip(estimate.agent_features, truth.agent_features)):
        pairs[f"agent{a}_features"] = (ef, tf)
    for a, (ep, tp) in enumerate(zip(estimate.agent_poses, truth.agent_poses)):
        pairs[f"agent{a}_pose"] = (ep, tp)
    out = {}
    for g, (e, tr) in pairs.items():
        if e.shape != tr.shape:
            raise MetricError(f"group {g}: shapes {e.shape} and {tr.shape} differ")
        err = (e - tr).reshape(-1, e.shape[-1])
        if e.shape[-1] == 3:
            err[:, 2] = wrap_angle(err[:, 2])
        out[g] = err[~np.any(np.isnan(err), axis=1)]
    return out


@dataclass
class RmsReport:
    """Root-mean-square error per entity group and axis, pooled over time and runs."""

    sums: dict  # group -> per-axis sum of squared errors
    counts: dict  # group -> number of samples

    @property
    def groups(self) -> list:
        return list(self.sums)

    def axes(self, group) -> tuple:
        return ("x", "y", "theta") if self.sums[group].size == 3 else ("x", "y")

    def rms(self, group, axis=None):
        n = self.counts[group]
        r = np.sqrt(self.sums[group] / n) if n else np.full(self.sums[group].shape, np.nan)
        if axis is None:
            return r
        return float(r[self.axes(group).index(axis)])

    def as_dict(self) -> dict:
        return {g: dict(zip(self.axes(g), map(float, self.rms(g)))) for g in self.groups}

    def merge(self, other: RmsReport) -> RmsReport:
        sums = {g: self.sums[g] + other.sums[g] for g in self.sums}
        counts = {g: self.counts[g] + other.counts[g] for g in self.counts}
        return RmsReport(sums, counts)


def compute_rms(estimate: Trajectory, truth: Trajectory) -> RmsReport:
    """RMS error of ``estimate`` against ``truth``; angle errors are wrapped."""
    errs = _group_errors(estimate, truth)
    return RmsReport({g: np.sum(e**2, axis=0) for g, e in errs.items()}, {g: e.shape[0] for g, e in errs.items()})


def ego_nees(run: FilterRun, truth: Trajectory) -> np.ndarray:
    """Normalized ego estimation error squared at every step."""
    e = run.estimate.ego - truth.ego
    e[:, 2] = wrap_angle(e[:, 2])
    return np.einsum("ti,ti->t", e, np.linalg.solve(run.ego_cov, e[..., None])[..., 0])


# ---------------------------------------------------------------------------
# Monte Carlo


LEVELS = [(w, v) for w in (1, 2, 3) for v in (1, 2, 3)]


@dataclass
class LevelResult:
    level: tuple
    backend: str
    report: RmsReport | None
    runs: int
    failures: list  # (run index, message)
    psd_violations: list  # (run index, t, tag, message)
    nees_mean: float
    step_time_mean: float
    run_time_mean: float
    agreement: float | None = None  # worst std/opt belief deviation, when both ran


def run_seeds(seed: int, runs: int) -> list:
    """Per-run seeds; identical for every noise level (common random numbers)."""
    return np.random.SeedSequence(seed).spawn(runs)


def _run_config(level, config: FilterConfig) -> FilterConfig:
    noise = NoiseModel.from_levels(*level)
    return FilterConfig(noise, config.drop_object_history, config.smoothing, config.drop_mode, config.object_cost)


def _one_run(args):
    scenario, level, run_seed, backend, config, inject, check_psd = args
    cfg = _run_config(level, config)
    try:
        prior = sample_prior(scenario, cfg.noise, run_seed, inject)
        frames = simulate_frames(scenario, cfg.noise, run_seed, inject)
        if backend != "both":
            return (run_filter(scenario, frames, prior, cfg, backend, check_psd=check_psd),), None
        runs = tuple(
            run_filter(scenario, frames, prior, cfg, b, keep_beliefs=True, check_psd=check_psd) for b in ("std", "opt")
        )
    except (DynEKFError, np.linalg.LinAlgError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    agreement = max_belief_deviation(runs[0].beliefs, runs[1].beliefs)
    for run in runs:
        run.beliefs = None
    return runs + (agreement,), None


def max_belief_deviation(beliefs_a, beliefs_b) -> float:
    """Largest relative deviation of mean or covariance over paired steps."""
    if len(beliefs_a) != len(beliefs_b):
        return float("inf")
    return max((max(belief_deviation(a, b)) for a, b in zip(beliefs_a, beliefs_b)), default=0.0)


def _aggregate(level, backend, outcomes, which, truth, runs) -> LevelResult:
    report, failures, violations, nees, steps, totals, agree = None, [], [], [], [], [], []
    for r, (out, err) in enumerate(outcomes):
        if err is not None:
            failures.append((r, err))
            continue
        run = out[which]
        rep = compute_rms(run.estimate, truth)
        report = rep if report is None else report.merge(rep)
        violations += [(r,) + v for v in run.psd_violations]
        nees.append(np.mean(ego_nees(run, truth)))
        steps.append(np.mean(run.step_times))
        totals.append(np.sum(run.step_times))
        if len(out) > 2:
            agree.append(out[2])

    def mean(v):
        return float(np.mean(v)) if v else float("nan")

    return LevelResult(
        level, backend, report, runs, failures, violations, mean(nees), mean(steps), mean(totals),
        max(agree) if agree else None,
    )


def run_monte_carlo(
    scenario: Scenario,
    levels=None,
    runs: int = 25,
    backend: str = "std",
    seed: int = 0,
    config: FilterConfig | None = None,
    inject: bool = True,
    check_psd: bool = True,
    workers: int = 1,
) -> list:
    """Run every noise level ``runs`` times and pool the RMS errors.

    Run ``r`` uses the same random stream at every level.  Filter failures
    are recorded per run in the result, never dropped.  With ``backend="both"``
    each run feeds the same frames to both backends, the result holds a std and
    an opt entry per level, and ``agreement`` is the worst per-step deviation
    between their beliefs.
    """
    if backend not in ("std", "opt", "both"):
        raise ValueError(f"backend must be std, opt or both, got {backend!r}")
    levels = LEVELS if levels is None else [tuple(l) for l in levels]
    config = config or FilterConfig()
    truth = ground_truth(scenario)
    seeds = run_seeds(seed, runs)
    tasks = [(scenario, lvl, s, backend, config, inject, check_psd) for lvl in levels for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_one_run, tasks))
    else:
        outcomes = [_one_run(t) for t in tasks]
    results = []
    names = ("std", "opt") if backend == "both" else (backend,)
    for i, lvl in enumerate(levels):
        chunk = outcomes[i * runs : (i + 1) * runs]
        for j, name in enumerate(names):
            results.append(_aggregate(lvl, name, chunk, j, truth, runs))
    return results


# ---------------------------------------------------------------------------
# configuration files and delimited output


@dataclass
class ExperimentConfig:
    seed: int = 0
    runs: int = 25
    levels: list = field(default_factory=lambda: list(LEVELS))
    backend: str = "std"
    drop_object_history: bool = True
    smoothing: bool = False
    object_cost: str = "feature"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def validate(self) -> None:
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        for lvl in self.levels:
            if len(lvl) != 2 or not all(i in (1, 2, 3) for i in lvl):
                raise ValueError(f"noise levels must be pairs in {{1,2,3}}, got {lvl}")
        if self.backend not in ("std", "opt", "both"):
            raise ValueError(f"backend must be std, opt or both, got {self.backend!r}")
        if self.object_cost not in ("feature", "pose"):
            raise ValueError(f"object_cost must be feature or pose, got {self.object_cost!r}")
        self.scenario.validate()

    def filter_config(self) -> FilterConfig:
        return FilterConfig(
            drop_object_history=self.drop_object_history, smoothing=self.smoothing, object_cost=self.object_cost
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = [list(l) for l in self.levels]
        d["scenario"]["landmark_offset"] = list(self.scenario.landmark_offset)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config options {sorted(unknown)}")
        if "scenario" in d:
            d["scenario"] = ScenarioConfig.from_dict(d["scenario"])
        if "levels" in d:
            d["levels"] = [tuple(l) for l in d["levels"]]
        cfg = cls(**d)
        cfg.validate()
        return cfg


def load_config(path) -> ExperimentConfig:
    """Read a JSON experiment config; a run manifest is accepted as well."""
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise TypeError("config file must hold a JSON object")
    return ExperimentConfig.from_dict(d.get("config", d))


def _header(meta: dict | None) -> list:
    if not meta:
        return []
    return ["# " + line for line in json.dumps(meta, sort_keys=True).splitlines()]


def trajectory_rows(scenario: Scenario, truth: Trajectory, estimate: Trajectory) -> list:
    """One row per step per entity: truth and estimate side by side."""
    rows = []

    def fmt(v):
        return "" if np.isnan(v) else repr(float(v))

    for t in range(truth.steps):
        ts = scenario.times[t]
        rows.append(("ego", "", t, ts, truth.ego[t], estimate.ego[t]))
        for k in range(truth.static.shape[1]):
            rows.append(("static", str(k), t, ts, truth.static[t, k], estimate.static[t, k]))
        for a, (tf, ef) in enumerate(zip(truth.agent_features, estimate.agent_features)):
            for k in range(tf.shape[1]):
                rows.append(("agent_feature", f"{a}:{k}", t, ts, tf[t, k], ef[t, k]))
        for a, (tp, ep) in enumerate(zip(truth.agent_poses, estimate.agent_poses)):
            rows.append(("agent_pose", str(a), t, ts, tp[t], ep[t]))
    out = []
    for kind, ident, t, ts, tr, es in rows:
        tr3 = list(tr) + [np.nan] * (3 - len(tr))
        es3 = list(es) + [np.nan] * (3 - len(es))
        out.append([str(t), repr(float(ts)), kind, ident] + [fmt(v) for v in tr3] + [fmt(v) for v in es3])
    return out


TRAJECTORY_HEADER = [
    "step", "time_s", "kind", "id",
    "x_true_m", "y_true_m", "theta_true_rad", "x_est_m", "y_est_m", "theta_est_rad",
]


def write_trajectories(path, scenario: Scenario, truth: Trajectory, estimate: Trajectory, meta=None) -> int:
    rows = trajectory_rows(scenario, truth, estimate)
    _write_csv(path, meta, TRAJECTORY_HEADER, rows)
    return len(rows)


REPORT_HEADER = ["sigma_w_level", "sigma_v_level", "backend", "group", "x_m", "y_m", "theta_rad", "runs", "failures"]


def write_report(path, results: list, meta=None) -> None:
    rows = []
    for res in results:
        if res.report is None:
            rows.append([*res.level, res.backend, "all", "", "", "", res.runs, len(res.failures)])
            continue
        for g, r in res.report.as_dict().items():
            theta = repr(r["theta"]) if "theta" in r else "N/A"
            rows.append([*res.level, res.backend, g, repr(r["x"]), repr(r["y"]), theta, res.runs, len(res.failures)])
    _write_csv(path, meta, REPORT_HEADER, rows)


def _write_csv(path, meta, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in _header(meta):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
