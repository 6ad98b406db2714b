"""Randomized agreement checks between the two backends, one sub-block at a time.

Each case draws a small random filter state, applies one covariance-form
sub-block and the matching single Gauss-Newton or marginalization step of the
optimization form, and records the relative deviation of the two beliefs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend_opt as bo
from . import backend_std as bs
from .errors import DynEKFError
from .models import NoiseModel, measure, object_transform, rot
from .quadcost import GaussianBelief, StaticFeature, belief_deviation, wrap_angle
from .state import (
    FilterConfig,
    FilterState,
    NewObject,
    ObjectObs,
    ObjectTrack,
    Static,
)

DEFAULT_TOL = 1e-8
MAX_DIM = 30

CASES = (
    "feature_augment",
    "object_pose_augment",
    "smoothing_update",
    "static_feature_update",
    "state_propagate",
)


@dataclass
class CaseResult:
    name: str
    trials: int = 0
    mean_dev: float = 0.0
    cov_dev: float = 0.0
    worst_trial: int | None = None
    skipped: str | None = None  # reason, when the case was not run
    errors: list = field(default_factory=list)  # (trial, message)

    @property
    def deviation(self) -> float:
        return max(self.mean_dev, self.cov_dev)

    def status(self, tol: float = DEFAULT_TOL) -> str:
        if self.skipped:
            return "skipped"
        return "pass" if not self.errors and self.deviation <= tol else "fail"


# ---------------------------------------------------------------------------
# random states


def _random_spd(rng, d: int, scale: float) -> np.ndarray:
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T / d + 0.1 * np.eye(d))


def random_noise(rng, sigma_xi=None) -> NoiseModel:
    return NoiseModel(
        sigma_w=_random_spd(rng, 3, 10.0 ** rng.uniform(-3, -1)),
        sigma_v=_random_spd(rng, 2, 10.0 ** rng.uniform(-3, -1)),
        sigma_xi=np.diag(10.0 ** rng.uniform(-2, 0, size=2)) if sigma_xi is None else np.asarray(sigma_xi, float),
        sigma_s=_random_spd(rng, 3, 10.0 ** rng.uniform(-2, 0)),
    )


def _cloud(rng, n: int) -> np.ndarray:
    return rng.uniform(-15, 15, size=2) + rng.normal(scale=2.0, size=(n, 2))


def random_state(
    rng,
    config: FilterConfig,
    n_static=None,
    objects=None,
    t=None,
    max_dim: int = MAX_DIM,
) -> FilterState:
    """Random filter state in canonical order with dimension at most ``max_dim``.

    ``objects`` maps ids to ``(n_features, has_current, pose_times)``; by
    default a few are drawn at random.
    """
    t = int(rng.integers(3, 10)) if t is None else t
    while True:
        ns = int(rng.integers(0, 4)) if n_static is None else n_static
        if objects is None:
            spec = {}
            for a in range(int(rng.integers(0, 3))):
                n = int(rng.integers(1, 4))
                poses = tuple(tau for tau in range(t - 3, t + 1) if rng.random() < 0.5)
                spec[a] = (n, bool(rng.random() < 0.5), poses)
        else:
            spec = objects
        tracks = {
            a: ObjectTrack(n, first_seen=0, current=t if cur else None, poses=tuple(sorted(p)))
            for a, (n, cur, p) in spec.items()
        }
        st = FilterState(None, config, t, tuple(range(10, 10 + ns)), tracks)
        layout = st.canonical_layout()
        if layout.dim <= max_dim or objects is not None:
            break
    mean = np.zeros(layout.dim)
    mean[0:3] = [*rng.uniform(-20, 20, size=2), rng.uniform(-np.pi, np.pi)]
    for k in st.static_ids:
        mean[layout.slice(StaticFeature(k))] = rng.uniform(-30, 30, size=2)
    for a, tr in tracks.items():
        f0 = _cloud(rng, tr.n_features)
        xi = np.array([*rng.normal(scale=3.0, size=2), rng.uniform(-0.5, 0.5)])
        ft = object_transform(xi, f0) + rng.normal(scale=0.05, size=f0.shape)
        mean[layout.index(st.ref_keys(a))] = f0.reshape(-1)
        if tr.current is not None:
            mean[layout.index(st.cur_keys(a))] = ft.reshape(-1)
        for tau in tr.poses:
            mean[layout.slice(st.pose_key(a, tau))] = xi * (tau / t) + rng.normal(scale=0.05, size=3)
    ang = layout.angle_indices()
    mean[ang] = wrap_angle(mean[ang])
    cov = _random_spd(rng, layout.dim, 10.0 ** rng.uniform(-3, -1))
    st.belief = GaussianBelief(layout, mean, cov)
    return st


def _measure_noisy(rng, x, f, sigma_v) -> np.ndarray:
    return measure(x, f) + rng.multivariate_normal(np.zeros(2), sigma_v)


# ---------------------------------------------------------------------------
# cases: each returns (covariance form, optimization form)


def _case_feature_augment(rng, config):
    st = random_state(rng, config)
    x = st.belief.mean[:3]
    meas = []
    for k in range(int(rng.integers(0, 3))):
        meas.append((rot(-x[2]) @ rng.uniform(-20, 20, size=2), Static(100 + k)))
    for a, tr in st.objects.items():
        if tr.current is None and rng.random() < 0.7:
            meas += [(rng.uniform(-20, 20, size=2), ObjectObs(a, k)) for k in range(tr.n_features)]
    if rng.random() < 0.7 or not meas:
        a = max(st.objects, default=-1) + 1
        meas += [(rng.uniform(-20, 20, size=2), NewObject(a, k)) for k in range(int(rng.integers(1, 4)))]
    std = bs.feature_augment(st, meas)
    opt = bo.gn_collapse(bo.add_measurement_terms(bo.from_state(st), meas)).state
    return std.belief, opt.belief


def _case_object_pose_augment(rng, config):
    t = int(rng.integers(3, 10))
    objects = {}
    for a in range(int(rng.integers(1, 3))):
        # poses strictly before t, so the augmentation has work to do
        poses = tuple(tau for tau in (t - 2, t - 1) if rng.random() < 0.5)
        objects[a] = (int(rng.integers(1, 4)), a == 0 or rng.random() < 0.5, poses)
    st = random_state(rng, config, n_static=int(rng.integers(0, 3)), objects=objects, t=t)
    std = bs.object_pose_augment(st)
    opt = bo.gn_collapse(bo.add_object_transform_terms(bo.from_state(st)))
    if config.drop_object_history:
        opt = bo.drop_history(opt)
    return std.belief, opt.state.belief


def _case_smoothing_update(rng, config):
    t = int(rng.integers(3, 10))
    objects = {}
    for a in range(int(rng.integers(1, 3))):
        poses = (t - 2, t - 1, t) if a == 0 or rng.random() < 0.5 else (t,)
        objects[a] = (int(rng.integers(1, 3)), bool(rng.random() < 0.5), poses)
    st = random_state(rng, config, n_static=int(rng.integers(0, 2)), objects=objects, t=t)
    std = bs.smoothing_update(st)
    opt = bo.gn_collapse(bo.add_smoothing_terms(bo.from_state(st)))
    return std.belief, opt.state.belief


def _case_static_feature_update(rng, config):
    st = random_state(rng, config, n_static=int(rng.integers(1, 5)))
    x = st.belief.mean[:3]
    ids = [k for k in st.static_ids if rng.random() < 0.7] or [st.static_ids[0]]
    meas = [(k, _measure_noisy(rng, x, st.belief.mean_of(StaticFeature(k)), st.config.noise.sigma_v)) for k in ids]
    std = bs.static_feature_update(st, meas)
    opt = bo.gn_collapse(bo.add_measurement_terms(bo.from_state(st), [(z, Static(k)) for k, z in meas]))
    return std.belief, opt.state.belief


def _case_state_propagate(rng, config):
    st = random_state(rng, config)
    odom = np.array([*rng.normal(scale=5.0, size=2), rng.normal(scale=0.3)])
    std = bs.state_propagate(st, odom)
    opt = bo.marg_collapse(bo.add_dynamics_term(bo.from_state(st), odom))
    return std.belief, opt.state.belief


_CASE_FNS = {
    "feature_augment": _case_feature_augment,
    "object_pose_augment": _case_object_pose_augment,
    "smoothing_update": _case_smoothing_update,
    "static_feature_update": _case_static_feature_update,
    "state_propagate": _case_state_propagate,
}


def run_case(name: str, trials: int, seed: int = 0, object_cost: str = "feature", sigma_xi=None) -> CaseResult:
    """Run one sub-block comparison over ``trials`` random states."""
    res = CaseResult(name)
    if name == "object_pose_augment" and sigma_xi is not None:
        sx = np.asarray(sigma_xi, dtype=float)
        if np.any(sx != np.diag(np.diag(sx))):
            res.skipped = "feature noise is not diagonal"
            return res
    fn = _CASE_FNS[name]
    seeds = np.random.SeedSequence([seed, CASES.index(name)]).spawn(trials)
    for i, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        config = FilterConfig(
            noise=random_noise(rng, sigma_xi),
            drop_object_history=bool(rng.random() < 0.5),
            object_cost=object_cost,
        )
        try:
            std, opt = fn(rng, config)
        except (DynEKFError, np.linalg.LinAlgError) as exc:  # reported per trial, never swallowed
            res.errors.append((i, f"{type(exc).__name__}: {exc}"))
            continue
        dm, dc = belief_deviation(std, opt)
        if max(dm, dc) > res.deviation:
            res.worst_trial = i
        res.mean_dev = max(res.mean_dev, dm)
        res.cov_dev = max(res.cov_dev, dc)
        res.trials += 1
    return res


def run_suite(trials: int = 100, seed: int = 0, object_cost: str = "feature", sigma_xi=None, cases=CASES) -> list:
    return [run_case(name, trials, seed, object_cost, sigma_xi) for name in cases]
