"""Dynamic EKF SLAM as a sequence of single Gauss-Newton steps.

The filter carries a running cost: the prior ``||x - mu||^2`` of the current
belief plus residual terms added since the last collapse.  Terms may
introduce new variables, which carry their own linearization values until the
next :func:`gn_collapse` or :func:`marg_collapse` folds everything back into a
single Gaussian.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import AssociationError, ModelError, StateError
from .models import (
    ego_dynamics,
    ego_dynamics_jac,
    measure,
    measure_jac,
    object_transform,
    object_transform_jac,
    smoothing_residual,
    smoothing_residual_jac,
)
from .quadcost import (
    EgoPose,
    ObjectPose,
    ResidualTerm,
    StaticFeature,
    dead_indices,
    gauss_newton_step,
    marginalize,
    prior_term,
    wrap_angle,
)
from .state import (
    FilterConfig,
    FilterState,
    FrameData,
    Static,
    canonicalize,
    drop_old_poses,
    drop_stale_clouds,
    evolve,
    new_feature_keys,
    new_state,
    pose_candidates,
    smoothing_objects,
    split_frame,
)


@dataclass
class RunningCost:
    """Prior belief (inside ``state``) plus pending residual terms.

    ``state`` bookkeeping already lists the variables in ``new_vars``, the
    ``(key, linearization value)`` pairs introduced by pending terms.
    ``pseudo`` asks the next collapse to use the pseudoinverse.
    """

    state: FilterState
    pending: list = field(default_factory=list)
    new_vars: list = field(default_factory=list)
    pseudo: bool = False

    @property
    def prior(self):
        return self.state.belief

    @property
    def config(self) -> FilterConfig:
        return self.state.config

    def layout(self):
        return self.prior.layout.extend(k for k, _ in self.new_vars)

    def lin_point(self) -> np.ndarray:
        parts = [self.prior.mean] + [np.asarray(v, dtype=float).reshape(-1) for _, v in self.new_vars]
        return np.concatenate(parts)

    def needs_pseudo(self) -> bool:
        return self.pseudo or dead_indices(self.prior.cov).size > 0

    def terms(self) -> list:
        return [prior_term(self.prior)] + list(self.pending)

    def value(self, point=None) -> float:
        """Cost at ``point`` (defaults to the linearization point)."""
        lay = self.layout()
        point = self.lin_point() if point is None else np.asarray(point, dtype=float)
        return sum(term.cost(point[lay.index(term.keys)]) for term in self.terms())


def init(prior_mean, prior_cov, config: FilterConfig | None = None, t: int = 0) -> RunningCost:
    return RunningCost(new_state(prior_mean, prior_cov, config, t))


def from_state(state: FilterState) -> RunningCost:
    return RunningCost(state)


def _known(cost: RunningCost, key) -> bool:
    return key in cost.prior.layout or any(k == key for k, _ in cost.new_vars)


def _lin_value(cost: RunningCost, key) -> np.ndarray:
    if key in cost.prior.layout:
        return cost.prior.mean_of(key)
    for k, v in cost.new_vars:
        if k == key:
            return np.asarray(v, dtype=float)
    raise AssociationError(f"{key} is not a variable of the cost")


# ---------------------------------------------------------------------------
# residual builders


def _measurement_term(z, noise, ego, feat, name) -> ResidualTerm:
    z = np.asarray(z, dtype=float).reshape(2)

    def fn(v):
        return z - measure(v[:3], v[3:])

    def jac(v):
        hx, hf = measure_jac(v[:3], v[3:])
        return -np.hstack([hx, hf])

    return ResidualTerm((ego, feat), fn, jac, noise, name)


def add_measurement_terms(cost: RunningCost, measurements) -> RunningCost:
    """Add body-frame point measurements of new or tracked features.

    ``measurements`` holds ``(z, association)`` pairs.  Features not yet in
    the state become new variables linearized at the inverse measurement;
    static features already tracked are constrained as they are.
    """
    if not measurements:
        return cost
    st = cost.state
    ego = st.ego_key
    if not _known(cost, ego):
        raise StateError("the cost has no current ego pose")
    x = _lin_value(cost, ego)
    fresh, existing = [], []
    for z, assoc in measurements:
        key = StaticFeature(assoc.id) if isinstance(assoc, Static) else None
        if key is not None and _known(cost, key):
            existing.append((z, key))
        else:
            fresh.append((z, assoc))
    pending = list(cost.pending)
    new_vars = list(cost.new_vars)
    sv = st.config.noise.sigma_v
    if fresh:
        keys, static_ids, objects = new_feature_keys(st, fresh)
        Z = np.array([np.asarray(z, dtype=float).reshape(2) for z, _ in fresh])
        F, _, _ = kernels.inverse_measure_batch(x, Z)
        for key, (z, _), f in zip(keys, fresh, F):
            new_vars.append((key, f))
            pending.append(_measurement_term(z, sv, ego, key, "new feature"))
        st = evolve(st, static_ids=static_ids, objects=objects)
    for z, key in existing:
        pending.append(_measurement_term(z, sv, ego, key, "static feature"))
    return replace(cost, state=st, pending=pending, new_vars=new_vars)


def _feature_transform_term(k, n, noise, ref, cur_k, pose, name) -> ResidualTerm:
    """``f_t,k - g(xi, f_0)_k`` over (reference cloud, current feature k, pose)."""
    rows = slice(2 * k, 2 * k + 2)

    def fn(v):
        f0 = v[: 2 * n].reshape(n, 2)
        return v[2 * n : 2 * n + 2] - object_transform(v[2 * n + 2 :], f0)[k]

    def jac(v):
        gxi, gf = object_transform_jac(v[2 * n + 2 :], v[: 2 * n])
        return np.hstack([-gf[rows], np.eye(2), -gxi[rows]])

    return ResidualTerm(tuple(ref) + (cur_k, pose), fn, jac, noise, name)


def _pose_transform_term(n, noise, ref, cur, pose, name) -> ResidualTerm:
    """``xi - gamma(f_0, f_t)`` over (reference cloud, current cloud, pose)."""

    def fn(v):
        xi, _, _, _ = kernels.procrustes(v[: 2 * n].reshape(n, 2), v[2 * n : 4 * n].reshape(n, 2))
        r = v[4 * n :] - xi
        r[2] = wrap_angle(r[2])
        return r

    def jac(v):
        _, g0, gt, _ = kernels.procrustes(v[: 2 * n].reshape(n, 2), v[2 * n : 4 * n].reshape(n, 2))
        return np.hstack([-g0, -gt, np.eye(3)])

    return ResidualTerm(tuple(ref) + tuple(cur) + (pose,), fn, jac, noise, name)


def add_object_transform_terms(cost: RunningCost) -> RunningCost:
    """Add rigid-motion terms tying each object's current cloud to its reference.

    A new pose variable is linearized at the alignment of the two clouds.
    With ``object_cost="feature"`` every current feature gets its own term
    weighted by the feature noise.  With ``"pose"`` an object of two or more
    features gets one term in pose space, weighted by the feature noise pushed
    through the alignment; single-feature objects always use the feature form.
    """
    st = cost.state
    alphas = pose_candidates(st)
    if not alphas:
        return cost
    sx = st.config.noise.sigma_xi
    pending = list(cost.pending)
    new_vars = list(cost.new_vars)
    objects = dict(st.objects)
    pseudo = cost.pseudo
    for a in alphas:
        ref, cur = st.ref_keys(a), st.cur_keys(a)
        if not all(_known(cost, k) for k in ref):
            raise StateError(f"object {a} has no reference cloud in the state")
        n = len(ref)
        f0 = np.concatenate([_lin_value(cost, k) for k in ref]).reshape(n, 2)
        ft = np.concatenate([_lin_value(cost, k) for k in cur]).reshape(n, 2)
        xi, _, gt, degenerate = kernels.procrustes(f0, ft)
        if degenerate and n > 1:
            raise ModelError(f"object {a}: alignment of its clouds is degenerate")
        pose = ObjectPose(st.t, a)
        new_vars.append((pose, xi))
        if st.config.object_cost == "pose" and n > 1:
            noise = gt @ np.kron(np.eye(n), sx) @ gt.T
            pending.append(_pose_transform_term(n, noise, ref, cur, pose, f"object {a} pose"))
        else:
            for k in range(n):
                pending.append(_feature_transform_term(k, n, sx, ref, cur[k], pose, f"object {a} feature {k}"))
            # rotation of a single point is unobservable
            pseudo = pseudo or n == 1
        objects[a] = objects[a]._replace(poses=objects[a].poses + (st.t,))
    st = evolve(st, objects=objects)
    return replace(cost, state=st, pending=pending, new_vars=new_vars, pseudo=pseudo)


def _smoothing_term(keys, noise, name) -> ResidualTerm:
    ja, jb, jc = smoothing_residual_jac()
    jac_full = np.hstack([ja, jb, jc])

    def fn(v):
        return smoothing_residual(v[:3], v[3:6], v[6:9])

    return ResidualTerm(tuple(keys), fn, lambda v: jac_full, noise, name)


def add_smoothing_terms(cost: RunningCost) -> RunningCost:
    """Add a constant-velocity term for each object with its last three poses."""
    st = cost.state
    alphas = smoothing_objects(st)
    if not alphas:
        return cost
    t = st.t
    pending = list(cost.pending)
    for a in alphas:
        keys = [ObjectPose(t - 2, a), ObjectPose(t - 1, a), ObjectPose(t, a)]
        pending.append(_smoothing_term(keys, st.config.noise.sigma_s, f"object {a} smoothing"))
    return replace(cost, pending=pending)


def add_dynamics_term(cost: RunningCost, odom) -> RunningCost:
    """Add the next ego pose, linearized at ``g(mu_x, odom)``, and its motion term."""
    st = cost.state
    odom = np.asarray(odom, dtype=float).reshape(3)
    cur, nxt = EgoPose(st.t), EgoPose(st.t + 1)
    if _known(cost, nxt):
        raise StateError(f"{nxt} is already in the cost")

    def fn(v):
        r = v[3:] - ego_dynamics(v[:3], odom)
        r[2] = wrap_angle(r[2])
        return r

    def jac(v):
        return np.hstack([-ego_dynamics_jac(v[:3], odom), np.eye(3)])

    term = ResidualTerm((cur, nxt), fn, jac, st.config.noise.sigma_w, "dynamics")
    new_vars = list(cost.new_vars) + [(nxt, ego_dynamics(_lin_value(cost, cur), odom))]
    return replace(cost, pending=list(cost.pending) + [term], new_vars=new_vars)


# ---------------------------------------------------------------------------
# collapse


def gn_collapse(cost: RunningCost, lin_point=None) -> RunningCost:
    """One Gauss-Newton step on the whole cost; the result becomes the prior."""
    if not cost.pending and not cost.new_vars:
        return cost
    if any(k.__class__ is EgoPose and k != cost.state.ego_key for k, _ in cost.new_vars):
        raise StateError("a pending ego pose must be marginalized, not collapsed")
    lay = cost.layout()
    point = cost.lin_point() if lin_point is None else np.asarray(lin_point, dtype=float)
    out = gauss_newton_step(cost.terms(), lay, point, pseudo=cost.needs_pseudo())
    return RunningCost(canonicalize(cost.state, out))


def marg_collapse(cost: RunningCost, keep=None, marg=None, lin_point=None) -> RunningCost:
    """Linearize the cost and eliminate ``marg`` (default: the current ego pose).

    When the next ego pose is among the kept variables the filter advances one
    time step.
    """
    st = cost.state
    lay = cost.layout()
    if marg is None:
        marg = [st.ego_key]
    marg = list(marg)
    if keep is None:
        keep = [k for k in lay.keys if k not in set(marg)]
    point = cost.lin_point() if lin_point is None else np.asarray(lin_point, dtype=float)
    out = marginalize(cost.terms(), lay, keep, marg, point, pseudo=cost.needs_pseudo())
    nxt = EgoPose(st.t + 1)
    if nxt in out.layout and st.ego_key in marg:
        st = evolve(st, t=st.t + 1)
    return RunningCost(canonicalize(st, out))


def drop_history(cost: RunningCost) -> RunningCost:
    if cost.pending or cost.new_vars:
        raise StateError("collapse the cost before dropping variables")
    return RunningCost(drop_old_poses(cost.state))


# ---------------------------------------------------------------------------
# loop


def step(cost: RunningCost, frame: FrameData) -> RunningCost:
    """One filter cycle for ``frame``.

    New features, object motion, smoothing and static measurements are each
    added and collapsed in turn, then the dynamics term is added and the old
    ego pose marginalized about the propagated mean.  The belief after the
    static collapse is kept as ``state.estimate``.
    """
    if cost.pending or cost.new_vars:
        raise StateError("step needs a collapsed cost")
    st = drop_stale_clouds(cost.state)
    new_static, tracked, fresh, old_static = split_frame(st, frame)
    cost = RunningCost(st)
    cost = gn_collapse(add_measurement_terms(cost, new_static + tracked + fresh))
    if pose_candidates(cost.state):
        cost = gn_collapse(add_object_transform_terms(cost))
        if cost.config.drop_object_history:
            cost = drop_history(cost)
    if cost.config.smoothing:
        cost = gn_collapse(add_smoothing_terms(cost))
    cost = gn_collapse(add_measurement_terms(cost, [(z, Static(k)) for k, z in old_static]))
    st = evolve(cost.state, estimate=cost.state.belief)
    cost = RunningCost(st)
    if frame.odom is not None:
        cost = marg_collapse(add_dynamics_term(cost, frame.odom))
    return cost


def run(cost: RunningCost, frames) -> tuple[RunningCost, list]:
    history = []
    for frame in frames:
        cost = step(cost, frame)
        history.append(cost.state)
    return cost, history
