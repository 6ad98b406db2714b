"""Filter state shared by both backends.

A :class:`FilterState` couples a :class:`~dynekf.quadcost.GaussianBelief`
with the bookkeeping needed to interpret it: which static landmarks and
moving objects are tracked, which object clouds and poses are present, and
the current time index.  The belief is always kept in canonical order::

    ego pose | static features | reference clouds | current clouds | object poses

with object blocks grouped by object in detection order and poses sorted by
time, then object.
"""

from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import pairwise
from typing import NamedTuple

import numpy as np

from .errors import AssociationError, NumericError, StateError
from .models import NoiseModel
from .quadcost import (
    EgoPose,
    GaussianBelief,
    ObjectFeature,
    ObjectPose,
    StaticFeature,
    VariableLayout,
    marginalize,
    prior_term,
    reorder,
    wrap_angle,
)

# ---------------------------------------------------------------------------
# associations and frames


@dataclass(frozen=True)
class Static:
    id: int


@dataclass(frozen=True)
class ObjectObs:
    """Feature ``k`` of an object the filter already tracks."""

    alpha: int
    k: int


@dataclass(frozen=True)
class NewObject:
    """Feature ``k`` of an object seen for the first time in this frame."""

    alpha: int
    k: int


@dataclass
class FrameData:
    """Everything the backend receives at one time step.

    ``static`` maps landmark ids to body-frame measurements, ``objects`` maps
    object ids to the (n, 2) measurements of all their features, in feature
    order.  ``new_objects`` lists the ids in ``objects`` seen for the first
    time.  ``odom`` drives the ego pose to the next step; ``None`` on the last
    frame.
    """

    t: int
    odom: np.ndarray | None
    static: dict = field(default_factory=dict)
    objects: dict = field(default_factory=dict)
    new_objects: frozenset = frozenset()

    def __post_init__(self):
        self.new_objects = frozenset(self.new_objects)
        if self.odom is not None:
            self.odom = np.asarray(self.odom, dtype=float).reshape(3)
        self.static = {int(k): np.asarray(v, dtype=float).reshape(2) for k, v in self.static.items()}
        self.objects = {int(a): np.asarray(v, dtype=float).reshape(-1, 2) for a, v in self.objects.items()}
        unknown = self.new_objects - set(self.objects)
        if unknown:
            raise AssociationError(f"new objects {sorted(unknown)} have no measurements")


# ---------------------------------------------------------------------------
# configuration and state


@dataclass(frozen=True)
class FilterConfig:
    """Options shared by both backends.

    ``object_cost`` only affects the optimization backend: ``"feature"`` is
    one rigid-transform residual per object feature, ``"pose"`` a single
    pose-space residual against the Procrustes alignment.
    """

    noise: NoiseModel = field(default_factory=NoiseModel)
    drop_object_history: bool = True
    smoothing: bool = False
    drop_mode: str = "drop"
    object_cost: str = "feature"

    def __post_init__(self):
        if self.drop_mode not in ("drop", "marginalize"):
            raise ValueError(f"drop_mode must be 'drop' or 'marginalize', got {self.drop_mode!r}")
        if self.object_cost not in ("feature", "pose"):
            raise ValueError(f"object_cost must be 'feature' or 'pose', got {self.object_cost!r}")


class ObjectTrack(NamedTuple):
    n_features: int
    first_seen: int
    current: int | None = None  # time of the current cloud, if present
    poses: tuple = ()  # times with a pose in the state


@dataclass
class FilterState:
    belief: GaussianBelief
    config: FilterConfig = field(default_factory=FilterConfig)
    t: int = 0
    static_ids: tuple = ()
    objects: dict = field(default_factory=dict)
    # belief after the measurement updates at time t - 1 (before propagation)
    estimate: GaussianBelief | None = None

    @property
    def n_f(self) -> int:
        return len(self.static_ids)

    @property
    def n_o(self) -> int:
        return len(self.objects)

    def n_of(self, alpha) -> int:
        return self.objects[alpha].n_features

    @property
    def ego_key(self) -> EgoPose:
        return EgoPose(self.t)

    def ref_keys(self, alpha) -> list:
        return [ObjectFeature(0, alpha, k) for k in range(self.n_of(alpha))]

    def cur_keys(self, alpha) -> list:
        tr = self.objects[alpha]
        if tr.current is None:
            return []
        return [ObjectFeature(tr.current, alpha, k) for k in range(tr.n_features)]

    def pose_key(self, alpha, tau) -> ObjectPose:
        return ObjectPose(tau, alpha)

    def canonical_keys(self) -> list:
        keys = [self.ego_key]
        keys += [StaticFeature(k) for k in self.static_ids]
        for a in self.objects:
            keys += self.ref_keys(a)
        for a in self.objects:
            keys += self.cur_keys(a)
        order = {a: i for i, a in enumerate(self.objects)}
        poses = sorted(((tau, order[a], a) for a, tr in self.objects.items() for tau in tr.poses))
        keys += [ObjectPose(tau, a) for tau, _, a in poses]
        return keys

    def canonical_layout(self) -> VariableLayout:
        return VariableLayout(self.canonical_keys())

    def check_layout(self) -> None:
        if self.belief.layout.keys != tuple(self.canonical_keys()):
            raise StateError("belief layout does not match the canonical ordering")


def evolve(state: FilterState, **changes) -> FilterState:
    """Shallow copy of ``state`` with some fields replaced."""
    out = object.__new__(FilterState)
    out.__dict__ = {**state.__dict__, **changes}
    return out


def new_state(prior_mean, prior_cov, config: FilterConfig | None = None, t: int = 0) -> FilterState:
    prior_mean = np.asarray(prior_mean, dtype=float).reshape(3)
    prior_cov = np.asarray(prior_cov, dtype=float)
    if prior_cov.shape != (3, 3):
        raise NumericError(f"prior covariance must be 3x3, got {prior_cov.shape}")
    if not np.allclose(prior_cov, prior_cov.T, rtol=0, atol=1e-12 * max(np.abs(prior_cov).max(), 1e-300)):
        raise NumericError("prior covariance is not symmetric")
    try:
        np.linalg.cholesky(prior_cov)
    except np.linalg.LinAlgError:
        raise NumericError("prior covariance is not positive definite") from None
    mean = prior_mean.copy()
    mean[2] = wrap_angle(mean[2])
    belief = GaussianBelief(VariableLayout([EgoPose(t)]), mean, prior_cov.copy())
    return FilterState(belief, config or FilterConfig(), t)


def wrap_mean(belief: GaussianBelief) -> GaussianBelief:
    ang = belief.layout.angle_indices()
    if ang.size:
        belief.mean[ang] = wrap_angle(belief.mean[ang])
    return belief


@lru_cache(maxsize=64)
def _positions(static_ids: tuple, object_ids: tuple):
    return {k: i for i, k in enumerate(static_ids)}, {a: i for i, a in enumerate(object_ids)}


def _rank_fn(state: FilterState):
    static_pos, obj_pos = _positions(state.static_ids, tuple(state.objects))

    def rank(key):
        kind = type(key)
        if kind is StaticFeature:
            return (1, static_pos[key.k], 0)
        if kind is ObjectFeature:
            return (2 if key.tau == 0 else 3, obj_pos[key.alpha], key.k)
        if kind is ObjectPose:
            return (4, key.tau, obj_pos[key.alpha])
        if kind is EgoPose:
            return (0, 0, 0)
        raise StateError(f"unexpected key {key!r}")

    return rank


def canonicalize(state: FilterState, belief: GaussianBelief, appended: int | None = None, **changes) -> FilterState:
    """New state with updated bookkeeping and ``belief`` put in canonical order.

    ``appended`` says only the last that many blocks may be out of place; the
    rest is then assumed to be in canonical order already.
    """
    st = evolve(state, belief=belief, **changes)
    keys = belief.layout.keys
    rank = _rank_fn(st)
    start = 0 if appended is None else max(len(keys) - appended - 1, 0)
    try:
        ranks = [rank(k) for k in keys[start:]]
        if any(a > b for a, b in pairwise(ranks)):
            if start:
                ranks = [rank(k) for k in keys]
            order = sorted(range(len(keys)), key=ranks.__getitem__)
            belief = reorder(belief, belief.layout.select([keys[i] for i in order]))
    except KeyError as exc:
        raise StateError(f"belief holds a variable unknown to the bookkeeping: {exc}") from None
    st.belief = wrap_mean(belief)
    return st


def remove_keys(state: FilterState, keys: Iterable, objects: dict | None = None) -> FilterState:
    """Remove variables from the state, by dropping or marginalizing them.

    In covariance form dropping a block is its exact marginal; the
    ``"marginalize"`` mode instead runs a Schur-complement elimination of the
    prior cost, which agrees to rounding.
    """
    keys = list(keys)
    if not keys:
        return state if objects is None else evolve(state, objects=objects)
    b = state.belief
    keep = [k for k in b.layout.keys if k not in set(keys)]
    if state.config.drop_mode == "marginalize":
        out = marginalize([prior_term(b)], b.layout, keep, keys, b.mean)
    else:
        out = b.marginal(keep)
    changes = {} if objects is None else {"objects": objects}
    return canonicalize(state, out, **changes)


def drop_stale_clouds(state: FilterState, keep=()) -> FilterState:
    """Remove current clouds left over from earlier time steps.

    Objects in ``keep`` hold on to theirs.
    """
    keys, objects = [], dict(state.objects)
    for a, tr in state.objects.items():
        if tr.current is not None and tr.current != state.t and a not in keep:
            keys += state.cur_keys(a)
            objects[a] = tr._replace(current=None)
    if not keys:
        return state
    return remove_keys(state, keys, objects)


def drop_old_poses(state: FilterState, keep_last: int = 3) -> FilterState:
    """Keep only poses from the last ``keep_last`` time steps of each object."""
    keys, objects = [], dict(state.objects)
    for a, tr in state.objects.items():
        old = [tau for tau in tr.poses if tau <= state.t - keep_last]
        if old:
            keys += [ObjectPose(tau, a) for tau in old]
            objects[a] = tr._replace(poses=tuple(tau for tau in tr.poses if tau > state.t - keep_last))
    if not keys:
        return state
    return remove_keys(state, keys, objects)


def smoothing_objects(state: FilterState) -> list:
    t = state.t
    return [a for a, tr in state.objects.items() if {t - 2, t - 1, t} <= set(tr.poses)]


def pose_candidates(state: FilterState) -> list:
    """Objects whose current cloud is from this step and have no pose yet."""
    return [a for a, tr in state.objects.items() if tr.current == state.t and state.t not in tr.poses]


def split_frame(state: FilterState, frame: FrameData):
    """Partition a frame's measurements by how the filter consumes them.

    Returns ``(new_static, tracked_objects, new_objects, old_static)`` as
    lists of ``(z, association)`` pairs, except ``old_static`` which is a list
    of ``(id, z)``.
    """
    if frame.t != state.t:
        raise StateError(f"frame for time {frame.t} given to a filter at time {state.t}")
    known = set(state.static_ids)
    new_static, old_static = [], []
    for k, z in frame.static.items():
        if k in known:
            old_static.append((k, z))
        else:
            new_static.append((z, Static(k)))
    tracked, fresh = [], []
    for a, zs in frame.objects.items():
        if a in frame.new_objects:
            if a in state.objects:
                raise AssociationError(f"object {a} declared new but already tracked")
            fresh += [(z, NewObject(a, k)) for k, z in enumerate(zs)]
        else:
            if a not in state.objects:
                raise AssociationError(f"measurement of unknown object {a}")
            if zs.shape[0] != state.n_of(a):
                raise AssociationError(
                    f"object {a} observed with {zs.shape[0]} features, tracked with {state.n_of(a)}"
                )
            tracked += [(z, ObjectObs(a, k)) for k, z in enumerate(zs)]
    return new_static, tracked, fresh, old_static


def new_feature_keys(state: FilterState, measurements) -> tuple[list, tuple, dict]:
    """Keys for newly augmented features and the bookkeeping that follows.

    Returns ``(keys, static_ids, objects)``.
    """
    static_ids = list(state.static_ids)
    objects = dict(state.objects)
    keys = []
    new_counts: dict = {}
    seen = set()
    for _, assoc in measurements:
        if isinstance(assoc, Static):
            if assoc.id in state.static_ids or assoc.id in seen:
                raise AssociationError(f"static feature {assoc.id} is already tracked")
            seen.add(assoc.id)
            static_ids.append(assoc.id)
            keys.append(StaticFeature(assoc.id))
        elif isinstance(assoc, ObjectObs):
            tr = objects.get(assoc.alpha)
            if tr is None:
                raise AssociationError(f"association to unknown object {assoc.alpha}")
            if not 0 <= assoc.k < tr.n_features:
                raise AssociationError(f"object {assoc.alpha} has no feature {assoc.k}")
            if tr.current is not None and tr.current != state.t:
                raise StateError(f"object {assoc.alpha} still holds the cloud from time {tr.current}")
            key = ObjectFeature(state.t, assoc.alpha, assoc.k)
            if key in state.belief.layout or key in seen:
                raise AssociationError(f"{key} is already in the state")
            seen.add(key)
            objects[assoc.alpha] = tr._replace(current=state.t)
            keys.append(key)
        elif isinstance(assoc, NewObject):
            if assoc.alpha in state.objects:
                raise AssociationError(f"object {assoc.alpha} declared new but already tracked")
            key = ObjectFeature(0, assoc.alpha, assoc.k)
            if key in seen:
                raise AssociationError(f"{key} given twice")
            seen.add(key)
            new_counts[assoc.alpha] = new_counts.get(assoc.alpha, 0) + 1
            keys.append(key)
        else:
            raise AssociationError(f"unknown association {assoc!r}")
    for a, n in new_counts.items():
        ks = sorted(key.k for key in keys if isinstance(key, ObjectFeature) and key.alpha == a and key.tau == 0)
        if ks != list(range(n)):
            raise AssociationError(f"new object {a} must list features 0..{n - 1}")
        objects[a] = ObjectTrack(n_features=n, first_seen=state.t)
    for a, tr in objects.items():
        if tr.current == state.t and a in state.objects:
            have = [k for k in keys if isinstance(k, ObjectFeature) and k.alpha == a and k.tau == state.t]
            have += [k for k in state.cur_keys(a) if k in state.belief.layout]
            if len(set(have)) != tr.n_features:
                raise AssociationError(f"object {a} must be observed with all {tr.n_features} features")
    return keys, tuple(static_ids), objects


# ---------------------------------------------------------------------------
# snapshots


def _key_to_json(key) -> dict:
    if isinstance(key, EgoPose):
        return {"kind": "ego", "t": key.t}
    if isinstance(key, StaticFeature):
        return {"kind": "static", "k": key.k}
    if isinstance(key, ObjectFeature):
        return {"kind": "object_feature", "tau": key.tau, "alpha": key.alpha, "k": key.k}
    if isinstance(key, ObjectPose):
        return {"kind": "object_pose", "tau": key.tau, "alpha": key.alpha}
    raise ValueError(f"cannot serialize key {key!r}")


def _key_from_json(d: dict):
    kind = d["kind"]
    if kind == "ego":
        return EgoPose(d["t"])
    if kind == "static":
        return StaticFeature(d["k"])
    if kind == "object_feature":
        return ObjectFeature(d["tau"], d["alpha"], d["k"])
    if kind == "object_pose":
        return ObjectPose(d["tau"], d["alpha"])
    raise ValueError(f"unknown key kind {kind!r}")


def state_to_dict(state: FilterState) -> dict:
    b = state.belief
    return {
        "t": state.t,
        "static_ids": list(state.static_ids),
        "objects": [
            {"alpha": a, "n_features": tr.n_features, "first_seen": tr.first_seen,
             "current": tr.current, "poses": list(tr.poses)}
            for a, tr in state.objects.items()
        ],
        "layout": [_key_to_json(k) for k in b.layout.keys],
        "mean": b.mean.tolist(),
        "cov": b.cov.tolist(),
    }


def state_from_dict(d: dict, config: FilterConfig | None = None) -> FilterState:
    layout = VariableLayout([_key_from_json(k) for k in d["layout"]])
    belief = GaussianBelief(layout, np.array(d["mean"], dtype=float), np.array(d["cov"], dtype=float))
    objects = {
        o["alpha"]: ObjectTrack(o["n_features"], o["first_seen"], o["current"], tuple(o["poses"]))
        for o in d["objects"]
    }
    st = FilterState(belief, config or FilterConfig(), d["t"], tuple(d["static_ids"]), objects)
    st.check_layout()
    return st


def dumps_state(state: FilterState) -> str:
    return json.dumps(state_to_dict(state), indent=1)


def loads_state(text: str, config: FilterConfig | None = None) -> FilterState:
    return state_from_dict(json.loads(text), config)
