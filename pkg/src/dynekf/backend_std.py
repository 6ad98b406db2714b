"""Dynamic EKF SLAM in standard (covariance) form.

Each sub-block manipulates the joint belief directly: augmentation appends
mean entries and covariance rows, updates apply the Kalman gain, and
propagation moves the ego pose.  :func:`step` chains them for one frame.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from . import kernels
from .errors import AssociationError, ModelError, NumericError, StateError
from .models import (
    ego_dynamics,
    ego_dynamics_jac,
    smoothing_residual,
    smoothing_residual_jac,
)
from .quadcost import (
    EgoPose,
    GaussianBelief,
    ObjectFeature,
    ObjectPose,
    StaticFeature,
    cho_factor_jitter,
)
from .state import (
    FilterConfig,
    FilterState,
    FrameData,
    canonicalize,
    drop_old_poses,
    drop_stale_clouds,
    evolve,
    new_feature_keys,
    new_state,
    pose_candidates,
    smoothing_objects,
    split_frame,
    wrap_mean,
)


def init(prior_mean, prior_cov, config: FilterConfig | None = None, t: int = 0) -> FilterState:
    """Filter holding only the ego pose ``N(prior_mean, prior_cov)``."""
    return new_state(prior_mean, prior_cov, config, t)


def _append(belief: GaussianBelief, keys, mean_new, cross, corner, drop_keys=()) -> GaussianBelief:
    """Extend ``belief`` with new blocks; ``cross`` is new-by-old covariance.

    Blocks in ``drop_keys`` are removed in the same pass.
    """
    layout = belief.layout
    mean, cov = belief.mean, belief.cov
    d = mean.size
    m = mean_new.size
    if drop_keys:
        layout = layout.without(drop_keys)
        keep = np.ones(d, dtype=bool)
        keep[belief.layout.index(drop_keys)] = False
        mean, cross = mean[keep], cross[:, keep]
        d = mean.size
    out = np.empty((d + m, d + m))
    if drop_keys:
        _copy_kept(cov, keep, out[:d, :d])
    else:
        out[:d, :d] = cov
    out[d:, :d] = cross
    out[:d, d:] = cross.T
    out[d:, d:] = 0.5 * (corner + corner.T)
    return GaussianBelief(layout.extend(keys), np.concatenate([mean, mean_new]), out)


def _copy_kept(cov, keep, out) -> None:
    """``out[...] = cov[keep][:, keep]`` by contiguous runs of ``keep``."""
    edges = np.flatnonzero(np.diff(np.concatenate([[0], keep.view(np.int8), [0]])))
    runs = list(zip(edges[0::2].tolist(), edges[1::2].tolist()))
    if len(runs) > 4:
        out[...] = cov[keep][:, keep]
        return
    r0 = 0
    for a, b in runs:
        c0 = 0
        for c, e in runs:
            out[r0 : r0 + b - a, c0 : c0 + e - c] = cov[a:b, c:e]
            c0 += e - c
        r0 += b - a


def _kalman(belief: GaussianBelief, pht, S, innovation) -> GaussianBelief:
    """``mu + K innovation``, ``Sigma - K H Sigma`` with ``K = P H^T S^{-1}``.

    With ``S = L L^T`` and ``W = L^{-1} H Sigma`` the covariance update is
    ``Sigma - W^T W``.
    """
    try:
        low = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        low = np.tril(cho_factor_jitter(S, "innovation covariance")[0])
    # an explicit triangular inverse and one gemm beat trsm at these sizes
    inv_low, info = sla.lapack.dtrtri(low, lower=1)
    if info != 0:
        raise NumericError("innovation covariance factor is singular")
    W = inv_low @ pht.T
    nu = inv_low @ innovation
    mean = belief.mean + W.T @ nu
    # W.T @ W goes through a symmetric rank-k update, so symmetry is kept exactly
    cov = belief.cov - W.T @ W
    return GaussianBelief(belief.layout, mean, cov)


def _block_diag(block, n) -> np.ndarray:
    k = block.shape[0]
    out = np.zeros((n, k, n, k))
    idx = np.arange(n)
    out[idx, :, idx, :] = block
    return out.reshape(n * k, n * k)


def _inverse_blocks(state: FilterState, Z):
    """Mean, cross covariance and corner block of features initialized from ``Z``."""
    b = state.belief
    ix = b.layout.slice(state.ego_key)
    F, Lx, Lz = kernels.inverse_measure_batch(b.mean[ix], Z)
    n = Z.shape[0]
    lx = Lx.reshape(2 * n, 3)
    cross = lx @ b.cov[ix, :]
    corner = cross[:, ix] @ lx.T
    blocks = Lz @ state.config.noise.sigma_v @ Lz.transpose(0, 2, 1)
    idx = np.arange(n)
    corner.reshape(n, 2, n, 2)[idx, :, idx, :] += blocks
    return F.reshape(-1), cross, corner


def _stack(measurements) -> np.ndarray:
    return np.array([np.asarray(z, dtype=float).reshape(2) for z, _ in measurements]).reshape(-1, 2)


def feature_augment(state: FilterState, measurements) -> FilterState:
    """Append features initialized by inverse measurement from the ego pose.

    ``measurements`` is a list of ``(z, association)`` pairs with
    associations :class:`~dynekf.state.Static`,
    :class:`~dynekf.state.ObjectObs` or :class:`~dynekf.state.NewObject`.
    """
    if not measurements:
        return state
    keys, static_ids, objects = new_feature_keys(state, measurements)
    mean, cross, corner = _inverse_blocks(state, _stack(measurements))
    out = _append(state.belief, keys, mean, cross, corner)
    return canonicalize(state, out, appended=len(keys), static_ids=static_ids, objects=objects)


def _refresh_clouds(state: FilterState, measurements) -> FilterState:
    """Replace stale current clouds by newly measured ones, in place.

    Equal to dropping the stale clouds and augmenting the new features: the
    new blocks depend on the ego pose only, so they can take over the stale
    rows and columns without a reorder.
    """
    b = state.belief
    stale = [ObjectFeature(state.objects[a.alpha].current, a.alpha, a.k) for _, a in measurements]
    fresh = [ObjectFeature(state.t, a.alpha, a.k) for _, a in measurements]
    mean_new, cross, corner = _inverse_blocks(state, _stack(measurements))
    p = b.layout.index(stale)
    mean = b.mean.copy()
    cov = b.cov.copy()
    mean[p] = mean_new
    cov[p, :] = cross
    cov[:, p] = cross.T
    cov[p[:, None], p] = 0.5 * (corner + corner.T)
    layout = b.layout.relabel(dict(zip(stale, fresh)))
    objects = dict(state.objects)
    for _, a in measurements:
        objects[a.alpha] = objects[a.alpha]._replace(current=state.t)
    return evolve(state, belief=GaussianBelief(layout, mean, cov), objects=objects)


def object_pose_augment(state: FilterState) -> FilterState:
    """Append the pose of each object whose current cloud is from this step.

    The pose is the rigid alignment of the current onto the reference cloud;
    its covariance adds ``Gt Sigma_xi Gt^T`` per object, with the feature
    noise applied to every feature of the current cloud.
    """
    if not state.objects:
        raise StateError("pose augmentation needs at least one tracked object")
    alphas = pose_candidates(state)
    if not alphas:
        return state
    b = state.belief
    sx = state.config.noise.sigma_xi
    d = b.dim
    m = 3 * len(alphas)
    gamma = np.zeros((m, d))
    extra = np.zeros((m, m))
    means = np.zeros(m)
    objects = dict(state.objects)
    for j, a in enumerate(alphas):
        ref = state.ref_keys(a)
        if any(k not in b.layout for k in ref):
            raise StateError(f"object {a} has no reference cloud in the state")
        i0 = b.layout.index(ref)
        it = b.layout.index(state.cur_keys(a))
        n = len(ref)
        xi, g0, gt, degenerate = kernels.procrustes(b.mean[i0].reshape(n, 2), b.mean[it].reshape(n, 2))
        if degenerate and n > 1:
            raise ModelError(f"object {a}: alignment of its clouds is degenerate")
        r = slice(3 * j, 3 * j + 3)
        means[r] = xi
        gamma[r, i0] = g0
        gamma[r, it] = gt
        extra[r, r] = (gt.reshape(3, n, 2) @ sx).reshape(3, -1) @ gt.T
        objects[a] = objects[a]._replace(poses=objects[a].poses + (state.t,))
    cross = gamma @ b.cov
    corner = cross @ gamma.T + extra
    keys = [ObjectPose(state.t, a) for a in alphas]
    old = []
    if state.config.drop_object_history and state.config.drop_mode == "drop":
        # drop poses that fall out of the three-step window while appending
        for a, tr in objects.items():
            gone = tuple(tau for tau in tr.poses if tau <= state.t - 3)
            if gone:
                old += [ObjectPose(tau, a) for tau in gone]
                objects[a] = tr._replace(poses=tuple(tau for tau in tr.poses if tau > state.t - 3))
    out = _append(b, keys, means, cross, corner, drop_keys=old)
    st = canonicalize(state, out, appended=len(keys), objects=objects)
    if st.config.drop_object_history:
        st = drop_old_poses(st)
    return st


def static_feature_update(state: FilterState, measurements) -> FilterState:
    """Kalman update with ``(k, z)`` measurements of tracked static features."""
    if not measurements:
        return state
    b = state.belief
    lay = b.layout
    ids = tuple(k for k, _ in measurements)
    xi = lay.index([state.ego_key])
    if ids == state.static_ids:
        # every static feature seen, in storage order: the canonical layout
        # keeps them as one run right after the ego pose
        fi = np.arange(xi[-1] + 1, xi[-1] + 1 + 2 * len(ids)).reshape(-1, 2)
    else:
        keys = [StaticFeature(k) for k in ids]
        unknown = [k.k for k in keys if k not in lay]
        if unknown:
            raise AssociationError(f"measurements of untracked static features {unknown}")
        fi = lay.index(keys).reshape(-1, 2)
    x = b.mean[xi]
    F = b.mean[fi]
    Zhat, Hx, Hf = kernels.measure_batch(x, F)
    Z = np.array([z for _, z in measurements], dtype=float).reshape(-1, 2)
    n = len(ids)
    R = _block_diag(state.config.noise.sigma_v, n)
    pht = kernels.cov_times_ht(b.cov, xi, fi, Hx, Hf)
    S = kernels.innovation_cov(pht, xi, fi, Hx, Hf, R)
    out = _kalman(b, pht, S, (Z - Zhat).reshape(-1))
    return evolve(state, belief=wrap_mean(out))


def smoothing_update(state: FilterState) -> FilterState:
    """Kalman update pulling each object's last three poses to constant velocity.

    Objects without poses at all of ``t-2``, ``t-1``, ``t`` are skipped.
    """
    alphas = smoothing_objects(state)
    if not alphas:
        return state
    b = state.belief
    t = state.t
    m = 3 * len(alphas)
    H = np.zeros((m, b.dim))
    resid = np.zeros(m)
    sa, sb, sc = smoothing_residual_jac()
    for j, a in enumerate(alphas):
        r = slice(3 * j, 3 * j + 3)
        ks = [ObjectPose(t - 2, a), ObjectPose(t - 1, a), ObjectPose(t, a)]
        xs = [b.mean_of(k) for k in ks]
        resid[r] = smoothing_residual(*xs)
        for k, jac in zip(ks, (sa, sb, sc)):
            H[r, b.layout.slice(k)] = jac
    pht = b.cov @ H.T
    S = H @ pht + _block_diag(state.config.noise.sigma_s, len(alphas))
    out = _kalman(b, pht, S, -resid)
    return canonicalize(state, out, appended=0)


def state_propagate(state: FilterState, odom) -> FilterState:
    """Move the ego pose by ``odom`` and advance time by one step."""
    b = state.belief
    ix = b.layout.slice(state.ego_key)
    x = b.mean[ix]
    G = ego_dynamics_jac(x, odom)
    mean = b.mean.copy()
    mean[ix] = ego_dynamics(x, odom)
    cov = b.cov.copy()
    top = G @ cov[ix, :]
    cov[ix, :] = top
    cov[:, ix] = top.T
    pxx = top[:, ix] @ G.T
    cov[ix, ix] = 0.5 * (pxx + pxx.T) + state.config.noise.sigma_w
    layout = b.layout.relabel({state.ego_key: EgoPose(state.t + 1)})
    return evolve(state, belief=GaussianBelief(layout, mean, cov), t=state.t + 1)


def step(state: FilterState, frame: FrameData) -> FilterState:
    """One filter cycle for ``frame``.

    Order: new static features, tracked object clouds, object poses, new
    objects, smoothing, static update, propagation.  The belief after the
    static update is kept as ``estimate`` on the returned state.
    """
    new_static, tracked, fresh, old_static = split_frame(state, frame)
    in_place = []
    if state.config.drop_mode == "drop":
        in_place = [(z, a) for z, a in tracked if state.objects[a.alpha].current not in (None, state.t)]
    keep = {a.alpha for _, a in in_place}
    state = drop_stale_clouds(state, keep=keep)
    state = feature_augment(state, new_static)
    if tracked:
        if in_place:
            state = _refresh_clouds(state, in_place)
        state = feature_augment(state, [(z, a) for z, a in tracked if a.alpha not in keep])
        state = object_pose_augment(state)
    state = feature_augment(state, fresh)
    if state.config.smoothing:
        state = smoothing_update(state)
    state = static_feature_update(state, old_static)
    state = evolve(state, estimate=state.belief)
    if frame.odom is not None:
        state = state_propagate(state, frame.odom)
    return state


def run(state: FilterState, frames) -> tuple[FilterState, list]:
    """Run ``step`` over ``frames``; returns the final state and per-step states."""
    history = []
    for frame in frames:
        state = step(state, frame)
        history.append(state)
    return state, history

