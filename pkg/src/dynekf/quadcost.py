"""Quadratic costs over a flat state vector.

A cost is a list of :class:`ResidualTerm` objects, each contributing the
squared Mahalanobis norm ``r(x)^T N^{-1} r(x)`` of a residual over a few
variable blocks.  The operations here linearize such a cost once and either
collapse it into a Gaussian over all variables (:func:`gauss_newton_step`) or
over a subset after eliminating the rest (:func:`marginalize`).

Only single Gauss-Newton iterations are provided; the filters built on top of
this module never iterate to convergence.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from itertools import accumulate
from typing import NamedTuple

import numpy as np
from scipy import linalg as sla

from .errors import LayoutError, MarginalizationError, NumericError, SingularityError

DX = 3  # ego pose / object pose dimension
DF = 2  # feature position dimension
DZ = 2  # measurement dimension

PINV_RTOL = 1e-10
JITTER_SCALE = 1e-12
SYM_TOL = 1e-9
PSD_TOL = 1e-9


# ---------------------------------------------------------------------------
# variable keys


# Keys are named tuples for cheap hashing; the trailing ``kind`` tag keeps
# keys of different kinds with equal fields from comparing equal.


class EgoPose(NamedTuple):
    t: int = 0
    kind: str = "ego"

    def __repr__(self):
        return f"EgoPose(t={self.t})"


class StaticFeature(NamedTuple):
    k: int
    kind: str = "static"

    def __repr__(self):
        return f"StaticFeature(k={self.k})"


class ObjectFeature(NamedTuple):
    """Feature ``k`` of object ``alpha``; ``tau == 0`` is the reference cloud."""

    tau: int
    alpha: int
    k: int
    kind: str = "object_feature"

    def __repr__(self):
        return f"ObjectFeature(tau={self.tau}, alpha={self.alpha}, k={self.k})"


class ObjectPose(NamedTuple):
    tau: int
    alpha: int
    kind: str = "object_pose"

    def __repr__(self):
        return f"ObjectPose(tau={self.tau}, alpha={self.alpha})"


_KEY_DIMS = {EgoPose: DX, StaticFeature: DF, ObjectFeature: DF, ObjectPose: DX}
_ANGLE_OFFSET = {EgoPose: 2, ObjectPose: 2}


def key_dim(key) -> int:
    try:
        return _KEY_DIMS[type(key)]
    except KeyError:
        raise LayoutError(f"no default dimension for key {key!r}") from None


class VariableLayout:
    """Ordered blocks of a flat state vector.

    Entries are ``(key, dim)`` pairs; blocks are stored contiguously in the
    order given.  Keys of the four SLAM kinds may be passed bare, in which
    case their dimension is implied by the kind.
    """

    __slots__ = ("_angles", "_dims", "_keys", "_offsets", "_pos", "dim")

    def __init__(self, entries: Iterable = ()):
        keys, dims = [], []
        for entry in entries:
            dim = _KEY_DIMS.get(type(entry))
            if dim is not None:
                key = entry
            elif isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[1], (int, np.integer)):
                key, dim = entry
                dim = int(dim)
                if type(key) in _KEY_DIMS and dim != _KEY_DIMS[type(key)]:
                    raise LayoutError(f"{key!r} must have dimension {_KEY_DIMS[type(key)]}, got {dim}")
            else:
                key, dim = entry, key_dim(entry)
            if dim <= 0:
                raise LayoutError(f"block {key!r} has non-positive dimension {dim}")
            keys.append(key)
            dims.append(dim)
        self._set(tuple(keys), tuple(dims))

    def _set(self, keys: tuple, dims: tuple, pos: dict | None = None, offsets: list | None = None) -> None:
        self._keys = keys
        self._dims = dims
        if pos is None:
            pos = {k: i for i, k in enumerate(keys)}
            if len(pos) != len(keys):
                raise LayoutError("duplicate keys in layout")
        self._pos = pos
        self._offsets = [0, *accumulate(dims)] if offsets is None else offsets
        self._angles = None
        self.dim = self._offsets[-1]

    @classmethod
    def _trusted(cls, keys: tuple, dims: tuple, pos: dict | None = None, offsets: list | None = None) -> VariableLayout:
        out = cls.__new__(cls)
        out._set(keys, dims, pos, offsets)
        return out

    @property
    def keys(self) -> tuple:
        return self._keys

    @property
    def entries(self) -> list:
        return list(zip(self._keys, self._dims))

    def __len__(self):
        return len(self._keys)

    def __iter__(self):
        return iter(self._keys)

    def __contains__(self, key):
        return key in self._pos

    def __eq__(self, other):
        return isinstance(other, VariableLayout) and self._keys == other._keys and self._dims == other._dims

    def __repr__(self):
        return f"VariableLayout({len(self)} blocks, dim={self.dim})"

    def dim_of(self, key) -> int:
        return self._dims[self._position(key)]

    def _position(self, key) -> int:
        try:
            return self._pos[key]
        except KeyError:
            raise LayoutError(f"unknown key {key!r}") from None

    def slice(self, key) -> slice:
        i = self._position(key)
        return slice(self._offsets[i], self._offsets[i + 1])

    def index(self, keys: Iterable) -> np.ndarray:
        """Flat indices of the given blocks, concatenated in the given order."""
        offs = self._offsets
        out = []
        for k in keys:
            i = self._position(k)
            out.extend(range(offs[i], offs[i + 1]))
        return np.array(out, dtype=np.intp)

    def relabel(self, mapping: dict) -> VariableLayout:
        """Same blocks with keys renamed by ``mapping`` (dimensions unchanged)."""
        pos = self._pos.copy()
        for old in mapping:
            self._position(old)
        for old, new in mapping.items():
            pos[new] = pos.pop(old) if old in pos else self._pos[old]
        if len(pos) != len(self._keys):
            raise LayoutError("relabeling produces duplicate keys")
        out = VariableLayout._trusted(tuple(map(mapping.get, self._keys, self._keys)), self._dims, pos, self._offsets)
        if all(type(a) is type(b) for a, b in mapping.items()):
            out._angles = self._angles
        return out

    def extend(self, entries: Iterable) -> VariableLayout:
        other = entries if isinstance(entries, VariableLayout) else VariableLayout(entries)
        pos = self._pos.copy()
        n = len(self._keys)
        for i, k in enumerate(other._keys):
            pos[k] = n + i
        if len(pos) != n + len(other._keys):
            raise LayoutError("duplicate keys in layout")
        offsets = self._offsets + [self.dim + o for o in other._offsets[1:]]
        return VariableLayout._trusted(self._keys + other._keys, self._dims + other._dims, pos, offsets)

    def select(self, keys: Iterable) -> VariableLayout:
        keys = tuple(keys)
        return VariableLayout._trusted(keys, tuple(self._dims[self._position(k)] for k in keys))

    def without(self, keys: Iterable) -> VariableLayout:
        drop = sorted(self._position(k) for k in set(keys))
        if not drop:
            return self
        # keep the runs between dropped blocks, shifting positions and offsets
        keys, dims, offsets = [], [], [0]
        pos = self._pos.copy()
        old_offs = self._offsets
        start = 0
        for i in [*drop, len(self._keys)]:
            if i > start:
                shift = len(keys) - start
                run = self._keys[start:i]
                if shift:
                    for j, k in enumerate(run, start + shift):
                        pos[k] = j
                keys.extend(run)
                dims.extend(self._dims[start:i])
                base = offsets[-1] - old_offs[start]
                offsets.extend(o + base for o in old_offs[start + 1 : i + 1])
            if i < len(self._keys):
                del pos[self._keys[i]]
            start = i + 1
        return VariableLayout._trusted(tuple(keys), tuple(dims), pos, offsets)

    def angle_indices(self) -> np.ndarray:
        if self._angles is None:
            offs = self._offsets
            idx = [offs[i] + _ANGLE_OFFSET[type(k)] for i, k in enumerate(self._keys) if type(k) in _ANGLE_OFFSET]
            self._angles = np.array(idx, dtype=np.intp)
        return self._angles


# ---------------------------------------------------------------------------
# beliefs and residual terms


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return w if np.ndim(w) else float(w)


@dataclass
class GaussianBelief:
    layout: VariableLayout
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float)
        d = self.layout.dim
        if self.mean.shape != (d,) or self.cov.shape != (d, d):
            raise LayoutError(
                f"belief shapes {self.mean.shape}, {self.cov.shape} do not match layout dimension {d}"
            )

    @property
    def dim(self) -> int:
        return self.layout.dim

    def block(self, key, other=None):
        s = self.layout.slice(key)
        return self.cov[s, self.layout.slice(other if other is not None else key)]

    def mean_of(self, key):
        return self.mean[self.layout.slice(key)]

    def marginal(self, keys: Sequence) -> GaussianBelief:
        idx = self.layout.index(keys)
        return GaussianBelief(self.layout.select(keys), self.mean[idx], self.cov[idx][:, idx])

    def copy(self) -> GaussianBelief:
        return GaussianBelief(self.layout, self.mean.copy(), self.cov.copy())

    def check(self, sym_tol: float = SYM_TOL, psd_tol: float = PSD_TOL) -> None:
        """Raise :class:`NumericError` unless the covariance is symmetric PSD."""
        violation = belief_violation(self.cov, sym_tol, psd_tol)
        if violation:
            raise NumericError(violation)


def belief_violation(cov, sym_tol: float = SYM_TOL, psd_tol: float = PSD_TOL) -> str | None:
    """Describe how ``cov`` breaks the symmetric-PSD invariant, or None."""
    cov = np.asarray(cov)
    if not np.all(np.isfinite(cov)):
        return "covariance has non-finite entries"
    if cov.size == 0:
        return None
    norm = np.linalg.norm(cov)
    asym = np.linalg.norm(cov - cov.T)
    if asym > sym_tol * max(norm, np.finfo(float).tiny):
        return f"covariance not symmetric: relative asymmetry {asym / norm:.3e}"
    w = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if w[0] < -psd_tol * max(w[-1], 0.0):
        return f"covariance not PSD: min eigenvalue {w[0]:.3e}, max {w[-1]:.3e}"
    return None


def belief_deviation(a: GaussianBelief, b: GaussianBelief) -> tuple[float, float]:
    """Max relative deviation of means and covariances; ``b`` is the reference."""
    if a.layout != b.layout:
        return np.inf, np.inf
    dm = a.mean - b.mean
    ang = b.layout.angle_indices()
    dm[ang] = wrap_angle(dm[ang])
    scale_m = max(np.abs(b.mean).max(initial=0.0), np.finfo(float).tiny)
    scale_c = max(np.abs(b.cov).max(initial=0.0), np.finfo(float).tiny)
    return float(np.abs(dm).max(initial=0.0) / scale_m), float(np.abs(a.cov - b.cov).max(initial=0.0) / scale_c)


@dataclass
class ResidualTerm:
    """One Mahalanobis cost term ``||r(x_sub)||^2`` weighted by ``noise^{-1}``.

    ``fn`` and ``jac`` receive the concatenation of the referenced blocks, in
    the order of ``keys``.
    """

    keys: tuple
    fn: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    noise: np.ndarray
    name: str = field(default="")

    def __post_init__(self):
        self.keys = tuple(self.keys)
        self.noise = np.atleast_2d(np.asarray(self.noise, dtype=float))

    def cost(self, x_sub) -> float:
        r = np.asarray(self.fn(x_sub), dtype=float)
        return float(r @ np.linalg.solve(self.noise, r))


def dead_indices(cov) -> np.ndarray:
    """Indices whose covariance row is exactly zero (variables held fixed)."""
    cov = np.asarray(cov)
    return np.flatnonzero(~np.any(cov != 0.0, axis=1))


def prior_term(belief: GaussianBelief, name: str = "prior") -> ResidualTerm:
    """The term ``||x - mu||^2_{Sigma^{-1}}`` over every block of ``belief``.

    Components with an exactly zero covariance row carry no residual; the
    pseudo-inverse collapses then leave them at their linearization value.
    """
    mu = belief.mean.copy()
    ang = belief.layout.angle_indices()
    dead = dead_indices(belief.cov)
    live = np.setdiff1d(np.arange(belief.dim), dead)
    eye = np.eye(belief.dim)[live]
    noise = belief.cov[np.ix_(live, live)] if dead.size else belief.cov

    def fn(x):
        r = x - mu
        if ang.size:
            r[ang] = wrap_angle(r[ang])
        return r[live] if dead.size else r

    return ResidualTerm(belief.layout.keys, fn, lambda x: eye, noise, name)


# ---------------------------------------------------------------------------
# linear algebra helpers


def inv_sqrt_spd(m: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root; raises if ``m`` is not positive definite."""
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise NumericError("noise covariance has non-finite entries")
    if m.shape == (1, 1):
        if m[0, 0] <= 0:
            raise NumericError("noise covariance is not positive definite")
        return np.array([[m[0, 0] ** -0.5]])
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w[0] <= max(w[-1], 0.0) * 1e-15 or w[0] <= 0:
        raise NumericError(f"noise covariance is not positive definite (min eigenvalue {w[0]:.3e})")
    return (v / np.sqrt(w)) @ v.T


def cho_factor_jitter(a: np.ndarray, what: str = "matrix", error=NumericError):
    """Cholesky factor of a symmetric matrix, retrying once with diagonal jitter."""
    a = 0.5 * (a + a.T)
    try:
        return sla.cho_factor(a, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        pass
    d = a.shape[0]
    jitter = JITTER_SCALE * np.trace(a) / max(d, 1)
    try:
        if not jitter > 0:
            raise np.linalg.LinAlgError
        return sla.cho_factor(a + jitter * np.eye(d), lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        raise error(f"{what} is not positive definite even after jitter") from None


def sym_solve(a: np.ndarray, b: np.ndarray, what: str = "matrix", error=NumericError) -> np.ndarray:
    return sla.cho_solve(cho_factor_jitter(a, what, error), b)


def _rank_from_svd(s: np.ndarray, rtol: float = PINV_RTOL) -> int:
    # s are singular values of the whitened Jacobian J, not of J^T J
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _normal_inverse(J: np.ndarray, pseudo: bool) -> np.ndarray:
    """``(J^T J)^{-1}`` (or its pseudoinverse) without forming ``J^T J``."""
    m, n = J.shape
    if n == 0:
        return np.zeros((0, 0))
    if pseudo:
        cov = np.zeros((n, n))
        live = np.flatnonzero(np.any(J != 0.0, axis=0))
        if live.size == 0:
            return cov
        try:
            cov[np.ix_(live, live)] = _normal_inverse(J[:, live], pseudo=False)
        except SingularityError:
            _, s, vt = np.linalg.svd(J[:, live], full_matrices=False)
            r = _rank_from_svd(s)
            v = vt[:r].T
            cov[np.ix_(live, live)] = (v / s[:r] ** 2) @ v.T
        return cov
    if m < n:
        raise SingularityError(f"normal matrix rank at most {m} < {n}", rank=m, dim=n)
    r_fac = np.linalg.qr(J, mode="r")
    rcond, _ = sla.lapack.dtrcon(r_fac, norm="1", uplo="U", diag="N")
    if not np.isfinite(rcond) or rcond < PINV_RTOL:
        s = np.linalg.svd(J, compute_uv=False)
        rank = _rank_from_svd(s)
        if rank < n:
            raise SingularityError(f"normal matrix is rank deficient: rank {rank} of {n}", rank=rank, dim=n)
    rinv = sla.solve_triangular(r_fac, np.eye(n), lower=False)
    return rinv @ rinv.T


# ---------------------------------------------------------------------------
# operations


def stack_residuals(terms: Sequence[ResidualTerm], layout: VariableLayout, point) -> tuple[np.ndarray, np.ndarray]:
    """Whitened residual vector ``C`` and its Jacobian ``J`` over the full layout."""
    point = np.asarray(point, dtype=float)
    if point.shape != (layout.dim,):
        raise LayoutError(f"point has shape {point.shape}, layout dimension is {layout.dim}")
    whiteners = {}
    blocks_c, blocks_j, cols = [], [], []
    for term in terms:
        idx = layout.index(term.keys)
        x_sub = point[idx]
        r = np.asarray(term.fn(x_sub), dtype=float).reshape(-1)
        jt = np.asarray(term.jac(x_sub), dtype=float).reshape(r.size, idx.size)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(jt))):
            raise NumericError(f"non-finite residual or Jacobian in term {term.name or term.keys!r}")
        if term.noise.shape != (r.size, r.size):
            raise LayoutError(f"term {term.name!r}: noise shape {term.noise.shape} for residual size {r.size}")
        tag = term.noise.tobytes()
        w = whiteners.get(tag)
        if w is None:
            w = whiteners[tag] = inv_sqrt_spd(term.noise)
        blocks_c.append(w @ r)
        blocks_j.append(w @ jt)
        cols.append(idx)
    rows = sum(c.size for c in blocks_c)
    C = np.concatenate(blocks_c) if blocks_c else np.zeros(0)
    J = np.zeros((rows, layout.dim))
    r0 = 0
    for jb, idx in zip(blocks_j, cols):
        J[r0 : r0 + jb.shape[0], idx] = jb
        r0 += jb.shape[0]
    return C, J


def gauss_newton_step(terms, layout: VariableLayout, lin_point, pseudo: bool = False) -> GaussianBelief:
    """One Gauss-Newton step about ``lin_point``, returned as a Gaussian.

    The covariance is ``(J^T J)^{-1}``; with ``pseudo=True`` the
    Moore-Penrose pseudoinverse is used instead: columns of ``J`` that are
    identically zero get zero covariance, and singular values of ``J`` below
    ``1e-10`` of the largest are treated as null.
    """
    lin_point = np.asarray(lin_point, dtype=float)
    C, J = stack_residuals(terms, layout, lin_point)
    cov = _normal_inverse(J, pseudo)
    mean = lin_point - cov @ (J.T @ C)
    return GaussianBelief(layout, mean, 0.5 * (cov + cov.T))


def marginalize(terms, layout: VariableLayout, keep_keys, marg_keys, lin_point, pseudo: bool = False) -> GaussianBelief:
    """Linearize the cost and eliminate ``marg_keys`` by Schur complement.

    The result is a Gaussian over ``keep_keys`` in the order given.  With
    ``pseudo=True`` the kept information is pseudo-inverted as in
    :func:`gauss_newton_step`.
    """
    keep_keys, marg_keys = list(keep_keys), list(marg_keys)
    if not keep_keys:
        raise LayoutError("marginalization needs at least one kept variable")
    if set(keep_keys) & set(marg_keys):
        raise LayoutError("kept and marginalized keys overlap")
    if set(keep_keys) | set(marg_keys) != set(layout.keys) or len(keep_keys) + len(marg_keys) != len(layout):
        raise LayoutError("kept and marginalized keys must partition the layout")
    lin_point = np.asarray(lin_point, dtype=float)
    C, J = stack_residuals(terms, layout, lin_point)
    ik, im = layout.index(keep_keys), layout.index(marg_keys)
    jk, jm = J[:, ik], J[:, im]
    if im.size:
        if jm.shape[0] < im.size:
            raise MarginalizationError("marginalized block is under-determined")
        q, r = np.linalg.qr(jm)
        rcond, _ = sla.lapack.dtrcon(r, norm="1", uplo="U", diag="N")
        if not np.isfinite(rcond) or rcond < PINV_RTOL:
            s = np.linalg.svd(jm, compute_uv=False)
            if _rank_from_svd(s) < im.size:
                raise MarginalizationError("normal matrix of the marginalized block is singular")
        # P = I - J_M (J_M^T J_M)^{-1} J_M^T = I - Q Q^T
        pjk = jk - q @ (q.T @ jk)
    else:
        pjk = jk
    try:
        cov = _normal_inverse(pjk, pseudo=pseudo)
    except SingularityError as exc:
        raise MarginalizationError(f"marginal information is singular: {exc}") from None
    mean = lin_point[ik] - cov @ (pjk.T @ C)
    return GaussianBelief(layout.select(keep_keys), mean, 0.5 * (cov + cov.T))


def reorder(belief: GaussianBelief, new_layout: VariableLayout) -> GaussianBelief:
    """Permute the blocks of ``belief`` into ``new_layout``."""
    old = belief.layout
    if len(new_layout) != len(old) or set(new_layout.keys) != set(old.keys):
        raise LayoutError("new layout is not a permutation of the old one")
    for k in new_layout.keys:
        if new_layout.dim_of(k) != old.dim_of(k):
            raise LayoutError(f"block {k!r} changes dimension under reorder")
    if new_layout.keys == old.keys:
        return GaussianBelief(new_layout, belief.mean.copy(), belief.cov.copy())
    perm = old.index(new_layout.keys)
    return GaussianBelief(new_layout, belief.mean[perm], belief.cov[perm][:, perm])
