"""Planar driving models: odometry dynamics, body-frame point measurements,
rigid object motion about the cloud centroid, and their Jacobians.

Poses are arrays ``(x, y, theta)`` with ``theta`` in radians, features are
``(x, y)`` arrays in meters, clouds are ``(n, 2)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .quadcost import wrap_angle

# Procrustes alignment is undefined when the centered clouds carry no
# rotational signal; compared against the squared cloud spread.
DEGENERACY_RTOL = 1e-12


def rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def drot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[-s, -c], [c, -s]])


# ---------------------------------------------------------------------------
# noise


def noise_level(i: int) -> tuple[np.ndarray, np.ndarray]:
    """Odometry and measurement covariances of experiment noise level 1, 2 or 3."""
    if i not in (1, 2, 3):
        raise ValueError(f"noise level must be 1, 2 or 3, got {i}")
    scale = 10.0 ** (i - 7)
    sigma_w = np.diag([scale, scale, scale * 1e-2])
    sigma_v = scale * np.eye(2)
    return sigma_w, sigma_v


@dataclass
class NoiseModel:
    sigma_w: np.ndarray = field(default_factory=lambda: noise_level(1)[0])
    sigma_v: np.ndarray = field(default_factory=lambda: noise_level(1)[1])
    sigma_xi: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(2))
    sigma_s: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(3))

    def __post_init__(self):
        for name, shape in (("sigma_w", (3, 3)), ("sigma_v", (2, 2)), ("sigma_xi", (2, 2)), ("sigma_s", (3, 3))):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != shape:
                raise ValueError(f"{name} must be {shape}, got {m.shape}")
            setattr(self, name, m)

    @classmethod
    def from_levels(cls, w: int, v: int, **kw) -> NoiseModel:
        return cls(sigma_w=noise_level(w)[0], sigma_v=noise_level(v)[1], **kw)

    def is_spd(self) -> bool:
        for m in (self.sigma_w, self.sigma_v, self.sigma_xi, self.sigma_s):
            if not np.allclose(m, m.T) or np.linalg.eigvalsh(m)[0] <= 0:
                return False
        return True


# ---------------------------------------------------------------------------
# ego dynamics


def ego_dynamics(x, odom) -> np.ndarray:
    out = np.asarray(x, dtype=float) + np.asarray(odom, dtype=float)
    out[2] = wrap_angle(out[2])
    return out


def ego_dynamics_jac(x, odom=None) -> np.ndarray:
    return np.eye(3)


def odometry_between(x0, x1) -> np.ndarray:
    """Odometry increment that maps ``x0`` onto ``x1`` under :func:`ego_dynamics`."""
    d = np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)
    d[2] = wrap_angle(d[2])
    return d


# ---------------------------------------------------------------------------
# measurement and its inverse


def measure(x, f) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return rot(x[2]).T @ (np.asarray(f, dtype=float) - x[:2])


def measure_jac(x, f) -> tuple[np.ndarray, np.ndarray]:
    """``(dh/dx, dh/df)`` with shapes (2, 3) and (2, 2)."""
    x = np.asarray(x, dtype=float)
    rt = rot(x[2]).T
    d = np.asarray(f, dtype=float) - x[:2]
    hx = np.empty((2, 3))
    hx[:, :2] = -rt
    hx[:, 2] = drot(x[2]).T @ d
    return hx, rt


def inverse_measure(x, z) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:2] + rot(x[2]) @ np.asarray(z, dtype=float)


def inverse_measure_jac(x, z) -> tuple[np.ndarray, np.ndarray]:
    """``(dl/dx, dl/dz)`` with shapes (2, 3) and (2, 2)."""
    x = np.asarray(x, dtype=float)
    lx = np.empty((2, 3))
    lx[:, :2] = np.eye(2)
    lx[:, 2] = drot(x[2]) @ np.asarray(z, dtype=float)
    return lx, rot(x[2])


# ---------------------------------------------------------------------------
# rigid object motion


def _cloud(f) -> np.ndarray:
    f = np.asarray(f, dtype=float).reshape(-1, 2)
    if f.shape[0] == 0:
        raise ModelError("feature cloud is empty")
    return f


def object_transform(xi, f0) -> np.ndarray:
    """Rotate ``f0`` by ``xi[2]`` about its centroid, then shift by ``xi[:2]``."""
    f0 = _cloud(f0)
    xi = np.asarray(xi, dtype=float)
    c = f0.mean(axis=0)
    return (f0 - c) @ rot(xi[2]).T + c + xi[:2]


def object_transform_jac(xi, f0) -> tuple[np.ndarray, np.ndarray]:
    """``(dg/dxi, dg/df0)`` for the flattened output, shapes (2n, 3), (2n, 2n)."""
    f0 = _cloud(f0)
    n = f0.shape[0]
    xi = np.asarray(xi, dtype=float)
    r = rot(xi[2])
    gxi = np.zeros((2 * n, 3))
    gxi[:, 0] = np.tile([1.0, 0.0], n)
    gxi[:, 1] = np.tile([0.0, 1.0], n)
    gxi[:, 2] = ((f0 - f0.mean(axis=0)) @ drot(xi[2]).T).reshape(-1)
    gf = np.kron(np.eye(n), r) + np.kron(np.ones((n, n)), (np.eye(2) - r) / n)
    return gxi, gf


@dataclass
class Alignment:
    xi: np.ndarray
    degenerate: bool


def _align(f0, ft):
    f0, ft = _cloud(f0), _cloud(ft)
    if f0.shape != ft.shape:
        raise ModelError(f"cloud sizes differ: {f0.shape[0]} vs {ft.shape[0]}")
    c0, ct = f0.mean(axis=0), ft.mean(axis=0)
    a, b = f0 - c0, ft - ct
    return a, b, c0, ct


def _is_degenerate(a, b, n) -> bool:
    if n == 1:
        return True
    spread = np.sum(a * a) * np.sum(b * b)
    s = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    c = np.sum(a * b)
    return s * s + c * c <= DEGENERACY_RTOL * spread or spread == 0.0


def inverse_object_transform(f0, ft) -> Alignment:
    """Least-squares rigid alignment of ``ft`` onto ``f0`` (2-D Wahba/Procrustes).

    The rotation comes from the SVD of the centered cross-covariance with a
    determinant correction; translation is the centroid shift.  Clouds whose
    rotation is unobservable return ``theta = 0`` and ``degenerate=True``.
    """
    a, b, c0, ct = _align(f0, ft)
    xi = np.zeros(3)
    xi[:2] = ct - c0
    if _is_degenerate(a, b, a.shape[0]):
        return Alignment(xi, True)
    u, _, vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, d]) @ u.T
    xi[2] = np.arctan2(r[1, 0], r[0, 0])
    return Alignment(xi, False)


def inverse_object_transform_jac(f0, ft) -> tuple[np.ndarray, np.ndarray]:
    """``(dgamma/df0, dgamma/dft)``, each (3, 2n).

    Single-feature clouds get a zero rotation row (rotation pinned at 0);
    other degenerate clouds raise :class:`ModelError`.
    """
    a, b, _, _ = _align(f0, ft)
    n = a.shape[0]
    g0 = np.zeros((3, 2 * n))
    gt = np.zeros((3, 2 * n))
    g0[0, 0::2] = g0[1, 1::2] = -1.0 / n
    gt[0, 0::2] = gt[1, 1::2] = 1.0 / n
    if n == 1:
        return g0, gt
    if _is_degenerate(a, b, n):
        raise ModelError("rotation of a degenerate cloud pair has no derivative")
    # theta = atan2(S, C), S = sum a x b, C = sum a . b
    s = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    c = np.sum(a * b)
    den = s * s + c * c
    ds0 = np.stack([b[:, 1], -b[:, 0]], axis=1).reshape(-1)
    dc0 = b.reshape(-1)
    dst = np.stack([-a[:, 1], a[:, 0]], axis=1).reshape(-1)
    dct = a.reshape(-1)
    g0[2] = (c * ds0 - s * dc0) / den
    gt[2] = (c * dst - s * dct) / den
    return g0, gt


# ---------------------------------------------------------------------------
# smoothing


def smoothing_residual(xa, xb, xc) -> np.ndarray:
    """Second difference of three consecutive poses, angle steps wrapped."""
    xa, xb, xc = (np.asarray(v, dtype=float) for v in (xa, xb, xc))
    d1 = xc - xb
    d0 = xb - xa
    d1[2] = wrap_angle(d1[2])
    d0[2] = wrap_angle(d0[2])
    return d1 - d0


def smoothing_residual_jac(xa=None, xb=None, xc=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    eye = np.eye(3)
    return eye, -2.0 * eye, eye
