"""Vectorized numpy implementation of the per-step kernels.

Same signatures and results as the compiled ``_ckernels`` module; used when
the extension is not built or ``DYNEKF_PURE_PYTHON`` is set.
"""

import numpy as np


def measure_batch(x, F):
    """Measurements of ``F`` (n, 2) from pose ``x`` with Jacobian blocks.

    Returns ``Z`` (n, 2), ``Hx`` (n, 2, 3) and ``Hf`` (n, 2, 2).
    """
    F = np.asarray(F, dtype=float)
    c, s = np.cos(x[2]), np.sin(x[2])
    d = F - x[:2]
    n = F.shape[0]
    Z = np.empty((n, 2))
    Z[:, 0] = c * d[:, 0] + s * d[:, 1]
    Z[:, 1] = -s * d[:, 0] + c * d[:, 1]
    Hx = np.empty((n, 2, 3))
    Hx[:, 0, 0] = -c
    Hx[:, 0, 1] = -s
    Hx[:, 1, 0] = s
    Hx[:, 1, 1] = -c
    Hx[:, 0, 2] = Z[:, 1]
    Hx[:, 1, 2] = -Z[:, 0]
    Hf = np.empty((n, 2, 2))
    Hf[:] = [[c, s], [-s, c]]
    return Z, Hx, Hf


def inverse_measure_batch(x, Z):
    """World positions of body-frame measurements ``Z`` with Jacobian blocks.

    Returns ``F`` (n, 2), ``Lx`` (n, 2, 3) and ``Lz`` (n, 2, 2).
    """
    Z = np.asarray(Z, dtype=float)
    c, s = np.cos(x[2]), np.sin(x[2])
    n = Z.shape[0]
    rz0 = c * Z[:, 0] - s * Z[:, 1]
    rz1 = s * Z[:, 0] + c * Z[:, 1]
    F = np.empty((n, 2))
    F[:, 0] = x[0] + rz0
    F[:, 1] = x[1] + rz1
    Lx = np.zeros((n, 2, 3))
    Lx[:, 0, 0] = 1.0
    Lx[:, 1, 1] = 1.0
    Lx[:, 0, 2] = -rz1
    Lx[:, 1, 2] = rz0
    Lz = np.empty((n, 2, 2))
    Lz[:] = [[c, -s], [s, c]]
    return F, Lx, Lz


def cov_times_ht(P, xi, fi, Hx, Hf):
    """``P @ H.T`` for the block-sparse measurement Jacobian ``H``.

    Row pair ``i`` of ``H`` has ``Hx[i]`` in the ego columns ``xi`` (3,) and
    ``Hf[i]`` in the feature columns ``fi[i]`` (2,), zeros elsewhere.
    """
    n = Hx.shape[0]
    d = P.shape[0]
    out = P[:, xi] @ Hx.reshape(2 * n, 3).T
    out += np.einsum("dnj,nij->dni", P[:, fi], Hf).reshape(d, 2 * n)
    return out


def innovation_cov(PHt, xi, fi, Hx, Hf, R):
    """``H @ PHt + R`` for the same block-sparse ``H``."""
    n = Hx.shape[0]
    S = Hx.reshape(2 * n, 3) @ PHt[xi, :]
    S += np.einsum("nij,njm->nim", Hf, PHt[fi, :]).reshape(2 * n, 2 * n)
    S += R
    return 0.5 * (S + S.T)


def procrustes(f0, ft):
    """Rigid alignment of two (n, 2) clouds with its Jacobians.

    Returns ``xi`` (3,), ``G0`` (3, 2n), ``Gt`` (3, 2n) and a degeneracy flag.
    The rotation is the closed form ``atan2(sum a x b, sum a . b)`` of the
    centered clouds ``a``, ``b``; it is pinned at zero for degenerate pairs.
    """
    f0 = np.asarray(f0, dtype=float)
    ft = np.asarray(ft, dtype=float)
    n = f0.shape[0]
    c0, ct = f0.mean(axis=0), ft.mean(axis=0)
    a, b = f0 - c0, ft - ct
    xi = np.zeros(3)
    xi[:2] = ct - c0
    g0 = np.zeros((3, 2 * n))
    gt = np.zeros((3, 2 * n))
    g0[0, 0::2] = g0[1, 1::2] = -1.0 / n
    gt[0, 0::2] = gt[1, 1::2] = 1.0 / n
    s = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    c = np.sum(a * b)
    den = s * s + c * c
    spread = np.sum(a * a) * np.sum(b * b)
    if n == 1 or spread == 0.0 or den <= 1e-12 * spread:
        return xi, g0, gt, True
    xi[2] = np.arctan2(s, c)
    g0[2, 0::2] = (c * b[:, 1] - s * b[:, 0]) / den
    g0[2, 1::2] = (-c * b[:, 0] - s * b[:, 1]) / den
    gt[2, 0::2] = (-c * a[:, 1] - s * a[:, 0]) / den
    gt[2, 1::2] = (c * a[:, 0] - s * a[:, 1]) / den
    return xi, g0, gt, False
