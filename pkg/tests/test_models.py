import numpy as np
import pytest
from conftest import central_diff, rel_err
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynekf.errors import ModelError
from dynekf.models import (
    NoiseModel,
    ego_dynamics,
    ego_dynamics_jac,
    inverse_measure,
    inverse_measure_jac,
    inverse_object_transform,
    inverse_object_transform_jac,
    measure,
    measure_jac,
    noise_level,
    object_transform,
    object_transform_jac,
    odometry_between,
    rot,
    smoothing_residual,
    smoothing_residual_jac,
)

coords = st.floats(-50, 50, allow_nan=False)
angles = st.floats(-np.pi, np.pi, allow_nan=False)
pose = st.tuples(coords, coords, angles).map(np.array)
point = st.tuples(coords, coords).map(np.array)


def cloud(n):
    return arrays(np.float64, (n, 2), elements=st.floats(-20, 20, allow_nan=False))


def spread_cloud(rng, n):
    return rng.uniform(-10, 10, size=2) + rng.normal(scale=3.0, size=(n, 2))


def random_pose(rng):
    return np.array([*rng.uniform(-30, 30, size=2), rng.uniform(-np.pi, np.pi)])


# ---------------------------------------------------------------------------
# noise


def test_noise_levels():
    w, v = noise_level(1)
    np.testing.assert_allclose(np.diag(w), [1e-6, 1e-6, 1e-8])
    np.testing.assert_allclose(v, 1e-6 * np.eye(2))
    w3, v3 = noise_level(3)
    np.testing.assert_allclose(np.diag(w3), [1e-4, 1e-4, 1e-6])
    np.testing.assert_allclose(v3, 1e-4 * np.eye(2))
    with pytest.raises(ValueError):
        noise_level(4)


def test_noise_model_defaults():
    n = NoiseModel.from_levels(2, 3)
    np.testing.assert_allclose(np.diag(n.sigma_w), [1e-5, 1e-5, 1e-7])
    np.testing.assert_allclose(n.sigma_v, 1e-4 * np.eye(2))
    np.testing.assert_allclose(n.sigma_xi, 0.1 * np.eye(2))
    np.testing.assert_allclose(n.sigma_s, 0.1 * np.eye(3))
    assert n.is_spd()
    assert not NoiseModel(sigma_v=-np.eye(2)).is_spd()
    with pytest.raises(ValueError):
        NoiseModel(sigma_v=np.eye(3))


# ---------------------------------------------------------------------------
# ego dynamics


def test_ego_dynamics_examples():
    np.testing.assert_array_equal(ego_dynamics(np.zeros(3), np.zeros(3)), np.zeros(3))
    np.testing.assert_allclose(ego_dynamics([1, 2, 0.1], [0.5, 0, 0.05]), [1.5, 2, 0.15])
    assert ego_dynamics([0, 0, 3.1], [0, 0, 0.1])[2] == pytest.approx(3.2 - 2 * np.pi)
    np.testing.assert_array_equal(ego_dynamics_jac(np.ones(3)), np.eye(3))


@given(pose, pose)
def test_odometry_between_round_trip(x0, x1):
    out = ego_dynamics(x0, odometry_between(x0, x1))
    np.testing.assert_allclose(out[:2], x1[:2], atol=1e-9)
    assert abs(np.angle(np.exp(1j * (out[2] - x1[2])))) < 1e-9


# ---------------------------------------------------------------------------
# measurement


def test_measure_examples():
    np.testing.assert_allclose(measure(np.zeros(3), [3, 4]), [3, 4])
    np.testing.assert_allclose(measure([1, 2, np.pi / 2], [1, 3]), [1, 0], atol=1e-15)
    np.testing.assert_allclose(inverse_measure(np.zeros(3), [3, 4]), [3, 4])
    np.testing.assert_allclose(inverse_measure([1, 2, np.pi / 2], [1, 0]), [1, 3])
    np.testing.assert_allclose(measure_jac(np.zeros(3), [5, -1])[1], np.eye(2))


@given(pose, point)
def test_measure_preserves_distance(x, f):
    assert np.linalg.norm(measure(x, f)) == pytest.approx(np.linalg.norm(f - x[:2]), rel=1e-12, abs=1e-12)


@given(pose, point)
def test_inverse_measure_round_trip(x, z):
    np.testing.assert_allclose(measure(x, inverse_measure(x, z)), z, atol=1e-12)


@given(pose, point)
def test_measurement_jacobian_identities(x, z):
    # dh/df . dl/dz = I and dh/dx + dh/df . dl/dx = 0 at f = l(x, z)
    f = inverse_measure(x, z)
    hx, hf = measure_jac(x, f)
    lx, lz = inverse_measure_jac(x, z)
    np.testing.assert_allclose(hf @ lz, np.eye(2), atol=1e-9)
    np.testing.assert_allclose(hx + hf @ lx, np.zeros((2, 3)), atol=1e-9)


# ---------------------------------------------------------------------------
# object transform


def test_object_transform_examples():
    f0 = np.array([[1.0, 0.0], [-1.0, 0.0]])
    np.testing.assert_allclose(object_transform(np.zeros(3), f0), f0)
    np.testing.assert_allclose(object_transform([0, 0, np.pi / 2], f0), [[0, 1], [0, -1]], atol=1e-15)
    np.testing.assert_allclose(object_transform([2, -1, 1.3], [[4.0, 5.0]]), [[6, 4]])
    with pytest.raises(ModelError):
        object_transform(np.zeros(3), np.zeros((0, 2)))


@given(pose, cloud(5))
def test_object_transform_is_rigid(xi, f0):
    ft = object_transform(xi, f0)
    d0 = np.linalg.norm(f0[:, None] - f0[None], axis=-1)
    dt = np.linalg.norm(ft[:, None] - ft[None], axis=-1)
    np.testing.assert_allclose(dt, d0, atol=1e-12)
    np.testing.assert_allclose(ft.mean(axis=0), f0.mean(axis=0) + xi[:2], atol=1e-12)


def test_object_transform_jacobian_injective(rng):
    for n in range(2, 6):
        gxi, _ = object_transform_jac(random_pose(rng), spread_cloud(rng, n))
        assert np.linalg.matrix_rank(gxi) == 3
    gxi, _ = object_transform_jac(random_pose(rng), [[1.0, 2.0]])
    assert np.linalg.matrix_rank(gxi) == 2


# ---------------------------------------------------------------------------
# inverse object transform


def test_inverse_object_transform_examples():
    f0 = np.array([[1.0, 0.0], [-1.0, 0.0]])
    al = inverse_object_transform(f0, f0)
    np.testing.assert_allclose(al.xi, 0.0, atol=1e-15)
    assert not al.degenerate
    al = inverse_object_transform(f0, [[0.0, 1.0], [0.0, -1.0]])
    np.testing.assert_allclose(al.xi, [0, 0, np.pi / 2], atol=1e-12)


def test_inverse_object_transform_grid_oracle(rng):
    # brute-force the rotation minimizing the squared alignment error
    grid = np.linspace(-np.pi, np.pi, 200001)
    for _ in range(5):
        f0 = spread_cloud(rng, 4)
        ft = object_transform(random_pose(rng), f0) + rng.normal(scale=0.3, size=f0.shape)
        a = f0 - f0.mean(axis=0)
        b = ft - ft.mean(axis=0)
        c, s = np.cos(grid), np.sin(grid)
        err = (
            ((c[:, None] * a[:, 0] - s[:, None] * a[:, 1] - b[:, 0]) ** 2).sum(axis=1)
            + ((s[:, None] * a[:, 0] + c[:, None] * a[:, 1] - b[:, 1]) ** 2).sum(axis=1)
        )
        best = grid[np.argmin(err)]
        theta = inverse_object_transform(f0, ft).xi[2]
        assert abs(np.angle(np.exp(1j * (theta - best)))) < 1e-4


def test_inverse_object_transform_round_trip(rng):
    for _ in range(100):
        f0 = spread_cloud(rng, 5)
        xi = random_pose(rng)
        al = inverse_object_transform(f0, object_transform(xi, f0))
        np.testing.assert_allclose(al.xi, xi, atol=1e-9)


def test_inverse_object_transform_degenerate():
    al = inverse_object_transform([[1.0, 2.0]], [[4.0, 0.0]])
    assert al.degenerate
    np.testing.assert_allclose(al.xi, [3, -2, 0])
    al = inverse_object_transform([[1.0, 1.0], [1.0, 1.0]], [[2.0, 2.0], [2.0, 2.0]])
    assert al.degenerate and al.xi[2] == 0.0
    with pytest.raises(ModelError):
        inverse_object_transform_jac([[1.0, 1.0], [1.0, 1.0]], [[2.0, 2.0], [2.0, 2.0]])
    with pytest.raises(ModelError):
        inverse_object_transform(np.zeros((2, 2)), np.zeros((3, 2)))


def test_inverse_object_transform_single_feature_jacobian():
    g0, gt = inverse_object_transform_jac([[1.0, 2.0]], [[3.0, 4.0]])
    np.testing.assert_array_equal(g0, [[-1, 0], [0, -1], [0, 0]])
    np.testing.assert_array_equal(gt, [[1, 0], [0, 1], [0, 0]])


# ---------------------------------------------------------------------------
# smoothing


def test_smoothing_examples():
    z = np.zeros(3)
    np.testing.assert_array_equal(smoothing_residual(z, [1, 0, 0], [2, 0, 0]), z)
    np.testing.assert_array_equal(smoothing_residual(z, [1, 0, 0], [3, 0, 0]), [1, 0, 0])
    r = smoothing_residual([0, 0, 3.0], [0, 0, -3.0], [0, 0, -2.7])
    assert r[2] == pytest.approx(0.3 - (2 * np.pi - 6.0), abs=1e-12)
    assert r[2] == pytest.approx(0.0168, abs=1e-4)


# ---------------------------------------------------------------------------
# analytic Jacobians against central differences


def _check(analytic, numeric, tol=1e-5):
    assert rel_err(analytic, numeric) < tol


def test_jacobians_against_finite_differences(rng):
    for _ in range(100):
        x = random_pose(rng)
        f = rng.uniform(-30, 30, size=2)
        z = rng.uniform(-30, 30, size=2)
        odom = rng.normal(size=3) * [1, 1, 0.1]

        _check(ego_dynamics_jac(x, odom), central_diff(lambda v: ego_dynamics(v, odom), x))

        hx, hf = measure_jac(x, f)
        _check(hx, central_diff(lambda v: measure(v, f), x))
        _check(hf, central_diff(lambda v: measure(x, v), f))

        lx, lz = inverse_measure_jac(x, z)
        _check(lx, central_diff(lambda v: inverse_measure(v, z), x))
        _check(lz, central_diff(lambda v: inverse_measure(x, v), z))

        n = int(rng.integers(1, 6))
        f0 = spread_cloud(rng, n)
        xi = random_pose(rng)
        gxi, gf = object_transform_jac(xi, f0)
        _check(gxi, central_diff(lambda v: object_transform(v, f0).reshape(-1), xi))
        _check(gf, central_diff(lambda v: object_transform(xi, v).reshape(-1), f0.reshape(-1)))

        ft = object_transform(xi, f0) + rng.normal(scale=0.2, size=f0.shape)
        g0, gt = inverse_object_transform_jac(f0, ft)
        _check(g0, central_diff(lambda v: inverse_object_transform(v, ft).xi, f0.reshape(-1)))
        _check(gt, central_diff(lambda v: inverse_object_transform(f0, v).xi, ft.reshape(-1)))

        xa, xb, xc = (random_pose(rng) * [1, 1, 0.3] for _ in range(3))
        sa, sb, sc = smoothing_residual_jac(xa, xb, xc)
        _check(sa, central_diff(lambda v: smoothing_residual(v, xb, xc), xa))
        _check(sb, central_diff(lambda v: smoothing_residual(xa, v, xc), xb))
        _check(sc, central_diff(lambda v: smoothing_residual(xa, xb, v), xc))


@settings(max_examples=50)
@given(angles)
def test_rot_is_orthonormal(theta):
    r = rot(theta)
    np.testing.assert_allclose(r @ r.T, np.eye(2), atol=1e-15)
    assert np.linalg.det(r) == pytest.approx(1.0)
