import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lmmpose.errors import DegenerateError, DomainError, ValidationError
from lmmpose.geom import (
    Intrinsics,
    Pose9D,
    ScaleAgnosticPose,
    as_rotation,
    backproject,
    geodesic_angle,
    project,
    random_rotation,
    rot_x,
    rot_y,
    rotation_from_columns,
)

vec3 = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


def is_rotation(R, tol=1e-9):
    return np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1) < tol


def test_intrinsics_rejects_nonpositive_focal():
    with pytest.raises(ValidationError):
        Intrinsics(0, 1, 0, 0)
    with pytest.raises(ValidationError):
        Intrinsics(1, -2, 0, 0)


def test_project_principal_ray():
    assert np.allclose(project(Intrinsics(1, 1, 0, 0), [0, 0, 1]), [0, 0])


def test_project_hand_value(K):
    assert np.allclose(project(K, [2, 4, 2]), [820, 1240])


def test_project_behind_camera_names_point(K):
    with pytest.raises(DomainError, match="point 1"):
        project(K, [[0, 0, 1], [0, 0, -1]])
    with pytest.raises(DomainError):
        project(K, [0, 0, -1])


def test_backproject_examples(K):
    assert np.allclose(backproject(Intrinsics(1, 1, 0, 0), [0, 0], 1), [0, 0, 1])
    assert np.allclose(backproject(K, [820, 1240], 2), [2, 4, 2])
    with pytest.raises(DomainError):
        backproject(K, [0, 0], 0.0)


def test_project_backproject_round_trip(K, rng):
    p = np.column_stack([rng.uniform(-5, 5, (10_000, 2)), rng.uniform(0.1, 50, 10_000)])
    back = backproject(K, project(K, p), p[:, 2])
    assert np.max(np.abs(back - p)) < 1e-9


def test_rotation_from_columns_examples():
    assert np.allclose(rotation_from_columns([1, 0, 0], [0, 1, 0]), np.eye(3))
    assert np.allclose(rotation_from_columns([2, 0, 0], [0.5, 3, 0]), np.eye(3))
    s = 1 / np.sqrt(2)
    R = rotation_from_columns([1, 1, 0], [0, 0, 1])
    assert np.allclose(R[:, 0], [s, s, 0])
    assert np.allclose(R[:, 1], [0, 0, 1])
    assert np.allclose(R[:, 2], [s, -s, 0])


@pytest.mark.parametrize("rx,ry", [([0, 0, 0], [0, 1, 0]), ([1, 0, 0], [0, 0, 0]), ([1, 2, 3], [2, 4, 6])])
def test_rotation_from_columns_degenerate(rx, ry):
    with pytest.raises(DegenerateError):
        rotation_from_columns(rx, ry)


@settings(max_examples=300, deadline=None)
@given(vec3, vec3)
def test_rotation_from_columns_always_valid(a, b):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    if np.linalg.norm(np.cross(a / np.linalg.norm(a), b / np.linalg.norm(b))) < 1e-4:
        return
    assert is_rotation(rotation_from_columns(a, b))


def test_rotation_from_columns_nearly_parallel(rng):
    for _ in range(200):
        a = rng.standard_normal(3)
        perp = np.cross(a, rng.standard_normal(3))
        b = a + 1e-4 * np.linalg.norm(a) * perp / np.linalg.norm(perp)
        assert is_rotation(rotation_from_columns(a, b))


def test_geodesic_angle_examples():
    assert geodesic_angle(np.eye(3), np.eye(3)) == pytest.approx(0, abs=1e-6)
    assert geodesic_angle(np.eye(3), rot_x(30)) == pytest.approx(30)
    assert geodesic_angle(rot_y(10), rot_y(-10)) == pytest.approx(20)


def test_geodesic_angle_symmetric_and_triangle(rng):
    for _ in range(500):
        A, B, C = (random_rotation(rng) for _ in range(3))
        assert geodesic_angle(A, B) == pytest.approx(geodesic_angle(B, A), abs=1e-9)
        assert geodesic_angle(A, C) <= geodesic_angle(A, B) + geodesic_angle(B, C) + 1e-6


def test_as_rotation_renormalizes_and_rejects():
    R = rot_x(20) + 1e-8
    assert is_rotation(as_rotation(R))
    with pytest.raises(ValidationError):
        as_rotation(rot_x(20) + 1e-3)
    with pytest.raises(ValidationError):
        as_rotation(np.diag([1.0, 1.0, -1.0]))


def test_random_rotation_valid(rng):
    for _ in range(100):
        assert is_rotation(random_rotation(rng))


def test_pose_types_validate():
    with pytest.raises(ValidationError):
        Pose9D(np.eye(3), np.zeros(3), [1, 0, 1])
    with pytest.raises(ValidationError):
        ScaleAgnosticPose(np.eye(3), np.zeros(3), [1, 1, 1])
    p = Pose9D(np.eye(3), np.zeros(3), [1, 2, 2])
    assert p.diameter == pytest.approx(3)
    with pytest.raises(ValueError):
        p.translation[0] = 1.0
