import numpy as np
import pytest

from ivbench.camera import (Convention, DegeneratePoseError, Pose,
                            convert_convention, euler_to_rotation, pixel_rays,
                            project, rotation_to_euler, unproject, world_to_cv,
                            _MIV_TO_CV)
from ivbench.errors import ConfigError

from conftest import make_camera


def random_cameras(rng, n):
    cams = []
    for i in range(n):
        cams.append(make_camera(
            cam_id=f"c{i}",
            focal=rng.uniform(200, 600),
            position=tuple(rng.uniform(-2, 2, 3)),
            yaw=rng.uniform(-170, 170),
            pitch=rng.uniform(-80, 80),
            roll=rng.uniform(-170, 170)))
    return cams


def test_zero_rotation_is_identity():
    assert np.allclose(euler_to_rotation(0, 0, 0, Convention.MIV), np.eye(3))


def test_yaw_90_maps_forward_to_left():
    r = euler_to_rotation(90, 0, 0, Convention.MIV)
    assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-12)


def test_rotations_orthonormal_det_one():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a = rng.uniform(-180, 180, 3)
        for conv in Convention:
            r = euler_to_rotation(*a, conv)
            assert np.abs(r @ r.T - np.eye(3)).max() < 1e-12
            assert abs(np.linalg.det(r) - 1.0) < 1e-12


def test_euler_round_trip_1000_cases():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        a = (rng.uniform(-179, 179), rng.uniform(-85, 85), rng.uniform(-179, 179))
        for conv in Convention:
            back = rotation_to_euler(euler_to_rotation(*a, conv), conv)
            worst = max(worst, max(abs(x - y) for x, y in zip(a, back)))
    assert worst < 1e-9


def test_rotation_to_euler_identity():
    assert rotation_to_euler(np.eye(3)) == (0.0, 0.0, 0.0)


def test_round_trip_10_20_30():
    back = rotation_to_euler(euler_to_rotation(10, 20, 30))
    assert np.abs(np.array(back) - (10, 20, 30)).max() < 1e-9


def test_gimbal_lock_guard():
    r = euler_to_rotation(0, 90, 0)
    with pytest.raises(DegeneratePoseError):
        rotation_to_euler(r)


def test_non_finite_angles_rejected():
    with pytest.raises(ValueError):
        euler_to_rotation(float("nan"), 0, 0)
    with pytest.raises(ValueError):
        Pose(0.0, float("inf"), 0.0, (0, 0, 0))


def test_identity_miv_converts_to_basis_change():
    cam = make_camera()
    cv = convert_convention(cam, Convention.CV)
    r = euler_to_rotation(cv.pose.yaw_deg, cv.pose.pitch_deg, cv.pose.roll_deg,
                          Convention.CV)
    assert np.allclose(r, _MIV_TO_CV, atol=1e-15)


def test_convention_round_trip_bit_identical():
    rng = np.random.default_rng(2)
    for cam in random_cameras(rng, 100):
        back = convert_convention(convert_convention(cam, Convention.CV), Convention.MIV)
        assert back.pose.yaw_deg == cam.pose.yaw_deg
        assert back.pose.pitch_deg == cam.pose.pitch_deg
        assert back.pose.roll_deg == cam.pose.roll_deg
        assert back.pose.position == cam.pose.position


def test_projection_equivalence_across_conventions():
    rng = np.random.default_rng(3)
    cams = random_cameras(rng, 50)
    worst = 0.0
    for cam in cams:
        cv = convert_convention(cam, Convention.CV)
        for _ in range(20):
            fwd = euler_to_rotation(cam.pose.yaw_deg, cam.pose.pitch_deg,
                                    cam.pose.roll_deg) @ [1, 0, 0]
            p = np.asarray(cam.pose.position) + rng.uniform(0.5, 5.0) * fwd \
                + rng.uniform(-0.3, 0.3, 3)
            a = project(p, cam)
            b = project(p, cv)
            if a is None or b is None:
                assert a is None and b is None
                continue
            worst = max(worst, np.abs(a[0] - b[0]).max(), abs(a[1] - b[1]))
    assert worst < 1e-9


def test_convert_preserves_center_exactly():
    cam = make_camera(position=(0.3, -1.2, 2.7), yaw=15, pitch=-10, roll=5)
    cv = convert_convention(cam, Convention.CV)
    assert cv.pose.position == cam.pose.position


def test_unknown_convention_tag():
    from ivbench.camera import parse_convention
    with pytest.raises(ConfigError):
        parse_convention("OPENGL")


def test_project_on_axis():
    cam = make_camera(width=320, height=180, focal=300.0)
    px, d = project(np.array([2.0, 0.0, 0.0]), cam)
    assert d == 2.0
    assert np.allclose(px, [(320 - 1) / 2, (180 - 1) / 2])


def test_project_behind_camera_marker():
    cam = make_camera()
    assert project(np.array([-1.0, 0.0, 0.0]), cam) is None


def test_unproject_rejects_nonpositive_depth():
    cam = make_camera()
    with pytest.raises(ValueError):
        unproject(np.array([10.0, 10.0]), 0.0, cam)


def test_project_unproject_round_trips():
    rng = np.random.default_rng(4)
    worst_pt = 0.0
    worst_px = 0.0
    for cam in random_cameras(rng, 40):
        for _ in range(25):
            u = rng.uniform(0, cam.intrinsics.width - 1)
            v = rng.uniform(0, cam.intrinsics.height - 1)
            d = rng.uniform(0.2, 8.0)
            p = unproject(np.array([u, v]), d, cam)
            px, dd = project(p, cam)
            worst_px = max(worst_px, abs(px[0] - u), abs(px[1] - v), abs(dd - d))
            p2 = unproject(px, dd, cam)
            worst_pt = max(worst_pt, np.abs(p2 - p).max())
    assert worst_px < 1e-9
    assert worst_pt < 1e-9


def test_unproject_principal_point_along_forward():
    cam = make_camera(position=(1.0, 2.0, 3.0), yaw=30, pitch=10, roll=-5)
    k = cam.intrinsics
    d = 2.5
    p = unproject(np.array([k.principal_x, k.principal_y]), d, cam)
    fwd = euler_to_rotation(30, 10, -5) @ [1, 0, 0]
    assert np.abs(p - (np.array([1.0, 2.0, 3.0]) + d * fwd)).max() < 1e-12


def test_corner_pixel_on_viewing_ray():
    cam = make_camera(yaw=20, pitch=5, roll=3, position=(0.5, 0.5, 0.5))
    p = unproject(np.array([0.0, 0.0]), 1.0, cam)
    r, c = world_to_cv(cam)
    ray = p - c
    rays = pixel_rays(cam)
    cosang = ray @ rays[0, 0] / (np.linalg.norm(ray) * np.linalg.norm(rays[0, 0]))
    assert abs(cosang - 1.0) < 1e-12


def test_pixel_rays_match_unproject():
    cam = make_camera(yaw=-25, pitch=12, roll=40, position=(0.1, -0.4, 0.9))
    rays = pixel_rays(cam)
    for (i, j) in [(0, 0), (50, 100), (179, 319)]:
        p = unproject(np.array([float(j), float(i)]), 3.0, cam)
        p2 = np.asarray(cam.pose.position) + 3.0 * rays[i, j]
        assert np.abs(p - p2).max() < 1e-12
