import dataclasses

import numpy as np
import pytest
import scipy.ndimage as ndi

from ivbench import camera as cam_mod
from ivbench.dsde import (CostVolume, DepthMap, build_cost_volume, dibr_synthesize,
                          estimate_depth, oracle_depth, sweep_planes)
from ivbench.errors import ConfigError
from ivbench.imgio import to_float
from ivbench.metrics import psnr
from ivbench.rasterizer import render
from ivbench.scenegen import BACKGROUND, PLANE_DEPTH_M
from ivbench.imgio import quantize_u8

from conftest import make_camera


def texture_mask(view, threshold=0.02):
    luma = to_float(view) @ [0.299, 0.587, 0.114]
    return ndi.generic_filter(luma, np.std, size=3) > threshold


def visibility_mask(ref_cam, src_cams, depth):
    """Pixels whose warp at the true depth stays inside every source frame."""
    rays = cam_mod.pixel_rays(ref_cam)
    _, c_ref = cam_mod.world_to_cv(ref_cam)
    pts = c_ref + depth * rays
    vis = np.ones(rays.shape[:2], dtype=bool)
    for cam in src_cams:
        r_wc, c_s = cam_mod.world_to_cv(cam)
        loc = (pts - c_s) @ r_wc.T
        k = cam.intrinsics
        u = k.principal_x + k.focal_x * loc[..., 0] / loc[..., 2]
        v = k.principal_y + k.focal_y * loc[..., 1] / loc[..., 2]
        vis &= (u >= 0) & (u <= k.width - 1) & (v >= 0) & (v <= k.height - 1)
    return vis


@pytest.fixture(scope="module")
def plane_volume(plane_dataset, default_config):
    ds = plane_dataset
    srcs = [1, 2, 3]
    vol = build_cost_volume(ds.views[0], ds.cameras[0],
                            [ds.views[i] for i in srcs],
                            [ds.cameras[i] for i in srcs],
                            default_config.dsde_planes, default_config.depth_range)
    return ds, vol


def test_sweep_planes_inverse_uniform():
    planes = sweep_planes((1.0, 4.0), 64)
    assert planes[0] == pytest.approx(1.0)
    assert planes[-1] == pytest.approx(4.0)
    assert np.all(np.diff(planes) > 0)
    inv = 1.0 / planes
    assert np.abs(np.diff(inv) - (inv[1] - inv[0])).max() < 1e-12
    with pytest.raises(ConfigError):
        sweep_planes((4.0, 1.0), 8)
    with pytest.raises(ConfigError):
        sweep_planes((1.0, 4.0), 1)


def test_colocated_cameras_near_zero_cost(plane_dataset):
    ds = plane_dataset
    vol = build_cost_volume(ds.views[0], ds.cameras[0], [ds.views[0]],
                            [ds.cameras[0]], 8, (1.0, 4.0))
    interior = vol.costs[2:-2, 2:-2, :]
    assert interior.max() < 1e-6  # identity warp at every plane


def test_cost_volume_validation():
    with pytest.raises(ConfigError):
        CostVolume("x", np.array([2.0, 1.0]), np.zeros((4, 4, 2), dtype=np.float32))
    with pytest.raises(ConfigError):
        build_cost_volume(np.zeros((8, 8, 3), np.uint8), make_camera(), [], [], 8, (1, 4))


def test_plane_argmin_accuracy(plane_volume):
    ds, vol = plane_volume
    k_true = int(np.argmin(np.abs(vol.planes - PLANE_DEPTH_M)))
    assert vol.planes[k_true] == pytest.approx(PLANE_DEPTH_M, abs=1e-12)
    agg = ndi.uniform_filter(vol.costs.astype(np.float64), size=(3, 3, 1), mode="nearest")
    best = np.argmin(agg, axis=2)
    mask = texture_mask(ds.views[0]) & visibility_mask(
        ds.cameras[0], [ds.cameras[i] for i in (1, 2, 3)], PLANE_DEPTH_M)
    assert mask.mean() > 0.5  # the mask must cover a substantial region
    assert (best == k_true)[mask].mean() >= 0.95


def test_estimated_depth_accuracy(plane_volume):
    ds, vol = plane_volume
    dm = estimate_depth(vol)
    spacing = np.diff(vol.planes)[int(np.argmin(np.abs(vol.planes - PLANE_DEPTH_M)))]
    mask = dm.valid & visibility_mask(ds.cameras[0],
                                      [ds.cameras[i] for i in (1, 2, 3)], PLANE_DEPTH_M)
    err = np.abs(dm.depth - PLANE_DEPTH_M)[mask]
    assert err.mean() < spacing


def test_uniform_costs_all_invalid():
    vol = CostVolume("x", sweep_planes((1, 4), 8),
                     np.full((16, 16, 8), 0.25, dtype=np.float32))
    dm = estimate_depth(vol)
    assert not dm.valid.any()
    assert np.all(dm.conf == 0.0)


def test_depthmap_invariants(plane_volume):
    _, vol = plane_volume
    dm = estimate_depth(vol)
    assert (dm.depth[dm.valid] > 0).all()
    assert np.all(dm.conf[~dm.valid] == 0.0)
    assert dm.conf.max() <= 1.0


def test_parabola_vertex_recovery():
    # quadratic cost in plane-index space with vertex at k + 0.3
    planes = sweep_planes((1.0, 4.0), 16)
    vertex = 7.3
    idx = np.arange(16, dtype=np.float64)
    costs = np.tile(((idx - vertex) ** 2 + 0.05).astype(np.float32), (8, 8, 1))
    dm = estimate_depth(CostVolume("x", planes, costs))
    inv = 1.0 / planes
    step = inv[1] - inv[0]
    expected_depth = 1.0 / (inv[7] + 0.3 * step)
    assert np.abs(dm.depth - expected_depth).max() < 1e-6


def test_dibr_identity(plane_dataset):
    ds = plane_dataset
    out = render(ds.scene, ds.cameras[0], background=BACKGROUND)
    dm = oracle_depth(out.depth, out.alpha)
    syn = dibr_synthesize([ds.views[0]], [ds.cameras[0]], [dm], ds.cameras[0])
    diff = np.abs(syn.astype(int) - ds.views[0].astype(int))[dm.valid]
    assert diff.max() <= 1


def test_dibr_oracle_depth_quality(plane_dataset):
    ds = plane_dataset
    mid = dataclasses.replace(
        ds.cameras[1], id="mid",
        pose=dataclasses.replace(ds.cameras[1].pose, position=(0.0, 0.0, 0.0)))
    gt = quantize_u8(render(ds.scene, mid, background=BACKGROUND).color)
    depths = []
    for cam in ds.cameras:
        out = render(ds.scene, cam, background=BACKGROUND)
        depths.append(oracle_depth(out.depth, out.alpha))
    syn = dibr_synthesize(list(ds.views), list(ds.cameras), depths, mid)
    assert psnr(syn, gt) >= 30.0


def test_oracle_depth_upper_bounds_estimated(plane_dataset, default_config):
    ds = plane_dataset
    mid = dataclasses.replace(
        ds.cameras[1], id="mid",
        pose=dataclasses.replace(ds.cameras[1].pose, position=(0.0, 0.0, 0.0)))
    gt = quantize_u8(render(ds.scene, mid, background=BACKGROUND).color)
    oracle_d, est_d = [], []
    for i, cam in enumerate(ds.cameras):
        out = render(ds.scene, cam, background=BACKGROUND)
        oracle_d.append(oracle_depth(out.depth, out.alpha))
        srcs = [j for j in range(4) if j != i]
        vol = build_cost_volume(ds.views[i], cam, [ds.views[j] for j in srcs],
                                [ds.cameras[j] for j in srcs], 32,
                                default_config.depth_range)
        est_d.append(estimate_depth(vol))
    p_oracle = psnr(dibr_synthesize(list(ds.views), list(ds.cameras), oracle_d, mid), gt)
    p_est = psnr(dibr_synthesize(list(ds.views), list(ds.cameras), est_d, mid), gt)
    assert p_oracle >= p_est


def test_dibr_all_invalid_depth_no_crash(plane_dataset):
    ds = plane_dataset
    h, w = ds.views[0].shape[:2]
    dm = DepthMap(depth=np.ones((h, w), np.float32),
                  valid=np.zeros((h, w), bool),
                  conf=np.zeros((h, w), np.float32))
    syn = dibr_synthesize([ds.views[0]], [ds.cameras[0]], [dm], ds.cameras[1])
    assert syn.shape == (h, w, 3)
    assert np.all(syn == 0)  # nothing warped, nothing to inpaint from


def test_dibr_deterministic(plane_dataset, default_config):
    ds = plane_dataset
    vol = build_cost_volume(ds.views[0], ds.cameras[0], [ds.views[1]],
                            [ds.cameras[1]], 16, default_config.depth_range)
    dm = estimate_depth(vol)
    a = dibr_synthesize([ds.views[0]], [ds.cameras[0]], [dm], ds.cameras[2])
    b = dibr_synthesize([ds.views[0]], [ds.cameras[0]], [dm], ds.cameras[2])
    assert np.array_equal(a, b)


def test_cost_volume_deterministic(plane_dataset):
    ds = plane_dataset
    a = build_cost_volume(ds.views[0], ds.cameras[0], [ds.views[1]],
                          [ds.cameras[1]], 8, (1.0, 4.0))
    b = build_cost_volume(ds.views[0], ds.cameras[0], [ds.views[1]],
                          [ds.cameras[1]], 8, (1.0, 4.0))
    assert np.array_equal(a.costs, b.costs)
