import io

import numpy as np
import pytest

from ivbench.camera import Convention, convert_convention
from ivbench.dsgs import (PredictorConfig, RefineTrace, floater_census, init_splats,
                          predict, refine_splats, INIT_SIGMA_FACTOR)
from ivbench.errors import ConfigError
from ivbench.imgio import quantize_u8
from ivbench.metrics import psnr
from ivbench.rasterizer import (AA_FLOOR, SH_C0, project_scene, render, save_gsc1)
from ivbench.scenegen import BACKGROUND, PLANE_DEPTH_M


@pytest.fixture(scope="module")
def plane_inputs(plane_dataset, default_config):
    ds = plane_dataset
    cv = [convert_convention(c, Convention.CV) for c in ds.cameras]
    pred = PredictorConfig(subsample=2, init_planes=32, refine_iters=8,
                           depth_min=default_config.depth_range[0],
                           depth_max=default_config.depth_range[1])
    return ds, cv, pred


@pytest.fixture(scope="module")
def predicted(plane_inputs):
    ds, cv, pred = plane_inputs
    scene, trace = predict(list(ds.views), cv, pred)
    return ds, cv, pred, scene, trace


def test_config_validation():
    with pytest.raises(ConfigError):
        PredictorConfig(subsample=0)
    with pytest.raises(ConfigError):
        PredictorConfig(opacity_init=1.0)
    with pytest.raises(ConfigError):
        PredictorConfig(sh_degree=3)
    with pytest.raises(ConfigError):
        PredictorConfig(depth_min=2.0, depth_max=1.0)


def test_single_view_rejected(plane_inputs):
    ds, cv, pred = plane_inputs
    with pytest.raises(ConfigError):
        predict([ds.views[0]], [cv[0]], pred)


def test_non_cv_cameras_rejected(plane_dataset, plane_inputs):
    _, _, pred = plane_inputs
    with pytest.raises(ConfigError):
        predict(list(plane_dataset.views), list(plane_dataset.cameras), pred)


def test_init_opacity_exact(plane_inputs):
    ds, cv, pred = plane_inputs
    scene = init_splats(list(ds.views), cv, pred)
    assert np.all(scene.opacity == pred.opacity_init)


def test_init_splat_count_bound(plane_inputs):
    ds, cv, pred = plane_inputs
    scene = init_splats(list(ds.views), cv, pred)
    w, h = ds.spec.resolution
    bound = len(ds.views) * (w // pred.subsample) * (h // pred.subsample)
    assert len(scene) == bound


def test_init_centers_near_plane(plane_inputs):
    ds, cv, pred = plane_inputs
    scene = init_splats(list(ds.views), cv, pred)
    inv = np.linspace(1 / pred.depth_min, 1 / pred.depth_max, pred.init_planes)
    planes = 1.0 / inv
    spacing = np.abs(np.diff(planes))[np.argmin(np.abs(planes[:-1] - PLANE_DEPTH_M))]
    frac = (np.abs(scene.mu[:, 0] - PLANE_DEPTH_M) < 2 * spacing).mean()
    assert frac >= 0.90


def test_init_footprint_matches_block(plane_inputs):
    ds, cv, pred = plane_inputs
    scene = init_splats(list(ds.views), cv, pred)
    n_per = len(scene) // len(cv)
    proj = project_scene(scene, cv[0])
    sel = proj.valid[:n_per]
    sigma_px = np.sqrt(proj.cov2d[:n_per, 0][sel])  # includes the AA floor
    target = 3.0 * pred.subsample
    ratio = 3.0 * sigma_px / target
    assert np.median(ratio) == pytest.approx(1.0, abs=0.25)


def test_refine_zero_iters_identity(plane_inputs):
    ds, cv, pred = plane_inputs
    from dataclasses import replace
    scene = init_splats(list(ds.views), cv, pred)
    out, trace = refine_splats(scene, list(ds.views), cv,
                               replace(pred, refine_iters=0))
    assert np.array_equal(out.mu, scene.mu)
    assert np.array_equal(out.sh, scene.sh)
    assert trace.aggregate == []


def test_ground_truth_fixed_point(plane_dataset, plane_inputs):
    ds, cv, pred = plane_inputs
    from dataclasses import replace
    out, trace = refine_splats(ds.scene, list(ds.views), cv,
                               replace(pred, refine_iters=2))
    assert sum(trace.accepted) == 0
    assert len(out) == len(ds.scene)
    assert np.array_equal(out.mu, ds.scene.mu)
    assert np.array_equal(out.sh, ds.scene.sh)
    assert trace.aggregate[-1] < 2e-3  # u8 quantization floor


def test_trace_monotone_and_counts(predicted):
    ds, cv, pred, scene, trace = predicted
    agg = trace.aggregate
    assert all(a >= b - 1e-12 for a, b in zip(agg, agg[1:]))
    counts = trace.splat_counts
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert trace.iterations == list(range(1, pred.refine_iters + 1))
    assert len(trace.view_residuals[0]) == len(ds.views)


def test_strict_improvement_k8_vs_k1(predicted, plane_inputs):
    ds, cv, pred, scene, trace = predicted
    assert trace.aggregate[-1] < trace.aggregate[0]


def test_scene_invariants_after_refine(predicted):
    _, _, _, scene, _ = predicted
    scene.validate()


def test_transmitted_rerender_quality(predicted):
    ds, cv, pred, scene, _ = predicted
    for i in range(len(ds.views)):
        out = quantize_u8(render(scene, cv[i], background=BACKGROUND).color)
        assert psnr(out, ds.views[i]) >= 30.0


def test_predict_deterministic(plane_inputs, tmp_path):
    ds, cv, pred = plane_inputs
    from dataclasses import replace
    small = replace(pred, refine_iters=2)
    a, _ = predict(list(ds.views), cv, small)
    b, _ = predict(list(ds.views), cv, small)
    save_gsc1(a, tmp_path / "a.gsc1")
    save_gsc1(b, tmp_path / "b.gsc1")
    assert (tmp_path / "a.gsc1").read_bytes() == (tmp_path / "b.gsc1").read_bytes()


def test_trace_csv_shape(predicted):
    _, _, _, _, trace = predicted
    text = trace.to_csv()
    lines = text.strip().split("\n")
    assert lines[0].startswith("iter,residual_view_0")
    assert lines[0].endswith("splats,accepted,rejected")
    assert len(lines) == len(trace.iterations) + 1


def test_floater_census_ground_truth_zero(plane_dataset):
    ds = plane_dataset
    cv = [convert_convention(c, Convention.CV) for c in ds.cameras]
    count, ids = floater_census(ds.scene, list(ds.views), cv)
    assert count == 0
    assert ids == []


def test_floater_census_detects_inserted_splat(plane_dataset):
    ds = plane_dataset
    cv = [convert_convention(c, Convention.CV) for c in ds.cameras]
    scene = ds.scene
    n = len(scene)
    from ivbench.rasterizer import GaussianScene
    mu = np.vstack([scene.mu, [[5.0, 0.0, 0.0]]])  # 3 m behind the plane
    rot = np.vstack([scene.rot, [[1.0, 0, 0, 0]]])
    log_scale = np.vstack([scene.log_scale, [[-4.0, -4.0, -4.0]]])
    opacity = np.append(scene.opacity, 0.9)
    sh = np.vstack([scene.sh, np.full((1, 1, 3), 0.99 / SH_C0)])
    aug = GaussianScene(mu=mu, rot=rot, log_scale=log_scale, opacity=opacity,
                        sh=sh, sh_degree=0)
    count, ids = floater_census(aug, list(ds.views), cv)
    assert count >= 1
    assert n in ids
    count2, ids2 = floater_census(aug, list(ds.views), cv)
    assert (count2, ids2) == (count, ids)
