"""Feed-forward splat prediction at the decoder: subsampled initialization
plus gradient-free, rendering-error-driven refinement.

init_splats seeds one Gaussian per s x s pixel block of every input view
from a coarse plane sweep. refine_splats iterates accept-only proposal
classes (color, position along the seeding ray, opacity of disagreeing
splats, pruning); a class is applied only if the aggregate rendering
residual over the input views does not increase, which makes the trace
monotonicity a structural guarantee. No renderer gradients anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from . import camera as cam_mod
from .camera import CameraParams, Convention
from .dsde import build_cost_volume, estimate_depth, _bilinear
from .errors import ConfigError
from .imgio import to_float
from .rasterizer import GaussianScene, SH_C0, bin_tiles, eval_sh, project_scene, render

RESIDUAL_EPS = 1e-12
MIN_COLOR_STEP = 1.0 / 255.0   # proposals below quantization noise are no-ops
MIN_PROBE_GAIN = 2.0 / 255.0
COLOR_RELAX = 1.5              # over-relaxation of the damped mean-residual step
DISAGREE_THRESHOLD = 0.10
OPACITY_DECAY = 0.7
FLOATER_RESIDUAL = 0.2
FLOATER_SCALE_FACTOR = 3.0
INIT_SOURCES = 2               # nearest views used by each init sweep
INIT_SIGMA_FACTOR = 0.75       # projected 3-sigma ~ 2.25*s px, within the s-block footprint


@dataclass(frozen=True)
class PredictorConfig:
    subsample: int = 2
    init_planes: int = 32
    refine_iters: int = 8
    opacity_init: float = 0.8
    prune_alpha: float = 0.05
    sh_degree: int = 0
    seed: int = 0
    depth_min: float = 0.5
    depth_max: float = 8.0

    def __post_init__(self):
        if self.subsample < 1:
            raise ConfigError("subsample must be >= 1")
        if not 0.0 < self.opacity_init < 1.0:
            raise ConfigError("opacity_init must lie in (0, 1)")
        if self.sh_degree not in (0, 1, 2):
            raise ConfigError("sh_degree must be 0, 1 or 2")
        if self.init_planes < 2:
            raise ConfigError("init_planes must be >= 2")
        if not 0.0 < self.depth_min < self.depth_max:
            raise ConfigError("need 0 < depth_min < depth_max")

    def to_dict(self) -> dict:
        return {"subsample": self.subsample, "init_planes": self.init_planes,
                "refine_iters": self.refine_iters, "opacity_init": self.opacity_init,
                "prune_alpha": self.prune_alpha, "sh_degree": self.sh_degree,
                "seed": self.seed, "depth_min": self.depth_min, "depth_max": self.depth_max}

    @staticmethod
    def from_dict(d: dict) -> "PredictorConfig":
        return PredictorConfig(**{k: d[k] for k in PredictorConfig().to_dict() if k in d})


@dataclass
class RefineTrace:
    """Per-iteration refinement log; aggregate residual is non-increasing."""
    iterations: list[int] = field(default_factory=list)
    view_residuals: list[list[float]] = field(default_factory=list)
    aggregate: list[float] = field(default_factory=list)
    splat_counts: list[int] = field(default_factory=list)
    accepted: list[int] = field(default_factory=list)
    rejected: list[int] = field(default_factory=list)

    def to_csv(self) -> str:
        n_views = len(self.view_residuals[0]) if self.view_residuals else 0
        header = "iter," + ",".join(f"residual_view_{i}" for i in range(n_views)) \
                 + ",aggregate,splats,accepted,rejected"
        lines = [header]
        for i in range(len(self.iterations)):
            parts = [str(self.iterations[i])]
            parts += [repr(v) for v in self.view_residuals[i]]
            parts += [repr(self.aggregate[i]), str(self.splat_counts[i]),
                      str(self.accepted[i]), str(self.rejected[i])]
            lines.append(",".join(parts))
        return "\n".join(lines) + "\n"


def _require_cv(cameras: list[CameraParams]) -> None:
    bad = [c.id for c in cameras if c.pose.convention is not Convention.CV]
    if bad:
        raise ConfigError(f"predictor needs CV-convention cameras (convert first): {bad}")


def _downsample(view: np.ndarray, s: int) -> np.ndarray:
    h, w = view.shape[:2]
    f = to_float(view)
    return f.reshape(h // s, s, w // s, s, 3).mean(axis=(1, 3))


def _downsample_camera(cam: CameraParams, s: int) -> CameraParams:
    k = cam.intrinsics
    from dataclasses import replace
    intr = cam_mod.Intrinsics(k.focal_x / s, k.focal_y / s,
                              (k.principal_x - (s - 1) / 2.0) / s,
                              (k.principal_y - (s - 1) / 2.0) / s,
                              k.width // s, k.height // s)
    return replace(cam, intrinsics=intr)


def init_splats(views: list[np.ndarray], cameras: list[CameraParams],
                config: PredictorConfig) -> GaussianScene:
    """Coarse plane sweep at 1/s resolution seeds one splat per pixel block."""
    _check_inputs(views, cameras, config)
    s = config.subsample
    small_views = [_downsample(v, s) for v in views]
    small_cams = [_downsample_camera(c, s) for c in cameras]

    centers = np.stack([cam_mod.world_to_cv(c)[1] for c in cameras])
    mus, scales, colors = [], [], []
    for i, (sv, sc) in enumerate(zip(small_views, small_cams)):
        others = [j for j in range(len(views)) if j != i]
        # nearest views give the widest common field of view for the sweep
        others.sort(key=lambda j: (np.linalg.norm(centers[j] - centers[i]), j))
        others = others[:INIT_SOURCES]
        vol = build_cost_volume(sv, sc, [small_views[j] for j in others],
                                [small_cams[j] for j in others],
                                config.init_planes, (config.depth_min, config.depth_max))
        dm = estimate_depth(vol)
        rays = cam_mod.pixel_rays(sc)
        _, center = cam_mod.world_to_cv(sc)
        depth = dm.depth.astype(np.float64)
        mus.append(center + depth[..., None] * rays)
        # one-pixel-block world footprint, isotropic
        scales.append(np.log(INIT_SIGMA_FACTOR * s * depth / cameras[i].intrinsics.focal_x))
        colors.append(sv)

    n_per_view = small_views[0].shape[0] * small_views[0].shape[1]
    n = n_per_view * len(views)
    mu = np.concatenate([m.reshape(-1, 3) for m in mus])
    log_scale = np.repeat(np.concatenate([sc.ravel() for sc in scales])[:, None], 3, axis=1)
    color = np.concatenate([c.reshape(-1, 3) for c in colors])
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    k = (config.sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = color / SH_C0
    scene = GaussianScene(mu=mu, rot=rot, log_scale=np.clip(log_scale, -12.0, 4.0),
                          opacity=np.full(n, config.opacity_init),
                          sh=sh, sh_degree=config.sh_degree)
    scene.validate()
    return scene


def _check_inputs(views, cameras, config):
    if len(views) < 2:
        raise ConfigError(f"predictor needs >= 2 views, got {len(views)}")
    if len(views) != len(cameras):
        raise ConfigError(f"{len(views)} views but {len(cameras)} cameras")
    _require_cv(cameras)
    s = config.subsample
    for c in cameras:
        if c.intrinsics.width % s or c.intrinsics.height % s:
            raise ConfigError(f"view dims must be divisible by subsample {s}")


@njit(cache=True)
def _splat_residual_stats(offsets, indices, mx, my, ia, ib, ic, rx, ry,
                          alpha, residual, height, width, tile, tiles_x,
                          wsum, wres):
    """Per-splat compositing-weight sums and weighted residual sums.

    Traversal identical to the composite kernel; sequential over tiles so the
    accumulation order (and hence output) is deterministic.
    """
    n_tiles = offsets.shape[0] - 1
    for t in range(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        y1 = min((ty + 1) * tile, height)
        x1 = min((tx + 1) * tile, width)
        for i in range(ty * tile, y1):
            for j in range(tx * tile, x1):
                trans = 1.0
                for p in range(offsets[t], offsets[t + 1]):
                    k = indices[p]
                    dx = j - mx[k]
                    dy = i - my[k]
                    if dx > rx[k] or -dx > rx[k] or dy > ry[k] or -dy > ry[k]:
                        continue
                    q = ia[k] * dx * dx + 2.0 * ib[k] * dx * dy + ic[k] * dy * dy
                    w_raw = alpha[k] * np.exp(-0.5 * q)
                    w = w_raw * trans
                    wsum[k] += w
                    wres[k, 0] += w * residual[i, j, 0]
                    wres[k, 1] += w * residual[i, j, 1]
                    wres[k, 2] += w * residual[i, j, 2]
                    trans *= 1.0 - w_raw
                    if trans < 1e-4:
                        break


def _render_all(scene, cameras, background):
    return [render(scene, cam, background=background) for cam in cameras]


def _residuals(outputs, targets):
    return [t - o.color for o, t in zip(outputs, targets)]


def _aggregate(residuals):
    return float(np.mean([np.abs(r).mean() for r in residuals]))


def _per_view(residuals):
    return [float(np.abs(r).mean()) for r in residuals]


def _collect_stats(scene, cameras, residuals):
    """Per-view per-splat weight sums and weighted residuals."""
    n = len(scene)
    v = len(cameras)
    wsum = np.zeros((v, n))
    wres = np.zeros((v, n, 3))
    for vi, cam in enumerate(cameras):
        k = cam.intrinsics
        proj = project_scene(scene, cam)
        bins = bin_tiles(proj, (k.width, k.height))
        _splat_residual_stats(bins.offsets, bins.indices,
                              np.ascontiguousarray(proj.mean2d[:, 0]),
                              np.ascontiguousarray(proj.mean2d[:, 1]),
                              np.ascontiguousarray(proj.inv_cov[:, 0]),
                              np.ascontiguousarray(proj.inv_cov[:, 1]),
                              np.ascontiguousarray(proj.inv_cov[:, 2]),
                              np.ascontiguousarray(proj.radius[:, 0]),
                              np.ascontiguousarray(proj.radius[:, 1]),
                              np.ascontiguousarray(proj.opacity),
                              np.ascontiguousarray(residuals[vi]),
                              k.height, k.width, bins.tile, bins.tiles_x,
                              wsum[vi], wres[vi])
    return wsum, wres


def _seed_views(n: int, n_views: int) -> np.ndarray:
    """Seeding-view index per splat, per init_splats' per-view block layout."""
    per = max(1, n // n_views)
    return np.minimum(np.arange(n) // per, n_views - 1)


def _probe_cost(pts, base_color, views_f, cameras):
    """Mean cross-view color inconsistency at candidate positions (inf if < 2 views see it)."""
    n = pts.shape[0]
    cost = np.zeros(n)
    seen = np.zeros(n)
    for vf, cam in zip(views_f, cameras):
        r_wc, c_cam = cam_mod.world_to_cv(cam)
        local = (pts - c_cam) @ r_wc.T
        z = local[:, 2]
        front = z > 1e-6
        zs = np.where(front, z, 1.0)
        ki = cam.intrinsics
        u = ki.principal_x + ki.focal_x * local[:, 0] / zs
        v = ki.principal_y + ki.focal_y * local[:, 1] / zs
        samp, inside = _bilinear(vf, u, v)
        inside &= front
        err = np.abs(samp - base_color).mean(axis=1)
        cost += np.where(inside, err, 0.0)
        seen += inside
    return np.where(seen >= 2, cost / np.maximum(seen, 1), np.inf)


def _probe_positions(scene, views_f, cameras, seed_view, step):
    """3-point photo-consistency probe along each splat's seeding ray.

    A candidate wins only if it beats the current position by MIN_PROBE_GAIN,
    so converged splats stay put. Returns (new centers, depth ratio).
    """
    centers = np.stack([cam_mod.world_to_cv(c)[1] for c in cameras])
    seed_c = centers[seed_view]
    ray = scene.mu - seed_c
    dist = np.linalg.norm(ray, axis=1)
    ray = ray / np.maximum(dist, 1e-9)[:, None]
    base_color = np.clip(scene.sh[:, 0, :] * SH_C0, 0.0, 1.0)

    best_cost = _probe_cost(seed_c + dist[:, None] * ray, base_color, views_f, cameras)
    best_d = dist.copy()
    for delta in (-1.0, 1.0):
        d = np.maximum(dist + delta * step, 1e-3)
        cost = _probe_cost(seed_c + d[:, None] * ray, base_color, views_f, cameras)
        better = cost < best_cost - MIN_PROBE_GAIN
        best_d = np.where(better, d, best_d)
        best_cost = np.where(better, cost, best_cost)
    return seed_c + best_d[:, None] * ray, best_d / np.maximum(dist, 1e-9)


def refine_splats(scene: GaussianScene, views: list[np.ndarray],
                  cameras: list[CameraParams], config: PredictorConfig
                  ) -> tuple[GaussianScene, RefineTrace]:
    """Accept-only greedy refinement driven by rendering error."""
    _check_inputs(views, cameras, config)
    trace = RefineTrace()
    if config.refine_iters == 0:
        return scene, trace

    targets = [to_float(v) for v in views]
    background = (0.0, 0.0, 0.0)
    scene = _copy_scene(scene)
    seed_view = _seed_views(len(scene), len(views))

    outputs = _render_all(scene, cameras, background)
    residuals = _residuals(outputs, targets)
    state = {"scene": scene, "residuals": residuals,
             "current": _aggregate(residuals), "accepted": 0, "rejected": 0}

    def try_accept(cand, on_accept=None):
        res2 = _residuals(_render_all(cand, cameras, background), targets)
        agg2 = _aggregate(res2)
        if agg2 <= state["current"] + RESIDUAL_EPS:
            state.update(scene=cand, residuals=res2, current=agg2)
            state["accepted"] += 1
            if on_accept:
                on_accept()
        else:
            state["rejected"] += 1

    for it in range(1, config.refine_iters + 1):
        state["accepted"] = 0
        state["rejected"] = 0
        scene = state["scene"]

        # class 1: centers move along the seeding ray (3-point probe)
        step = 2.0 * np.exp(scene.log_scale.mean(axis=1))
        new_mu, depth_ratio = _probe_positions(scene, targets, cameras, seed_view, step)
        if (np.linalg.norm(new_mu - scene.mu, axis=1) > 1e-12).any():
            cand = _copy_scene(scene)
            cand.mu = new_mu
            # footprint tracks the depth change so projected size stays put
            cand.log_scale = np.clip(
                scene.log_scale + np.log(depth_ratio)[:, None], -12.0, 4.0)
            try_accept(cand)

        # residual statistics for the appearance classes
        scene = state["scene"]
        wsum, wres = _collect_stats(scene, cameras, state["residuals"])
        total_w = wsum.sum(axis=0)
        covered = total_w > 1e-9

        # class 2: degree-0 color moves toward the weighted mean residual
        delta_c = np.zeros((len(scene), 3))
        delta_c[covered] = COLOR_RELAX * wres.sum(axis=0)[covered] / total_w[covered, None]
        if np.abs(delta_c).max() >= MIN_COLOR_STEP:
            cand = _copy_scene(scene)
            cand.sh[:, 0, :] += delta_c / SH_C0
            try_accept(cand)

        # class 3: damp opacity of splats whose per-view residuals disagree
        scene = state["scene"]
        per_view_mag = np.full((len(cameras), len(scene)), np.nan)
        seen = wsum > 1e-9
        with np.errstate(invalid="ignore"):
            mags = np.abs(wres).mean(axis=2) / np.maximum(wsum, 1e-12)
        per_view_mag[seen] = mags[seen]
        disagree = np.zeros(len(scene))
        multi = seen.sum(axis=0) >= 2
        if multi.any():
            disagree[multi] = np.nanstd(per_view_mag[:, multi], axis=0)
        floaterish = disagree > DISAGREE_THRESHOLD
        if floaterish.any():
            cand = _copy_scene(scene)
            cand.opacity = np.where(floaterish, scene.opacity * OPACITY_DECAY, scene.opacity)
            try_accept(cand)

        # class 4: prune low-opacity splats at iteration end (accept-only too,
        # so the monotonic-residual guarantee survives)
        scene = state["scene"]
        prune = scene.opacity < config.prune_alpha
        if prune.any():
            keep = ~prune

            def drop_seeds(keep=keep):
                nonlocal seed_view
                seed_view = seed_view[keep]

            try_accept(_subset_scene(scene, keep), on_accept=drop_seeds)

        trace.iterations.append(it)
        trace.view_residuals.append(_per_view(state["residuals"]))
        trace.aggregate.append(state["current"])
        trace.splat_counts.append(len(state["scene"]))
        trace.accepted.append(state["accepted"])
        trace.rejected.append(state["rejected"])
    return state["scene"], trace


def _copy_scene(scene: GaussianScene) -> GaussianScene:
    return GaussianScene(mu=scene.mu.copy(), rot=scene.rot.copy(),
                         log_scale=scene.log_scale.copy(),
                         opacity=scene.opacity.copy(), sh=scene.sh.copy(),
                         sh_degree=scene.sh_degree)


def _subset_scene(scene: GaussianScene, keep: np.ndarray) -> GaussianScene:
    return GaussianScene(mu=scene.mu[keep].copy(), rot=scene.rot[keep].copy(),
                         log_scale=scene.log_scale[keep].copy(),
                         opacity=scene.opacity[keep].copy(), sh=scene.sh[keep].copy(),
                         sh_degree=scene.sh_degree)


def predict(views: list[np.ndarray], cameras: list[CameraParams],
            config: PredictorConfig) -> tuple[GaussianScene, RefineTrace]:
    """Direct mapping from decoded views + poses to a Gaussian scene."""
    scene = init_splats(views, cameras, config)
    return refine_splats(scene, views, cameras, config)


def floater_census(scene: GaussianScene, views: list[np.ndarray],
                   cameras: list[CameraParams]) -> tuple[int, list[int]]:
    """Splats that disagree with >= 2 views and sit isolated in space.

    A floater reprojects into at least two input views with color residual
    > 0.2 while its nearest neighbor is farther than 3x its own scale.
    """
    if len(scene) == 0:
        return 0, []
    n = len(scene)
    views_f = [to_float(v) for v in views]
    bad_votes = np.zeros(n, dtype=np.int64)
    for cam, vf in zip(cameras, views_f):
        r_wc, c_cam = cam_mod.world_to_cv(cam)
        local = (scene.mu - c_cam) @ r_wc.T
        z = local[:, 2]
        front = z > 1e-6
        zs = np.where(front, z, 1.0)
        ki = cam.intrinsics
        u = ki.principal_x + ki.focal_x * local[:, 0] / zs
        v = ki.principal_y + ki.focal_y * local[:, 1] / zs
        samp, inside = _bilinear(vf, u, v)
        inside &= front
        dirs = scene.mu - c_cam
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        colors = eval_sh(scene.sh, dirs / np.maximum(norms, 1e-12))
        resid = np.abs(samp - colors).mean(axis=1)
        bad_votes += (inside & (resid > FLOATER_RESIDUAL)).astype(np.int64)

    if n < 2:
        return 0, []
    tree = cKDTree(scene.mu)
    nn_dist, _ = tree.query(scene.mu, k=2)
    nn = nn_dist[:, 1]
    scale = np.exp(scene.log_scale.mean(axis=1))
    flo = (bad_votes >= 2) & (nn > FLOATER_SCALE_FACTOR * scale)
    ids = np.flatnonzero(flo).tolist()
    return len(ids), ids
