"""Tile-based forward rasterizer for 3D Gaussian scenes.

The compositing rule is shared by the tiled path and the naive per-pixel
oracle: a splat contributes to a pixel iff the pixel lies inside the
splat's axis-aligned 3-sigma bounding box; its weight is
opacity * exp(-0.5 * d^T cov2d^-1 d); traversal is front-to-back in
(center depth, splat index) order and stops once transmittance drops
below 1e-4. Binning covers exactly the tiles intersecting the 3-sigma
box, so output is bitwise independent of tile size and worker count.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit, prange, set_num_threads, get_num_threads

from . import camera as cam_mod
from .camera import CameraParams
from .errors import ParseError

NEAR_PLANE = 0.01
AA_FLOOR = 0.3          # px^2 added to cov2d, keeps it invertible and sub-pixel splats visible
TRANSMITTANCE_EPS = 1e-4
LOG_SCALE_MIN, LOG_SCALE_MAX = -12.0, 4.0

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)


@dataclass
class Gaussian:
    """One splat: center, unit quaternion (w,x,y,z), per-axis log stddev, opacity, SH."""
    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity: float
    sh: np.ndarray  # ((L+1)^2, 3)


@dataclass
class GaussianScene:
    mu: np.ndarray         # (N, 3) float64
    rot: np.ndarray        # (N, 4) float64, unit quaternions
    log_scale: np.ndarray  # (N, 3) float64
    opacity: np.ndarray    # (N,) float64
    sh: np.ndarray         # (N, (L+1)^2, 3) float64
    sh_degree: int

    def __post_init__(self):
        n = self.mu.shape[0]
        k = (self.sh_degree + 1) ** 2
        if self.mu.shape != (n, 3) or self.rot.shape != (n, 4) \
                or self.log_scale.shape != (n, 3) or self.opacity.shape != (n,) \
                or self.sh.shape != (n, k, 3):
            raise ValueError("inconsistent scene array shapes")

    def __len__(self) -> int:
        return self.mu.shape[0]

    @property
    def bbox(self) -> np.ndarray:
        """(2, 3) min/max over centers."""
        if len(self) == 0:
            return np.zeros((2, 3))
        return np.stack([self.mu.min(axis=0), self.mu.max(axis=0)])

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(self.mu[i], self.rot[i], self.log_scale[i],
                        float(self.opacity[i]), self.sh[i])

    def validate(self) -> None:
        if self.sh_degree not in (0, 1, 2):
            raise ValueError(f"sh_degree must be 0, 1 or 2, got {self.sh_degree}")
        norms = np.linalg.norm(self.rot, axis=1)
        if len(self) and np.abs(norms - 1.0).max() > 1e-9:
            raise ValueError("quaternions must be unit within 1e-9")
        if len(self) and (self.log_scale.min() < LOG_SCALE_MIN or self.log_scale.max() > LOG_SCALE_MAX):
            raise ValueError(f"log_scale outside [{LOG_SCALE_MIN}, {LOG_SCALE_MAX}]")
        if len(self) and (self.opacity.min() <= 0.0 or self.opacity.max() >= 1.0):
            raise ValueError("opacity must lie strictly inside (0, 1)")


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(..., 4) unit quaternions (w,x,y,z) -> (..., 3, 3) rotation matrices."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def covariance_of(g: Gaussian) -> np.ndarray:
    """Sigma = R diag(exp(2*log_scale)) R^T, symmetric positive definite."""
    r = quat_to_matrix(g.rot)
    return (r * np.exp(2.0 * np.asarray(g.log_scale, dtype=float))) @ r.T


@dataclass
class Projection:
    """Vectorized screen-space splats; invalid entries are culled."""
    mean2d: np.ndarray    # (N, 2)
    cov2d: np.ndarray     # (N, 3) packed (c00, c01, c11)
    inv_cov: np.ndarray   # (N, 3) packed (a, b, c): q = a dx^2 + 2 b dx dy + c dy^2
    depth: np.ndarray     # (N,)
    radius: np.ndarray    # (N, 2) 3-sigma half extents (rx, ry)
    valid: np.ndarray     # (N,) bool
    opacity: np.ndarray   # (N,)


def project_scene(scene: GaussianScene, cam: CameraParams) -> Projection:
    """EWA projection of every splat: cov2d = J W Sigma W^T J^T + AA_FLOOR*I."""
    r_wc, center = cam_mod.world_to_cv(cam)
    k = cam.intrinsics
    n = len(scene)
    t = (scene.mu - center) @ r_wc.T  # camera-space centers
    z = t[:, 2]
    valid = z > NEAR_PLANE

    zs = np.where(valid, z, 1.0)  # avoid div-by-zero on culled rows
    mx = k.principal_x + k.focal_x * t[:, 0] / zs
    my = k.principal_y + k.focal_y * t[:, 1] / zs

    rmats = quat_to_matrix(scene.rot)
    scale2 = np.exp(2.0 * scene.log_scale)
    sigma = np.einsum("nij,nj,nkj->nik", rmats, scale2, rmats)
    sig_cam = np.einsum("ij,njk,lk->nil", r_wc, sigma, r_wc)

    # J rows: (fx/z, 0, -fx x/z^2), (0, fy/z, -fy y/z^2)
    j = np.zeros((n, 2, 3))
    j[:, 0, 0] = k.focal_x / zs
    j[:, 0, 2] = -k.focal_x * t[:, 0] / zs**2
    j[:, 1, 1] = k.focal_y / zs
    j[:, 1, 2] = -k.focal_y * t[:, 1] / zs**2
    cov = np.einsum("nij,njk,nlk->nil", j, sig_cam, j)
    c00 = cov[:, 0, 0] + AA_FLOOR
    c01 = cov[:, 0, 1]
    c11 = cov[:, 1, 1] + AA_FLOOR

    det = c00 * c11 - c01 * c01
    det = np.where(det > 0, det, 1.0)
    inv = np.stack([c11 / det, -c01 / det, c00 / det], axis=1)

    rx = 3.0 * np.sqrt(np.maximum(c00, 0.0))
    ry = 3.0 * np.sqrt(np.maximum(c11, 0.0))
    inside = (mx + rx >= 0) & (mx - rx <= k.width - 1) & (my + ry >= 0) & (my - ry <= k.height - 1)
    valid &= inside

    return Projection(
        mean2d=np.stack([mx, my], axis=1),
        cov2d=np.stack([c00, c01, c11], axis=1),
        inv_cov=inv,
        depth=z,
        radius=np.stack([rx, ry], axis=1),
        valid=valid,
        opacity=np.asarray(scene.opacity, dtype=float),
    )


def project_gaussian(g: Gaussian, cam: CameraParams):
    """Screen-space (mean2d, cov2d 2x2, depth) of one splat, or None if culled."""
    scene = GaussianScene(
        mu=np.asarray(g.mu, dtype=float)[None],
        rot=np.asarray(g.rot, dtype=float)[None],
        log_scale=np.asarray(g.log_scale, dtype=float)[None],
        opacity=np.asarray([g.opacity], dtype=float),
        sh=np.asarray(g.sh, dtype=float)[None],
        sh_degree=int(math.isqrt(np.asarray(g.sh).shape[0]) - 1),
    )
    p = project_scene(scene, cam)
    if not p.valid[0]:
        return None
    c00, c01, c11 = p.cov2d[0]
    return p.mean2d[0], np.array([[c00, c01], [c01, c11]]), float(p.depth[0])


@dataclass
class TileBins:
    """CSR tile lists: splat indices for tile t are indices[offsets[t]:offsets[t+1]]."""
    offsets: np.ndarray
    indices: np.ndarray
    tiles_x: int
    tiles_y: int
    tile: int


def _pixel_bounds(proj: Projection, width: int, height: int):
    """Integer pixel-index bbox [jmin, jmax] x [imin, imax] per splat (may be empty)."""
    mx, my = proj.mean2d[:, 0], proj.mean2d[:, 1]
    rx, ry = proj.radius[:, 0], proj.radius[:, 1]
    jmin = np.maximum(np.ceil(mx - rx), 0).astype(np.int64)
    jmax = np.minimum(np.floor(mx + rx), width - 1).astype(np.int64)
    imin = np.maximum(np.ceil(my - ry), 0).astype(np.int64)
    imax = np.minimum(np.floor(my + ry), height - 1).astype(np.int64)
    return jmin, jmax, imin, imax


def bin_tiles(proj: Projection, image_size: tuple[int, int], tile: int = 16) -> TileBins:
    """Assign each valid splat to every tile intersecting its 3-sigma bbox.

    Within a tile indices are sorted by ascending depth, ties by splat index.
    """
    width, height = image_size
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y

    jmin, jmax, imin, imax = _pixel_bounds(proj, width, height)
    nonempty = proj.valid & (jmin <= jmax) & (imin <= imax)

    txmin, txmax = jmin // tile, jmax // tile
    tymin, tymax = imin // tile, imax // tile
    ntx = np.where(nonempty, txmax - txmin + 1, 0)
    nty = np.where(nonempty, tymax - tymin + 1, 0)
    counts = ntx * nty
    total = int(counts.sum())
    if total == 0:
        return TileBins(np.zeros(n_tiles + 1, dtype=np.int64),
                        np.zeros(0, dtype=np.int64), tiles_x, tiles_y, tile)

    starts = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    splat_of = np.repeat(np.arange(len(counts)), counts)
    within = np.arange(total) - starts[splat_of]
    dx = within % np.maximum(ntx[splat_of], 1)
    dy = within // np.maximum(ntx[splat_of], 1)
    tile_id = (tymin[splat_of] + dy) * tiles_x + (txmin[splat_of] + dx)

    order = np.lexsort((splat_of, proj.depth[splat_of], tile_id))
    tile_sorted = tile_id[order]
    indices = splat_of[order]
    offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    np.cumsum(np.bincount(tile_sorted, minlength=n_tiles), out=offsets[1:])
    return TileBins(offsets, indices, tiles_x, tiles_y, tile)


@dataclass
class RenderOutput:
    color: np.ndarray          # (H, W, 3) in [0, 1]
    alpha: np.ndarray          # (H, W) accumulated opacity
    depth: np.ndarray          # (H, W) expected depth, meters
    contrib_count: np.ndarray  # (H, W) int32


@njit(cache=True, parallel=True)
def _composite_tiles(offsets, indices, mx, my, ia, ib, ic, rx, ry,
                     alpha, color, depth, height, width, tile, tiles_x, bg,
                     out_color, out_alpha, out_depth, out_contrib):
    n_tiles = offsets.shape[0] - 1
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        y1 = min((ty + 1) * tile, height)
        x1 = min((tx + 1) * tile, width)
        for i in range(ty * tile, y1):
            for j in range(tx * tile, x1):
                trans = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                acc_a = 0.0
                acc_d = 0.0
                cnt = 0
                for p in range(offsets[t], offsets[t + 1]):
                    k = indices[p]
                    dx = j - mx[k]
                    dy = i - my[k]
                    if dx > rx[k] or -dx > rx[k] or dy > ry[k] or -dy > ry[k]:
                        continue
                    q = ia[k] * dx * dx + 2.0 * ib[k] * dx * dy + ic[k] * dy * dy
                    w = alpha[k] * math.exp(-0.5 * q)
                    c0 += trans * w * color[k, 0]
                    c1 += trans * w * color[k, 1]
                    c2 += trans * w * color[k, 2]
                    acc_a += trans * w
                    acc_d += trans * w * depth[k]
                    cnt += 1
                    trans *= 1.0 - w
                    if trans < TRANSMITTANCE_EPS:
                        break
                out_color[i, j, 0] = c0 + trans * bg[0]
                out_color[i, j, 1] = c1 + trans * bg[1]
                out_color[i, j, 2] = c2 + trans * bg[2]
                out_alpha[i, j] = acc_a
                out_depth[i, j] = acc_d / max(acc_a, 1e-6)
                out_contrib[i, j] = cnt


@njit(cache=True, parallel=True)
def _composite_naive(order, mx, my, ia, ib, ic, rx, ry,
                     alpha, color, depth, height, width, bg,
                     out_color, out_alpha, out_depth, out_contrib):
    n = order.shape[0]
    for i in prange(height):
        for j in range(width):
            trans = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            acc_a = 0.0
            acc_d = 0.0
            cnt = 0
            for p in range(n):
                k = order[p]
                dx = j - mx[k]
                dy = i - my[k]
                if dx > rx[k] or -dx > rx[k] or dy > ry[k] or -dy > ry[k]:
                    continue
                q = ia[k] * dx * dx + 2.0 * ib[k] * dx * dy + ic[k] * dy * dy
                w = alpha[k] * math.exp(-0.5 * q)
                c0 += trans * w * color[k, 0]
                c1 += trans * w * color[k, 1]
                c2 += trans * w * color[k, 2]
                acc_a += trans * w
                acc_d += trans * w * depth[k]
                cnt += 1
                trans *= 1.0 - w
                if trans < TRANSMITTANCE_EPS:
                    break
            out_color[i, j, 0] = c0 + trans * bg[0]
            out_color[i, j, 1] = c1 + trans * bg[1]
            out_color[i, j, 2] = c2 + trans * bg[2]
            out_alpha[i, j] = acc_a
            out_depth[i, j] = acc_d / max(acc_a, 1e-6)
            out_contrib[i, j] = cnt


class _num_threads:
    """Temporarily pin the numba thread count (None = leave untouched)."""

    def __init__(self, workers):
        self.workers = workers

    def __enter__(self):
        if self.workers is not None:
            self.prev = get_num_threads()
            set_num_threads(self.workers)

    def __exit__(self, *exc):
        if self.workers is not None:
            set_num_threads(self.prev)


def _alloc_output(height: int, width: int):
    return (np.zeros((height, width, 3)), np.zeros((height, width)),
            np.zeros((height, width)), np.zeros((height, width), dtype=np.int32))


def composite(bins: TileBins, proj: Projection, colors: np.ndarray,
              background, image_size: tuple[int, int],
              workers: int | None = None) -> RenderOutput:
    """Front-to-back alpha compositing of binned splats."""
    width, height = image_size
    bg = np.asarray(background, dtype=float)
    out_color, out_alpha, out_depth, out_contrib = _alloc_output(height, width)
    opacity = np.ascontiguousarray(proj.opacity)
    with _num_threads(workers):
        _composite_tiles(bins.offsets, bins.indices,
                         np.ascontiguousarray(proj.mean2d[:, 0]),
                         np.ascontiguousarray(proj.mean2d[:, 1]),
                         np.ascontiguousarray(proj.inv_cov[:, 0]),
                         np.ascontiguousarray(proj.inv_cov[:, 1]),
                         np.ascontiguousarray(proj.inv_cov[:, 2]),
                         np.ascontiguousarray(proj.radius[:, 0]),
                         np.ascontiguousarray(proj.radius[:, 1]),
                         opacity, np.ascontiguousarray(colors),
                         np.ascontiguousarray(proj.depth),
                         height, width, bins.tile, bins.tiles_x, bg,
                         out_color, out_alpha, out_depth, out_contrib)
    return RenderOutput(out_color, out_alpha, out_depth, out_contrib)


def eval_sh(sh: np.ndarray, direction: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Real spherical harmonics color along unit directions.

    sh: (K, 3) or (N, K, 3) with K = (L+1)^2; direction: (3,) or (N, 3).
    Returns rgb clamped to [0, 1] unless clamp=False.
    """
    sh = np.asarray(sh, dtype=float)
    d = np.asarray(direction, dtype=float)
    single = sh.ndim == 2
    if single:
        sh = sh[None]
        d = d[None] if d.ndim == 1 else d
    norms = np.linalg.norm(d, axis=-1)
    if np.any(norms < 1e-12):
        raise ValueError("view direction must be nonzero")
    d = d / norms[:, None]
    k = sh.shape[1]
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    basis = np.empty((d.shape[0], k))
    basis[:, 0] = SH_C0
    if k >= 4:
        basis[:, 1] = -SH_C1 * y
        basis[:, 2] = SH_C1 * z
        basis[:, 3] = -SH_C1 * x
    if k >= 9:
        basis[:, 4] = SH_C2[0] * x * y
        basis[:, 5] = SH_C2[1] * y * z
        basis[:, 6] = SH_C2[2] * (2.0 * z * z - x * x - y * y)
        basis[:, 7] = SH_C2[3] * x * z
        basis[:, 8] = SH_C2[4] * (x * x - y * y)
    rgb = np.einsum("nk,nkc->nc", basis, sh)
    if clamp:
        rgb = np.clip(rgb, 0.0, 1.0)
    return rgb[0] if single else rgb


def splat_colors(scene: GaussianScene, cam: CameraParams) -> np.ndarray:
    """Per-splat RGB: SH evaluated once along each center's viewing direction."""
    _, center = cam_mod.world_to_cv(cam)
    dirs = scene.mu - center
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.where(norms > 1e-12, dirs / np.where(norms > 0, norms, 1.0),
                    np.array([0.0, 0.0, 1.0]))
    return eval_sh(scene.sh, dirs)


def render(scene: GaussianScene, cam: CameraParams, background=(0.0, 0.0, 0.0),
           tile: int = 16, workers: int | None = None) -> RenderOutput:
    """project -> bin -> composite. Bitwise deterministic for any tile/worker count."""
    k = cam.intrinsics
    proj = project_scene(scene, cam)
    colors = splat_colors(scene, cam)
    bins = bin_tiles(proj, (k.width, k.height), tile)
    return composite(bins, proj, colors, background, (k.width, k.height), workers)


def render_naive(scene: GaussianScene, cam: CameraParams, background=(0.0, 0.0, 0.0),
                 workers: int | None = None) -> RenderOutput:
    """Per-pixel all-splats oracle renderer (no tiles, no binning)."""
    k = cam.intrinsics
    proj = project_scene(scene, cam)
    colors = splat_colors(scene, cam)
    valid_idx = np.flatnonzero(proj.valid)
    order = valid_idx[np.lexsort((valid_idx, proj.depth[valid_idx]))]
    bg = np.asarray(background, dtype=float)
    out_color, out_alpha, out_depth, out_contrib = _alloc_output(k.height, k.width)
    with _num_threads(workers):
        _composite_naive(order,
                         np.ascontiguousarray(proj.mean2d[:, 0]),
                         np.ascontiguousarray(proj.mean2d[:, 1]),
                         np.ascontiguousarray(proj.inv_cov[:, 0]),
                         np.ascontiguousarray(proj.inv_cov[:, 1]),
                         np.ascontiguousarray(proj.inv_cov[:, 2]),
                         np.ascontiguousarray(proj.radius[:, 0]),
                         np.ascontiguousarray(proj.radius[:, 1]),
                         np.ascontiguousarray(scene.opacity),
                         np.ascontiguousarray(colors),
                         np.ascontiguousarray(proj.depth),
                         k.height, k.width, bg,
                         out_color, out_alpha, out_depth, out_contrib)
    return RenderOutput(out_color, out_alpha, out_depth, out_contrib)


GSC1_MAGIC = b"GSC1"


def save_gsc1(scene: GaussianScene, path: str | Path) -> None:
    """Little-endian binary: magic, u32 count, u8 sh_degree, then per-splat f32 records."""
    n = len(scene)
    k = (scene.sh_degree + 1) ** 2
    rec = np.empty((n, 11 + 3 * k), dtype="<f4")
    rec[:, 0:3] = scene.mu
    rec[:, 3:7] = scene.rot
    rec[:, 7:10] = scene.log_scale
    rec[:, 10] = scene.opacity
    rec[:, 11:] = scene.sh.reshape(n, 3 * k)
    with open(path, "wb") as f:
        f.write(GSC1_MAGIC)
        f.write(struct.pack("<IB", n, scene.sh_degree))
        f.write(rec.tobytes())


def load_gsc1(path: str | Path) -> GaussianScene:
    data = Path(path).read_bytes()
    if len(data) < 9 or data[:4] != GSC1_MAGIC:
        raise ParseError(f"{path}: bad GSC1 magic at byte 0")
    n, sh_degree = struct.unpack_from("<IB", data, 4)
    if sh_degree > 2:
        raise ParseError(f"{path}: unsupported sh_degree {sh_degree} at byte 8")
    k = (sh_degree + 1) ** 2
    rec_len = 11 + 3 * k
    need = 9 + 4 * n * rec_len
    if len(data) < need:
        raise ParseError(f"{path}: truncated at byte {len(data)}, need {need}")
    rec = np.frombuffer(data, dtype="<f4", count=n * rec_len, offset=9).reshape(n, rec_len)
    rec = rec.astype(np.float64)
    rot = rec[:, 3:7]
    norms = np.linalg.norm(rot, axis=1, keepdims=True)
    rot = rot / np.where(norms > 0, norms, 1.0)  # restore unit norm lost to f32 storage
    return GaussianScene(
        mu=np.ascontiguousarray(rec[:, 0:3]),
        rot=np.ascontiguousarray(rot),
        log_scale=np.ascontiguousarray(rec[:, 7:10]),
        opacity=np.ascontiguousarray(rec[:, 10]),
        sh=np.ascontiguousarray(rec[:, 11:]).reshape(n, k, 3),
        sh_degree=int(sh_degree),
    )
