"""Deterministic synthetic multiview content: ground-truth Gaussian scenes,
camera rigs, and rendered source views.

Every dataset is a pure function of its SceneSpec. The ground truth is itself
a Gaussian scene, so the rasterizer doubles as the oracle: held-out
evaluation images are renders of the true scene and are reproducible
bit-exactly. The noise_augmented kind perturbs only the transmitted source
views (after rendering); evaluation images stay pristine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .camera import CameraParams, Convention, Intrinsics, Pose
from .errors import ConfigError
from .imgio import quantize_u8, read_ppm, write_ppm
from .rasterizer import GaussianScene, SH_C0, load_gsc1, render, save_gsc1

BACKGROUND = (0.05, 0.05, 0.07)
PLANE_DEPTH_M = 2.0
FOCAL_PER_WIDTH = 0.9


class SceneKind(Enum):
    TEXTURED_PLANE = "textured_plane"
    BOX_ROOM = "box_room"
    SPHERE_FIELD = "sphere_field"
    SPECULAR_SPHERE = "specular_sphere"
    NOISE_AUGMENTED = "noise_augmented"


class Rig(Enum):
    LINEAR_4 = "linear_4"
    LINEAR_9 = "linear_9"
    GRID_8 = "grid_8"


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    kind: SceneKind
    splat_count: int = 40000
    rig: Rig = Rig.LINEAR_4
    baseline_m: float = 0.1
    resolution: tuple[int, int] = (960, 540)
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not isinstance(self.kind, SceneKind):
            object.__setattr__(self, "kind", _parse_enum(SceneKind, self.kind, "scene kind"))
        if not isinstance(self.rig, Rig):
            object.__setattr__(self, "rig", _parse_enum(Rig, self.rig, "rig"))
        w, h = self.resolution
        if w % 2 or h % 2:
            raise ConfigError(f"resolution must be even, got {self.resolution}")
        if self.splat_count < 16:
            raise ConfigError("splat_count must be >= 16")
        if not 0.0 <= self.noise_sigma <= 1.0:
            raise ConfigError("noise_sigma must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "kind": self.kind.value, "splat_count": self.splat_count,
            "rig": self.rig.value, "baseline_m": self.baseline_m,
            "resolution": list(self.resolution), "noise_sigma": self.noise_sigma,
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        return SceneSpec(seed=int(d["seed"]), kind=_parse_enum(SceneKind, d["kind"], "scene kind"),
                         splat_count=int(d.get("splat_count", 40000)),
                         rig=_parse_enum(Rig, d.get("rig", "linear_4"), "rig"),
                         baseline_m=float(d.get("baseline_m", 0.1)),
                         resolution=tuple(d.get("resolution", (960, 540))),
                         noise_sigma=float(d.get("noise_sigma", 0.0)))


def _parse_enum(enum_cls, value, what):
    try:
        return enum_cls(value)
    except ValueError:
        raise ConfigError(f"unknown {what} {value!r}") from None


def replace_kind(spec: SceneSpec, kind: SceneKind) -> SceneSpec:
    from dataclasses import replace
    return replace(spec, kind=kind)


@dataclass
class Dataset:
    spec: SceneSpec
    scene: GaussianScene
    cameras: list[CameraParams]
    views: list[np.ndarray]                          # uint8 source views (noise applied here)
    heldout: list[tuple[CameraParams, np.ndarray]]   # pristine evaluation pairs, all positions


def _rig_cameras(spec: SceneSpec) -> list[CameraParams]:
    w, h = spec.resolution
    intr = Intrinsics(FOCAL_PER_WIDTH * w, FOCAL_PER_WIDTH * w,
                      (w - 1) / 2.0, (h - 1) / 2.0, w, h)
    b = spec.baseline_m
    if spec.rig is Rig.LINEAR_4:
        ys = [(i - 1.5) * b for i in range(4)]
        positions = [(0.0, y, 0.0) for y in ys]
    elif spec.rig is Rig.LINEAR_9:
        ys = [(i - 4.0) * b for i in range(9)]
        positions = [(0.0, y, 0.0) for y in ys]
    elif spec.rig is Rig.GRID_8:
        positions = [(0.0, (j - 1.5) * b, (0.5 - i) * b)
                     for i in range(2) for j in range(4)]
    else:  # pragma: no cover
        raise ConfigError(f"unknown rig {spec.rig!r}")
    return [CameraParams(f"v{i:02d}", intr,
                         Pose(0.0, 0.0, 0.0, pos, Convention.MIV))
            for i, pos in enumerate(positions)]


def _texture(rng: np.random.Generator, y: np.ndarray, z: np.ndarray,
             phase: float = 0.0, jitter: float = 0.2) -> np.ndarray:
    """Multi-scale texture: two sinusoidal octaves + per-splat jitter."""
    n = y.shape[0]
    color = np.empty((n, 3))
    freqs = ((2.3, 1.9), (3.1, 2.6), (1.7, 3.4))
    for c, (fy, fz) in enumerate(freqs):
        color[:, c] = (0.5
                       + 0.18 * np.sin(fy * y + phase + 1.3 * c) * np.cos(fz * z - 0.7 * c)
                       + 0.14 * np.sin(4.1 * fy * y - 0.9 * c + phase) * np.sin(3.7 * fz * z + 0.4 * c))
    color += rng.uniform(-jitter, jitter, (n, 3))
    return np.clip(color, 0.02, 0.98)


def _grid_on_plane(count: int, extent_a: float, extent_b: float):
    """~count points on a [-a,a]x[-b,b] grid; returns (pa, pb, spacing)."""
    na = max(4, int(round(np.sqrt(count * extent_a / extent_b))))
    nb = max(4, count // na)
    a = (np.arange(na) + 0.5) / na * 2 * extent_a - extent_a
    b = (np.arange(nb) + 0.5) / nb * 2 * extent_b - extent_b
    pa, pb = np.meshgrid(a, b, indexing="ij")
    spacing = max(2 * extent_a / na, 2 * extent_b / nb)
    return pa.ravel(), pb.ravel(), spacing


def _identity_quats(n: int) -> np.ndarray:
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    return q


def _quats_x_to(normals: np.ndarray) -> np.ndarray:
    """Unit quaternions rotating the local x axis onto each (unit) normal."""
    x = np.array([1.0, 0.0, 0.0])
    n = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    axis = np.cross(np.broadcast_to(x, n.shape), n)
    dot = np.clip(n[:, 0], -1.0, 1.0)
    q = np.empty((n.shape[0], 4))
    q[:, 0] = 1.0 + dot
    q[:, 1:] = axis
    anti = q[:, 0] < 1e-9  # antiparallel: rotate pi about z
    q[anti] = [0.0, 0.0, 0.0, 1.0]
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _plane_splats(rng, count, extent_y, extent_z, plane_x, phase=0.0):
    y, z, spacing = _grid_on_plane(count, extent_y, extent_z)
    n = y.shape[0]
    sigma = 0.45 * spacing
    mu = np.column_stack([np.full(n, plane_x), y, z])
    log_scale = np.tile(np.log([sigma / 4.0, sigma, sigma]), (n, 1))
    color = _texture(rng, y, z, phase=phase)
    return mu, _identity_quats(n), log_scale, color


def _wall(rng, count, axis, level, lo_a, hi_a, lo_b, hi_b, phase):
    """Axis-aligned textured wall: `axis` is the normal axis (0=x,1=y,2=z)."""
    a, b, spacing = _grid_on_plane(count, (hi_a - lo_a) / 2, (hi_b - lo_b) / 2)
    a += (hi_a + lo_a) / 2
    b += (hi_b + lo_b) / 2
    n = a.shape[0]
    sigma = 0.6 * spacing
    mu = np.empty((n, 3))
    other = [i for i in range(3) if i != axis]
    mu[:, axis] = level
    mu[:, other[0]] = a
    mu[:, other[1]] = b
    scales = np.full(3, sigma)
    scales[axis] = sigma / 4.0
    log_scale = np.tile(np.log(scales), (n, 1))
    return mu, _identity_quats(n), log_scale, _texture(rng, a, b, phase=phase)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    return np.column_stack([np.sin(phi) * np.cos(theta),
                            np.sin(phi) * np.sin(theta),
                            np.cos(phi)])


def _sphere_splats(rng, count, center, radius, base_color, jitter=0.1):
    normals = _fibonacci_sphere(count)
    mu = np.asarray(center) + radius * normals
    spacing = radius * np.sqrt(4 * np.pi / count)
    sigma = 0.7 * spacing
    log_scale = np.tile(np.log([sigma / 4.0, sigma, sigma]), (count, 1))
    color = np.clip(np.asarray(base_color) + rng.uniform(-jitter, jitter, (count, 3)),
                    0.02, 0.98)
    return mu, _quats_x_to(normals), log_scale, color


def _assemble(parts, sh_degree: int, rng=None, specular_mask=None) -> GaussianScene:
    mu = np.concatenate([p[0] for p in parts])
    rot = np.concatenate([p[1] for p in parts])
    log_scale = np.concatenate([p[2] for p in parts])
    color = np.concatenate([p[3] for p in parts])
    n = mu.shape[0]
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = color / SH_C0
    if specular_mask is not None and sh_degree >= 1:
        m = specular_mask
        nm = int(m.sum())
        # coherent view-dependent lobe (one highlight direction for the whole
        # surface) plus mild per-splat variation
        lobe = rng.uniform(-0.6, 0.6, (1, 3, 3))
        sh[m, 1:4, :] = lobe + rng.uniform(-0.15, 0.15, (nm, 3, 3))
        if sh_degree >= 2:
            lobe2 = rng.uniform(-0.35, 0.35, (1, 5, 3))
            sh[m, 4:9, :] = lobe2 + rng.uniform(-0.08, 0.08, (nm, 5, 3))
    opacity = np.full(n, 0.95)
    scene = GaussianScene(mu=mu, rot=rot, log_scale=log_scale,
                          opacity=opacity, sh=sh, sh_degree=sh_degree)
    scene.validate()
    return scene


def _build_scene(spec: SceneSpec, rng: np.random.Generator) -> GaussianScene:
    kind = spec.kind
    count = spec.splat_count
    if kind is SceneKind.TEXTURED_PLANE:
        parts = [_plane_splats(rng, count, 2.2, 1.3, PLANE_DEPTH_M)]
        return _assemble(parts, sh_degree=0)
    if kind is SceneKind.NOISE_AUGMENTED:
        # sphere_field geometry: occlusions and depth edges make the pipelines
        # react to view noise the way real content does
        return _build_scene(replace_kind(spec, SceneKind.SPHERE_FIELD), rng)
    if kind is SceneKind.BOX_ROOM:
        # back wall + two side walls + floor + ceiling; splats split by area
        areas = np.array([5.0 * 3.0, 4.5 * 3.0, 4.5 * 3.0, 4.5 * 5.0, 4.5 * 5.0])
        quota = (count * areas / areas.sum()).astype(int)
        parts = [
            _wall(rng, quota[0], 0, 4.5, -2.5, 2.5, -1.5, 1.5, 0.0),   # back: y,z
            _wall(rng, quota[1], 1, 2.5, 0.5, 4.5, -1.5, 1.5, 1.1),    # left: x,z
            _wall(rng, quota[2], 1, -2.5, 0.5, 4.5, -1.5, 1.5, 2.2),   # right: x,z
            _wall(rng, quota[3], 2, -1.5, 0.5, 4.5, -2.5, 2.5, 3.3),   # floor: x,y
            _wall(rng, quota[4], 2, 1.5, 0.5, 4.5, -2.5, 2.5, 4.4),    # ceiling: x,y
        ]
        return _assemble(parts, sh_degree=0)
    if kind is SceneKind.SPHERE_FIELD:
        n_spheres = 10
        wall_quota = count // 3
        sphere_quota = (count - wall_quota) // n_spheres
        parts = [_wall(rng, wall_quota, 0, 5.0, -3.0, 3.0, -1.8, 1.8, 0.4)]
        for _ in range(n_spheres):
            center = rng.uniform([1.8, -1.4, -0.8], [3.5, 1.4, 0.8])
            radius = rng.uniform(0.15, 0.45)
            base = rng.uniform(0.15, 0.85, 3)
            parts.append(_sphere_splats(rng, sphere_quota, center, radius, base))
        return _assemble(parts, sh_degree=0)
    if kind is SceneKind.SPECULAR_SPHERE:
        wall_quota = count // 2
        parts = [_wall(rng, wall_quota, 0, 5.0, -3.0, 3.0, -1.8, 1.8, 0.9)]
        n_wall = parts[0][0].shape[0]
        parts.append(_sphere_splats(rng, count - wall_quota, (2.5, 0.0, 0.0), 0.8,
                                    (0.6, 0.5, 0.4), jitter=0.05))
        n_total = n_wall + parts[1][0].shape[0]
        mask = np.zeros(n_total, dtype=bool)
        mask[n_wall:] = True
        return _assemble(parts, sh_degree=2, rng=rng, specular_mask=mask)
    raise ConfigError(f"unknown scene kind {kind!r}")


def _add_view_noise(view_u8: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    noisy = view_u8.astype(np.float64) / 255.0
    noisy += rng.uniform(-sigma, sigma, view_u8.shape)
    return quantize_u8(noisy)


def generate(spec: SceneSpec) -> Dataset:
    """Build scene + rig, render all views; pure function of the spec."""
    rng = np.random.default_rng(spec.seed)
    scene = _build_scene(spec, rng)
    cameras = _rig_cameras(spec)
    pristine = [quantize_u8(render(scene, cam, background=BACKGROUND).color)
                for cam in cameras]
    heldout = list(zip(cameras, pristine))
    if spec.kind is SceneKind.NOISE_AUGMENTED and spec.noise_sigma > 0.0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5EED]))
        views = [_add_view_noise(v, spec.noise_sigma, noise_rng) for v in pristine]
    else:
        views = [v.copy() for v in pristine]
    return Dataset(spec=spec, scene=scene, cameras=cameras, views=views, heldout=heldout)


def split_transmitted(ds: Dataset, atlas_count: int) -> tuple[list[int], list[int]]:
    """Uniform-spread selection of transmitted views; evaluation = all positions.

    Transmitted indices are floor(k*(n-1)/(m-1) + 0.5) for k = 0..m-1 with
    m = min(4*atlas_count, n), deduplicated.
    """
    if atlas_count not in (1, 2):
        raise ConfigError(f"atlas_count must be 1 or 2, got {atlas_count}")
    n = len(ds.cameras)
    if n < 4:
        raise ConfigError(f"dataset needs >= 4 views, has {n}")
    m = min(4 * atlas_count, n)
    idx = sorted({int(np.floor(k * (n - 1) / (m - 1) + 0.5)) for k in range(m)})
    return idx, list(range(n))


# --- persistence: manifest.json + view_####.ppm + scene.gsc1 ---
# (noise_augmented datasets additionally persist pristine eval_####.ppm images,
# since their source views carry noise)

def save_dataset(ds: Dataset, path: str | Path) -> None:
    from .container import camera_to_dict  # shared camera schema
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_gsc1(ds.scene, path / "scene.gsc1")
    noisy = ds.spec.kind is SceneKind.NOISE_AUGMENTED and ds.spec.noise_sigma > 0.0
    for i, view in enumerate(ds.views):
        write_ppm(path / f"view_{i:04d}.ppm", view)
        if noisy:
            write_ppm(path / f"eval_{i:04d}.ppm", ds.heldout[i][1])
    manifest = {
        "spec": ds.spec.to_dict(),
        "cameras": [camera_to_dict(c) for c in ds.cameras],
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    from .container import camera_from_dict
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    spec = SceneSpec.from_dict(manifest["spec"])
    cameras = [camera_from_dict(d) for d in manifest["cameras"]]
    scene = load_gsc1(path / "scene.gsc1")
    views = [read_ppm(path / f"view_{i:04d}.ppm") for i in range(len(cameras))]
    noisy = spec.kind is SceneKind.NOISE_AUGMENTED and spec.noise_sigma > 0.0
    if noisy:
        evals = [read_ppm(path / f"eval_{i:04d}.ppm") for i in range(len(cameras))]
    else:
        evals = views
    heldout = list(zip(cameras, evals))
    return Dataset(spec=spec, scene=scene, cameras=cameras, views=views, heldout=heldout)
