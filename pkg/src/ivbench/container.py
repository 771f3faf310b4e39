"""MIV-lite transport: atlas packing, camera manifest, single-bitstream mux.

Bitstream layout (all integers little-endian, documented in FORMATS.md):
  magic "IVB1" | u8 version=1 | u8 rate_point | u32 manifest_len |
  manifest JSON (UTF-8) | u16 atlas_count | per atlas: u32 payload_len, payload.

Views are tiled into a fixed 2x2 grid per atlas (non-pruned full views),
unused cells zero-filled.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraParams, Convention, Intrinsics, Pose, parse_convention
from .errors import ConfigError, ParseError

MAGIC = b"IVB1"
VERSION = 1
VIEWS_PER_ATLAS = 4


def camera_to_dict(cam: CameraParams) -> dict:
    k, p = cam.intrinsics, cam.pose
    return {
        "id": cam.id,
        "width": k.width,
        "height": k.height,
        "intrinsics": {"fx": k.focal_x, "fy": k.focal_y, "cx": k.principal_x, "cy": k.principal_y},
        "pose": {"yaw_deg": p.yaw_deg, "pitch_deg": p.pitch_deg, "roll_deg": p.roll_deg,
                 "x": p.position[0], "y": p.position[1], "z": p.position[2]},
        "convention": p.convention.value,
    }


def camera_from_dict(d: dict) -> CameraParams:
    try:
        k = d["intrinsics"]
        p = d["pose"]
        intr = Intrinsics(k["fx"], k["fy"], k["cx"], k["cy"], int(d["width"]), int(d["height"]))
        pose = Pose(p["yaw_deg"], p["pitch_deg"], p["roll_deg"],
                    (p["x"], p["y"], p["z"]), parse_convention(d["convention"]))
        return CameraParams(str(d["id"]), intr, pose)
    except KeyError as e:
        raise ParseError(f"camera record missing field {e}") from None
    except (TypeError, ValueError) as e:
        raise ParseError(f"malformed camera record: {e}") from None


@dataclass(frozen=True)
class Placement:
    view_id: str
    x: int
    y: int
    w: int
    h: int


@dataclass
class Atlas:
    id: int
    width: int
    height: int
    image: np.ndarray  # (height, width, 3) uint8
    placements: list[Placement] = field(default_factory=list)


@dataclass
class Manifest:
    version: int
    rate_point: int
    cameras: list[CameraParams]
    atlases: list[dict]  # layout descriptors: {id, width, height, placements:[...]}

    def to_json_bytes(self) -> bytes:
        doc = {
            "version": self.version,
            "rate_point": self.rate_point,
            "cameras": [camera_to_dict(c) for c in self.cameras],
            "atlases": self.atlases,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @staticmethod
    def from_json_bytes(data: bytes) -> "Manifest":
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ParseError(f"manifest is not valid JSON: {e}") from None
        try:
            m = Manifest(version=int(doc["version"]), rate_point=int(doc["rate_point"]),
                         cameras=[camera_from_dict(c) for c in doc["cameras"]],
                         atlases=doc["atlases"])
        except KeyError as e:
            raise ParseError(f"manifest missing field {e}") from None
        except (TypeError, ValueError) as e:
            raise ParseError(f"malformed manifest: {e}") from None
        m.validate()
        return m

    def validate(self) -> None:
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ParseError(f"duplicate camera ids in manifest: {ids}")
        known = set(ids)
        try:
            for a in self.atlases:
                for p in a["placements"]:
                    if p["view_id"] not in known:
                        raise ParseError(
                            f"placement references unknown view_id {p['view_id']!r}")
                    if p["x"] < 0 or p["y"] < 0 or p["x"] + p["w"] > a["width"] \
                            or p["y"] + p["h"] > a["height"]:
                        raise ParseError(
                            f"placement for {p['view_id']!r} exceeds atlas bounds")
        except (KeyError, TypeError) as e:
            raise ParseError(f"malformed atlas descriptor: {e}") from None

    def camera(self, view_id: str) -> CameraParams:
        for c in self.cameras:
            if c.id == view_id:
                return c
        raise ParseError(f"no camera entry for view_id {view_id!r}")


def pack_atlases(views: list[np.ndarray], cameras: list[CameraParams],
                 atlas_count: int, rate_point: int = 0) -> tuple[list[Atlas], Manifest]:
    """Tile full views into 2x2 grids, one grid per atlas; zero-fill unused cells."""
    if len(views) != len(cameras):
        raise ConfigError(f"{len(views)} views but {len(cameras)} cameras")
    if len(views) == 0:
        raise ConfigError("no views to pack")
    if len(views) > VIEWS_PER_ATLAS * atlas_count:
        raise ConfigError(f"{len(views)} views exceed {VIEWS_PER_ATLAS}*{atlas_count} slots")
    shapes = {v.shape for v in views}
    if len(shapes) != 1:
        raise ConfigError(f"mixed view resolutions: {sorted(shapes)}")
    h, w, _ = views[0].shape

    atlases = []
    descriptors = []
    cells = [(0, 0), (w, 0), (0, h), (w, h)]
    for a in range(atlas_count):
        image = np.zeros((2 * h, 2 * w, 3), dtype=np.uint8)
        placements = []
        for slot in range(VIEWS_PER_ATLAS):
            i = a * VIEWS_PER_ATLAS + slot
            if i >= len(views):
                break
            x, y = cells[slot]
            image[y:y + h, x:x + w] = views[i]
            placements.append(Placement(cameras[i].id, x, y, w, h))
        atlases.append(Atlas(id=a, width=2 * w, height=2 * h, image=image,
                             placements=placements))
        descriptors.append({
            "id": a, "width": 2 * w, "height": 2 * h,
            "placements": [{"view_id": p.view_id, "x": p.x, "y": p.y, "w": p.w, "h": p.h}
                           for p in placements],
        })
    manifest = Manifest(version=VERSION, rate_point=rate_point,
                        cameras=list(cameras), atlases=descriptors)
    return atlases, manifest


def unpack_atlases(atlas_images: list[np.ndarray], manifest: Manifest
                   ) -> tuple[list[np.ndarray], list[CameraParams]]:
    """Pixel-exact extraction of every placement; zero cells are never emitted."""
    manifest.validate()
    if len(atlas_images) != len(manifest.atlases):
        raise ParseError(f"{len(atlas_images)} atlas images for "
                         f"{len(manifest.atlases)} manifest entries")
    views, cams = [], []
    for img, desc in zip(atlas_images, manifest.atlases):
        if img.shape[0] != desc["height"] or img.shape[1] != desc["width"]:
            raise ParseError(f"atlas {desc['id']} is {img.shape[1]}x{img.shape[0]}, "
                             f"manifest says {desc['width']}x{desc['height']}")
        for p in desc["placements"]:
            views.append(np.ascontiguousarray(img[p["y"]:p["y"] + p["h"],
                                                  p["x"]:p["x"] + p["w"]]))
            cams.append(manifest.camera(p["view_id"]))
    return views, cams


def mux(manifest: Manifest, payloads: list[bytes]) -> bytes:
    if len(payloads) == 0:
        raise ConfigError("bitstream needs at least one atlas payload")
    if len(payloads) != len(manifest.atlases):
        raise ConfigError(f"{len(payloads)} payloads but manifest declares "
                          f"{len(manifest.atlases)} atlases")
    mbytes = manifest.to_json_bytes()
    parts = [MAGIC, struct.pack("<BBI", VERSION, manifest.rate_point, len(mbytes)),
             mbytes, struct.pack("<H", len(payloads))]
    for p in payloads:
        parts.append(struct.pack("<I", len(p)))
        parts.append(p)
    return b"".join(parts)


def demux(data: bytes) -> tuple[Manifest, list[bytes]]:
    def need(off: int, n: int, what: str) -> None:
        if len(data) - off < n:
            raise ParseError(f"truncated stream at byte {off}: "
                             f"{what} needs {n} bytes, {len(data) - off} available")

    need(0, 4, "magic")
    if data[:4] != MAGIC:
        raise ParseError(f"bad magic {data[:4]!r} at byte 0, expected {MAGIC!r}")
    off = 4
    need(off, 6, "header")
    version, rate_point, manifest_len = struct.unpack_from("<BBI", data, off)
    off += 6
    if version != VERSION:
        raise ParseError(f"unsupported version {version} at byte 4")
    if rate_point > 4:
        raise ParseError(f"rate_point {rate_point} out of range at byte 5")
    need(off, manifest_len, "manifest")
    manifest = Manifest.from_json_bytes(data[off:off + manifest_len])
    if manifest.rate_point != rate_point:
        raise ParseError(f"manifest rate_point {manifest.rate_point} disagrees with "
                         f"header rate_point {rate_point}")
    off += manifest_len
    need(off, 2, "atlas count")
    (atlas_count,) = struct.unpack_from("<H", data, off)
    off += 2
    if atlas_count != len(manifest.atlases):
        raise ParseError(f"stream declares {atlas_count} atlases at byte {off - 2}, "
                         f"manifest declares {len(manifest.atlases)}")
    payloads = []
    for i in range(atlas_count):
        need(off, 4, f"payload {i} length")
        (plen,) = struct.unpack_from("<I", data, off)
        off += 4
        need(off, plen, f"payload {i}")
        payloads.append(data[off:off + plen])
        off += plen
    if off != len(data):
        raise ParseError(f"{len(data) - off} trailing bytes after payloads at byte {off}")
    return manifest, payloads
