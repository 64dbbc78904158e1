"""Synthetic scenes, orbit camera rigs and multi-scale / multi-level datasets.

Ground truth comes from :func:`lodgs.raster.supersample_render`. Datasets can
live purely in memory or be written to disk as a JSON manifest next to PFM
images (canonical, float32) and optional PPM previews.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .core import Camera, look_at
from .errors import FormatError
from .lod import sampling_rate_pass
from .raster import RenderConfig, supersample_render
from .scene import Scene

__all__ = [
    "ViewRecord",
    "DatasetManifest",
    "build_toy_scene",
    "orbit_cameras",
    "perturb_scene",
    "make_multiscale",
    "make_multilevel",
    "scene_center_rate",
    "read_pfm",
    "write_pfm",
    "write_ppm",
]

SceneKind = Literal["checker_plane", "ring", "random"]


@dataclass
class ViewRecord:
    camera: Camera
    image_path: str | None = None
    scale: int = 1
    level: int = 1
    split: str = "train"
    view_index: int = 0
    image: np.ndarray | None = field(default=None, repr=False)


@dataclass
class DatasetManifest:
    views: list
    scene_extent: float
    nu_ref: float
    root: Path | None = None
    kind: str = "multiscale"

    def __post_init__(self):
        if not self.nu_ref > 0:
            raise ValueError("nu_ref must be positive")

    def image(self, view: ViewRecord) -> np.ndarray:
        if view.image is None:
            if view.image_path is None:
                raise FormatError("view has neither an in-memory image nor a path")
            path = Path(view.image_path)
            if not path.is_absolute() and self.root is not None:
                path = self.root / path
            img = read_pfm(path)
            if img.shape[:2] != (view.camera.height, view.camera.width):
                raise FormatError(f"{path}: image is {img.shape[1]}x{img.shape[0]}, camera expects "
                                  f"{view.camera.width}x{view.camera.height}")
            view.image = img.astype(np.float64)
        return view.image

    def split(self, name: str) -> list:
        return [v for v in self.views if v.split == name]

    def group_key(self, view: ViewRecord) -> int:
        return view.level if self.kind == "multilevel" else view.scale

    def to_json(self) -> dict:
        views = []
        for v in self.views:
            cam = v.camera
            views.append({
                "world_to_camera": [float(x) for x in cam.world_to_camera().reshape(-1)],
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "width": cam.width, "height": cam.height, "near": cam.near,
                "scale": v.scale, "level": v.level, "split": v.split,
                "view_index": v.view_index, "image_path": v.image_path,
            })
        return {"kind": self.kind, "scene_extent": self.scene_extent, "nu_ref": self.nu_ref,
                "views": views}

    def save(self, out_dir, previews: bool = False) -> Path:
        """Write images and ``manifest.json`` under ``out_dir``."""
        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        for v in self.views:
            tag = f"view{v.view_index:03d}_s{v.scale}_l{v.level}"
            rel = f"images/{tag}.pfm"
            write_pfm(out / rel, self.image(v))
            if previews:
                write_ppm(out / f"images/{tag}.ppm", self.image(v))
            v.image_path = rel
        self.root = out
        path = out / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=1))
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
            views = []
            for rec in doc["views"]:
                m = np.asarray(rec["world_to_camera"], dtype=np.float64).reshape(4, 4)
                cam = Camera(m[:3, :3], m[:3, 3], rec["fx"], rec["fy"], rec["cx"], rec["cy"],
                             rec["width"], rec["height"], rec.get("near", 0.01))
                views.append(ViewRecord(cam, rec["image_path"], int(rec["scale"]), int(rec["level"]),
                                        rec["split"], int(rec.get("view_index", len(views)))))
            manifest = cls(views, float(doc["scene_extent"]), float(doc["nu_ref"]), path.parent,
                           doc.get("kind", "multiscale"))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed manifest ({exc})") from exc
        for v in manifest.views:
            p = Path(v.image_path)
            if not p.is_absolute():
                p = manifest.root / p
            if not p.exists():
                raise FormatError(f"{path}: image {p} does not exist")
        return manifest


def build_toy_scene(kind: SceneKind, n: int, seed: int = 0, l: int = 20) -> Scene:
    """Small synthetic scenes centered at the origin.

    * ``checker_plane``: n x n isotropic Gaussians on the z = 0 square
      [-1, 1]^2 with two alternating colors.
    * ``ring``: n Gaussians on a circle of radius 0.8 whose sizes grow
      geometrically around the ring.
    * ``random``: n seeded placements in the cube [-0.5, 0.5]^3.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "checker_plane":
        spacing = 2.0 / n
        coords = -1.0 + (np.arange(n) + 0.5) * spacing
        gx, gy = np.meshgrid(coords, coords, indexing="ij")
        pos = np.stack([gx.ravel(), gy.ravel(), np.zeros(n * n)], axis=1)
        parity = (np.add.outer(np.arange(n), np.arange(n)) % 2).ravel()
        palette = np.array([[0.95, 0.85, 0.30], [0.10, 0.20, 0.55]])
        colors = palette[parity]
        k = n * n
        quats = np.tile([1.0, 0.0, 0.0, 0.0], (k, 1))
        log_scales = np.full((k, 3), np.log(0.45 * spacing))
        logits = np.full(k, 4.0)
    elif kind == "ring":
        theta = 2 * np.pi * np.arange(n) / n
        pos = np.stack([0.8 * np.cos(theta), 0.8 * np.sin(theta), np.zeros(n)], axis=1)
        sizes = np.geomspace(0.02, 0.12, n) if n > 1 else np.array([0.06])
        colors = np.array([colorsys.hsv_to_rgb(i / n, 0.8, 0.9) for i in range(n)])
        quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        log_scales = np.repeat(np.log(sizes)[:, None], 3, axis=1)
        logits = np.full(n, 3.0)
    elif kind == "random":
        pos = rng.uniform(-0.5, 0.5, (n, 3))
        quats = rng.normal(size=(n, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        log_scales = rng.uniform(np.log(0.03), np.log(0.12), (n, 3))
        logits = rng.uniform(1.0, 4.0, n)
        colors = rng.uniform(0.05, 0.95, (n, 3))
    else:
        raise ValueError(f"unknown scene kind {kind!r}")
    return Scene.from_arrays(pos, quats, log_scales, logits, colors, l=l)


def perturb_scene(scene: Scene, position_noise: float = 0.02, color_noise: float = 0.1,
                  seed: int = 0) -> Scene:
    """Copy of ``scene`` with Gaussian position noise (as a fraction of the
    scene extent) and Gaussian color noise, colors clipped to [0, 1]."""
    rng = np.random.default_rng(seed)
    out = scene.copy()
    out.positions += rng.normal(0.0, position_noise * scene.extent(), out.positions.shape)
    out.colors[:] = np.clip(out.colors + rng.normal(0.0, color_noise, out.colors.shape), 0.0, 1.0)
    return out


def orbit_cameras(count: int, radius: float, f: float, resolution: int,
                  elevation: float = 30.0, near: float = 0.01) -> list:
    """``count`` cameras on a circle of ``radius`` at ``elevation`` degrees, all facing the origin."""
    if count < 1 or radius <= 0:
        raise ValueError("need count >= 1 and radius > 0")
    el = np.deg2rad(elevation)
    cams = []
    for i in range(count):
        az = 2 * np.pi * i / count
        eye = radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        rot, trans = look_at(eye)
        cams.append(Camera(rot, trans, f, f, resolution / 2, resolution / 2,
                           resolution, resolution, near))
    return cams


def scene_center_rate(cameras, center) -> np.ndarray:
    return np.array([sampling_rate_pass(c, np.asarray(center)[None])[0] for c in cameras])


def _storage_precision(img: np.ndarray) -> np.ndarray:
    # GT lives on disk as float32; in-memory datasets carry the same values
    return img.astype(np.float32).astype(np.float64)


def _split(index: int, test_every: int) -> str:
    return "test" if test_every and index % test_every == 0 else "train"


def make_multiscale(views, gt_scene: Scene, factors=(1, 2, 4, 8), ss_factor: int = 8,
                    test_every: int = 8, config: RenderConfig | None = None) -> DatasetManifest:
    """Every view at every focal/resolution downscale factor, GT by supersampling."""
    if ss_factor < 1:
        raise ValueError("ss_factor must be >= 1")
    records = []
    for i, cam in enumerate(views):
        for k in factors:
            c = cam.downscaled(k) if k > 1 else cam
            img = _storage_precision(supersample_render(gt_scene, c, config, ss_factor).image)
            records.append(ViewRecord(c, None, int(k), 1, _split(i, test_every), i, img))
    center = gt_scene.positions.mean(axis=0) if len(gt_scene) else np.zeros(3)
    base = [r.camera for r in records if r.scale == min(factors) and r.split == "train"]
    base = base or [r.camera for r in records if r.scale == min(factors)]
    nu_ref = float(np.median(scene_center_rate(base, center)))
    return DatasetManifest(records, max(gt_scene.extent(), 1e-9), nu_ref, kind="multiscale")


def make_multilevel(gt_scene: Scene, radii, f: float, count: int, resolution: int,
                    elevation: float = 30.0, ss_factor: int = 8, test_every: int = 8,
                    config: RenderConfig | None = None) -> DatasetManifest:
    """Same focal length and resolution at three camera distances (level 1 nearest)."""
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly increasing")
    records = []
    for level, r in enumerate(radii, start=1):
        for i, cam in enumerate(orbit_cameras(count, r, f, resolution, elevation)):
            img = _storage_precision(supersample_render(gt_scene, cam, config, ss_factor).image)
            records.append(ViewRecord(cam, None, 1, level, _split(i, test_every), i, img))
    center = gt_scene.positions.mean(axis=0) if len(gt_scene) else np.zeros(3)
    base = [r.camera for r in records if r.level == 1 and r.split == "train"]
    base = base or [r.camera for r in records if r.level == 1]
    nu_ref = float(np.median(scene_center_rate(base, center)))
    return DatasetManifest(records, max(gt_scene.extent(), 1e-9), nu_ref, kind="multilevel")


def write_pfm(path, image: np.ndarray) -> None:
    """Little-endian float32 PFM, rows stored bottom to top."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim == 3 and img.shape[2] == 3:
        header = "PF"
    elif img.ndim == 2:
        header = "Pf"
    else:
        raise ValueError("PFM images must be HxW or HxWx3")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        parts = data.split(b"\n", 3)
        kind = parts[0].strip()
        w, h = (int(x) for x in parts[1].split())
        scale = float(parts[2])
        body = parts[3]
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: bad PFM header") from exc
    channels = {b"PF": 3, b"Pf": 1}.get(kind)
    if channels is None:
        raise FormatError(f"{path}: not a PFM file")
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    if len(body) != 4 * count:
        raise FormatError(f"{path}: expected {4 * count} bytes of pixel data, got {len(body)}")
    img = np.frombuffer(body, dtype=dtype, count=count)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return img.reshape(shape)[::-1].astype(np.float32)


def write_ppm(path, image: np.ndarray) -> None:
    """8-bit binary PPM preview."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
