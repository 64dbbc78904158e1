"""Forward splatting renderer.

Per primitive: covariance -> 3D filter (LOD, fixed smoothing or none) ->
perspective projection -> 2D filter (EWA, dilation or none) -> culling.
Surviving splats are depth sorted and composited front to back at pixel
centers. Work is split into square pixel tiles; tiles are independent, so
they may run on a thread pool, and every reduction across tiles happens in
tile order afterwards.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.special import expit

from .core import Camera, build_covariances, pinhole_jacobian, quat_to_rotmat
from .lod import lod_filter_batch, sampling_rate_pass
from .scene import Scene

__all__ = [
    "RenderConfig",
    "RenderOutput",
    "ewa_2d",
    "dilation_2d",
    "render",
    "render_reference",
    "supersample_render",
    "box_downsample",
]

#: Mip-Splatting's 3D filter variance in pixel^2 at the maximal sampling rate.
MIP_FILTER_PX2 = 0.2

Mode2D = Literal["ewa", "dilation", "none"]
Mode3D = Literal["lod", "mip_fixed", "none"]


@dataclass(frozen=True)
class RenderConfig:
    """Renderer settings.

    ``s3d`` is the fixed-smoothing constant ``s`` in ``Sigma + (s / nu_max) I``.
    ``None`` picks ``MIP_FILTER_PX2 / scene.nu_ref``, which makes the filter
    variance 0.2 px^2 for primitives whose maximal rate is the scene's
    reference rate, independent of the world's length unit.
    """

    mode_2d: Mode2D = "ewa"
    mode_3d: Mode3D = "lod"
    s2d: float = 0.1
    s3d: float | None = None
    alpha_cutoff: float = 1.0 / 255.0
    transmittance_floor: float = 1e-4
    sigma_cutoff: float = 3.0
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tile_size: int = 16
    workers: int = 1

    def __post_init__(self):
        if self.mode_2d not in ("ewa", "dilation", "none"):
            raise ValueError(f"unknown mode_2d {self.mode_2d!r}")
        if self.mode_3d not in ("lod", "mip_fixed", "none"):
            raise ValueError(f"unknown mode_3d {self.mode_3d!r}")
        if self.s2d < 0 or (self.s3d is not None and self.s3d < 0):
            raise ValueError("filter sizes must be non-negative")
        if not 0 < self.transmittance_floor < 1:
            raise ValueError("transmittance_floor must lie in (0, 1)")
        if self.sigma_cutoff < 1:
            raise ValueError("sigma_cutoff must be >= 1")
        if self.tile_size < 1 or self.workers < 1:
            raise ValueError("tile_size and workers must be >= 1")
        object.__setattr__(self, "background", tuple(float(b) for b in self.background))

    def key(self) -> tuple:
        """Fields that change the rendered result (scheduling excluded)."""
        return (self.mode_2d, self.mode_3d, self.s2d, self.s3d, self.alpha_cutoff,
                self.transmittance_floor, self.sigma_cutoff, self.background, self.tile_size)


@dataclass
class RenderOutput:
    image: np.ndarray
    final_transmittance: np.ndarray
    splat_count: int
    weight_sum: np.ndarray
    state: "ForwardState | None" = field(default=None, repr=False)


@dataclass
class ForwardState:
    """Everything the backward pass needs from a forward render."""

    scene_fingerprint: str
    camera_key: tuple
    config_key: tuple
    geo: dict
    order: np.ndarray
    tiles: list


def ewa_2d(cov2d, opacity, s2d):
    """Widen a 2D splat by ``s2d`` px^2 and rescale opacity to keep its integral."""
    cov2d = np.asarray(cov2d, dtype=np.float64)
    widened = cov2d + s2d * np.eye(2)
    return widened, opacity * np.sqrt(np.linalg.det(cov2d) / np.linalg.det(widened))


def dilation_2d(cov2d, opacity, s2d):
    """Widen a 2D splat by ``s2d`` px^2 leaving its peak opacity unchanged."""
    return np.asarray(cov2d, dtype=np.float64) + s2d * np.eye(2), opacity


def _camera_key(camera: Camera) -> tuple:
    return (camera.rotation.tobytes(), camera.translation.tobytes(), camera.fx, camera.fy,
            camera.cx, camera.cy, camera.width, camera.height, camera.near)


def preprocess(scene: Scene, camera: Camera, config: RenderConfig, max_rates=None) -> dict:
    """Per-primitive filtering and projection, vectorized over the scene.

    The returned dict keeps every intermediate needed for the backward pass.
    ``visible`` marks primitives that survive culling.
    """
    k = len(scene)
    geo: dict = {}
    rot = quat_to_rotmat(scene.quats)
    scales = np.exp(scene.log_scales)
    cov3d = build_covariances(scene.quats, scene.log_scales)
    alpha0 = expit(scene.opacity_logits)
    geo.update(rot=rot, scales=scales, cov3d=cov3d, alpha0=alpha0)

    t = camera.to_camera(scene.positions)
    in_front = t[:, 2] > camera.near
    t = np.where(in_front[:, None], t, np.array([0.0, 0.0, 1.0]))
    geo.update(t=t, in_front=in_front, depth=camera.to_camera(scene.positions)[:, 2])

    if config.mode_3d == "lod":
        nu = sampling_rate_pass(camera, scene.positions)
        nu = np.where(in_front, nu, 1.0)
        x = np.log2(nu / scene.nu_ref)
        lod = lod_filter_batch(
            cov3d, alpha0, scene.colors, scene.lod_centers, scene.lod_log_widths,
            scene.lod_weights_scale, scene.lod_weights_opacity, scene.lod_weights_color, x,
        )
        geo.update(nu=nu, x=x, lod=lod)
        cov3d_f, alpha_f, color_f = lod["cov3d"], lod["alpha"], lod["color"]
    elif config.mode_3d == "mip_fixed":
        if max_rates is None:
            raise ValueError("mip_fixed mode needs per-primitive maximal sampling rates")
        s3d = MIP_FILTER_PX2 / scene.nu_ref if config.s3d is None else config.s3d
        eps3 = s3d / np.asarray(max_rates, dtype=np.float64).reshape(k)
        cov3d_f = cov3d + eps3[:, None, None] * np.eye(3)
        rho3 = np.sqrt(np.linalg.det(cov3d) / np.linalg.det(cov3d_f))
        alpha_f = alpha0 * rho3
        color_f = np.clip(scene.colors, 0.0, 1.0)
        geo.update(eps3=eps3, rho3=rho3)
    else:
        cov3d_f, alpha_f, color_f = cov3d, alpha0, np.clip(scene.colors, 0.0, 1.0)
    geo.update(cov3d_f=cov3d_f, alpha_f=alpha_f, color_f=color_f)

    jac = pinhole_jacobian(t, camera.fx, camera.fy)
    tw = jac @ camera.rotation
    cov2d = tw @ cov3d_f @ np.swapaxes(tw, 1, 2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))
    mean2d = np.stack([camera.fx * t[:, 0] / t[:, 2] + camera.cx,
                       camera.fy * t[:, 1] / t[:, 2] + camera.cy], axis=1)
    geo.update(jac=jac, tw=tw, cov2d=cov2d, mean2d=mean2d)

    det2 = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    if config.mode_2d == "none":
        cov2d_f = cov2d
        opacity = alpha_f
    else:
        cov2d_f = cov2d + config.s2d * np.eye(2)
        if config.mode_2d == "ewa":
            det2f = cov2d_f[:, 0, 0] * cov2d_f[:, 1, 1] - cov2d_f[:, 0, 1] ** 2
            rho2 = np.sqrt(np.clip(det2, 0.0, None) / det2f)
            opacity = alpha_f * rho2
            geo["rho2"] = rho2
        else:
            opacity = alpha_f
    a, b, c = cov2d_f[:, 0, 0], cov2d_f[:, 0, 1], cov2d_f[:, 1, 1]
    det2f = a * c - b * b
    ok = in_front & (det2f > 0) & (det2 > 0) & np.all(np.isfinite(mean2d), axis=1)
    det_safe = np.where(ok, det2f, 1.0)
    conic = np.stack([c / det_safe, -b / det_safe, a / det_safe], axis=1)
    geo.update(det2=det2, cov2d_f=cov2d_f, opacity=opacity, conic=conic)

    # screen-space footprint box from sigma_cutoff standard deviations
    rx = config.sigma_cutoff * np.sqrt(np.clip(a, 0.0, None))
    ry = config.sigma_cutoff * np.sqrt(np.clip(c, 0.0, None))
    big = 4.0 * (camera.width + camera.height)
    mx = np.clip(mean2d[:, 0], -big, big)
    my = np.clip(mean2d[:, 1], -big, big)
    x0 = np.clip(np.ceil(mx - rx - 0.5), 0, camera.width).astype(np.int64)
    x1 = np.clip(np.floor(mx + rx - 0.5), -1, camera.width - 1).astype(np.int64)
    y0 = np.clip(np.ceil(my - ry - 0.5), 0, camera.height).astype(np.int64)
    y1 = np.clip(np.floor(my + ry - 0.5), -1, camera.height - 1).astype(np.int64)
    visible = ok & (x1 >= x0) & (y1 >= y0) & (opacity >= config.alpha_cutoff)
    geo.update(bbox=np.stack([x0, x1, y0, y1], axis=1), visible=visible)
    return geo


def depth_order(geo: dict) -> np.ndarray:
    """Visible primitive indices by ascending depth, ties broken by index."""
    idx = np.flatnonzero(geo["visible"])
    return idx[np.lexsort((idx, geo["depth"][idx]))]


def _make_pairs(geo, order, camera, config):
    """Enumerate (splat, pixel) pairs inside each splat's footprint box."""
    x0, x1, y0, y1 = geo["bbox"][order].T
    nx, ny = x1 - x0 + 1, y1 - y0 + 1
    n = nx * ny
    total = int(n.sum())
    sid = np.repeat(np.arange(len(order)), n)
    local = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
    px = x0[sid] + local % nx[sid]
    py = y0[sid] + local // nx[sid]

    mean = geo["mean2d"][order]
    conic = geo["conic"][order]
    dx = px + 0.5 - mean[sid, 0]
    dy = py + 0.5 - mean[sid, 1]
    power = -0.5 * (conic[sid, 0] * dx * dx + conic[sid, 2] * dy * dy) - conic[sid, 1] * dx * dy
    gauss = np.exp(power)
    alpha = geo["opacity"][order][sid] * gauss
    keep = alpha >= config.alpha_cutoff
    sid, px, py, dx, dy, gauss, alpha = (v[keep] for v in (sid, px, py, dx, dy, gauss, alpha))

    ts = config.tile_size
    ntx = -(-camera.width // ts)
    tile = (py // ts) * ntx + px // ts
    pixel = py * camera.width + px
    perm = np.argsort(tile * (camera.width * camera.height) + pixel, kind="stable")
    pairs = {
        "sid": sid[perm], "pixel": pixel[perm], "dx": dx[perm], "dy": dy[perm],
        "gauss": gauss[perm], "alpha": alpha[perm],
    }
    ntiles = ntx * -(-camera.height // ts)
    bounds = np.searchsorted(tile[perm], np.arange(ntiles + 1))
    return pairs, bounds


def _composite_tile(pairs, lo, hi, colors, background, floor):
    """Front-to-back compositing of the pairs in one tile."""
    pixel = pairs["pixel"][lo:hi]
    sid = pairs["sid"][lo:hi]
    alpha = pairs["alpha"][lo:hi]
    n = hi - lo
    starts = np.flatnonzero(np.r_[True, pixel[1:] != pixel[:-1]])
    counts = np.diff(np.r_[starts, n])
    row = np.repeat(np.arange(len(starts)), counts)
    slot = np.arange(n) - starts[row]
    width = int(counts.max())

    a = np.zeros((len(starts), width))
    a[row, slot] = alpha
    t_excl = np.ones_like(a)
    t_excl[:, 1:] = np.cumprod(1.0 - a[:, :-1], axis=1)
    active = t_excl >= floor
    if not active.all():
        a = np.where(active, a, 0.0)
        t_excl[:, 1:] = np.cumprod(1.0 - a[:, :-1], axis=1)
    t_final = t_excl[:, -1] * (1.0 - a[:, -1])
    weights = a * t_excl

    col = np.zeros((len(starts), width, 3))
    col[row, slot] = colors[sid]
    rgb = (weights[:, :, None] * col).sum(axis=1) + t_final[:, None] * background
    return {
        "pixels": pixel[starts], "row": row, "slot": slot, "a": a, "t_excl": t_excl,
        "active": active, "col": col, "t_final": t_final, "rgb": rgb,
        "weight_sum": weights.sum(axis=1), "lo": lo, "hi": hi,
    }


def _map_tiles(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def render(scene: Scene, camera: Camera, config: RenderConfig | None = None,
           max_rates=None, keep_state: bool = False) -> RenderOutput:
    """Render ``scene`` from ``camera``.

    ``max_rates`` (per-primitive maximal training sampling rate) is required
    for the ``mip_fixed`` 3D mode. With ``keep_state`` the output carries
    what :func:`lodgs.grad.backward` needs.
    """
    config = config or RenderConfig()
    h, w = camera.height, camera.width
    bg = np.asarray(config.background, dtype=np.float64)
    image = np.empty((h * w, 3))
    image[:] = bg
    trans = np.ones(h * w)
    wsum = np.zeros(h * w)

    geo = preprocess(scene, camera, config, max_rates)
    order = depth_order(geo)
    tiles = []
    splat_count = 0
    if len(order):
        pairs, bounds = _make_pairs(geo, order, camera, config)
        colors = geo["color_f"][order]
        spans = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)
                 if bounds[i + 1] > bounds[i]]
        tiles = _map_tiles(
            lambda span: _composite_tile(pairs, span[0], span[1], colors, bg,
                                         config.transmittance_floor),
            spans, config.workers,
        )
        for tile in tiles:
            image[tile["pixels"]] = tile["rgb"]
            trans[tile["pixels"]] = tile["t_final"]
            wsum[tile["pixels"]] = tile["weight_sum"]
        splat_count = len(np.unique(pairs["sid"]))
        geo["pairs"] = pairs

    state = None
    if keep_state:
        state = ForwardState(scene.fingerprint(), _camera_key(camera), config.key(),
                             geo, order, tiles)
    return RenderOutput(image.reshape(h, w, 3), trans.reshape(h, w), splat_count,
                        wsum.reshape(h, w), state)


def render_reference(scene: Scene, camera: Camera, config: RenderConfig | None = None,
                     max_rates=None) -> RenderOutput:
    """Pixel-by-pixel, splat-by-splat compositing loop (slow; for testing)."""
    config = config or RenderConfig()
    geo = preprocess(scene, camera, config, max_rates)
    order = depth_order(geo)
    bg = np.asarray(config.background, dtype=np.float64)
    h, w = camera.height, camera.width
    image = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    wsum = np.zeros((h, w))
    used = set()
    for py in range(h):
        for px in range(w):
            t = 1.0
            rgb = np.zeros(3)
            total = 0.0
            for k in order:
                x0, x1, y0, y1 = geo["bbox"][k]
                if not (x0 <= px <= x1 and y0 <= py <= y1):
                    continue
                if t < config.transmittance_floor:
                    break
                ca, cb, cc = geo["conic"][k]
                dx = px + 0.5 - geo["mean2d"][k, 0]
                dy = py + 0.5 - geo["mean2d"][k, 1]
                a = geo["opacity"][k] * np.exp(-0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy)
                if a < config.alpha_cutoff:
                    continue
                rgb += geo["color_f"][k] * a * t
                total += a * t
                t *= 1.0 - a
                used.add(int(k))
            image[py, px] = rgb + t * bg
            trans[py, px] = t
            wsum[py, px] = total
    return RenderOutput(image, trans, len(used), wsum)


def box_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping ``factor`` x ``factor`` blocks."""
    if factor == 1:
        return image.copy()
    h, w = image.shape[:2]
    return image.reshape(h // factor, factor, w // factor, factor, *image.shape[2:]).mean(axis=(1, 3))


def supersample_render(scene: Scene, camera: Camera, config: RenderConfig | None = None,
                       factor: int = 8) -> RenderOutput:
    """Unfiltered render at ``factor`` x resolution, box-averaged back down."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    config = replace(config or RenderConfig(), mode_2d="none", mode_3d="none")
    hi = render(scene, camera.upscaled(factor) if factor > 1 else camera, config)
    return RenderOutput(
        box_downsample(hi.image, factor),
        box_downsample(hi.final_transmittance, factor),
        hi.splat_count,
        box_downsample(hi.weight_sum, factor),
    )
