"""Hand-written reverse pass through the renderer, plus a finite-difference checker.

The backward mirrors :func:`lodgs.raster.render` stage by stage:
compositing -> per-pixel Gaussian -> 2D filter -> projection -> 3D filter
-> covariance factorization -> raw parameters. Cutoff and early-termination
decisions from the forward pass are reused as fixed masks; clamps pass
gradient only strictly inside their range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import Camera
from .errors import MismatchedForward, ShapeMismatch
from .raster import RenderConfig, RenderOutput, _camera_key, _map_tiles, render
from .scene import PARAM_NAMES, Scene

__all__ = ["GradientBundle", "backward", "fd_check", "FDReport", "squared_error_loss"]


@dataclass
class GradientBundle:
    positions: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    lod_centers: np.ndarray
    lod_log_widths: np.ndarray
    lod_weights_scale: np.ndarray
    lod_weights_opacity: np.ndarray
    lod_weights_color: np.ndarray

    @classmethod
    def zeros_like(cls, scene: Scene) -> "GradientBundle":
        return cls(**{n: np.zeros_like(getattr(scene, n)) for n in PARAM_NAMES})

    def as_dict(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.as_dict().values())

    def identical(self, other: "GradientBundle") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES)


def _tile_backward(tile, pairs, g_flat, background, conic, n_splats):
    g = g_flat[tile["pixels"]]
    row, slot = tile["row"], tile["slot"]
    a, t_excl, col = tile["a"], tile["t_excl"], tile["col"]

    gc = (col * g[:, None, :]).sum(axis=2)
    r = (g * background).sum(axis=1)
    da = np.empty_like(a)
    # back to front: r holds g . (color accumulated behind slot k)
    for k in range(a.shape[1] - 1, -1, -1):
        da[:, k] = t_excl[:, k] * (gc[:, k] - r)
        r = gc[:, k] * a[:, k] + (1.0 - a[:, k]) * r
    da = np.where(tile["active"], da, 0.0)

    lo, hi = tile["lo"], tile["hi"]
    sid = pairs["sid"][lo:hi]
    dx, dy = pairs["dx"][lo:hi], pairs["dy"][lo:hi]
    da_p = da[row, slot]
    w_p = (a * t_excl)[row, slot]
    d_opacity = da_p * pairs["gauss"][lo:hi]
    d_power = da_p * pairs["alpha"][lo:hi]
    ca, cb, cc = conic[sid, 0], conic[sid, 1], conic[sid, 2]
    channels = (
        d_opacity,
        d_power * (ca * dx + cb * dy),
        d_power * (cb * dx + cc * dy),
        -0.5 * d_power * dx * dx,
        -d_power * dx * dy,
        -0.5 * d_power * dy * dy,
        w_p * g[row, 0],
        w_p * g[row, 1],
        w_p * g[row, 2],
    )
    return np.stack([np.bincount(sid, weights=v, minlength=n_splats) for v in channels], axis=1)


def _inv2(m):
    det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
    out = np.empty_like(m)
    out[:, 0, 0] = m[:, 1, 1] / det
    out[:, 1, 1] = m[:, 0, 0] / det
    out[:, 0, 1] = -m[:, 0, 1] / det
    out[:, 1, 0] = -m[:, 1, 0] / det
    return out


def _quat_backward(q, d_rot):
    """Gradient w.r.t. raw quaternions given dL/dR, through the renormalization."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn.T
    g = d_rot
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2]
              - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1]
              - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    dy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
              + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    dz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
              - 2 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    dqn = np.stack([dw, dx, dy, dz], axis=1)
    return (dqn - qn * np.sum(qn * dqn, axis=1, keepdims=True)) / norm


def backward(scene: Scene, camera: Camera, config: RenderConfig, loss_grad,
             forward: RenderOutput | None) -> GradientBundle:
    """dL/d(parameters) given dL/d(image) and the forward render that produced it.

    ``forward`` must come from ``render(..., keep_state=True)`` on the same
    scene, camera and config.
    """
    state = forward.state if forward is not None else None
    if state is None:
        raise MismatchedForward("no forward state; render with keep_state=True first")
    if (state.config_key != config.key() or state.camera_key != _camera_key(camera)
            or state.scene_fingerprint != scene.fingerprint()):
        raise MismatchedForward("forward state was produced by a different scene/camera/config")
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != (camera.height, camera.width, 3):
        raise ShapeMismatch(f"loss_grad shape {loss_grad.shape} != image shape "
                            f"{(camera.height, camera.width, 3)}")

    out = GradientBundle.zeros_like(scene)
    geo, order = state.geo, state.order
    if len(order) == 0 or not state.tiles:
        return out
    n = len(order)
    g_flat = loss_grad.reshape(-1, 3)
    bg = np.asarray(config.background, dtype=np.float64)
    conic = geo["conic"][order]
    parts = _map_tiles(
        lambda tile: _tile_backward(tile, geo["pairs"], g_flat, bg, conic, n),
        state.tiles, config.workers,
    )
    acc = np.zeros((n, 9))
    for part in parts:
        acc += part

    idx = order
    d_opacity = acc[:, 0]
    d_mean = acc[:, 1:3]
    d_color_f = acc[:, 6:9]

    # conic = inverse(cov2d_f); gradients kept as symmetric 2x2 matrices
    g_conic = np.empty((n, 2, 2))
    g_conic[:, 0, 0] = acc[:, 3]
    g_conic[:, 1, 1] = acc[:, 5]
    g_conic[:, 0, 1] = g_conic[:, 1, 0] = 0.5 * acc[:, 4]
    q = np.stack([np.stack([conic[:, 0], conic[:, 1]], 1), np.stack([conic[:, 1], conic[:, 2]], 1)], 1)
    g_cov2d = -q @ g_conic @ q

    alpha_f = geo["alpha_f"][idx]
    if config.mode_2d == "ewa":
        rho2 = geo["rho2"][idx]
        d_alpha_f = d_opacity * rho2
        coef = 0.5 * d_opacity * alpha_f * rho2
        g_cov2d = g_cov2d + coef[:, None, None] * (_inv2(geo["cov2d"][idx]) - q)
    else:
        d_alpha_f = d_opacity

    # projection: cov2d = T cov3d_f T^T with T = J W
    tw = geo["tw"][idx]
    cov3d_f = geo["cov3d_f"][idx]
    g_cov3d_f = np.swapaxes(tw, 1, 2) @ g_cov2d @ tw
    g_jac = 2.0 * g_cov2d @ tw @ cov3d_f @ camera.rotation.T
    t = geo["t"][idx]
    tx, ty, tz = t.T
    fx, fy = camera.fx, camera.fy
    d_t = np.empty((n, 3))
    d_t[:, 0] = d_mean[:, 0] * fx / tz - g_jac[:, 0, 2] * fx / tz**2
    d_t[:, 1] = d_mean[:, 1] * fy / tz - g_jac[:, 1, 2] * fy / tz**2
    d_t[:, 2] = (-d_mean[:, 0] * fx * tx / tz**2 - d_mean[:, 1] * fy * ty / tz**2
                 - g_jac[:, 0, 0] * fx / tz**2 - g_jac[:, 1, 1] * fy / tz**2
                 + g_jac[:, 0, 2] * 2 * fx * tx / tz**3 + g_jac[:, 1, 2] * 2 * fy * ty / tz**3)
    d_pos = d_t @ camera.rotation

    alpha0 = geo["alpha0"][idx]
    if config.mode_3d == "lod":
        lod = geo["lod"]
        bumps, diff, sigma = lod["bumps"][idx], lod["diff"][idx], lod["sigma"][idx]
        s_raw = lod["s_raw"][idx]
        a_raw, c_raw = lod["alpha_raw"][idx], lod["color_raw"][idx]
        g_cov3d = g_cov3d_f
        d_infl = np.trace(g_cov3d_f, axis1=1, axis2=2)
        # right derivative at s_raw == 0 so zero-initialized weights still move
        d_sraw = d_infl * np.where(s_raw >= 0, expit(s_raw), 0.0)
        d_fa = d_alpha_f * ((a_raw > 0) & (a_raw < 1))
        d_fc = d_color_f * ((c_raw > 0) & (c_raw < 1))
        d_alpha0 = d_fa
        d_color = d_fc
        w_s = scene.lod_weights_scale[idx]
        w_a = scene.lod_weights_opacity[idx]
        w_c = scene.lod_weights_color[idx]
        out.lod_weights_scale[idx] = d_sraw[:, None] * bumps
        out.lod_weights_opacity[idx] = d_fa[:, None] * bumps
        out.lod_weights_color[idx] = bumps[:, :, None] * d_fc[:, None, :]
        d_bump = d_sraw[:, None] * w_s + d_fa[:, None] * w_a + np.einsum("klc,kc->kl", w_c, d_fc)
        common = d_bump * bumps
        d_mu = common * diff / sigma**2
        out.lod_centers[idx] = d_mu
        out.lod_log_widths[idx] = common * diff**2 / sigma**3 * expit(scene.lod_log_widths[idx])
        d_x = -d_mu.sum(axis=1)
        nu = geo["nu"][idx]
        d_nu = d_x / (nu * np.log(2.0))
        rel = scene.positions[idx] - camera.center
        dist = np.linalg.norm(rel, axis=1)
        d_pos = d_pos - (d_nu * camera.focal / dist**3)[:, None] * rel
    elif config.mode_3d == "mip_fixed":
        rho3 = geo["rho3"][idx]
        d_alpha0 = d_alpha_f * rho3
        coef = 0.5 * d_alpha_f * alpha0 * rho3
        g_cov3d = g_cov3d_f + coef[:, None, None] * (
            np.linalg.inv(geo["cov3d"][idx]) - np.linalg.inv(cov3d_f))
        c = scene.colors[idx]
        d_color = d_color_f * ((c > 0) & (c < 1))
    else:
        g_cov3d = g_cov3d_f
        d_alpha0 = d_alpha_f
        c = scene.colors[idx]
        d_color = d_color_f * ((c > 0) & (c < 1))

    # cov3d = M M^T, M = R diag(s)
    rot = geo["rot"][idx]
    scales = geo["scales"][idx]
    g_cov3d = 0.5 * (g_cov3d + np.swapaxes(g_cov3d, 1, 2))
    g_m = 2.0 * g_cov3d @ (rot * scales[:, None, :])
    out.log_scales[idx] = np.sum(g_m * rot, axis=1) * scales
    out.quats[idx] = _quat_backward(scene.quats[idx], g_m * scales[:, None, :])
    out.positions[idx] = d_pos
    out.opacity_logits[idx] = d_alpha0 * alpha0 * (1.0 - alpha0)
    out.colors[idx] = d_color
    return out


def squared_error_loss(target):
    """Per-element squared error against ``target`` and its gradient."""
    target = np.asarray(target, dtype=np.float64)

    def loss_fn(image):
        diff = image - target
        return diff * diff, 2.0 * diff

    return loss_fn


@dataclass
class GroupStats:
    checked: int = 0
    excluded: int = 0
    passed: int = 0
    rel_errors: list = field(default_factory=list)

    @property
    def max_rel(self) -> float:
        return max(self.rel_errors) if self.rel_errors else 0.0

    @property
    def mean_rel(self) -> float:
        return float(np.mean(self.rel_errors)) if self.rel_errors else 0.0


@dataclass
class FDReport:
    groups: dict
    tol: float
    h: float
    entries: list

    @property
    def checked(self) -> int:
        return sum(g.checked for g in self.groups.values())

    @property
    def excluded(self) -> int:
        return sum(g.excluded for g in self.groups.values())

    @property
    def passed(self) -> int:
        return sum(g.passed for g in self.groups.values())

    @property
    def pass_fraction(self) -> float:
        return self.passed / self.checked if self.checked else 1.0

    @property
    def excluded_fraction(self) -> float:
        return self.excluded / self.checked if self.checked else 0.0

    def table(self) -> str:
        lines = [f"{'group':<22}{'checked':>8}{'excluded':>9}{'passed':>8}{'max_rel':>12}{'mean_rel':>12}"]
        for name, g in self.groups.items():
            lines.append(f"{name:<22}{g.checked:>8}{g.excluded:>9}{g.passed:>8}"
                         f"{g.max_rel:>12.3e}{g.mean_rel:>12.3e}")
        lines.append(f"{'total':<22}{self.checked:>8}{self.excluded:>9}{self.passed:>8}")
        lines.append(f"pass fraction {self.pass_fraction:.4f} (rel err < {self.tol:g}, h = {self.h:g}); "
                     f"excluded fraction {self.excluded_fraction:.4f}")
        return "\n".join(lines)


def _loss_value(loss_fn, image):
    value, _ = loss_fn(image)
    return np.asarray(value, dtype=np.float64)


def fd_check(scene: Scene, camera: Camera, config: RenderConfig, loss_fn, h: float = 1e-5,
             samples: int = 200, seed: int = 0, tol: float = 1e-4, max_rates=None) -> FDReport:
    """Compare :func:`backward` with central differences on sampled parameters.

    ``loss_fn(image)`` returns ``(value, dvalue/dimage)``; ``value`` may be
    per-element, in which case differences are taken element-wise before
    summing, which keeps untouched pixels from adding rounding noise.
    Samples are spread evenly over parameter groups. A parameter whose
    forward and backward one-sided differences disagree by more than 10% is
    treated as sitting on a kink (clamp, cutoff) and excluded.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    fwd = render(scene, camera, config, max_rates=max_rates, keep_state=True)
    base, grad_img = loss_fn(fwd.image)
    base = np.asarray(base, dtype=np.float64)
    grads = backward(scene, camera, config, grad_img, fwd)

    rng = np.random.default_rng(seed)
    per_group = max(1, -(-samples // len(PARAM_NAMES)))
    groups: dict[str, GroupStats] = {}
    entries = []
    for name in PARAM_NAMES:
        size = getattr(scene, name).size
        stats = groups.setdefault(name, GroupStats())
        if size == 0:
            continue
        picks = rng.choice(size, size=min(per_group, size), replace=False)
        for flat in np.sort(picks):
            values = []
            for step in (h, -h):
                probe = scene.copy()
                getattr(probe, name).flat[flat] += step
                img = render(probe, camera, config, max_rates=max_rates).image
                values.append(_loss_value(loss_fn, img))
            plus, minus = values
            numeric = float(np.sum(plus - minus)) / (2 * h)
            one_fwd = float(np.sum(plus - base)) / h
            one_bwd = float(np.sum(base - minus)) / h
            analytic = float(getattr(grads, name).flat[flat])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            stats.checked += 1
            kink = abs(one_fwd - one_bwd) > 0.1 * max(abs(one_fwd), abs(one_bwd), 1e-8)
            if rel < tol:
                stats.passed += 1
                stats.rel_errors.append(rel)
                status = "pass"
            elif kink:
                stats.excluded += 1
                status = "excluded"
            else:
                stats.rel_errors.append(rel)
                status = "fail"
            entries.append((name, int(flat), analytic, numeric, rel, status))
    return FDReport(groups, tol, h, entries)
