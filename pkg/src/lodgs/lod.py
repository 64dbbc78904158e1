"""Level-of-detail sensitive filtering driven by the camera sampling rate.

Each primitive carries a small Gaussian mixture over the log2-normalized
sampling rate. Three heads share the mixture's centers and widths:

* scale head -> isotropic covariance inflation (kept >= 0),
* opacity head -> additive opacity residual,
* color head -> additive RGB residual.

The fixed 3D smoothing filter baseline (inflation ``s / nu_max``) and the
sampling-rate passes used by both live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, GaussianPrimitive, sampling_rate
from .errors import CulledBehindCamera, DomainError, NoVisibleView

__all__ = [
    "LodBasis",
    "FilteredGaussian",
    "softplus",
    "inv_softplus",
    "gmm_eval",
    "normalize_rate",
    "lod_filter",
    "lod_filter_batch",
    "mip_smoothing_filter",
    "max_sampling_rate",
    "max_sampling_rates",
    "sampling_rate_pass",
    "default_centers",
    "default_log_widths",
]

CENTER_RANGE = (-4.0, 1.0)
_SOFTPLUS_ZERO = float(np.logaddexp(0.0, 0.0))


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def default_centers(l: int) -> np.ndarray:
    if l == 1:
        return np.array([0.5 * (CENTER_RANGE[0] + CENTER_RANGE[1])])
    return np.linspace(CENTER_RANGE[0], CENTER_RANGE[1], l)


def default_log_widths(l: int) -> np.ndarray:
    """Raw widths such that neighbouring basis functions cross at half height."""
    spacing = (CENTER_RANGE[1] - CENTER_RANGE[0]) / max(l - 1, 1)
    sigma = spacing / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    return np.full(l, inv_softplus(sigma))


@dataclass
class LodBasis:
    """Per-primitive mixture parameters for the scale, opacity and color heads."""

    centers: np.ndarray
    log_widths: np.ndarray
    weights_scale: np.ndarray
    weights_opacity: np.ndarray
    weights_color: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1)
        l = len(self.centers)
        self.log_widths = np.asarray(self.log_widths, dtype=np.float64).reshape(l)
        self.weights_scale = np.asarray(self.weights_scale, dtype=np.float64).reshape(l)
        self.weights_opacity = np.asarray(self.weights_opacity, dtype=np.float64).reshape(l)
        self.weights_color = np.asarray(self.weights_color, dtype=np.float64).reshape(l, 3)

    @property
    def l(self) -> int:
        return len(self.centers)

    @property
    def widths(self) -> np.ndarray:
        return softplus(self.log_widths)

    @classmethod
    def initial(cls, l: int = 20) -> "LodBasis":
        """Evenly spaced centers on [-4, 1], half-height overlap, zero weights."""
        return cls(
            centers=default_centers(l),
            log_widths=default_log_widths(l),
            weights_scale=np.zeros(l),
            weights_opacity=np.zeros(l),
            weights_color=np.zeros((l, 3)),
        )


@dataclass
class FilteredGaussian:
    cov3d_filtered: np.ndarray
    opacity_filtered: float
    color_filtered: np.ndarray


def gmm_eval(centers, widths, weights, x):
    """Weighted sum of unnormalized Gaussian bumps evaluated at ``x``."""
    centers = np.asarray(centers, dtype=np.float64)
    widths = np.asarray(widths, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bumps = np.exp(-((x - centers) ** 2) / (2.0 * widths**2))
    return float(np.sum(weights * bumps))


def normalize_rate(nu, nu_ref):
    """log2 of the sampling rate relative to the scene reference rate."""
    nu = np.asarray(nu, dtype=np.float64)
    if np.any(~(nu > 0)):
        raise DomainError("sampling rate must be positive")
    if not nu_ref > 0:
        raise DomainError("reference sampling rate must be positive")
    out = np.log2(nu / nu_ref)
    return float(out) if out.ndim == 0 else out


def lod_filter_batch(cov3d, alpha, color, centers, log_widths, w_scale, w_opacity, w_color, x):
    """Apply the LOD filter to K primitives at normalized rates ``x`` (K,).

    Returns a dict holding the filtered quantities along with the
    intermediates the backward pass needs.
    """
    sigma = softplus(log_widths)
    diff = x[:, None] - centers
    bumps = np.exp(-(diff**2) / (2.0 * sigma**2))
    s_raw = np.sum(w_scale * bumps, axis=1)
    inflation = np.maximum(softplus(s_raw) - _SOFTPLUS_ZERO, 0.0)
    alpha_raw = alpha + np.sum(w_opacity * bumps, axis=1)
    color_raw = color + np.einsum("kl,klc->kc", bumps, w_color)
    return {
        "cov3d": cov3d + inflation[:, None, None] * np.eye(3),
        "alpha": np.clip(alpha_raw, 0.0, 1.0),
        "color": np.clip(color_raw, 0.0, 1.0),
        "sigma": sigma,
        "diff": diff,
        "bumps": bumps,
        "s_raw": s_raw,
        "inflation": inflation,
        "alpha_raw": alpha_raw,
        "color_raw": color_raw,
    }


def lod_filter(primitive: GaussianPrimitive, cov3d, basis: LodBasis, nu, nu_ref) -> FilteredGaussian:
    x = normalize_rate(nu, nu_ref)
    out = lod_filter_batch(
        np.asarray(cov3d, dtype=np.float64)[None],
        np.array([primitive.opacity]),
        primitive.color[None],
        basis.centers[None],
        basis.log_widths[None],
        basis.weights_scale[None],
        basis.weights_opacity[None],
        basis.weights_color[None],
        np.array([x]),
    )
    return FilteredGaussian(out["cov3d"][0], float(out["alpha"][0]), out["color"][0])


def mip_smoothing_filter(cov3d, alpha, nu_max, s):
    """Fixed isotropic 3D smoothing sized by the maximal training sampling rate.

    Adds ``s / nu_max`` to the covariance diagonal and rescales the opacity by
    the square-root determinant ratio so the Gaussian's integral is kept.
    """
    cov3d = np.asarray(cov3d, dtype=np.float64)
    smoothed = cov3d + (s / nu_max) * np.eye(3)
    factor = np.sqrt(np.linalg.det(cov3d) / np.linalg.det(smoothed))
    return smoothed, alpha * factor


def sampling_rate_pass(camera: Camera, positions) -> np.ndarray:
    """Per-primitive sampling rate for one camera in a single O(K) sweep.

    Primitives at or behind the near plane get NaN.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    depth = positions @ camera.rotation[2] + camera.translation[2]
    dist = np.sqrt(np.sum((positions - camera.center) ** 2, axis=1))
    nu = camera.focal / dist
    nu[~(depth > camera.near)] = np.nan
    return nu


def max_sampling_rate(position, cameras) -> float:
    """Largest focal/distance ratio over the cameras that see ``position``."""
    if len(cameras) == 0:
        raise NoVisibleView("no cameras given")
    best = -np.inf
    for cam in cameras:
        try:
            nu = sampling_rate(cam, position)
        except CulledBehindCamera:
            continue
        best = max(best, nu)
    if best == -np.inf:
        raise NoVisibleView("position is behind every camera")
    return best


def max_sampling_rates(positions, cameras) -> np.ndarray:
    """Batched maximal rate, O(K N). Primitives seen by no camera get the scene-wide max."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(positions), -np.inf)
    for cam in cameras:
        best = np.fmax(best, sampling_rate_pass(cam, positions))
    unseen = ~np.isfinite(best)
    if len(best) and unseen.all():
        raise NoVisibleView("no primitive is visible from any camera")
    best[unseen] = best[~unseen].max()
    return best
