"""Scene atoms, the pinhole camera and perspective projection of 3D Gaussians.

Conventions: quaternions are (w, x, y, z); cameras map world points with
``x_cam = R @ x_world + t`` and look down +z with +y pointing down the image.
Pixel ``(i, j)`` has its center at ``(i + 0.5, j + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .errors import CulledBehindCamera

__all__ = [
    "GaussianPrimitive",
    "Camera",
    "Splat2D",
    "look_at",
    "quat_to_rotmat",
    "build_covariance",
    "build_covariances",
    "project",
    "project_batch",
    "sampling_rate",
]


@dataclass
class GaussianPrimitive:
    position: np.ndarray
    rotation: np.ndarray
    log_scales: np.ndarray
    opacity_logit: float
    color: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(3)
        self.opacity_logit = float(self.opacity_logit)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)

    @property
    def opacity(self) -> float:
        return float(expit(self.opacity_logit))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)


@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform."""

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.fx, self.fy = float(self.fx), float(self.fy)
        self.cx, self.cy = float(self.cx), float(self.cy)
        self.width, self.height = int(self.width), int(self.height)
        self.near = float(self.near)
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("camera rotation is not orthonormal")
        if self.fx <= 0 or self.fy <= 0 or self.near <= 0:
            raise ValueError("focal lengths and near plane must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image resolution must be at least 1x1")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def focal(self) -> float:
        """Geometric mean of the two focal lengths."""
        return float(np.sqrt(self.fx * self.fy))

    def world_to_camera(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def downscaled(self, factor: int) -> "Camera":
        """Same pose with focals, principal point and resolution divided by ``factor``."""
        if self.width % factor or self.height % factor:
            raise ValueError(f"resolution {self.width}x{self.height} not divisible by {factor}")
        return replace(
            self,
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=self.cx / factor,
            cy=self.cy / factor,
            width=self.width // factor,
            height=self.height // factor,
        )

    def upscaled(self, factor: int) -> "Camera":
        return replace(
            self,
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=self.width * factor,
            height=self.height * factor,
        )


@dataclass
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray = field(default_factory=lambda: np.zeros(3))
    opacity: float = 1.0


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera rotation and translation for a camera at ``eye`` facing ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-12:
        # looking straight along `up`; pick any perpendicular
        right = np.cross(forward, [1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return rot, -rot @ eye


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions; input is renormalized first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def build_covariances(quats: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """Batched ``R S S^T R^T`` for (K, 4) quaternions and (K, 3) log-scales."""
    m = quat_to_rotmat(quats) * np.exp(log_scales)[..., None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def build_covariance(primitive: GaussianPrimitive) -> np.ndarray:
    """3x3 covariance of a single primitive."""
    return build_covariances(primitive.rotation[None], primitive.log_scales[None])[0]


def pinhole_jacobian(t: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """(K, 2, 3) Jacobian of the perspective map at camera-space points ``t``."""
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    jac = np.zeros((len(t), 2, 3))
    jac[:, 0, 0] = fx / tz
    jac[:, 0, 2] = -fx * tx / tz**2
    jac[:, 1, 1] = fy / tz
    jac[:, 1, 2] = -fy * ty / tz**2
    return jac


def project_batch(positions: np.ndarray, cov3d: np.ndarray, camera: Camera):
    """Project K Gaussians at once.

    Returns ``(mean2d, cov2d, depth, in_front)``. Entries for Gaussians at or
    behind the near plane are computed from a dummy depth and must be
    discarded using ``in_front``.
    """
    t = camera.to_camera(positions)
    depth = t[:, 2]
    in_front = depth > camera.near
    t_safe = np.where(in_front[:, None], t, np.array([0.0, 0.0, 1.0]))
    jac = pinhole_jacobian(t_safe, camera.fx, camera.fy)
    tw = jac @ camera.rotation
    cov2d = tw @ cov3d @ np.swapaxes(tw, 1, 2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))
    mean2d = np.stack(
        [
            camera.fx * t_safe[:, 0] / t_safe[:, 2] + camera.cx,
            camera.fy * t_safe[:, 1] / t_safe[:, 2] + camera.cy,
        ],
        axis=1,
    )
    return mean2d, cov2d, depth, in_front


def project(primitive: GaussianPrimitive, sigma3d: np.ndarray, camera: Camera) -> Splat2D:
    """Perspective projection of one Gaussian to a 2D splat (geometry only)."""
    mean2d, cov2d, depth, in_front = project_batch(
        primitive.position[None], np.asarray(sigma3d, dtype=np.float64)[None], camera
    )
    if not in_front[0]:
        raise CulledBehindCamera(f"depth {depth[0]:.6g} <= near plane {camera.near:.6g}")
    return Splat2D(
        mean2d=mean2d[0],
        cov2d=cov2d[0],
        depth=float(depth[0]),
        color=primitive.color.copy(),
        opacity=primitive.opacity,
    )


def sampling_rate(camera: Camera, position) -> float:
    """Pixels per world unit at ``position``: focal / Euclidean distance."""
    position = np.asarray(position, dtype=np.float64)
    depth = camera.to_camera(position[None])[0, 2]
    if depth <= camera.near:
        raise CulledBehindCamera(f"depth {depth:.6g} <= near plane {camera.near:.6g}")
    return camera.focal / float(np.linalg.norm(position - camera.center))
