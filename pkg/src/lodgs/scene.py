"""Struct-of-arrays container for a set of primitives and their LOD bases."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .core import GaussianPrimitive
from .lod import LodBasis, default_centers, default_log_widths

# Learnable arrays in a fixed order; shared by gradients, the optimizer and I/O.
PARAM_NAMES = (
    "positions",
    "quats",
    "log_scales",
    "opacity_logits",
    "colors",
    "lod_centers",
    "lod_log_widths",
    "lod_weights_scale",
    "lod_weights_opacity",
    "lod_weights_color",
)


def param_shapes(l: int) -> dict[str, tuple[int, ...]]:
    """Per-primitive trailing shape of each parameter for basis count ``l``."""
    return {
        "positions": (3,),
        "quats": (4,),
        "log_scales": (3,),
        "opacity_logits": (),
        "colors": (3,),
        "lod_centers": (l,),
        "lod_log_widths": (l,),
        "lod_weights_scale": (l,),
        "lod_weights_opacity": (l,),
        "lod_weights_color": (l, 3),
    }


@dataclass
class Scene:
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
    nu_ref: float = 1.0

    def __post_init__(self):
        k = len(np.asarray(self.positions).reshape(-1, 3))
        shapes = param_shapes(np.asarray(self.lod_centers).shape[-1])
        for name in PARAM_NAMES:
            arr = np.array(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr.reshape((k,) + shapes[name]))
        self.nu_ref = float(self.nu_ref)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def l(self) -> int:
        return self.lod_centers.shape[1]

    @classmethod
    def empty(cls, l: int = 20, nu_ref: float = 1.0) -> "Scene":
        shapes = param_shapes(l)
        return cls(**{n: np.zeros((0,) + shapes[n]) for n in PARAM_NAMES}, nu_ref=nu_ref)

    @classmethod
    def from_primitives(cls, primitives, bases=None, l: int = 20, nu_ref: float = 1.0) -> "Scene":
        primitives = list(primitives)
        if not primitives:
            return cls.empty(l, nu_ref)
        if bases is None:
            bases = [LodBasis.initial(l) for _ in primitives]
        return cls(
            positions=np.stack([p.position for p in primitives]),
            quats=np.stack([p.rotation for p in primitives]),
            log_scales=np.stack([p.log_scales for p in primitives]),
            opacity_logits=np.array([p.opacity_logit for p in primitives]),
            colors=np.stack([p.color for p in primitives]),
            lod_centers=np.stack([b.centers for b in bases]),
            lod_log_widths=np.stack([b.log_widths for b in bases]),
            lod_weights_scale=np.stack([b.weights_scale for b in bases]),
            lod_weights_opacity=np.stack([b.weights_opacity for b in bases]),
            lod_weights_color=np.stack([b.weights_color for b in bases]),
            nu_ref=nu_ref,
        )

    @classmethod
    def from_arrays(cls, positions, quats, log_scales, opacity_logits, colors,
                    l: int = 20, nu_ref: float = 1.0) -> "Scene":
        """Scene with freshly initialized (zero-weight) LOD bases."""
        k = len(positions)
        return cls(
            positions=positions,
            quats=quats,
            log_scales=log_scales,
            opacity_logits=opacity_logits,
            colors=colors,
            lod_centers=np.tile(default_centers(l), (k, 1)),
            lod_log_widths=np.tile(default_log_widths(l), (k, 1)),
            lod_weights_scale=np.zeros((k, l)),
            lod_weights_opacity=np.zeros((k, l)),
            lod_weights_color=np.zeros((k, l, 3)),
            nu_ref=nu_ref,
        )

    def primitive(self, k: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            self.positions[k], self.quats[k], self.log_scales[k],
            self.opacity_logits[k], self.colors[k],
        )

    def basis(self, k: int) -> LodBasis:
        return LodBasis(
            self.lod_centers[k], self.lod_log_widths[k], self.lod_weights_scale[k],
            self.lod_weights_opacity[k], self.lod_weights_color[k],
        )

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self) -> "Scene":
        return Scene(**{n: getattr(self, n).copy() for n in PARAM_NAMES}, nu_ref=self.nu_ref)

    def subset(self, index) -> "Scene":
        return Scene(**{n: getattr(self, n)[index].copy() for n in PARAM_NAMES}, nu_ref=self.nu_ref)

    def permuted(self, order) -> "Scene":
        return self.subset(np.asarray(order))

    def reset_lod(self) -> "Scene":
        """Copy of the scene with every basis weight set to zero."""
        out = self.copy()
        out.lod_weights_scale[:] = 0.0
        out.lod_weights_opacity[:] = 0.0
        out.lod_weights_color[:] = 0.0
        return out

    def extent(self) -> float:
        """Radius of the bounding sphere of the means around their centroid."""
        if len(self) == 0:
            return 0.0
        c = self.positions.mean(axis=0)
        return float(np.max(np.linalg.norm(self.positions - c, axis=1)))

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        for name in PARAM_NAMES:
            h.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        h.update(np.float64(self.nu_ref).tobytes())
        return h.hexdigest()

    def equal(self, other: "Scene") -> bool:
        return (
            len(self) == len(other)
            and self.l == other.l
            and self.nu_ref == other.nu_ref
            and all(np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES)
        )
