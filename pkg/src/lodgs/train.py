"""Photometric loss, Adam, and the multi-scale / multi-level training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.special import expit

from .errors import ShapeMismatch
from .grad import backward
from .lod import max_sampling_rates
from .metrics import C1, C2, filter2d, gaussian_window
from .raster import RenderConfig, render
from .scene import PARAM_NAMES, Scene

__all__ = [
    "TrainConfig",
    "TrainResult",
    "AdamState",
    "photometric_loss",
    "ssim_loss_grad",
    "adam_step",
    "train",
    "render_config_for",
    "learning_rate_map",
    "write_loss_csv",
]

log = logging.getLogger(__name__)

Ablation = Literal["full", "no_lod", "no_ewa", "mip", "vanilla"]

# (mode_2d, mode_3d) per training variant
VARIANTS = {
    "full": ("ewa", "lod"),
    "no_lod": ("ewa", "none"),
    "no_ewa": ("dilation", "lod"),
    "mip": ("ewa", "mip_fixed"),
    "vanilla": ("dilation", "none"),
}

# learning-rate group -> scene parameter arrays it drives
LR_GROUPS = {
    "position": ("positions",),
    "rotation": ("quats",),
    "log_scales": ("log_scales",),
    "opacity_logit": ("opacity_logits",),
    "color": ("colors",),
    "lod_weights": ("lod_weights_scale", "lod_weights_opacity", "lod_weights_color"),
    "lod_centers": ("lod_centers",),
    "lod_widths": ("lod_log_widths",),
}

MIP_RATE_INTERVAL = 100


def default_learning_rates(scene_extent: float = 1.0) -> dict[str, float]:
    return {
        "position": 1.6e-4 * scene_extent,
        "rotation": 1e-3,
        "log_scales": 5e-3,
        "opacity_logit": 5e-2,
        "color": 2.5e-3,
        "lod_weights": 1e-3,
        "lod_centers": 1e-4,
        "lod_widths": 1e-4,
    }


@dataclass
class TrainConfig:
    iterations: int = 2000
    lambda_ssim: float = 0.2
    learning_rates: dict = field(default_factory=default_learning_rates)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    prune_opacity_threshold: float = 0.005
    prune_interval: int = 0
    seed: int = 0
    ablation: Ablation = "full"
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise ValueError("lambda_ssim must lie in [0, 1]")
        if self.ablation not in VARIANTS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        rates = default_learning_rates()
        rates.update(self.learning_rates)
        unknown = set(rates) - set(LR_GROUPS)
        if unknown:
            raise ValueError(f"unknown learning-rate groups: {sorted(unknown)}")
        if any(r < 0 for r in rates.values()):
            raise ValueError("learning rates must be non-negative")
        self.learning_rates = rates


def render_config_for(config: TrainConfig) -> RenderConfig:
    mode_2d, mode_3d = VARIANTS[config.ablation]
    return replace(config.render, mode_2d=mode_2d, mode_3d=mode_3d)


def learning_rate_map(rates: dict[str, float]) -> dict[str, float]:
    """Expand group learning rates to one rate per scene parameter array."""
    out = {}
    for group, names in LR_GROUPS.items():
        for name in names:
            out[name] = rates[group]
    return out


def ssim_loss_grad(x: np.ndarray, y: np.ndarray):
    """Mean zero-padded SSIM of ``x`` against ``y`` and its gradient w.r.t. ``x``."""
    taps = gaussian_window()
    n = x.size
    mx, my = filter2d(x, taps), filter2d(y, taps)
    exx, eyy, exy = filter2d(x * x, taps), filter2d(y * y, taps), filter2d(x * y, taps)
    a1 = 2 * mx * my + C1
    a2 = 2 * (exy - mx * my) + C2
    b1 = mx * mx + my * my + C1
    b2 = (exx - mx * mx) + (eyy - my * my) + C2
    s = (a1 * a2) / (b1 * b2)
    # grouped so that x == y gives an exactly zero gradient (a1 == b1, a2 == b2)
    d_mx = 2 * s * (my * (1 / a1 - 1 / a2) - mx * (1 / b1 - 1 / b2)) / n
    # symmetric taps with zero padding: the adjoint of filter2d is filter2d
    grad = (filter2d(d_mx, taps) + y * filter2d(2 * s / (a2 * n), taps)
            - x * filter2d(2 * s / (b2 * n), taps))
    return float(np.mean(s)), grad


def photometric_loss(rendered, target, lambda_ssim: float = 0.2):
    """``(1 - lambda) * L1 + lambda * (1 - SSIM)`` and its per-pixel gradient."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ShapeMismatch(f"rendered {rendered.shape} vs target {target.shape}")
    diff = rendered - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - lambda_ssim) * np.sign(diff) / diff.size
    loss = (1.0 - lambda_ssim) * l1
    if lambda_ssim > 0:
        ssim, d_ssim = ssim_loss_grad(rendered, target)
        loss += lambda_ssim * (1.0 - ssim)
        grad = grad - lambda_ssim * d_ssim
    return loss, grad


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})

    def subset(self, keep) -> "AdamState":
        return AdamState({k: v[keep] for k, v in self.m.items()},
                         {k: v[keep] for k, v in self.v.items()}, self.step)


def adam_step(params: dict, grads: dict, state: AdamState, lr_map: dict,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
    """One bias-corrected Adam update, in place; returns ``(params, state)``."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr_map[name] * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


@dataclass
class TrainResult:
    scene: Scene
    losses: list
    evals: dict = field(default_factory=dict)


def train(scene0: Scene, dataset, config: TrainConfig, eval_every: int = 0,
          eval_fn=None) -> TrainResult:
    """Optimize ``scene0`` against the training views of ``dataset``.

    Each iteration draws one training view (any scale or level) uniformly,
    renders it with the variant's filters, and takes one Adam step on the
    photometric loss. Sampling rates are recomputed for the drawn camera on
    every render; the fixed-smoothing baseline refreshes its maximal rates
    every 100 iterations.
    """
    scene = scene0.copy()
    views = [v for v in dataset.views if v.split == "train"]
    if not views:
        raise ValueError("dataset has no training views")
    rcfg = render_config_for(config)
    lr_map = learning_rate_map(config.learning_rates)
    state = AdamState.zeros_like(scene.params())
    rng = np.random.default_rng(config.seed)
    train_cams = [v.camera for v in views]
    result = TrainResult(scene, [])
    max_rates = None

    for it in range(config.iterations):
        view = views[int(rng.integers(len(views)))]
        if rcfg.mode_3d == "mip_fixed" and (max_rates is None or it % MIP_RATE_INTERVAL == 0):
            max_rates = max_sampling_rates(scene.positions, train_cams)
        out = render(scene, view.camera, rcfg, max_rates=max_rates, keep_state=True)
        loss, grad_img = photometric_loss(out.image, dataset.image(view), config.lambda_ssim)
        grads = backward(scene, view.camera, rcfg, grad_img, out)
        adam_step(scene.params(), grads.as_dict(), state, lr_map,
                  config.adam_beta1, config.adam_beta2, config.adam_eps)
        np.clip(scene.colors, 0.0, 1.0, out=scene.colors)
        result.losses.append(loss)

        if config.prune_interval and (it + 1) % config.prune_interval == 0:
            keep = expit(scene.opacity_logits) >= config.prune_opacity_threshold
            if not keep.all():
                log.info("iteration %d: pruning %d primitives", it + 1, int((~keep).sum()))
                scene = scene.subset(keep)
                state = state.subset(keep)
                if max_rates is not None:
                    max_rates = max_rates[keep]
        if eval_every and eval_fn is not None and (it + 1) % eval_every == 0:
            result.evals[it + 1] = eval_fn(scene)
    result.scene = scene
    return result


def write_loss_csv(path, losses, evals=None) -> None:
    evals = evals or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "eval_psnr"])
        for i, loss in enumerate(losses, start=1):
            ev = evals.get(i)
            writer.writerow([i, repr(float(loss)), "" if ev is None else repr(float(ev))])
