"""Per-scale / per-level evaluation tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import TooSmall
from .lod import max_sampling_rates
from .metrics import metric_psnr, metric_ssim
from .raster import RenderConfig, render, supersample_render

__all__ = ["EvalRow", "evaluate", "average_psnr", "write_eval_csv", "training_max_rates"]


@dataclass
class EvalRow:
    group: str
    psnr: float
    ssim: float  # NaN when the images are too small for an 11x11 window
    views: int


def training_max_rates(scene, manifest) -> np.ndarray:
    return max_sampling_rates(scene.positions, [v.camera for v in manifest.split("train")])


def _mean(values) -> float:
    values = list(values)
    if not values:
        return math.nan
    if any(math.isinf(v) for v in values):
        # identical views drop out of the mean unless every view is identical
        finite = [v for v in values if not math.isinf(v)]
        return math.inf if not finite else float(np.mean(finite))
    return float(np.mean(values))


def evaluate(scene, manifest, config: RenderConfig | None = None, split: str = "test",
             supersample: int = 0, max_rates=None) -> list:
    """Render every view of ``split`` and average PSNR/SSIM per scale (or level).

    Renders are rounded to float32 before scoring, the precision ground truth
    is stored at. With ``supersample`` > 0 the unfiltered supersampling
    renderer is used instead of ``config``'s filters. The last row, ``avg``,
    averages the per-group values.
    """
    config = config or RenderConfig()
    views = manifest.split(split)
    if not views:
        raise ValueError(f"manifest has no {split!r} views")
    if config.mode_3d == "mip_fixed" and max_rates is None and not supersample:
        max_rates = training_max_rates(scene, manifest)
    per_group: dict[int, list] = {}
    for v in views:
        if supersample:
            img = supersample_render(scene, v.camera, config, supersample).image
        else:
            img = render(scene, v.camera, config, max_rates=max_rates).image
        img = img.astype(np.float32).astype(np.float64)
        gt = manifest.image(v)
        try:
            ssim = metric_ssim(img, gt)
        except TooSmall:
            ssim = math.nan
        per_group.setdefault(manifest.group_key(v), []).append((metric_psnr(img, gt), ssim))
    label = "level" if manifest.kind == "multilevel" else "scale"
    rows = []
    for key in sorted(per_group):
        vals = per_group[key]
        ssims = [s for _, s in vals if not math.isnan(s)]
        rows.append(EvalRow(f"{label}_{key}", _mean(p for p, _ in vals),
                            float(np.mean(ssims)) if ssims else math.nan, len(vals)))
    ssims = [r.ssim for r in rows if not math.isnan(r.ssim)]
    rows.append(EvalRow("avg", _mean(r.psnr for r in rows),
                        float(np.mean(ssims)) if ssims else math.nan, len(views)))
    return rows


def average_psnr(rows) -> float:
    return rows[-1].psnr


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "identical"
    if math.isnan(x):
        return ""
    return repr(float(x))


def write_eval_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "psnr", "ssim", "views"])
        for r in rows:
            writer.writerow([r.group, _fmt(r.psnr), _fmt(r.ssim), r.views])
