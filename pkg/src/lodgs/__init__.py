"""Differentiable Gaussian splatting with level-of-detail sensitive filtering.

The main entry points:

* :mod:`lodgs.core` — primitives, cameras, projection, sampling rates
* :mod:`lodgs.lod` — learnable Gaussian-mixture LOD filter and the fixed
  smoothing baseline
* :mod:`lodgs.raster` — tiled forward renderer and supersampling oracle
* :mod:`lodgs.grad` — analytic backward pass and finite-difference checker
* :mod:`lodgs.train` — photometric loss, Adam and the training loop
* :mod:`lodgs.dataset` — toy scenes and multi-scale / multi-level datasets
* :mod:`lodgs.cli` — the ``lodgs`` command
"""

from .core import Camera, GaussianPrimitive, Splat2D, look_at, project, sampling_rate
from .dataset import (DatasetManifest, ViewRecord, build_toy_scene, make_multilevel,
                      make_multiscale, orbit_cameras, perturb_scene)
from .errors import (ChecksumError, CulledBehindCamera, DomainError, FormatError, LodGSError,
                     MismatchedForward, NoVisibleView, ShapeMismatch, TooSmall)
from .evaluation import evaluate
from .grad import GradientBundle, backward, fd_check
from .lod import (LodBasis, lod_filter, max_sampling_rate, max_sampling_rates,
                  mip_smoothing_filter, sampling_rate_pass)
from .metrics import IDENTICAL, metric_psnr, metric_ssim
from .raster import RenderConfig, RenderOutput, render, supersample_render
from .scene import Scene
from .scenefile import load_scene, save_scene
from .train import TrainConfig, train

__version__ = "0.1.0"
