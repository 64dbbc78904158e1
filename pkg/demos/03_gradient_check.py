"""Checking the hand-written backward pass against finite differences.

The rasterizer's gradients (positions, rotations, scales, opacity, color and
every LOD basis parameter) are derived by hand. ``fd_check`` perturbs a
sample of parameters by +-h, takes central differences of a per-pixel
squared-error loss and reports the relative error per parameter group.
Parameters sitting on a kink (a clamp or the zero-inflation corner) give
one-sided differences that disagree; those are reported as excluded.
"""

import numpy as np

from lodgs import Camera, RenderConfig, Scene, fd_check, look_at
from lodgs.grad import squared_error_loss
from lodgs.lod import inv_softplus

rng = np.random.default_rng(0)
k, l = 20, 4
scene = Scene.from_arrays(rng.uniform(-0.5, 0.5, (k, 3)), rng.normal(size=(k, 4)),
                          np.log(rng.uniform(0.08, 0.25, (k, 3))), rng.uniform(-1, 2, k),
                          rng.uniform(0.1, 0.9, (k, 3)), l=l)
scene.lod_centers[:] = rng.uniform(-0.6, 0.6, (k, l))
scene.lod_log_widths[:] = inv_softplus(rng.uniform(0.3, 0.8, (k, l)))
scene.lod_weights_scale[:] = rng.normal(0.01, 0.005, (k, l))
scene.lod_weights_opacity[:] = rng.normal(0.0, 0.1, (k, l))
scene.lod_weights_color[:] = rng.normal(0.0, 0.1, (k, l, 3))

rot, trans = look_at((0.0, -2.5, 1.0))
camera = Camera(rot, trans, 20.0, 20.0, 8.0, 8.0, 16, 16)
scene.nu_ref = camera.focal / np.linalg.norm(camera.center)
target = rng.uniform(0, 1, (16, 16, 3))

report = fd_check(scene, camera, RenderConfig(background=(0.2, 0.3, 0.4)),
                  squared_error_loss(target), h=1e-5, samples=200, seed=0)
print(report.table())
