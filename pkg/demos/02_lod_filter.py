"""The level-of-detail filter: a per-primitive response to sampling rate.

Each primitive carries a small Gaussian mixture over the log sampling rate
x = log2(nu / nu_ref). Three heads share its centers and widths and output

* an isotropic covariance inflation (always >= 0),
* an opacity residual,
* a color residual.

With zero weights the filter is the identity. Below we hand-set weights so
that one primitive grows and fades as the camera moves away, and print the
filtered size and opacity along a dolly-out.
"""

import numpy as np

from lodgs import GaussianPrimitive, LodBasis, lod_filter
from lodgs.core import build_covariance

prim = GaussianPrimitive(position=np.zeros(3), rotation=np.array([1.0, 0, 0, 0]),
                         log_scales=np.log([0.05, 0.05, 0.05]), opacity_logit=2.0,
                         color=np.array([0.8, 0.3, 0.2]))
cov = build_covariance(prim)

basis = LodBasis.initial(20)
identity = lod_filter(prim, cov, basis, nu=50.0, nu_ref=50.0)
print("zero basis is the identity:", np.array_equal(identity.cov3d_filtered, cov),
      identity.opacity_filtered == prim.opacity)

# far views (x < 0) get a larger footprint and lower opacity
far = basis.centers < -1.0
basis.weights_scale[far] = 0.02
basis.weights_opacity[far] = -0.2

nu_ref = 100.0
print(f"\n{'distance':>8} {'nu':>8} {'x':>6} {'sigma':>8} {'alpha':>7}")
for distance in (1, 1.5, 2, 4, 8, 16):
    nu = 100.0 / distance
    g = lod_filter(prim, cov, basis, nu, nu_ref)
    sigma = np.sqrt(g.cov3d_filtered[0, 0])
    print(f"{distance:>8g} {nu:>8.2f} {np.log2(nu / nu_ref):>6.2f} {sigma:>8.4f} {g.opacity_filtered:>7.3f}")
