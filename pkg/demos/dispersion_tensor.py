"""Velocity-dependent dispersion: eigenstructure and loss of smoothness.

D(u) stretches along the flow by alpha_L |u| and across it by alpha_T |u|.
It is Lipschitz in u, but its mixed second differences across the kink of
u = (x1 - x2 - t, 0) grow like 1/eps.

    python demos/dispersion_tensor.py
"""
import math

import numpy as np

from miscible_fem import (DispersionParams, bear_scheidegger, lipschitz_probe,
                          mixed_derivative_probe)

params = DispersionParams(porosity=0.5, molecular_diffusion=2.0, alpha_l=1.0, alpha_t=0.1)
u = np.array([3.0, 4.0])
D = bear_scheidegger(u, params)
print("D((3, 4)) =\n", D.to_array().round(4))
print("eigenvalues", np.round(D.eigvalsh(), 4), "expected", 1 + 0.1 * 5, "and", 1 + 1.0 * 5)

alpha = 0.1
iso = DispersionParams.isotropic(1.0, alpha)
print(f"\nisotropic Lipschitz estimate {lipschitz_probe(iso):.6f} "
      f"(bound alpha*sqrt(2) = {alpha * math.sqrt(2):.6f})")

print("\n     eps   first difference   mixed second difference")
for eps, first, second in mixed_derivative_probe([0.1, 0.05, 0.025, 0.0125, 0.00625], alpha):
    print(f"{eps:8.5f} {first:18.6f} {second:24.3f}")
