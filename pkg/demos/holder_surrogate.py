"""
Pesin sets and the Hoelder fit of the Oseledets spaces.

Regularity constants are computed on a sample, the smallest level set
carrying 90% of it is selected, and the space field is fitted to a power
law in the base distance. On rotation_triangular E_2 is the constant
line span(e_1), so its pair distances vanish and the fit is flagged.
"""

import numpy as np

from oseledets import (
    build_lambda_set,
    choose_level,
    default_epsilon,
    estimate_holder,
    lyapunov_spectrum,
    make_builtin,
    oseledets_splitting,
    regularity_profiles,
)

sys_ = make_builtin("rotation_triangular")
sp = lyapunov_spectrum(sys_, [0.3], 1000)
eps = default_epsilon(sp)
pts = sys_.sample(300, 0)

profiles = regularity_profiles(sys_, pts, 1, eps, 300, sp)
l = choose_level(profiles, 0.1)
lam = build_lambda_set(profiles, l, 0.1)
print(f"eps={eps:.4f}  level l={l}  measure={lam.empirical_measure:.3f}")

splits = [oseledets_splitting(sys_, x, sp, 300) for x in lam.points]
for i in (1, 2):
    est = estimate_holder([(s.point, s.spaces[i - 1]) for s in splits], eps0=0.05)
    print(f"E_{i}: beta={est.beta:.3f}  L={est.L_const:.3g}  r2={est.r2:.3f}  "
          f"pairs={est.pair_count}  zero_distances={est.zero_distances}")

# the ratio d / rho varies over orders of magnitude along the circle,
# which is what limits r^2 for E_1
theta = np.degrees([np.arctan2(*s.spaces[0].basis[::-1, 0]) % 180 for s in splits])
print("E_1 angle range (deg):", round(theta.min(), 2), "..", round(theta.max(), 2))
