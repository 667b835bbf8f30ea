"""
Random invariant measures of a column-stochastic cocycle.

The top exponent of a product of stochastic matrices is 0, and the top
Oseledets space, normalized to unit sum, is a probability vector that is
carried along the orbit by the cocycle.
"""

import numpy as np

from oseledets import lyapunov_spectrum, make_builtin, random_invariant_measure

sys_ = make_builtin("rotation_stochastic")
x = sys_.sample(1, 0)[0]
sp = lyapunov_spectrum(sys_, x, 2000)
print("exponents", sp.exponents)

pts = sys_.sample(5, 1)
v = random_invariant_measure(sys_, pts, 400, sp)
w = random_invariant_measure(sys_, sys_.step(pts), 400, sp)
pushed = np.einsum("bij,bj->bi", sys_.matrices(pts), v)

print("measures at five points")
print(np.round(v, 6))
print("min entry", v.min(), " max |sum - 1|", np.abs(v.sum(axis=1) - 1).max())
print("equivariance A(x) v(x) vs v(fx):", np.abs(pushed - w).max())
