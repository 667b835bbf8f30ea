"""
Lyapunov spectra of three small cocycles.

A constant matrix, where the answer is the log of the eigenvalue moduli;
a triangular cocycle over a circle rotation, where the exponents are the
averages of the log-diagonal; and a rank-one cocycle over the cat map,
where one exponent is -inf.
"""

import numpy as np

from oseledets import lyapunov_spectrum, make_builtin, oseledets_splitting

# constant: exponents are log|eigenvalues|
const = make_builtin("constant", {"A": [[2.0, 1.0], [0.0, 0.5]]})
sp = lyapunov_spectrum(const, [0.0], 100)
print("constant        ", np.round(sp.exponents, 12), "expected", np.round([np.log(0.5), np.log(2)], 12))

# triangular over a rotation: compare with the integrals of log a and log b
tri = make_builtin("rotation_triangular")
sp = lyapunov_spectrum(tri, [0.3], 10_000)
u = 2 * np.pi * (np.arange(10**6) + 0.5) / 10**6
quad = sorted([np.mean(np.log(1.5 + 0.4 * np.sin(u))), np.mean(np.log(0.5 + 0.1 * np.cos(u)))])
print("triangular      ", np.round(sp.exponents, 5), "quadrature", np.round(quad, 5))

# the splitting at one point; E_2 is the invariant coordinate axis
s = oseledets_splitting(tri, [0.3], sp, 400)
for i, E in enumerate(s.spaces, 1):
    print(f"  E_{i} basis", np.round(E.basis[:, 0], 6))

# rank one: the kernel direction grows at rate -inf
cat = make_builtin("cat_rank_deficient")
sp = lyapunov_spectrum(cat, cat.sample(1, 0)[0], 200)
print("rank deficient  ", sp.exponents, "multiplicities", sp.multiplicities)
