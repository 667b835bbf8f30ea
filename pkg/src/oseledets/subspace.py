"""
Linear subspaces of R^d stored as orthonormal bases.

Everything Grassmannian in the package goes through :class:`Subspace`:
projectors, the projector-norm distance, complements, intersections,
direct sums and the minimal-sum gap between two transverse subspaces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DegenerateIntersection,
    DimensionMismatch,
    NonFiniteInput,
    NotTransverse,
)

ORTHO_TOL = 1e-10
INTERSECT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Subspace:
    """Subspace of R^d given by a d x m basis with orthonormal columns.

    The zero subspace has ``m == 0``. Instances are immutable; the
    orthogonal complement is computed once and cached.
    """

    basis: np.ndarray
    ortho_tol: float = field(default=ORTHO_TOL)

    def __post_init__(self):
        b = np.array(self.basis, dtype=float, copy=True)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        if b.ndim != 2 or b.shape[0] < 1:
            raise DimensionMismatch(f"basis must be d x m with d >= 1, got {b.shape}")
        if b.shape[1] > b.shape[0]:
            raise DimensionMismatch(f"more basis vectors than ambient dimension: {b.shape}")
        if not np.all(np.isfinite(b)):
            raise NonFiniteInput("basis contains NaN or inf")
        gram = b.T @ b
        if b.shape[1] and np.max(np.abs(gram - np.eye(b.shape[1]))) > self.ortho_tol:
            raise ValueError("basis columns are not orthonormal within ortho_tol")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def zero(cls, d: int) -> "Subspace":
        return cls(np.zeros((d, 0)))

    @classmethod
    def full(cls, d: int) -> "Subspace":
        return cls(np.eye(d))

    @classmethod
    def span(cls, *vectors, tol: float = ORTHO_TOL) -> "Subspace":
        return orthonormalize(np.column_stack(vectors), tol)

    @cached_property
    def projector(self) -> np.ndarray:
        p = self.basis @ self.basis.T
        p.setflags(write=False)
        return p

    @cached_property
    def complement(self) -> "Subspace":
        d, m = self.basis.shape
        if m == 0:
            comp = Subspace(np.eye(d))
        elif m == d:
            comp = Subspace(np.zeros((d, 0)))
        else:
            u = np.linalg.svd(self.basis, full_matrices=True)[0]
            comp = Subspace(u[:, m:])
        # complement of the complement is this very object
        comp.__dict__["complement"] = self
        return comp

    def contains(self, v, tol: float = 1e-8) -> bool:
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v)
        return nv == 0 or np.linalg.norm(v - self.projector @ v) <= tol * nv

    def __repr__(self):
        return f"Subspace(d={self.ambient_dim}, dim={self.dim})"


def orthonormalize(vectors, tol: float = ORTHO_TOL) -> Subspace:
    """Orthonormal basis of the column space of ``vectors`` (d x k).

    Singular directions below ``tol`` times the largest column norm are
    treated as linear dependence and dropped.
    """
    a = np.asarray(vectors, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("input vectors contain NaN or inf")
    d, k = a.shape
    if k == 0:
        return Subspace.zero(d)
    scale = np.max(np.linalg.norm(a, axis=0))
    if scale == 0:
        return Subspace.zero(d)
    u, s, _ = np.linalg.svd(a / scale, full_matrices=False)
    rank = int(np.count_nonzero(s > tol))
    return Subspace(u[:, :rank])


def projector(V: Subspace) -> np.ndarray:
    return V.projector


def _check_same_ambient(V: Subspace, W: Subspace):
    if V.ambient_dim != W.ambient_dim:
        raise DimensionMismatch(
            f"ambient dimensions differ: {V.ambient_dim} vs {W.ambient_dim}"
        )


def subspace_distance(V: Subspace, W: Subspace) -> float:
    """Spectral norm of ``P_V - P_W``.

    The value is evaluated both on ``(V, W)`` and on the complements and the
    larger of the two is returned. The two agree mathematically; taking the
    max makes ``d(V, W) == d(V^perp, W^perp)`` hold bit for bit.
    """
    _check_same_ambient(V, W)
    direct = np.linalg.norm(V.projector - W.projector, 2)
    dual = np.linalg.norm(V.complement.projector - W.complement.projector, 2)
    return float(max(direct, dual))


def vector_distance(w, V: Subspace) -> float:
    """Distance from the vector ``w`` to ``V``, i.e. ``|w - P_V w|``."""
    w = np.asarray(w, dtype=float)
    return float(np.linalg.norm(w - V.projector @ w))


def sup_distance(W: Subspace, V: Subspace) -> float:
    """sup of ``d(w, V)`` over unit vectors ``w`` in ``W``."""
    _check_same_ambient(V, W)
    if W.dim == 0:
        return 0.0
    resid = W.basis - V.projector @ W.basis
    return float(np.linalg.norm(resid, 2))


def principal_cosines(V: Subspace, W: Subspace) -> np.ndarray:
    """Cosines of the principal angles, in decreasing order."""
    _check_same_ambient(V, W)
    if V.dim == 0 or W.dim == 0:
        return np.zeros(0)
    s = np.linalg.svd(V.basis.T @ W.basis, compute_uv=False)
    return np.clip(s, 0.0, 1.0)


def orthogonal_complement(V: Subspace) -> Subspace:
    return V.complement


def intersect(V: Subspace, W: Subspace, tol: float = INTERSECT_TOL) -> Subspace:
    """Common directions of ``V`` and ``W``.

    Principal vectors whose principal-angle cosine exceeds ``1 - tol`` are
    kept; the result is the zero subspace when there are none.
    """
    _check_same_ambient(V, W)
    if V.dim == 0 or W.dim == 0:
        return Subspace.zero(V.ambient_dim)
    u, s, _ = np.linalg.svd(V.basis.T @ W.basis)
    r = int(np.count_nonzero(s > 1.0 - tol))
    if r == 0:
        return Subspace.zero(V.ambient_dim)
    return orthonormalize(V.basis @ u[:, :r])


def direct_sum(V: Subspace, W: Subspace, tol: float = INTERSECT_TOL) -> Subspace:
    _check_same_ambient(V, W)
    if intersect(V, W, tol).dim:
        raise NotTransverse("subspaces intersect nontrivially")
    if V.dim == 0:
        return W
    if W.dim == 0:
        return V
    S = orthonormalize(np.hstack([V.basis, W.basis]))
    if S.dim != V.dim + W.dim:
        raise NotTransverse("sum lost dimension during orthonormalization")
    return S


def direct_sum_all(spaces, tol: float = INTERSECT_TOL) -> Subspace:
    it = iter(spaces)
    acc = next(it)
    for S in it:
        acc = direct_sum(acc, S, tol)
    return acc


def min_sum_gap(V: Subspace, W: Subspace, tol: float = INTERSECT_TOL) -> float:
    """inf |v1 + v2| over unit v1 in V, v2 in W.

    Since |v1 + v2|^2 = 2 + 2<v1, v2> and the infimum of the inner product is
    minus the largest singular value of V^T W, this is sqrt(2 - 2 sigma).
    """
    _check_same_ambient(V, W)
    if V.dim == 0 or W.dim == 0:
        raise ValueError("both subspaces must be nonzero")
    sigma = float(principal_cosines(V, W)[0])
    if sigma >= 1.0 - tol:
        raise DegenerateIntersection(f"largest principal cosine {sigma} too close to 1")
    return float(np.sqrt(2.0 - 2.0 * sigma))
