"""
Lyapunov spectrum and Oseledets splitting of semi-invertible cocycles.

The slow filtration at x comes from the right-singular frame of A(x, n),
obtained by a QR power iteration with the transposed matrices run from
f^n(x) back to x. Fast sums come from the same routine applied to the
adjoint cocycle, so no matrix is ever inverted and singular generators
are fine. E_i(x) is the intersection of V_{<=i}(x) with the fast sum
E_i(x) + ... + E_k(x).

All heavy routines work on batches of base points at once: points are
given as an array of shape (B, k) and numpy's stacked QR/SVD do the work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cocycle import CocycleSystem, adjoint_cocycle, orbit
from .errors import ClusterAmbiguity, DimensionCollapse, SignDefect
from .subspace import (
    INTERSECT_TOL,
    Subspace,
    direct_sum_all,
    orthonormalize,
    subspace_distance,
    vector_distance,
)

CLUSTER_TOL = 0.05
NEG_INF_FLOOR = -30.0
_FRAME_SEED = 20110607


def _generic_frame(d):
    # fixed random orthogonal start: generic w.r.t. every invariant flag
    rng = np.random.default_rng(_FRAME_SEED + d)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _as_batch(sys, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return x.reshape(-1, sys.k), single


@dataclass(frozen=True)
class SpectrumReport:
    """Distinct exponents (increasing, possibly -inf first) and multiplicities."""

    exponents: tuple
    multiplicities: tuple
    horizon: int
    cluster_gap: float
    per_step_rates: tuple
    cluster_tol: float = CLUSTER_TOL

    @property
    def k(self) -> int:
        return len(self.exponents)

    @property
    def d(self) -> int:
        return int(sum(self.multiplicities))

    @property
    def cumulative(self) -> np.ndarray:
        """c_0 = 0, c_i = m_1 + ... + m_i."""
        return np.concatenate([[0], np.cumsum(self.multiplicities)]).astype(int)

    @property
    def spread(self) -> np.ndarray:
        """The d exponents repeated by multiplicity, increasing."""
        return np.repeat(np.array(self.exponents, dtype=float), self.multiplicities)

    def to_dict(self) -> dict:
        def enc(v):
            return "-inf" if v == -np.inf else float(v)

        return {
            "exponents": [enc(v) for v in self.exponents],
            "multiplicities": [int(m) for m in self.multiplicities],
            "horizon": int(self.horizon),
            "cluster_gap": enc(self.cluster_gap) if np.isfinite(self.cluster_gap) else None,
            "per_step_rates": [enc(v) for v in self.per_step_rates],
            "cluster_tol": self.cluster_tol,
        }

    @classmethod
    def from_dict(cls, doc) -> "SpectrumReport":
        def dec(v):
            return -np.inf if v == "-inf" else float(v)

        gap = doc.get("cluster_gap")
        return cls(
            exponents=tuple(dec(v) for v in doc["exponents"]),
            multiplicities=tuple(int(m) for m in doc["multiplicities"]),
            horizon=int(doc["horizon"]),
            cluster_gap=np.inf if gap is None else float(gap),
            per_step_rates=tuple(dec(v) for v in doc["per_step_rates"]),
            cluster_tol=float(doc.get("cluster_tol", CLUSTER_TOL)),
        )


@dataclass
class SplittingSample:
    """Oseledets data at one base point. Space indices are 1-based in the API:
    ``spaces[i - 1]`` is E_i, ``slow_sums[i - 1]`` is V_{<=i} and
    ``fast_sums[i]`` is E_{i+1} + ... + E_k (so ``fast_sums[0]`` is R^d)."""

    point: np.ndarray
    spaces: list
    slow_sums: list
    fast_sums: list
    spectrum: SpectrumReport
    residuals: dict = field(default_factory=dict)

    def upper(self, i: int) -> Subspace:
        """E^1 = E_1 + ... + E_i."""
        return self.slow_sums[i - 1]

    def lower(self, i: int) -> Subspace:
        """E^2 = E_{i+1} + ... + E_k."""
        return self.fast_sums[i]

    def to_dict(self) -> dict:
        return {
            "point": [float(v) for v in np.atleast_1d(self.point)],
            "spaces": [_basis_rows(S) for S in self.spaces],
            "dims": [S.dim for S in self.spaces],
            "residuals": {k: _plain(v) for k, v in self.residuals.items()},
        }


def _basis_rows(S: Subspace):
    return [[float(v) for v in row] for row in S.basis]


def _plain(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return [float(a) for a in v]
    return float(v)


# --- frame sweeps --------------------------------------------------------


def slow_frames(sys: CocycleSystem, points, horizon: int, n_back: int = 0, n_fwd: int = 0):
    """Right-singular frames of A(y, n) at y = f^m(x), m = -n_back..n_fwd.

    Columns are ordered from the most expanded direction to the most
    contracted one, so the last c columns span the slow filtration of
    dimension c. Every frame is built from a product of length >= horizon.
    Returns an array of shape (n_back + n_fwd + 1, B, d, d).
    """
    X, _ = _as_batch(sys, points)
    L = n_back + n_fwd + horizon
    pts = orbit(sys, X, n_back, n_fwd + horizon - 1)
    mats = sys.matrices(pts)
    W = np.broadcast_to(_generic_frame(sys.d), (len(X), sys.d, sys.d))
    keep = n_back + n_fwd + 1
    out = np.empty((keep, len(X), sys.d, sys.d))
    for idx in range(L - 1, -1, -1):
        W = np.linalg.qr(np.swapaxes(mats[idx], -1, -2) @ W)[0]
        if idx < keep:
            out[idx] = W
    return out


def fast_frames(sys: CocycleSystem, points, horizon: int, n_back: int = 0, n_fwd: int = 0):
    """Adjoint slow frames at f^m(x), m = -n_back..n_fwd (same layout as
    :func:`slow_frames`). The first d - c columns span the fast sum whose
    complement is the adjoint slow filtration of dimension c."""
    adj = adjoint_cocycle(sys)
    return slow_frames(adj, points, horizon, n_back=n_fwd, n_fwd=n_back)[::-1]


def _log_abs(v):
    with np.errstate(divide="ignore"):
        return np.log(np.abs(v))


def _forward_log_diag(mats, Q):
    logs = np.empty(mats.shape[:-1])
    for j in range(len(mats)):
        Q, R = np.linalg.qr(mats[j] @ Q)
        logs[j] = _log_abs(np.diagonal(R, axis1=-2, axis2=-1))
    return logs


def cluster_rates(rates, cluster_tol=CLUSTER_TOL, neg_inf_floor=NEG_INF_FLOOR):
    """Single-linkage clustering of finite-time rates.

    Returns (exponents, multiplicities, smallest gap). Rates below the floor
    collapse into a single -inf slot.
    """
    r = np.sort(np.asarray(rates, dtype=float))
    r = np.where((r < neg_inf_floor) | np.isnan(r), -np.inf, r)
    groups = [[r[0]]]
    for prev, cur in zip(r[:-1], r[1:]):
        if np.isneginf(prev) and np.isneginf(cur):
            groups[-1].append(cur)
            continue
        gap = cur - prev
        if gap < cluster_tol:
            groups[-1].append(cur)
        elif gap < 2 * cluster_tol:
            raise ClusterAmbiguity(
                f"gap {gap:.4g} between finite-time rates lies in "
                f"[{cluster_tol}, {2 * cluster_tol}); increase the horizon"
            )
        else:
            groups.append([cur])
    exps = [-np.inf if np.isneginf(g[0]) else float(np.mean(g)) for g in groups]
    mults = [len(g) for g in groups]
    finite = np.array([e for e in exps if np.isfinite(e)])
    gap = float(np.min(np.diff(finite))) if len(finite) > 1 else np.inf
    return tuple(exps), tuple(mults), gap


def lyapunov_spectrum(
    sys: CocycleSystem,
    x,
    horizon: int = 1000,
    cluster_tol: float = CLUSTER_TOL,
    neg_inf_floor: float = NEG_INF_FLOOR,
) -> SpectrumReport:
    """Lyapunov spectrum at ``x`` from a length-``horizon`` orbit segment.

    A(x, horizon) is never formed. The QR iteration started from the
    right-singular frame yields the log singular values step by step
    (``per_step_rates``); the exponents themselves are the averaged log
    diagonals over the second half of the segment, which removes the
    O(1/n) bias of the alignment transient.
    """
    if horizon < 10:
        raise ValueError("horizon must be >= 10")
    X, _ = _as_batch(sys, x)
    X = X[:1]
    V = slow_frames(sys, X, horizon)[0]
    mats = sys.matrices(orbit(sys, X, 0, horizon - 1))
    logs = _forward_log_diag(mats, V)[:, 0]
    with np.errstate(invalid="ignore"):
        raw = logs.sum(axis=0) / horizon
        tail = logs[horizon // 2:].mean(axis=0)
    exps, mults, gap = cluster_rates(tail, cluster_tol, neg_inf_floor)
    raw = np.where(raw < neg_inf_floor, -np.inf, raw)
    return SpectrumReport(
        exponents=exps,
        multiplicities=mults,
        horizon=horizon,
        cluster_gap=gap,
        per_step_rates=tuple(float(v) for v in np.sort(raw)),
        cluster_tol=cluster_tol,
    )


# --- splittings ------------------------------------------------------------


def _orthonormal_columns(M):
    return np.linalg.qr(M)[0]


def split_frames(S, F, spectrum: SpectrumReport, tol: float = INTERSECT_TOL):
    """Oseledets space bases from slow frames ``S`` and fast frames ``F``.

    ``S`` and ``F`` have shape (..., d, d). Returns a list of k arrays of
    shape (..., d, m_i).
    """
    d = S.shape[-1]
    c = spectrum.cumulative
    spaces = []
    for i in range(1, spectrum.k + 1):
        m = c[i] - c[i - 1]
        V = S[..., d - c[i]:]
        G = F[..., : d - c[i - 1]]
        if c[i - 1] == 0:
            spaces.append(V.copy())
            continue
        if c[i] == d:
            spaces.append(G.copy())
            continue
        U, s, _ = np.linalg.svd(np.swapaxes(V, -1, -2) @ G)
        if np.any(s[..., m - 1] < 1.0 - tol):
            worst = float(np.min(s[..., m - 1]))
            raise DimensionCollapse(
                f"E_{i} has dimension < {m} (principal cosine {worst:.3g}); increase the horizon"
            )
        if s.shape[-1] > m and np.any(s[..., m] >= 1.0 - tol):
            raise DimensionCollapse(f"E_{i} has dimension > {m}")
        spaces.append(_orthonormal_columns(V @ U[..., :m]))
    return spaces


@dataclass
class SplittingField:
    """Oseledets data along orbit segments of a batch of points.

    Array axes are (orbit offset, batch, ...): offset index j corresponds to
    f^{j - n_back}(x_b).
    """

    points: np.ndarray
    slow: np.ndarray
    fast: np.ndarray
    spaces: list
    spectrum: SpectrumReport
    n_back: int = 0

    @property
    def d(self):
        return self.slow.shape[-1]

    def upper_basis(self, i):
        """Basis of E^1 = E_1 + ... + E_i (from the slow frames)."""
        return self.slow[..., self.d - self.spectrum.cumulative[i]:]

    def lower_basis(self, i):
        """Basis of E^2 = E_{i+1} + ... + E_k (from the adjoint frames)."""
        return self.fast[..., : self.d - self.spectrum.cumulative[i]]

    def sample(self, j: int = 0, b: int = 0) -> SplittingSample:
        c = self.spectrum.cumulative
        d = self.d
        spaces = [Subspace(E[j, b]) for E in self.spaces]
        slow = [Subspace(self.slow[j, b][:, d - c[i]:]) for i in range(1, self.spectrum.k + 1)]
        fast = [Subspace(self.fast[j, b][:, : d - c[i]]) for i in range(self.spectrum.k)]
        return SplittingSample(self.points[j, b].copy(), spaces, slow, fast, self.spectrum)


def splitting_field(
    sys: CocycleSystem,
    points,
    spectrum: SpectrumReport,
    horizon: int,
    n_back: int = 0,
    n_fwd: int = 0,
    tol: float = INTERSECT_TOL,
) -> SplittingField:
    """Oseledets splittings at f^m(x_b) for m = -n_back..n_fwd, all points b.

    One backward sweep and one adjoint sweep cover the whole orbit segment.
    """
    X, _ = _as_batch(sys, points)
    S = slow_frames(sys, X, horizon, n_back, n_fwd)
    F = fast_frames(sys, X, horizon, n_back, n_fwd)
    spaces = split_frames(S, F, spectrum, tol)
    return SplittingField(orbit(sys, X, n_back, n_fwd), S, F, spaces, spectrum, n_back)


def slow_filtration(sys: CocycleSystem, x, spectrum: SpectrumReport, horizon: int) -> list:
    """[V_{<=1}(x), ..., V_{<=k}(x) = R^d] from the right-singular frame."""
    S = slow_frames(sys, x, horizon)[0, 0]
    d = sys.d
    return [Subspace(S[:, d - c:]) for c in spectrum.cumulative[1:]]


def fast_sum(sys: CocycleSystem, x, i: int, horizon: int, spectrum: SpectrumReport | None = None):
    """E_{i+1}(x) + ... + E_k(x), i.e. the complement of the adjoint slow
    filtration of index i. ``i = 0`` gives R^d."""
    adj = adjoint_cocycle(sys)
    if spectrum is None:
        spectrum = lyapunov_spectrum(adj, x, horizon)
    if not 0 <= i < spectrum.k:
        raise ValueError(f"fast_sum index must be in [0, {spectrum.k})")
    if i == 0:
        return Subspace.full(sys.d)
    adj_slow = slow_filtration(adj, x, spectrum, horizon)[i - 1]
    return adj_slow.complement


def _equivariance(A, E: Subspace, E_next: Subspace, neg_inf: bool) -> float:
    img = A @ E.basis
    if neg_inf:
        scale = max(np.linalg.norm(A, 2), 1.0)
        worst = 0.0
        for col in img.T:
            nrm = np.linalg.norm(col)
            if nrm > 1e-12 * scale:
                worst = max(worst, vector_distance(col / nrm, E_next))
        return worst
    return subspace_distance(orthonormalize(img), E_next)


def oseledets_splitting(
    sys: CocycleSystem,
    x,
    spectrum: SpectrumReport,
    horizon: int,
    tol: float = INTERSECT_TOL,
) -> SplittingSample:
    """E_1(x) + ... + E_k(x) = R^d with equivariance and reconstruction residuals."""
    fld = splitting_field(sys, np.asarray(x, dtype=float).reshape(1, sys.k), spectrum, horizon,
                          n_fwd=1, tol=tol)
    return sample_with_residuals(sys, fld, 0, tol)


def sample_with_residuals(sys: CocycleSystem, fld: SplittingField, b: int,
                          tol: float = INTERSECT_TOL) -> SplittingSample:
    """Sample at offset 0 of point b, with residuals against offset 1."""
    if fld.points.shape[0] - fld.n_back < 2:
        raise ValueError("field must reach one step forward")
    j = fld.n_back
    spectrum = fld.spectrum
    here, there = fld.sample(j, b), fld.sample(j + 1, b)
    A = sys.matrix(here.point)
    full = direct_sum_all(here.spaces, tol)
    acc = []
    slow_match = []
    for i, E in enumerate(here.spaces):
        acc.append(E)
        slow_match.append(subspace_distance(direct_sum_all(acc, tol), here.slow_sums[i]))
    here.residuals = {
        "reconstruction": subspace_distance(full, Subspace.full(sys.d)),
        "slow_sum_match": slow_match,
        "equivariance": [
            _equivariance(A, E, F, spectrum.exponents[i] == -np.inf)
            for i, (E, F) in enumerate(zip(here.spaces, there.spaces))
        ],
    }
    return here


def equivariance_residual(
    sys: CocycleSystem,
    sample: SplittingSample,
    i: int,
    next_sample: SplittingSample | None = None,
    horizon: int | None = None,
) -> float:
    """d(A(x) E_i(x), E_i(f x)); for lambda_i = -inf only the containment
    defect of the nonzero images is measured."""
    if next_sample is None:
        h = horizon or sample.spectrum.horizon
        next_sample = oseledets_splitting(sys, sys.step(sample.point), sample.spectrum, h)
    neg_inf = sample.spectrum.exponents[i - 1] == -np.inf
    return _equivariance(sys.matrix(sample.point), sample.spaces[i - 1],
                         next_sample.spaces[i - 1], neg_inf)


def adjoint_duality_residual(
    sys: CocycleSystem,
    x,
    i: int,
    horizon: int,
    spectrum: SpectrumReport | None = None,
    adjoint_spectrum: SpectrumReport | None = None,
) -> float:
    """d(F_i(x), (sum of E_j(x), j != i)^perp) where F_i is the i-th
    Oseledets space of the adjoint cocycle, computed independently."""
    if spectrum is None:
        spectrum = lyapunov_spectrum(sys, x, horizon)
    adj = adjoint_cocycle(sys)
    if adjoint_spectrum is None:
        adjoint_spectrum = lyapunov_spectrum(adj, x, horizon)
    if adjoint_spectrum.multiplicities != spectrum.multiplicities:
        raise ClusterAmbiguity("adjoint and forward multiplicities differ")
    mine = splitting_field(sys, x, spectrum, horizon).sample()
    theirs = splitting_field(adj, x, adjoint_spectrum, horizon).sample()
    others = [E for j, E in enumerate(mine.spaces) if j != i - 1]
    predicted = direct_sum_all(others).complement if others else Subspace.full(sys.d)
    return subspace_distance(theirs.spaces[i - 1], predicted)


def duality_residuals(
    sys: CocycleSystem,
    points,
    spectrum: SpectrumReport,
    adjoint_spectrum: SpectrumReport,
    horizon: int,
) -> np.ndarray:
    """Batched adjoint duality residuals, shape (B, k): entry (b, i-1) is
    d(F_i(x_b), (sum of E_j(x_b), j != i)^perp)."""
    if adjoint_spectrum.multiplicities != spectrum.multiplicities:
        raise ClusterAmbiguity("adjoint and forward multiplicities differ")
    X, _ = _as_batch(sys, points)
    mine = splitting_field(sys, X, spectrum, horizon)
    theirs = splitting_field(adjoint_cocycle(sys), X, adjoint_spectrum, horizon)
    k = spectrum.k
    out = np.zeros((len(X), k))
    for b in range(len(X)):
        E = [Subspace(S[0, b]) for S in mine.spaces]
        for i in range(k):
            others = [E[j] for j in range(k) if j != i]
            predicted = direct_sum_all(others).complement if others else Subspace.full(sys.d)
            out[b, i] = subspace_distance(Subspace(theirs.spaces[i][0, b]), predicted)
    return out


def _oblique(basis_keep, basis_along):
    """Projector onto span(basis_keep) along span(basis_along); batched."""
    B = np.concatenate([basis_keep, basis_along], axis=-1)
    m = basis_keep.shape[-1]
    return basis_keep @ np.linalg.inv(B)[..., :m, :]


def space_growth_rate(
    sys: CocycleSystem,
    x,
    vectors,
    i: int,
    n: int,
    spectrum: SpectrumReport,
    horizon: int,
) -> np.ndarray:
    """(1/n) log |A(x, n) v| for vectors v in E_i(x).

    Each step is followed by the projection onto E_i along the other
    Oseledets spaces, which is the identity on exact arithmetic but stops
    round-off from feeding faster directions. ``vectors`` is (d, r).
    """
    fld = splitting_field(sys, x, spectrum, horizon, n_fwd=n)
    spaces = [E[:, 0] for E in fld.spaces]
    others = [E for j, E in enumerate(spaces) if j != i - 1]
    keep = spaces[i - 1]
    proj = _oblique(keep, np.concatenate(others, axis=-1)) if others else None
    mats = sys.matrices(fld.points[:, 0])
    W = np.array(vectors, dtype=float).reshape(sys.d, -1)
    logs = np.log(np.linalg.norm(W, axis=0))
    W = W / np.linalg.norm(W, axis=0)
    for j in range(n):
        W = mats[j] @ W
        if proj is not None:
            W = proj[j + 1] @ W
        nrm = np.linalg.norm(W, axis=0)
        with np.errstate(divide="ignore"):
            logs = logs + np.log(nrm)
        W = W / np.where(nrm > 0, nrm, 1.0)
    return logs / n


def random_invariant_measure(
    sys: CocycleSystem,
    x,
    horizon: int,
    spectrum: SpectrumReport | None = None,
    sign_tol: float = 1e-8,
) -> np.ndarray:
    """Top Oseledets direction of a column-stochastic cocycle as a
    probability vector. Accepts a single point or a batch of points."""
    X, single = _as_batch(sys, x)
    mats = sys.matrices(X)
    if np.any(mats < -1e-12) or np.max(np.abs(mats.sum(axis=-2) - 1.0)) > 1e-12:
        raise ValueError("generator is not column-stochastic at the given points")
    if spectrum is None:
        spectrum = lyapunov_spectrum(sys, X[0], horizon)
    if spectrum.multiplicities[-1] != 1:
        raise ClusterAmbiguity("top exponent is not simple; the invariant vector is not unique")
    F = fast_frames(sys, X, horizon)[0]
    v = F[..., 0]
    v = v / v.sum(axis=-1, keepdims=True)
    if np.any(v < -sign_tol):
        raise SignDefect("top Oseledets vector has entries of mixed sign")
    v = np.clip(v, 0.0, None)
    v = v / v.sum(axis=-1, keepdims=True)
    return v[0] if single else v
