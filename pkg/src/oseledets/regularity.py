"""
Per-point regularity constants of the Oseledets splitting.

For a split index i the space is cut into E^1 = E_1 + ... + E_i and
E^2 = E_{i+1} + ... + E_k. The constants computed here are finite-horizon
maxima over 0 <= n <= horizon:

* ``C_upper``  bounds |A(x,n)| on E^1 by C e^{(lambda_i + eps) n}
* ``C_lower``  bounds |A(x,n) v| on E^2 from below by e^{(lambda_{i+1} - eps) n} / C
* ``C_tilde``  bounds the full norm |A(x,n)| by C e^{(lambda_k + eps) n}
* ``K_direct`` = max(1, 2 / gamma) bounds both oblique projections

plus the threshold time ``n_x`` and the angle bound ``K_lemma`` derived
from the first three.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .cocycle import CocycleSystem, orbit
from .errors import GapTooSmall, NoSuchN, NotHyperbolic, SingularRestriction
from .met import SplittingField, SplittingSample, SpectrumReport, _oblique, splitting_field
from .subspace import Subspace, min_sum_gap

NEG_INF_SUBSTITUTE = 5.0
NX_CAP = 10**6

CSV_COLUMNS = [
    "x_coords", "i", "epsilon", "C_upper", "C_lower", "C_tilde",
    "K_direct", "K_lemma", "n_x", "horizon",
]


@dataclass(frozen=True)
class RegularityProfile:
    point: tuple
    split_index: int
    epsilon: float
    C_upper: float
    C_lower: float
    C_tilde: float
    K_direct: float
    K_lemma: float
    n_x: int
    horizon: int

    def csv_row(self) -> dict:
        row = asdict(self)
        row["x_coords"] = " ".join(repr(float(v)) for v in row.pop("point"))
        row["i"] = row.pop("split_index")
        return {key: row[key] for key in CSV_COLUMNS}


@dataclass(frozen=True)
class DichotomyParams:
    D: float
    lambda_rate: float
    epsilon: float
    window: int

    def __post_init__(self):
        if not self.lambda_rate > 0:
            raise ValueError("lambda_rate must be positive")
        if self.D < 1 or self.epsilon < 0 or self.window < 1:
            raise ValueError("need D >= 1, epsilon >= 0, window >= 1")


def profiles_to_csv(profiles) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for p in profiles:
        writer.writerow(p.csv_row())
    return buf.getvalue()


# --- rates ---------------------------------------------------------------


def split_rates(spectrum: SpectrumReport, i: int):
    """(lambda_i, lambda_{i+1}, lambda_k) for split index i, with a -inf
    lambda_1 replaced by lambda_2 - 5."""
    if not 1 <= i < spectrum.k:
        raise ValueError(f"split index must be in [1, {spectrum.k - 1}]")
    exps = spectrum.exponents
    lo = exps[i - 1]
    if lo == -np.inf:
        lo = exps[1] - NEG_INF_SUBSTITUTE
    return float(lo), float(exps[i]), float(exps[-1])


def default_epsilon(spectrum: SpectrumReport) -> float:
    """One fifth of the smallest gap between consecutive exponents.

    A fifth is the largest fraction for which lambda_lo + 3 eps <=
    lambda_hi - 2 eps holds at every split.
    """
    if spectrum.k < 2:
        raise ValueError("a single exponent has no gap")
    gaps = [split_rates(spectrum, i)[1] - split_rates(spectrum, i)[0] for i in range(1, spectrum.k)]
    return min(gaps) / 5.0


# --- restricted growth ---------------------------------------------------


def _norm2(M):
    """Spectral norm over the last two axes (closed forms for 1x1 and 2x2)."""
    m, n = M.shape[-2:]
    if m == 1 and n == 1:
        return np.abs(M[..., 0, 0])
    if m == 2 and n == 2:
        fro = np.sum(M * M, axis=(-2, -1))
        det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
        disc = np.sqrt(np.maximum(fro * fro - 4 * det * det, 0.0))
        return np.sqrt((fro + disc) / 2)
    return np.linalg.norm(M, 2, axis=(-2, -1))


def _inv_triangular(R):
    if R.shape[-1] == 1:
        return 1.0 / R
    return np.linalg.inv(R)


def _norm2_rect(W):
    if W.shape[-1] == 1:
        return np.linalg.norm(W[..., 0], axis=-1)
    return np.sqrt(_norm2(np.swapaxes(W, -1, -2) @ W))


def _qr(W):
    if W.shape[-1] == 1:
        r = np.linalg.norm(W, axis=-2, keepdims=True)
        return W / r, r
    return np.linalg.qr(W)


def restricted_growth(mats, basis, proj=None, smallest=False):
    """log of the extreme singular values of A(x, n) B for n = 0..H.

    ``mats`` is (H, B, d, d), ``basis`` is (B, d, m) with orthonormal
    columns. The largest singular value is read off a rescaled running
    product. For the smallest one, A(x, n) B = Q_n T_n is tracked through
    stepwise QR and T_n^-1 is accumulated with rescaling, so nothing
    overflows. ``proj`` (H+1, B, d, d), when given, is applied after each
    step; it should be the identity on the true image.
    Returns (log_smax, log_smin) each of shape (H+1, B); log_smin is None
    unless requested.
    """
    H, nb = mats.shape[0], mats.shape[1]
    m = basis.shape[-1]
    log_max = np.zeros((H + 1, nb))
    log_min = np.zeros((H + 1, nb)) if smallest else None
    if not smallest:
        W = np.array(basis, dtype=float)
        logs = np.zeros(nb)
        for j in range(H):
            W = mats[j] @ W
            if proj is not None:
                W = proj[j + 1] @ W
            sc = np.max(np.abs(W), axis=(-2, -1))
            alive = sc > 0
            W[alive] /= sc[alive, None, None]
            with np.errstate(divide="ignore"):
                logs = logs + np.log(sc)
                log_max[j + 1] = logs + np.log(np.where(alive, _norm2_rect(W), 1.0))
            log_max[j + 1][~alive] = -np.inf
        return log_max, None

    W = basis
    T = np.broadcast_to(np.eye(m), (nb, m, m)).copy()
    Ti = T.copy()
    logT = np.zeros(nb)
    logTi = np.zeros(nb)
    for j in range(H):
        W = mats[j] @ W
        if proj is not None:
            W = proj[j + 1] @ W
        W, R = _qr(W)
        diag = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
        if np.any(diag < 1e-300) or not np.all(np.isfinite(diag)):
            raise SingularRestriction("cocycle is not invertible on E^2; the splitting is off")
        T = R @ T
        sc = np.max(np.abs(T), axis=(-2, -1))
        T /= sc[:, None, None]
        logT = logT + np.log(sc)
        log_max[j + 1] = logT + np.log(_norm2(T))
        Ti = Ti @ _inv_triangular(R)
        sci = np.max(np.abs(Ti), axis=(-2, -1))
        Ti /= sci[:, None, None]
        logTi = logTi + np.log(sci)
        log_min[j + 1] = -(logTi + np.log(_norm2(Ti)))
    return log_max, log_min


def _envelope(log_vals, slope, sign=1.0):
    """max(1, max_n exp(sign * log_vals[n] - slope n)) computed in logs."""
    n = np.arange(log_vals.shape[0])[:, None]
    with np.errstate(invalid="ignore"):
        expo = sign * log_vals - slope * n
    expo = np.where(np.isnan(expo), -np.inf, expo)
    return np.exp(np.maximum(np.max(expo, axis=0), 0.0))


def _orbit_mats(sys, fld: SplittingField, horizon):
    return sys.matrices(fld.points[:horizon])


def _field_for(sys, sample_or_points, spectrum, horizon):
    pts = np.asarray(
        sample_or_points.point if isinstance(sample_or_points, SplittingSample) else sample_or_points,
        dtype=float,
    ).reshape(-1, sys.k)
    return splitting_field(sys, pts, spectrum, horizon, n_fwd=horizon)


def upper_constants(fld: SplittingField, mats, i, epsilon, horizon):
    lam_lo, _, _ = split_rates(fld.spectrum, i)
    B1 = fld.upper_basis(i)
    B2 = fld.lower_basis(i)
    proj = _oblique(B1[: horizon + 1], B2[: horizon + 1])
    log_max, _ = restricted_growth(mats, B1[0], proj=proj)
    return _envelope(log_max, lam_lo + epsilon)


def lower_constants(fld: SplittingField, mats, i, epsilon, horizon):
    _, lam_hi, _ = split_rates(fld.spectrum, i)
    _, log_min = restricted_growth(mats, fld.lower_basis(i)[0], smallest=True)
    return _envelope(log_min, -(lam_hi - epsilon), sign=-1.0)


def full_constants(mats, lam_top, epsilon):
    nb, d = mats.shape[1], mats.shape[-1]
    log_max, _ = restricted_growth(mats, np.broadcast_to(np.eye(d), (nb, d, d)))
    return _envelope(log_max, lam_top + epsilon)


def upper_constant(sys, sample: SplittingSample, i, epsilon, horizon) -> float:
    """max(1, max_n |A(x,n)|E^1(x)| e^{-(lambda_i + eps) n}) over 0..horizon."""
    fld = _field_for(sys, sample, sample.spectrum, horizon)
    return float(upper_constants(fld, _orbit_mats(sys, fld, horizon), i, epsilon, horizon)[0])


def lower_constant(sys, sample: SplittingSample, i, epsilon, horizon) -> float:
    """max(1, max_n e^{(lambda_{i+1} - eps) n} / s_min(A(x,n)|E^2(x)))."""
    if sample.spectrum.exponents[i] == -np.inf:
        raise ValueError("lambda_{i+1} must be finite")
    fld = _field_for(sys, sample, sample.spectrum, horizon)
    return float(lower_constants(fld, _orbit_mats(sys, fld, horizon), i, epsilon, horizon)[0])


def full_constant(sys, x, spectrum, epsilon, horizon) -> float:
    """max(1, max_n |A(x,n)| e^{-(lambda_k + eps) n})."""
    mats = sys.matrices(orbit(sys, np.asarray(x, dtype=float).reshape(1, sys.k), 0, horizon - 1))
    return float(full_constants(mats, spectrum.exponents[-1], epsilon)[0])


# --- angles ------------------------------------------------------------------


def threshold_time(lam_lo, lam_hi, epsilon, c_squared, cap: int = NX_CAP) -> int:
    """Smallest n >= 0 with e^{(hi-eps)n} - C^2 e^{(lo+eps)n} >= e^{(hi-2eps)n}.

    Evaluated in logs: (hi - eps) n + log(1 - e^{-eps n}) >= log C^2 + (lo + eps) n.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    log_c2 = np.log(c_squared)
    start, chunk = 0, 64
    while start <= cap:
        n = np.arange(start, min(start + chunk, cap + 1), dtype=float)
        with np.errstate(divide="ignore"):
            lhs = (lam_hi - epsilon) * n + np.log(-np.expm1(-epsilon * n))
        ok = np.nonzero(lhs >= log_c2 + (lam_lo + epsilon) * n)[0]
        if len(ok):
            return int(n[ok[0]])
        start += chunk
        chunk = min(2 * chunk, 100_000)
    raise NoSuchN(f"no n <= {cap} satisfies the threshold inequality")


def angle_constant(
    sample_or_spaces,
    i,
    C_upper,
    C_lower,
    C_tilde,
    epsilon,
    lambda_lo,
    lambda_hi,
    lambda_top=None,
):
    """(K_direct, K_lemma, n_x) for the pair E^1(x), E^2(x).

    ``sample_or_spaces`` is a SplittingSample or a pair of Subspaces.
    K_lemma = max(1, 2 C_lower C_tilde e^{(lambda_top - lambda_hi + 3 eps) n_x});
    when E^2 carries a single exponent (lambda_top == lambda_hi) this is
    2 C C~ e^{3 eps n_x}.
    """
    if lambda_lo + 3 * epsilon > lambda_hi - 2 * epsilon + 1e-12:
        raise GapTooSmall(
            f"need lambda_lo + 3 eps <= lambda_hi - 2 eps, got eps={epsilon} for "
            f"({lambda_lo}, {lambda_hi})"
        )
    if isinstance(sample_or_spaces, SplittingSample):
        E1, E2 = sample_or_spaces.upper(i), sample_or_spaces.lower(i)
    else:
        E1, E2 = sample_or_spaces
    gamma = min_sum_gap(E1, E2)
    k_direct = max(1.0, 2.0 / gamma)
    n_x = threshold_time(lambda_lo, lambda_hi, epsilon, C_upper * C_lower)
    top = lambda_hi if lambda_top is None else lambda_top
    with np.errstate(over="ignore"):
        k_lemma = max(1.0, float(2 * C_lower * C_tilde * np.exp((top - lambda_hi + 3 * epsilon) * n_x)))
    return k_direct, k_lemma, n_x


def regularity_profiles(
    sys: CocycleSystem,
    points,
    i: int,
    epsilon: float,
    horizon: int,
    spectrum: SpectrumReport,
    field: SplittingField | None = None,
) -> list:
    """RegularityProfile for every row of ``points`` (batched)."""
    pts = np.asarray(points, dtype=float).reshape(-1, sys.k)
    fld = field if field is not None else splitting_field(sys, pts, spectrum, horizon, n_fwd=horizon)
    mats = _orbit_mats(sys, fld, horizon)
    lam_lo, lam_hi, lam_top = split_rates(spectrum, i)
    c_up = upper_constants(fld, mats, i, epsilon, horizon)
    c_low = lower_constants(fld, mats, i, epsilon, horizon)
    c_til = full_constants(mats, lam_top, epsilon)
    out = []
    B1, B2 = fld.upper_basis(i)[0], fld.lower_basis(i)[0]
    for b in range(len(pts)):
        kd, kl, nx = angle_constant(
            (Subspace(B1[b]), Subspace(B2[b])), i, c_up[b], c_low[b], c_til[b],
            epsilon, lam_lo, lam_hi, lam_top,
        )
        out.append(RegularityProfile(
            point=tuple(float(v) for v in pts[b]), split_index=i, epsilon=float(epsilon),
            C_upper=float(c_up[b]), C_lower=float(c_low[b]), C_tilde=float(c_til[b]),
            K_direct=kd, K_lemma=kl, n_x=nx, horizon=horizon,
        ))
    return out


def regularity_profile(sys, x, i, epsilon, horizon, spectrum) -> RegularityProfile:
    return regularity_profiles(sys, np.asarray(x, dtype=float).reshape(1, sys.k),
                               i, epsilon, horizon, spectrum)[0]


def _windows(arr, count, length):
    # (count windows of arr[s:s+length]) -> (length, count * B, ...)
    w = np.stack([arr[s:s + length] for s in range(count)], axis=1)
    return w.reshape((length, -1) + arr.shape[2:])


def orbit_constants(
    sys: CocycleSystem,
    points,
    i: int,
    epsilon: float,
    horizon: int,
    spectrum: SpectrumReport,
    reach: int,
) -> dict:
    """C_upper, C_lower, C_tilde and K_direct at f^m(x_b) for |m| <= reach.

    One splitting sweep per batch covers the whole orbit segment; every
    entry matches what regularity_profiles computes at f^m(x_b) up to
    round-off. Arrays have shape (2 reach + 1, B).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, sys.k)
    nb = len(pts)
    fld = splitting_field(sys, pts, spectrum, horizon, n_back=reach, n_fwd=reach + horizon)
    count = 2 * reach + 1
    mats = _windows(sys.matrices(fld.points[:-1]), count, horizon)
    B1 = fld.upper_basis(i)
    B2 = fld.lower_basis(i)
    proj = _windows(_oblique(B1, B2), count, horizon + 1)
    B1w, B2w = _windows(B1, count, 1)[0], _windows(B2, count, 1)[0]
    lam_lo, lam_hi, lam_top = split_rates(spectrum, i)
    log_max, _ = restricted_growth(mats, B1w, proj=proj)
    c_up = _envelope(log_max, lam_lo + epsilon)
    _, log_min = restricted_growth(mats, B2w, smallest=True)
    c_low = _envelope(log_min, -(lam_hi - epsilon), sign=-1.0)
    c_til = full_constants(mats, lam_top, epsilon)
    sigma = np.linalg.svd(np.swapaxes(B1w, -1, -2) @ B2w, compute_uv=False)[:, 0]
    k_dir = np.maximum(1.0, 2.0 / np.sqrt(2.0 - 2.0 * np.minimum(sigma, 1.0)))
    shape = (count, nb)
    return {
        "points": fld.points[:count],
        "C_upper": c_up.reshape(shape),
        "C_lower": c_low.reshape(shape),
        "C_tilde": c_til.reshape(shape),
        "K_direct": k_dir.reshape(shape),
    }


def tempered_hull(values, epsilon: float, width: int):
    """g^T(m) = max_{|j| <= width} g(m + j) e^{-eps |j|} along an orbit.

    ``values`` has the orbit offset on axis 0; the result covers the
    interior offsets width..len-1-width. The hull dominates g and is
    tempered at rate eps, up to terms beyond the window that are damped
    by e^{-eps width}.
    """
    v = np.asarray(values, dtype=float)
    L = v.shape[0] - 2 * width
    if L < 1:
        raise ValueError("orbit segment shorter than the hull window")
    out = np.zeros((L,) + v.shape[1:])
    for j in range(-width, width + 1):
        out = np.maximum(out, v[width + j: width + j + L] * np.exp(-epsilon * abs(j)))
    return out


HULL_DECADES = 20.0


def tempered_constants(sys, points, i, epsilon, horizon, spectrum, M: int) -> dict:
    """Tempered hulls of the profile constants on f^m(x_b), |m| <= M.

    The hull width W = ceil(20 / eps) makes omitted terms matter only for
    constants above e^20. Returns the raw constants and their hulls, each
    of shape (2M + 1, B).
    """
    width = int(np.ceil(HULL_DECADES / epsilon))
    oc = orbit_constants(sys, points, i, epsilon, horizon, spectrum, M + width)
    out = {"points": oc["points"][width: width + 2 * M + 1], "width": width}
    for key in ("C_upper", "C_lower", "C_tilde", "K_direct"):
        out[key] = oc[key][width: width + 2 * M + 1]
        out[key + "_hull"] = tempered_hull(oc[key], epsilon, width)
    return out


def temperedness_ratio(values, epsilon_rate: float, M: int):
    """Worst ratio g(f^m x) / (g(x) e^{eps |m|}) over |m| <= M, with x at the
    centre of ``values`` (axis 0 of length 2M + 1)."""
    v = np.asarray(values, dtype=float)
    m = np.abs(np.arange(-M, M + 1)).reshape((-1,) + (1,) * (v.ndim - 1))
    return np.max(v / (v[M] * np.exp(epsilon_rate * m)), axis=0)


# --- temperedness and integrability ---------------------------------------------


def temperedness_check(sys: CocycleSystem, g, x, epsilon_rate, M: int) -> float:
    """max over |m| <= M of g(f^m x) / (g(x) e^{eps |m|}).

    ``g`` maps an (N, k) array of points to N positive values. A result
    <= 1 means the tempered bound holds on the window.
    """
    pts = orbit(sys, np.asarray(x, dtype=float).reshape(sys.k), M, M)
    vals = np.asarray(g(pts), dtype=float)
    m = np.arange(-M, M + 1)
    return float(np.max(vals / (vals[M] * np.exp(epsilon_rate * np.abs(m)))))


def tempered_profile_function(sys, i, epsilon, horizon, spectrum, which="C_upper"):
    """Vectorized g(points) returning one profile constant per point."""

    def g(points):
        profs = regularity_profiles(sys, points, i, epsilon, horizon, spectrum)
        return np.array([getattr(p, which) for p in profs])

    return g


def det_integrability_check(
    sys: CocycleSystem,
    sample_count: int,
    i: int,
    horizon: int,
    spectrum: SpectrumReport,
    stream: int = 0,
    n_boot: int = 1000,
):
    """Mean of psi(x) = log|det(A(x)|E^2(x))| over mu samples and a 95%
    bootstrap half-width. The restricted map is written in orthonormal
    bases of E^2(x) and E^2(f x)."""
    pts = sys.sample(sample_count, stream)
    fld = splitting_field(sys, pts, spectrum, horizon, n_fwd=1)
    B_here, B_next = fld.lower_basis(i)[0], fld.lower_basis(i)[1]
    M = np.swapaxes(B_next, -1, -2) @ sys.matrices(pts) @ B_here
    with np.errstate(divide="ignore"):
        psi = np.log(np.abs(np.linalg.det(M)))
    mean = float(np.mean(psi))
    rng = np.random.default_rng(np.random.SeedSequence(sys.seed, spawn_key=(stream, 1)))
    boots = psi[rng.integers(0, len(psi), size=(n_boot, len(psi)))].mean(axis=1)
    half = float((np.percentile(boots, 97.5) - np.percentile(boots, 2.5)) / 2)
    return mean, half


# --- dichotomy -------------------------------------------------------------


def hyperbolic_split(spectrum: SpectrumReport) -> int:
    """Largest index with a negative exponent; NotHyperbolic if some
    exponent is within cluster_tol of zero."""
    exps = np.array(spectrum.exponents)
    if np.any(np.abs(exps) < spectrum.cluster_tol):
        raise NotHyperbolic("some Lyapunov exponent vanishes")
    neg = np.nonzero(exps < 0)[0]
    if len(neg) == 0 or len(neg) == len(exps):
        raise NotHyperbolic("all exponents have the same sign; there is no split")
    return int(neg[-1]) + 1


def dichotomy_params(profile: RegularityProfile, spectrum: SpectrumReport, window: int) -> DichotomyParams:
    """Dichotomy constants implied by the profile at x.

    Forward: |A(m,n) P_n| <= C(f^n x) |P_n| e^{(lambda_i + eps)(m - n)}, and
    tempered C, K give the e^{2 eps |n|} factor. Backward uses C_lower and
    loses one more eps in the rate.
    """
    lam_lo, lam_hi, _ = split_rates(spectrum, profile.split_index)
    eps = profile.epsilon
    return DichotomyParams(
        D=max(profile.C_upper, profile.C_lower) * profile.K_direct,
        lambda_rate=min(-lam_lo - eps, lam_hi - 2 * eps),
        epsilon=2 * eps,
        window=window,
    )


def dichotomy_check(
    sys: CocycleSystem,
    x,
    field: SplittingField | None,
    params: DichotomyParams,
    i: int,
    spectrum: SpectrumReport | None = None,
    horizon: int = 200,
    commute_tol: float = 1e-6,
) -> dict:
    """Check the nonuniform exponential dichotomy of A_n = A(f^n x) on
    |n| <= window with P_n the projection onto E^1 along E^2.

    Returns ``holds``, ``worst_margin`` (largest ratio of an observed norm
    to its bound), the commutation residual and the largest condition
    number of the splitting bases.
    """
    spectrum = spectrum if spectrum is not None else field.spectrum
    if i != hyperbolic_split(spectrum):
        raise ValueError("split index must separate negative from positive exponents")
    W = params.window
    if field is None:
        field = splitting_field(sys, np.asarray(x, dtype=float).reshape(1, sys.k), spectrum,
                                horizon, n_back=W, n_fwd=W)
    if field.n_back != W or field.points.shape[0] != 2 * W + 1:
        raise ValueError("field must cover offsets -window..window")
    B1 = field.upper_basis(i)[:, 0]
    B2 = field.lower_basis(i)[:, 0]
    P = _oblique(B1, B2)
    cond = float(np.max(np.linalg.cond(np.concatenate([B1, B2], axis=-1))))
    mats = sys.matrices(field.points[:-1, 0])
    eye = np.eye(sys.d)

    commute = 0.0
    for j in range(2 * W):
        lhs, rhs = mats[j] @ P[j], P[j + 1] @ mats[j]
        scale = max(1.0, np.linalg.norm(mats[j], 2) * np.linalg.norm(P[j], 2))
        commute = max(commute, float(np.linalg.norm(lhs - rhs, 2) / scale))

    lam, eps, D = params.lambda_rate, params.epsilon, params.D
    n = np.arange(-W, W + 1)
    worst = 0.0
    # forward: G[n] = A(n+s, n) P_n for all n at lag s, re-projected each
    # step (A_m P_m = P_{m+1} A_m) so round-off cannot leak into E^2
    G = P.copy()
    for lag in range(2 * W + 1):
        live = 2 * W + 1 - lag
        bound = D * np.exp(-lam * lag + eps * np.abs(n[:live]))
        worst = max(worst, float(np.max(np.linalg.norm(G[:live], 2, axis=(-2, -1)) / bound)))
        if live > 1:
            G = P[lag + 1: lag + live] @ mats[lag: lag + live - 1] @ G[: live - 1]
    # backward on ker P_n through the inverse restricted to E^2, in E^2 bases
    Rm = np.swapaxes(B2[1:], -1, -2) @ mats @ B2[:-1]
    G = eye - P
    for lag in range(2 * W + 1):
        live = 2 * W + 1 - lag
        bound = D * np.exp(-lam * lag + eps * np.abs(n[lag:]))
        worst = max(worst, float(np.max(np.linalg.norm(G, 2, axis=(-2, -1)) / bound)))
        if live > 1:
            # G[n] currently maps into E^2 at offset n - lag; step one further back
            idx = np.arange(1, live)
            tgt = idx - 1
            coords = np.swapaxes(B2[idx], -1, -2) @ G[1:]
            G = B2[tgt] @ np.linalg.solve(Rm[tgt], coords)
    return {
        "holds": bool(worst <= 1.0 and commute <= commute_tol),
        "worst_margin": worst,
        "commutation_residual": commute,
        "condition": cond,
    }
