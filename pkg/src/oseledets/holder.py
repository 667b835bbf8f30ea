"""
Pesin-type sets Lambda_l and Hoelder regularity of the Oseledets spaces.

A level set keeps the sampled points whose regularity constants
(C_upper, C_tilde, K_direct) are all at most l. On such a set the spaces
are fitted to a power law d(E(x), E(y)) <= L rho(x, y)^beta, and Brin's
quantitative lemma is evaluated pair by pair as a consistency check.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .cocycle import CocycleSystem, orbit, torus_metric
from .errors import BadRates, HypothesisFail, PairTooFar, TooFewPairs, Unreachable, ZeroDistances
from .met import SpectrumReport, splitting_field
from .regularity import RegularityProfile, split_rates
from .subspace import Subspace, subspace_distance

LEVEL_CAP = 1e12
MIN_PAIRS = 30
MAX_PAIRS = 10_000
ZERO_DIST = 1e-12


@dataclass(frozen=True)
class LambdaSet:
    level: float
    members: tuple
    empirical_measure: float
    delta: float
    split_index: int
    epsilon: float
    total: int

    @property
    def points(self) -> np.ndarray:
        return np.array([p.point for p in self.members])


@dataclass(frozen=True)
class HolderEstimate:
    beta: float
    L_const: float
    eps0: float
    pair_count: int
    r2: float
    zero_distances: bool = False


@dataclass(frozen=True)
class BrinParams:
    C: float
    lam: float
    mu_rate: float
    a: float
    d: float
    delta_pair: float


# --- level sets ------------------------------------------------------------


def _level_of(p: RegularityProfile) -> float:
    return max(p.C_upper, p.C_tilde, p.K_direct)


def _check_shared(profiles):
    keys = {(p.split_index, p.epsilon) for p in profiles}
    if len(keys) > 1:
        raise ValueError("profiles mix split indices or epsilons")


def build_lambda_set(profiles, l, delta: float = 0.1) -> LambdaSet:
    """Profiles with C_upper, C_tilde and K_direct all <= l."""
    profiles = list(profiles)
    _check_shared(profiles)
    members = tuple(p for p in profiles if _level_of(p) <= l)
    first = profiles[0] if profiles else None
    return LambdaSet(
        level=float(l),
        members=members,
        empirical_measure=len(members) / len(profiles) if profiles else 0.0,
        delta=delta,
        split_index=first.split_index if first else 0,
        epsilon=first.epsilon if first else 0.0,
        total=len(profiles),
    )


def choose_level(profiles, delta: float) -> int:
    """Smallest integer l whose level set has empirical measure > 1 - delta."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    profiles = list(profiles)
    _check_shared(profiles)
    n = len(profiles)
    need = next(m for m in range(1, n + 1) if m / n > 1 - delta)
    levels = np.sort([math.ceil(_level_of(p)) for p in profiles])
    l = levels[need - 1]
    if l > LEVEL_CAP:
        raise Unreachable(f"level {l:g} exceeds {LEVEL_CAP:g}; try a longer horizon")
    return int(l)


def intersect_lambda_sets(first: LambdaSet, second: LambdaSet) -> LambdaSet:
    """Points lying in both level sets (matched by coordinates)."""
    keep = {p.point for p in second.members}
    members = tuple(p for p in first.members if p.point in keep)
    total = max(first.total, 1)
    return LambdaSet(
        level=max(first.level, second.level),
        members=members,
        empirical_measure=len(members) / total,
        delta=first.delta + second.delta,
        split_index=first.split_index,
        epsilon=first.epsilon,
        total=first.total,
    )


# --- pairs and the power-law fit ----------------------------------------------


def _pair_indices(points, metric, eps0, max_pairs):
    n = len(points)
    iu, ju = np.triu_indices(n, k=1)
    rho = metric(points[iu], points[ju])
    keep = (rho > 0) & (rho <= eps0)
    iu, ju, rho = iu[keep], ju[keep], rho[keep]
    if len(rho) > max_pairs:
        pick = stratified_subsample(rho, max_pairs)
        iu, ju, rho = iu[pick], ju[pick], rho[pick]
    return iu, ju, rho


def stratified_subsample(rho, cap, bins: int = 20):
    """Indices of at most ``cap`` pairs spread evenly over log-distance bins.

    Every bin keeps min(count, q) pairs with the largest q that fits the
    cap, so sparse small-distance bins are kept whole. Deterministic: pairs
    inside a bin are thinned at evenly spaced positions of the canonical
    (i, j) order.
    """
    lr = np.log(rho)
    edges = np.linspace(lr.min(), lr.max(), bins + 1)
    which = np.clip(np.digitize(lr, edges) - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    lo, hi = 0, int(counts.max())
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if np.minimum(counts, mid).sum() <= cap:
            lo = mid
        else:
            hi = mid - 1
    keep = []
    for b in range(bins):
        idx = np.nonzero(which == b)[0]
        if len(idx) > lo:
            idx = idx[np.linspace(0, len(idx) - 1, lo).round().astype(int)]
        keep.append(idx)
    return np.sort(np.concatenate(keep))


def pair_distances(spaces, iu, ju) -> np.ndarray:
    """Projector distance for each index pair, same convention as
    subspace_distance (max of direct and complementary projector gaps)."""
    P = np.stack([S.projector for S in spaces])
    Pc = np.stack([S.complement.projector for S in spaces])
    direct = np.linalg.norm(P[iu] - P[ju], 2, axis=(-2, -1))
    dual = np.linalg.norm(Pc[iu] - Pc[ju], 2, axis=(-2, -1))
    return np.maximum(direct, dual)


@dataclass(frozen=True)
class PairTable:
    x: np.ndarray
    y: np.ndarray
    rho: np.ndarray
    dist: np.ndarray


def collect_pairs(samples, metric=torus_metric, eps0: float = 0.05, max_pairs: int = MAX_PAIRS) -> PairTable:
    pts = np.array([np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in samples])
    spaces = [S for _, S in samples]
    iu, ju, rho = _pair_indices(pts, metric, eps0, max_pairs)
    return PairTable(pts[iu], pts[ju], rho, pair_distances(spaces, iu, ju))


def fit_power_law(rho, dist, eps0, strict=False) -> HolderEstimate:
    rho, dist = np.asarray(rho, dtype=float), np.asarray(dist, dtype=float)
    n = len(rho)
    if n < MIN_PAIRS:
        raise TooFewPairs(f"only {n} pairs with 0 < rho <= {eps0}")
    if np.mean(dist < ZERO_DIST) > 0.5:
        if strict:
            raise ZeroDistances("more than half of the pair distances vanish")
        return HolderEstimate(1.0, ZERO_DIST, eps0, n, float("nan"), zero_distances=True)
    pos = dist > 0
    lx, ly = np.log(rho[pos]), np.log(dist[pos])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    sst = np.sum((ly - ly.mean()) ** 2)
    r2 = float(1.0 - np.sum(resid**2) / sst) if sst > 0 else 1.0
    beta = float(np.clip(slope, np.finfo(float).tiny, 1.0))
    L = max(math.exp(intercept), float(np.max(dist / rho**beta)))
    return HolderEstimate(beta, L, eps0, n, r2)


def estimate_holder(samples, metric=torus_metric, eps0: float = 0.05, max_pairs: int = MAX_PAIRS,
                    strict: bool = False) -> HolderEstimate:
    """Fit d(E(x), E(y)) ~ L rho(x, y)^beta over close pairs.

    Parameters
    ----------
    samples : sequence of (point, Subspace)
    metric : callable
        Vectorized metric on the base.
    eps0 : float
        Pairs with 0 < rho <= eps0 enter the fit.
    strict : bool
        Raise ZeroDistances for a constant field instead of flagging it.

    Returns
    -------
    HolderEstimate
        beta is the least-squares slope in log-log coordinates clipped to
        (0, 1]; L is inflated to an envelope of all pairs.
    """
    table = collect_pairs(samples, metric, eps0, max_pairs)
    return fit_power_law(table.rho, table.dist, eps0, strict)


def pairs_csv(table: PairTable, i: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "rho", "d_subspace", "i"])
    for x, y, r, dd in zip(table.x, table.y, table.rho, table.dist):
        w.writerow([" ".join(repr(float(v)) for v in x), " ".join(repr(float(v)) for v in y),
                    repr(float(r)), repr(float(dd)), i])
    return buf.getvalue()


HOLDER_COLUMNS = ["i", "l", "delta", "beta", "L", "r2", "pair_count", "eps0"]


def holder_row(i, l, delta, est: HolderEstimate) -> dict:
    return {"i": i, "l": l, "delta": delta, "beta": est.beta, "L": est.L_const,
            "r2": est.r2, "pair_count": est.pair_count, "eps0": est.eps0}


# --- Brin's lemma ----------------------------------------------------------


def brin_exponent(lam, mu, a) -> float:
    return math.log(mu / lam) / math.log(a / lam)


def brin_bound(p: BrinParams) -> float:
    """(2 + d) C^2 (mu / lam) delta^{log(mu/lam) / log(a/lam)}."""
    if not 0 < p.lam < p.mu_rate:
        raise BadRates(f"need 0 < lambda < mu, got {p.lam}, {p.mu_rate}")
    if not p.a > p.lam:
        raise BadRates(f"need a > lambda, got a={p.a}, lambda={p.lam}")
    return (2 + p.d) * p.C**2 * (p.mu_rate / p.lam) * p.delta_pair ** brin_exponent(p.lam, p.mu_rate, p.a)


def _cocycle_products(sys, X, n_max):
    """A(x, n) for n = 1..n_max, shape (n_max, B, d, d)."""
    pts = orbit(sys, X, 0, n_max - 1)
    mats = sys.matrices(pts)
    out = np.empty_like(mats)
    acc = np.broadcast_to(np.eye(sys.d), mats.shape[1:])
    for j in range(n_max):
        acc = mats[j] @ acc
        out[j] = acc
    return out


def select_delta(diff_norms, lam, a):
    """Smallest delta over n >= 1 with (lam/a)^{n+1} < delta <= (lam/a)^n
    and |A_n - B_n| <= delta a^n. Returns (delta, n) or None."""
    n = np.arange(1, len(diff_norms) + 1)
    log_q = math.log(lam / a)
    with np.errstate(divide="ignore", over="ignore"):
        need = np.log(diff_norms) - n * math.log(a)
    floor = np.nextafter((n + 1) * log_q, np.inf)
    log_delta = np.maximum(need, floor)
    valid = log_delta <= n * log_q
    if not np.any(valid):
        return None
    j = int(np.argmin(np.where(valid, log_delta, np.inf)))
    return float(np.exp(log_delta[j])), int(n[j])


def brin_consistency(
    sys: CocycleSystem,
    x,
    y,
    i: int,
    horizon: int,
    l: float,
    spectrum: SpectrumReport,
    epsilon: float,
    C_hat: float,
    field=None,
    products=None,
) -> dict:
    """Compare d(V_{<=i}(x), V_{<=i}(y)) with Brin's bound for A_n = A(x, n),
    B_n = A(y, n) on a level set with constant l.

    ``field`` may hold precomputed slow frames for (x, y) at offset 0 and
    ``products`` the matching (horizon, 2, d, d) cocycle products.
    """
    lam_lo, lam_hi, lam_top = split_rates(spectrum, i)
    lam = math.exp(lam_lo + epsilon)
    mu = math.exp(lam_hi - epsilon)
    a = max(math.exp(lam_top + epsilon) * C_hat, lam * (1 + 1e-12))
    X = np.vstack([np.asarray(x, float).reshape(1, -1), np.asarray(y, float).reshape(1, -1)])
    if field is None:
        field = splitting_field(sys, X, spectrum, horizon)
    if products is None:
        products = _cocycle_products(sys, X, horizon)
    c = spectrum.cumulative[i]
    Vx = Subspace(field.slow[0, 0][:, sys.d - c:])
    Vy = Subspace(field.slow[0, 1][:, sys.d - c:])
    observed = subspace_distance(Vx, Vy)
    diffs = np.linalg.norm(products[:, 0] - products[:, 1], 2, axis=(-2, -1))
    picked = select_delta(diffs, lam, a)
    if picked is None:
        raise PairTooFar("no (delta, n) certifies this pair within the horizon")
    delta, n = picked
    bound = brin_bound(BrinParams(C=l, lam=lam, mu_rate=mu, a=a, d=l, delta_pair=delta))
    return {"observed": observed, "bound": bound, "ok": bool(observed <= 2 * bound),
            "delta": delta, "n": n}


def cocycle_holder_check(sys: CocycleSystem, pairs, n_max: int, L: float | None = None):
    """Empirical (C_hat, nu_hat) with |A(x,n) - A(y,n)| <= C_hat^n rho^nu_hat.

    nu_hat is the declared generator exponent lowered to the smallest
    per-n log-log slope when the data decay more slowly; C_hat is the
    smallest value >= 1 making the inequality hold for all pairs and
    1 <= n <= n_max.
    """
    X = np.array([np.atleast_1d(np.asarray(p[0], float)) for p in pairs])
    Y = np.array([np.atleast_1d(np.asarray(p[1], float)) for p in pairs])
    rho = sys.rho(X, Y)
    if np.any(rho <= 0) or np.any(rho > 0.1):
        raise ValueError("pairs need 0 < rho <= 0.1")
    PX = _cocycle_products(sys, X, n_max)
    PY = _cocycle_products(sys, Y, n_max)
    nx = np.linalg.norm(PX, 2, axis=(-2, -1))
    ny = np.linalg.norm(PY, 2, axis=(-2, -1))
    if L is None:
        mats = sys.matrices(np.concatenate([orbit(sys, X, 0, n_max - 1), orbit(sys, Y, 0, n_max - 1)], axis=1))
        L = max(1.0, float(np.max(np.linalg.norm(mats, 2, axis=(-2, -1)))))
    n = np.arange(1, n_max + 1)[:, None]
    with np.errstate(over="ignore"):
        cap = float(L) ** n * (1 + 1e-9)
    if not (np.all(nx <= cap) and np.all(ny <= cap)):
        raise HypothesisFail(f"|A(x, n)| <= L^n fails with L={L}")
    diff = np.linalg.norm(PX - PY, 2, axis=(-2, -1))
    nu = float(sys.gen.holder_exp)
    if not np.any(diff > 0):
        return 1.0, nu
    log_rho = np.log(rho)
    for row in diff:
        pos = row > 0
        if np.count_nonzero(pos) >= 3 and np.ptp(log_rho[pos]) > 0:
            slope = np.polyfit(log_rho[pos], np.log(row[pos]), 1)[0]
            nu = min(nu, float(slope))
    nu = max(nu, 1e-6)
    with np.errstate(divide="ignore"):
        per_n = np.max(np.log(diff) - nu * log_rho, axis=1) / n[:, 0]
    return float(max(1.0, math.exp(np.max(per_n)))), nu
