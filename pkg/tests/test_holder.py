import math

import numpy as np
import pytest

from oseledets import (
    BrinParams,
    Subspace,
    brin_bound,
    brin_consistency,
    build_lambda_set,
    choose_level,
    cocycle_holder_check,
    default_epsilon,
    estimate_holder,
    intersect_lambda_sets,
    lyapunov_spectrum,
    make_builtin,
    regularity_profiles,
)
from oseledets.errors import BadRates, HypothesisFail, PairTooFar, TooFewPairs, Unreachable, ZeroDistances
from oseledets.holder import (
    HOLDER_COLUMNS,
    brin_exponent,
    collect_pairs,
    holder_row,
    pair_distances,
    pairs_csv,
    select_delta,
    stratified_subsample,
)
from oseledets.regularity import RegularityProfile


def profile(x, level, i=1, eps=0.1):
    return RegularityProfile((float(x),), i, eps, level, 1.0, level, level, level, 0, 100)


def line_at(theta):
    return Subspace(np.array([[math.cos(theta)], [math.sin(theta)]]))


def sin_metric(x, y):
    # rho = sin^2 |x - y|, so lines at angles x, y sit at distance rho^0.5
    return np.sin(np.abs(x - y)[..., 0]) ** 2


# --- level sets ----------------------------------------------------------------


@pytest.fixture(scope="module")
def synthetic_profiles():
    levels = np.exp(np.random.default_rng(0).uniform(0, 3, 200))
    return [profile(k / 200, v) for k, v in enumerate(levels)]


def test_level_extremes(synthetic_profiles):
    assert build_lambda_set(synthetic_profiles, 1e12).empirical_measure == 1.0
    assert build_lambda_set(synthetic_profiles, 0.5).empirical_measure == 0.0
    mid = build_lambda_set(synthetic_profiles, 5.0).empirical_measure
    assert 0 < mid < 1


def test_measure_monotone_in_level(synthetic_profiles):
    grid = np.linspace(1, 25, 30)
    mu = [build_lambda_set(synthetic_profiles, l).empirical_measure for l in grid]
    assert all(a <= b for a, b in zip(mu, mu[1:]))


def test_member_constants_respect_level(synthetic_profiles):
    S = build_lambda_set(synthetic_profiles, 4.0)
    assert all(max(p.C_upper, p.C_tilde, p.K_direct) <= 4.0 for p in S.members)
    assert S.points.shape == (len(S.members), 1)


def test_mixed_profiles_rejected():
    with pytest.raises(ValueError):
        build_lambda_set([profile(0.1, 1.0, i=1), profile(0.2, 1.0, i=2)], 2.0)


def test_choose_level_small_constants():
    profs = [profile(k / 10, 1 + 2 * k / 10) for k in range(11)]
    assert choose_level(profs, 0.05) == 3


def test_choose_level_keeps_one_sample(synthetic_profiles):
    l = choose_level(synthetic_profiles, 0.999)
    assert build_lambda_set(synthetic_profiles, l).empirical_measure > 0.001
    assert build_lambda_set(synthetic_profiles, l - 1).empirical_measure <= 0.001


def test_choose_level_is_stable_across_seeds():
    sys_ = make_builtin("rotation_triangular")
    sp = lyapunov_spectrum(sys_, [0.3], 500)
    levels = [choose_level(regularity_profiles(sys_, sys_.sample(40, s), 1, 0.1, 150, sp), 0.1) for s in (0, 1)]
    assert abs(levels[0] - levels[1]) <= 2


def test_choose_level_unreachable():
    with pytest.raises(Unreachable):
        choose_level([profile(0.0, 1e13)], 0.5)
    with pytest.raises(ValueError):
        choose_level([profile(0.0, 1.0)], 1.0)


def test_intersection(synthetic_profiles):
    a = build_lambda_set(synthetic_profiles, 6.0, 0.1)
    b = build_lambda_set(synthetic_profiles[::2], 6.0, 0.05)
    both = intersect_lambda_sets(a, b)
    keep = {p.point for p in b.members}
    assert [p.point for p in both.members] == [p.point for p in a.members if p.point in keep]
    assert both.delta == pytest.approx(0.15)
    assert both.empirical_measure <= a.empirical_measure


# --- power-law fit -------------------------------------------------------------------


def test_synthetic_square_root_field():
    x = np.linspace(0.0, 0.3, 120)
    est = estimate_holder([(v, line_at(v)) for v in x], metric=sin_metric, eps0=0.05)
    assert est.beta == pytest.approx(0.5, abs=1e-6)
    assert est.r2 >= 0.999999
    assert est.L_const == pytest.approx(1.0, rel=1e-6)


def test_constant_field_is_flagged():
    x = np.linspace(0.0, 0.5, 80)
    samples = [(v, line_at(0.2)) for v in x]
    est = estimate_holder(samples, eps0=0.05)
    assert est.zero_distances and est.beta == 1.0 and est.L_const == 1e-12
    with pytest.raises(ZeroDistances):
        estimate_holder(samples, eps0=0.05, strict=True)


def test_too_few_pairs():
    samples = [(v, line_at(v)) for v in np.linspace(0.0, 0.9, 10)]
    with pytest.raises(TooFewPairs):
        estimate_holder(samples, eps0=0.05)


def test_pair_cap_keeps_small_distances():
    rho = np.geomspace(1e-6, 1e-1, 5000) * np.random.default_rng(1).uniform(0.5, 1, 5000)
    keep = stratified_subsample(rho, 500)
    assert len(keep) <= 500
    assert np.array_equal(keep, np.unique(keep))
    # the smallest decade keeps at least its original share
    assert np.mean(rho[keep] < 1e-5) >= np.mean(rho < 1e-5)


def test_complement_transfer_bitwise():
    rng = np.random.default_rng(2)
    spaces = [line_at(t) for t in rng.uniform(0, math.pi, 40)]
    iu, ju = np.triu_indices(40, k=1)
    direct = pair_distances(spaces, iu, ju)
    dual = pair_distances([S.complement for S in spaces], iu, ju)
    assert np.array_equal(direct, dual)


def test_csv_and_row_layout():
    x = np.linspace(0.0, 0.3, 40)
    samples = [(v, line_at(v)) for v in x]
    table = collect_pairs(samples, metric=sin_metric, eps0=0.05)
    lines = pairs_csv(table, 2).strip().splitlines()
    assert lines[0] == "x,y,rho,d_subspace,i"
    assert len(lines) == len(table.rho) + 1
    assert lines[1].endswith(",2")
    est = estimate_holder(samples, metric=sin_metric, eps0=0.05)
    assert list(holder_row(2, 3, 0.1, est)) == HOLDER_COLUMNS


# --- Brin's lemma ---------------------------------------------------------------------


def test_brin_example():
    p = BrinParams(C=1.0, lam=0.5, mu_rate=2.0, a=4.0, d=2.0, delta_pair=0.01)
    assert brin_bound(p) == pytest.approx(16 * 0.01 ** (math.log(4) / math.log(8)), rel=1e-12)
    assert brin_bound(p) == pytest.approx(0.74266, abs=1e-5)


def test_brin_delta_one():
    p = BrinParams(C=1.5, lam=0.5, mu_rate=2.0, a=4.0, d=3.0, delta_pair=1.0)
    assert brin_bound(p) == pytest.approx(5 * 1.5**2 * 4)


def test_brin_quadratic_in_c():
    p = BrinParams(C=1.0, lam=0.3, mu_rate=1.2, a=3.0, d=2.0, delta_pair=0.05)
    q = BrinParams(C=2.0, lam=0.3, mu_rate=1.2, a=3.0, d=2.0, delta_pair=0.05)
    assert brin_bound(q) == pytest.approx(4 * brin_bound(p))


@pytest.mark.parametrize("lam, mu, a", [(2.0, 1.0, 4.0), (0.0, 1.0, 4.0), (0.5, 2.0, 0.4)])
def test_brin_bad_rates(lam, mu, a):
    with pytest.raises(BadRates):
        brin_bound(BrinParams(1.0, lam, mu, a, 2.0, 0.1))


def test_brin_exponent_in_unit_interval():
    assert 0 < brin_exponent(0.5, 2.0, 4.0) < 1


def test_select_delta_constraints():
    lam, a = 0.5, 4.0
    diffs = 1e-4 * 4.0 ** np.arange(1, 30)
    delta, n = select_delta(diffs, lam, a)
    q = lam / a
    assert q ** (n + 1) < delta <= q**n * (1 + 1e-12)
    assert diffs[n - 1] <= delta * a**n * (1 + 1e-12)
    assert select_delta(np.full(5, 1e6), lam, a) is None


@pytest.fixture(scope="module")
def tri_spectrum():
    sys_ = make_builtin("rotation_triangular")
    return sys_, lyapunov_spectrum(sys_, [0.3], 1000)


def test_brin_identical_points(tri_spectrum):
    sys_, sp = tri_spectrum
    rep = brin_consistency(sys_, [0.3], [0.3], 1, 100, 3.0, sp, 0.1, 2.0)
    assert rep["observed"] == 0.0 and rep["ok"]


def test_brin_constant_cocycle():
    sys_ = make_builtin("constant", {"A": [[2.0, 1.0], [0.0, 0.5]]})
    sp = lyapunov_spectrum(sys_, [0.0], 200)
    rep = brin_consistency(sys_, [0.0], [0.0], 1, 50, 2.0, sp, 0.1, 1.0)
    assert rep["observed"] == 0.0 and rep["ok"]


def test_brin_close_pair(tri_spectrum):
    sys_, sp = tri_spectrum
    rep = brin_consistency(sys_, [0.3], [0.3 + 1e-4], 1, 200, 3.0, sp, 0.1, 2.0)
    assert rep["ok"] and rep["n"] >= 1


def test_brin_pair_too_far(tri_spectrum):
    sys_, sp = tri_spectrum
    with pytest.raises(PairTooFar):
        brin_consistency(sys_, [0.0], [0.5], 1, 1, 3.0, sp, 0.1, 1.0)


# --- cocycle Hoelder check --------------------------------------------------------------


def near_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    return [((a,), ((a + h) % 1.0,)) for a, h in zip(x, np.geomspace(1e-5, 5e-2, n))]


def test_constant_cocycle_check():
    # the point base is the identity with the torus metric, so distinct
    # coordinates still give rho > 0 while A never changes
    sys_ = make_builtin("constant", {"A": [[2.0, 0.0], [0.0, 0.5]]})
    assert cocycle_holder_check(sys_, near_pairs(20), 10) == (1.0, sys_.gen.holder_exp)


def test_single_step_matches_declared_constant():
    sys_ = make_builtin("rotation_triangular")
    C_hat, nu_hat = cocycle_holder_check(sys_, near_pairs(200), 1)
    assert nu_hat == pytest.approx(sys_.gen.holder_exp)
    assert C_hat <= 1.05 * max(1.0, sys_.gen.holder_const)


def test_exponent_recovered_on_rotation():
    sys_ = make_builtin("rotation_triangular")
    C_hat, nu_hat = cocycle_holder_check(sys_, near_pairs(200, 1), 20)
    assert nu_hat >= 0.9 * sys_.gen.holder_exp
    assert C_hat >= 1.0


def test_norm_hypothesis_failure():
    sys_ = make_builtin("rotation_triangular")
    with pytest.raises(HypothesisFail):
        cocycle_holder_check(sys_, near_pairs(10), 5, L=1.0)


def test_pairs_must_be_close():
    sys_ = make_builtin("rotation_triangular")
    with pytest.raises(ValueError):
        cocycle_holder_check(sys_, [((0.1,), (0.4,))], 5)


def test_rotation_level_sets():
    sys_ = make_builtin("rotation_triangular")
    sp = lyapunov_spectrum(sys_, [0.3], 1000)
    profs = regularity_profiles(sys_, sys_.sample(200, 0), 1, default_epsilon(sp), 200, sp)
    levels = np.array([max(p.C_upper, p.C_tilde, p.K_direct) for p in profs])
    assert 0 < build_lambda_set(profs, np.median(levels)).empirical_measure < 1
    grid = np.linspace(levels.min() - 0.01, levels.max() + 0.01, 25)
    mu = [build_lambda_set(profs, l).empirical_measure for l in grid]
    assert mu[0] == 0.0 and mu[-1] == 1.0
    assert all(a <= b for a, b in zip(mu, mu[1:]))
