import json

import numpy as np
import pytest

from oseledets import (
    adjoint_cocycle,
    compose,
    make_builtin,
    orbit,
    system_from_dict,
    torus_metric,
)
from oseledets.cocycle import GOLDEN, log_norm_mean, parse_matrix
from oseledets.errors import BadParams, NonFiniteMatrix, UnknownSystem

BUILTINS = ["constant", "rotation_triangular", "rotation_stochastic", "cat_rank_deficient", "cat_generic"]


@pytest.fixture(params=BUILTINS)
def system(request):
    return make_builtin(request.param, seed=3)


def rel_err(A, B):
    return np.linalg.norm(A - B) / max(np.linalg.norm(A), 1e-300)


# --- base systems -------------------------------------------------------------


def test_forward_backward_roundtrip(system):
    pts = system.sample(1000, 0)
    back = system.base.backward(system.base.forward(pts))
    assert np.max(torus_metric(back, pts)) <= 1e-12


def test_metric_axioms(system):
    x, y, z = (system.sample(1000, s) for s in (0, 1, 2))
    assert np.array_equal(system.rho(x, y), system.rho(y, x))
    assert np.all(system.rho(x, x) == 0)
    assert np.all(system.rho(x, z) <= system.rho(x, y) + system.rho(y, z) + 1e-12)


def test_lipschitz_constant_is_honest(system):
    x = system.sample(10_000, 0)
    rng = np.random.default_rng(1)
    y = (x + 0.05 * rng.standard_normal(x.shape)) % 1.0
    before = system.rho(x, y)
    after = system.rho(system.step(x), system.step(y))
    assert np.all(after <= system.base.lipschitz_const * before + 1e-12)


def test_holder_data_is_honest(system):
    if system.label == "constant":
        pytest.skip("a point base has no distinct pairs")
    x = system.sample(1000, 0)
    rng = np.random.default_rng(2)
    y = (x + 1e-3 * rng.standard_normal(x.shape)) % 1.0
    diff = np.linalg.norm(system.matrices(x) - system.matrices(y), 2, axis=(-2, -1))
    bound = system.gen.holder_const * system.rho(x, y) ** system.gen.holder_exp
    assert np.all(diff <= 1.05 * bound)


@pytest.mark.parametrize("name", BUILTINS)
def test_integrability_proxy_is_stable(name):
    # Monte Carlo noise of the mean is close to 1% on rotation_stochastic
    system = make_builtin(name)
    a, b = log_norm_mean(system, 10_000, 0), log_norm_mean(system, 10_000, 1)
    assert np.isfinite(a) and np.isfinite(b)
    assert abs(a - b) <= 0.01 * max(abs(a), abs(b), 1e-12) or abs(a - b) < 1e-12


# --- compose / adjoint ------------------------------------------------------------


def test_compose_zero_is_identity(system):
    x = system.sample(1, 0)[0]
    assert np.array_equal(compose(system, x, 0), np.eye(system.d))


def test_constant_power():
    sys_ = make_builtin("constant", {"A": [[2, 0], [0, 0.5]]})
    np.testing.assert_allclose(compose(sys_, [0.0], 3), np.diag([8.0, 0.125]))


def test_rotation_triangular_product_oracle():
    sys_ = make_builtin("rotation_triangular")
    expected = np.eye(2)
    for m in range(5):
        t = 2 * np.pi * ((m * GOLDEN) % 1.0)
        A = np.array([[1.5 + 0.4 * np.sin(t), 0.3 * np.cos(t)], [0.0, 0.5 + 0.1 * np.cos(t)]])
        expected = A @ expected
    assert np.max(np.abs(compose(sys_, [0.0], 5) - expected)) <= 1e-12


def test_cocycle_property(system):
    rng = np.random.default_rng(4)
    for _ in range(500 // len(BUILTINS)):
        x = system.sample(1, int(rng.integers(0, 1000)))[0]
        n = int(rng.integers(0, 21))
        m = int(rng.integers(0, 41 - n))
        full = compose(system, x, n + m)
        split = compose(system, system.step(x, n), m) @ compose(system, x, n)
        assert np.linalg.norm(full - split) <= 1e-8 * max(np.linalg.norm(full), 1e-300) + 1e-300


def backward_product(system, x, n):
    # A(f^-n x, n) along the backward orbit of x; iterating forward from
    # f^-n x instead would amplify round-off by the base expansion
    pts = orbit(system, x, n, 0)[:-1]
    out = np.eye(system.d)
    for A in system.matrices(pts):
        out = A @ out
    return out


def test_adjoint_identity(system):
    adj = adjoint_cocycle(system)
    for n in (1, 4, 17, 40):
        x = system.sample(1, n)[0]
        lhs = compose(adj, x, n)
        rhs = backward_product(system, x, n).T
        if np.linalg.norm(rhs) == 0:
            assert np.linalg.norm(lhs) == 0
        else:
            assert rel_err(rhs, lhs) <= 1e-10


def test_adjoint_examples():
    A = np.array([[2.0, 1.0], [0.0, 0.5]])
    sys_ = make_builtin("constant", {"A": A})
    np.testing.assert_array_equal(adjoint_cocycle(sys_).matrix([0.0]), A.T)
    tri = make_builtin("rotation_triangular")
    adj = adjoint_cocycle(tri)
    x = np.array([0.3])
    np.testing.assert_allclose(adj.matrix(x), tri.matrix(tri.step(x, -1)).T, atol=1e-15)
    assert rel_err(compose(tri, tri.step(x, -4), 4).T, compose(adj, x, 4)) <= 1e-12
    assert adjoint_cocycle(adj) is tri


def test_compose_overflow():
    sys_ = make_builtin("constant", {"A": [[1e10, 0], [0, 1]]})
    with pytest.raises(NonFiniteMatrix):
        compose(sys_, [0.0], 40)


# --- orbit -----------------------------------------------------------------------


def test_orbit_examples():
    rot = make_builtin("rotation_triangular")
    pts = orbit(rot, [0.0], 0, 2)
    np.testing.assert_allclose(pts[:, 0], [0.0, GOLDEN % 1.0, (2 * GOLDEN) % 1.0], atol=1e-15)
    cat = make_builtin("cat_generic")
    seg = orbit(cat, [0.2, 0.3], 1, 0)
    assert torus_metric(cat.step(seg[0]), [0.2, 0.3]) <= 1e-12
    assert orbit(cat, [0.2, 0.3]).shape == (1, 2)


def test_orbit_consecutive(system):
    seg = orbit(system, system.sample(4, 0), 3, 5)
    assert seg.shape == (9, 4, system.k)
    assert np.max(torus_metric(system.step(seg[:-1]), seg[1:])) <= 1e-12


# --- built-ins ----------------------------------------------------------------------


def test_constant_generator_is_constant():
    sys_ = make_builtin("constant", {"A": [[2, 0], [0, 0.5]]})
    mats = sys_.matrices(np.random.default_rng(0).random((10, 1)))
    assert np.all(mats == np.diag([2.0, 0.5]))


def test_stochastic_column_sums():
    sys_ = make_builtin("rotation_stochastic")
    mats = sys_.matrices(sys_.sample(1000, 0))
    assert np.all(mats.sum(axis=-2) == 1.0)
    assert np.all(mats >= 0)


def test_rank_deficient_has_rank_one():
    sys_ = make_builtin("cat_rank_deficient")
    s = np.linalg.svd(sys_.matrices(sys_.sample(1000, 0)), compute_uv=False)
    assert np.all(s[:, 1] < 1e-14)
    assert np.allclose(s[:, 0], 2.0)


def test_target_rates_rescaling():
    from oseledets.cocycle import log_mean_sin

    sys_ = make_builtin("rotation_triangular", {"target_rates": [-0.4, 0.4]})
    u = (np.arange(200_000) + 0.5) / 200_000
    mats = sys_.matrices(u[:, None])
    assert np.mean(np.log(mats[:, 0, 0])) == pytest.approx(0.4, abs=1e-9)
    assert np.mean(np.log(mats[:, 1, 1])) == pytest.approx(-0.4, abs=1e-9)
    assert log_mean_sin(1.5, 0.4) == pytest.approx(np.mean(np.log(1.5 + 0.4 * np.sin(2 * np.pi * u))), abs=1e-9)


def test_unknown_system_and_params():
    with pytest.raises(UnknownSystem):
        make_builtin("henon")
    with pytest.raises(BadParams):
        make_builtin("rotation_triangular", {"beta": 1})
    with pytest.raises(BadParams):
        parse_matrix("1,2;3")


def test_parse_matrix_forms():
    np.testing.assert_array_equal(parse_matrix("2,0;0,0.5"), np.diag([2.0, 0.5]))
    np.testing.assert_array_equal(parse_matrix([[1, 2], [3, 4]]), [[1.0, 2.0], [3.0, 4.0]])


def test_sampler_streams_are_deterministic():
    a = make_builtin("cat_generic", seed=7)
    b = make_builtin("cat_generic", seed=7)
    assert np.array_equal(a.sample(5, 2), b.sample(5, 2))
    assert not np.array_equal(a.sample(5, 2), a.sample(5, 3))


def test_json_roundtrip():
    sys_ = make_builtin("rotation_triangular", {"target_rates": [-0.4, 0.4]}, seed=5)
    again = system_from_dict(json.loads(sys_.to_json()))
    x = sys_.sample(10, 0)
    assert np.array_equal(again.matrices(x), sys_.matrices(x))
    adj = system_from_dict(dict(sys_.to_dict(), adjoint=True))
    assert np.array_equal(adj.matrices(x), adjoint_cocycle(sys_).matrices(x))
