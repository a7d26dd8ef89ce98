import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from metric_splitting.exceptions import ParameterWindowError
from metric_splitting.metric import Metric, inverse
from metric_splitting.operators import (AveragedMap, CocoerciveOp, LinearMap, StronglyMonotoneOp,
                                        averaged_margin, check_averaged, check_cocoercive,
                                        compose, compose_constants, forward_map, forward_step,
                                        inverse_resolvent_step, reflector, resolvent_map,
                                        resolvent_step, zero_gradient, zero_operator)
from metric_splitting.problems import (make_projection, make_prox_l1, make_quadratic_gradient,
                                       soft_threshold)

unit = st.floats(0.01, 0.99)


# -------------------------------------------------------------- composition

def test_compose_constants_examples():
    assert compose_constants([0.5, 0.5]) == pytest.approx(2 / 3, abs=1e-15)
    assert compose_constants([0.3]) == 0.3
    assert compose_constants([0.5, 0.5, 0.5]) == pytest.approx(0.75, abs=1e-15)


@pytest.mark.parametrize("bad", [[], [1.0, 0.5], [0.0], [0.5, 1.2]])
def test_compose_constants_rejects(bad):
    with pytest.raises(ValueError):
        compose_constants(bad)


def test_compose_constants_grid_monotone():
    grid = np.arange(0.05, 0.96, 0.05)
    for a1 in grid:
        for a2 in grid:
            phi = compose_constants([a1, a2])
            assert max(a1, a2) - 1e-15 <= phi < 1.0


@given(st.lists(unit, min_size=1, max_size=6))
def test_compose_constants_in_unit_interval(alphas):
    phi = compose_constants(alphas)
    assert max(alphas) - 1e-12 <= phi < 1.0


# -------------------------------------------------------------- steps

def test_resolvent_examples():
    Id = Metric.identity(3)
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(resolvent_step(zero_operator(3), 2.0, Id, x), x)
    A = make_prox_l1(1.0, 1)
    assert resolvent_step(A, 1.0, Metric.identity(1), [2.0])[0] == 1.0


def test_box_resolvent_is_clamp_with_membership():
    rng = np.random.default_rng(0)
    A = make_projection("box", lo=np.zeros(4), hi=np.ones(4))
    for _ in range(50):
        U = Metric.diagonal(rng.uniform(0.1, 5, 4))
        g = rng.uniform(0.1, 3)
        x = 3 * rng.standard_normal(4)
        p = resolvent_step(A, g, U, x)
        np.testing.assert_array_equal(p, np.clip(x, 0, 1))
        assert A.membership(p, U.solve(x - p) / g, 1e-10)


def test_resolvent_rejects_bad_gamma():
    with pytest.raises(ParameterWindowError):
        resolvent_step(zero_operator(1), 0.0, Metric.identity(1), [1.0])


def test_prox_l1_matches_brute_force():
    rng = np.random.default_rng(4)
    tau = 0.7
    A = make_prox_l1(tau, 6)
    x = 2 * rng.standard_normal(6)
    p = resolvent_step(A, 1.0, Metric.identity(6), x)
    for k in range(6):
        res = minimize_scalar(lambda t: 0.5 * (t - x[k]) ** 2 + tau * abs(t),
                              bounds=(-10, 10), method="bounded", options={"xatol": 1e-10})
        assert abs(res.x - p[k]) <= 1e-6


def test_forward_examples():
    x = np.array([2.0, -2.0])
    Id = Metric.identity(2)
    np.testing.assert_array_equal(forward_step(zero_gradient(2), 1.0, Id, x), x)
    B = CocoerciveOp(2, lambda y: y, 1.0)
    np.testing.assert_array_equal(forward_step(B, 1.0, Id, x), [0.0, 0.0])
    with pytest.raises(ParameterWindowError, match="forward step window"):
        forward_step(B, 2.5, Id, x)
    # the boundary gamma = 2 beta / ||U|| is allowed
    forward_step(B, 2.0, Id, x)


def test_forward_step_averaged_on_random_pairs():
    rng = np.random.default_rng(42)
    M = rng.standard_normal((5, 20))
    B = make_quadratic_gradient(M, rng.standard_normal(5))
    U = Metric.diagonal(rng.uniform(0.5, 2, 20))
    gamma = 1.5 * B.beta / U.norm_ub
    T = forward_map(B, gamma, U)
    assert T.alpha == pytest.approx(gamma * U.norm_ub / (2 * B.beta))
    assert check_averaged(T, samples=200).passed


def test_inverse_resolvent_moreau_fallback():
    rng = np.random.default_rng(2)
    A = make_prox_l1(0.8, 5)
    U = Metric.diagonal(rng.uniform(0.5, 2.0, 5))
    stripped = type(A)(A.dim, A.resolvent, A.membership, None, "l1")
    for _ in range(20):
        v = 2 * rng.standard_normal(5)
        np.testing.assert_allclose(inverse_resolvent_step(stripped, 1.3, U, v),
                                   np.clip(v, -0.8, 0.8), atol=1e-12)


# -------------------------------------------------------------- property checks

def test_check_averaged_examples():
    Id1 = Metric.identity(1)
    assert check_averaged(AveragedMap(1, lambda x: x, 0.5, Id1)).passed
    flip = check_averaged(AveragedMap(1, lambda x: -x, 0.5, Id1))
    assert not flip.passed and flip.worst_margin < -1.0


def test_check_averaged_resolvent():
    rng = np.random.default_rng(3)
    U = Metric.diagonal(rng.uniform(0.2, 3.0, 6))
    T = resolvent_map(make_prox_l1(0.5, 6), 0.9, U)
    assert check_averaged(T, samples=1000, tol=1e-10).passed


def test_check_cocoercive_examples():
    assert check_cocoercive(zero_gradient(3)).passed
    assert not check_cocoercive(CocoerciveOp(3, lambda x: x, 2.0)).passed
    rng = np.random.default_rng(42)
    B = make_quadratic_gradient(rng.standard_normal((5, 20)), rng.standard_normal(5))
    assert check_cocoercive(B, samples=500).passed


def test_strongly_monotone_inverse_is_cocoercive():
    D = StronglyMonotoneOp(4, lambda v: v / 3.0, 3.0)
    assert check_cocoercive(D.as_cocoercive()).passed
    wrong = StronglyMonotoneOp(4, lambda v: v / 3.0, 4.0)
    assert not check_cocoercive(wrong.as_cocoercive()).passed


@given(st.integers(0, 10_000), st.floats(0.05, 1.95))
def test_fb_composition_averaged(seed, t):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((3, 5))
    B = make_quadratic_gradient(M, rng.standard_normal(3))
    U = Metric.diagonal(rng.uniform(0.3, 3.0, 5))
    gamma = t * B.beta / U.norm_ub
    A = make_projection("box", lo=-np.ones(5), hi=np.ones(5))
    T = compose([resolvent_map(A, gamma, U), forward_map(B, gamma, U)])
    assert T.alpha == pytest.approx(compose_constants([0.5, t / 2]), rel=1e-14)
    assert check_averaged(T, samples=100, rng_seed=seed).passed


@given(st.integers(0, 10_000))
def test_reflector_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    U = Metric.diagonal(rng.uniform(0.3, 3.0, 4))
    T = resolvent_map(make_prox_l1(rng.uniform(0.1, 2), 4), rng.uniform(0.1, 2), U)
    R = reflector(T)
    assert R.alpha == 1.0
    X, Y = rng.standard_normal((2, 30, 4)) * 3
    for x, y in zip(X, Y):
        assert U.inv_norm(R(x) - R(y)) <= U.inv_norm(x - y) * (1 + 1e-12) + 1e-12


def test_averaged_margin_uses_inverse_metric():
    # J_{U A} for A = N_{[0,1]} is firmly nonexpansive in the U^{-1} norm
    U = Metric.diagonal([0.1, 10.0])
    T = resolvent_map(make_projection("box", lo=[0, 0], hi=[1, 1]), 1.0, U)
    x, y = np.array([3.0, -2.0]), np.array([-1.0, 0.5])
    assert averaged_margin(T, x, y) >= -1e-12


# -------------------------------------------------------------- linear maps

def test_linear_map_adjoint():
    rng = np.random.default_rng(0)
    K = rng.standard_normal((3, 5))
    L = LinearMap.from_matrix(K)
    assert L.adjoint_mismatch() <= 1e-12
    bad = LinearMap((3, 5), L.matvec, lambda v: L.rmatvec(v) + 1e-3 * rng.standard_normal(5))
    assert bad.adjoint_mismatch() > 1e-6
    np.testing.assert_allclose(L.dense(), K, atol=1e-15)
    assert L.norm() == pytest.approx(np.linalg.norm(L.dense(), 2))
