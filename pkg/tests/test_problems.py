import math

import numpy as np
import pytest
from scipy.optimize import minimize

from metric_splitting.driver import StopRule, iterate
from metric_splitting.exceptions import UnknownProblemError, UnsupportedMetricError
from metric_splitting.metric import Metric
from metric_splitting.operators import check_averaged, check_cocoercive, resolvent_map
from metric_splitting.pd import pd_residuals
from metric_splitting.problems import (REGISTRY, first_difference, fused_certificate, get_problem,
                                       jacobi_metric, lasso_certificate, lasso_ista, make_fused_toy,
                                       make_halfspace_pair, make_lasso, make_projection,
                                       make_prox_l1, make_quadratic_gradient, projection_schedule)


# -------------------------------------------------------------- operators

def test_prox_l1_examples():
    A = make_prox_l1(1.0, 2)
    np.testing.assert_array_equal(A.resolvent(1.0, Metric.identity(2), np.array([2.0, -0.5])),
                                  [1.0, 0.0])
    np.testing.assert_array_equal(A.resolvent(1.0, Metric.identity(2), np.zeros(2)), [0.0, 0.0])
    A = make_prox_l1(2.0, 2)
    np.testing.assert_allclose(A.resolvent(0.5, Metric.diagonal([2.0, 1.0]), np.array([3.0, 3.0])),
                               [1.0, 2.0])
    with pytest.raises(UnsupportedMetricError):
        A.resolvent(1.0, Metric.from_matrix([[2.0, 0.5], [0.5, 1.0]]), np.ones(2))
    with pytest.raises(ValueError):
        make_prox_l1(0.0, 2)


def test_prox_l1_membership():
    A = make_prox_l1(1.0, 3)
    assert A.membership([1.0, 0.0, -2.0], [1.0, 0.3, -1.0])
    assert not A.membership([1.0, 0.0, -2.0], [0.5, 0.3, -1.0])
    assert not A.membership([0.0, 0.0, 0.0], [0.0, 1.5, 0.0])


def test_projection_examples():
    Id = Metric.identity(2)
    box = make_projection("box", lo=[0, 0], hi=[1, 1])
    np.testing.assert_array_equal(box.resolvent(1.0, Id, [2.0, -1.0]), [1.0, 0.0])
    hs = make_projection("halfspace", a=[1.0, 1.0], b=1.0)
    np.testing.assert_allclose(hs.resolvent(1.0, Id, [1.0, 2.0]), [0.0, 1.0])
    np.testing.assert_array_equal(hs.resolvent(1.0, Id, [0.0, 0.0]), [0.0, 0.0])
    ball = make_projection("l2_ball", c=[0.0, 0.0], r=1.0)
    np.testing.assert_allclose(ball.resolvent(1.0, Id, [3.0, 4.0]), [0.6, 0.8])
    with pytest.raises(UnsupportedMetricError):
        hs.resolvent(1.0, Metric.diagonal([1.0, 2.0]), [1.0, 2.0])
    with pytest.raises(ValueError):
        make_projection("simplex")
    with pytest.raises(ValueError):
        make_projection("box", lo=[1.0], hi=[0.0])


@pytest.mark.parametrize("kind,params", [
    ("box", dict(lo=[-1, 0, 0], hi=[1, 2, 0.5])),
    ("halfspace", dict(a=[1.0, -2.0, 0.5], b=0.3)),
    ("l2_ball", dict(c=[1.0, 0.0, -1.0], r=0.7)),
])
def test_projection_membership_of_step(kind, params):
    A = make_projection(kind, **params)
    U = Metric.identity(3, 0.7)
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = 3 * rng.standard_normal(3)
        p = A.resolvent(1.2, U, x)
        assert A.membership(p, U.solve(x - p) / 1.2, 1e-9)
        u = U.solve(x - p) / 1.2
        if np.linalg.norm(u) > 1e-6:
            assert not A.membership(p, -u, 1e-9)


def test_quadratic_gradient_beta():
    assert make_quadratic_gradient(np.eye(3), np.zeros(3)).beta == pytest.approx(1.0)
    assert make_quadratic_gradient(2 * np.eye(3), np.zeros(3)).beta == pytest.approx(0.25)
    rng = np.random.default_rng(1)
    B = make_quadratic_gradient(rng.standard_normal((5, 8)), rng.standard_normal(5))
    assert check_cocoercive(B, samples=500).passed
    with pytest.raises(ValueError):
        make_quadratic_gradient(np.zeros((2, 2)), np.zeros(2))


def test_first_difference_adjoint():
    L = first_difference(6)
    np.testing.assert_array_equal(L.dense(), np.diff(np.eye(6), axis=0))
    assert L.adjoint_mismatch() <= 1e-14
    assert L.norm() <= 2.0


def test_jacobi_metric_normalized():
    rng = np.random.default_rng(0)
    U = jacobi_metric(rng.standard_normal((5, 20)))
    assert U.is_diagonal
    assert U.norm_ub == pytest.approx(1.0)
    assert U.alpha_lb > 0


@pytest.mark.parametrize("make", [
    lambda: make_prox_l1(0.5, 4),
    lambda: make_projection("box", lo=-np.ones(4), hi=np.ones(4)),
])
def test_zoo_resolvents_averaged(make):
    U = Metric.diagonal([0.3, 1.0, 2.0, 4.0])
    assert check_averaged(resolvent_map(make(), 0.8, U), samples=1000, tol=1e-10).passed


def test_scalar_zoo_resolvents_averaged():
    U = Metric.identity(3, 2.5)
    for A in (make_projection("halfspace", a=[1.0, 2.0, -1.0], b=0.5),
              make_projection("l2_ball", c=[0.0, 1.0, 0.0], r=2.0)):
        assert check_averaged(resolvent_map(A, 0.8, U), samples=1000, tol=1e-10).passed


# -------------------------------------------------------------- instances

def test_lasso_oracle(lasso):
    M, b = lasso.data["M"], lasso.data["b"]
    tau = lasso.params["tau"]
    assert lasso.certificate <= 1e-10
    assert lasso_certificate(M, b, tau, lasso.solution) <= 1e-10
    np.testing.assert_allclose(lasso_ista(M, b, tau), lasso.solution, atol=1e-6)


def test_lasso_edge_cases():
    big = make_lasso(seed=3, tau=1e6)
    np.testing.assert_array_equal(big.solution, np.zeros(20))
    with pytest.raises(ValueError):
        make_lasso(tau=0.0)
    with pytest.raises(ValueError):
        make_lasso(n_cols=60)


def test_lasso_deterministic():
    a, b = make_lasso(seed=42), make_lasso(seed=42)
    np.testing.assert_array_equal(a.solution, b.solution)
    np.testing.assert_array_equal(a.data["M"], b.data["M"])


def test_fused_oracle_against_scipy(fused):
    obs = fused.data["obs"]
    nu, tau = fused.params["smoothing_nu"], fused.params["tau"]

    def huber(t):
        return np.where(np.abs(t) <= tau / nu, 0.5 * nu * t ** 2, tau * np.abs(t) - 0.5 * tau ** 2 / nu)

    def f(x):
        return 0.5 * np.sum((x - obs) ** 2) + np.sum(huber(np.diff(x)))

    def g(x):
        return (x - obs) + first_difference(x.size).rmatvec(np.clip(nu * np.diff(x), -tau, tau))

    res = minimize(f, np.full(obs.size, 0.5), jac=g, method="L-BFGS-B",
                   bounds=[(0, 1)] * obs.size, options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
    np.testing.assert_allclose(res.x, fused.solution[0], atol=1e-5)
    assert fused_certificate(fused.solution[0], obs, nu, tau) <= 1e-10


def test_fused_constant_signal():
    inst = make_fused_toy(n=6, obs=np.full(6, 0.4))
    np.testing.assert_allclose(inst.solution[0], np.full(6, 0.4), atol=1e-12)
    np.testing.assert_allclose(inst.solution[1][0], 0.0, atol=1e-12)
    assert pd_residuals(inst.problem, *inst.solution).worst <= 1e-12
    with pytest.raises(ValueError):
        make_fused_toy(tau=0.0)


def test_halfspace_pair_schedule():
    inst = make_halfspace_pair()
    sched = projection_schedule(inst, epsilon=0.1)
    assert sched.lambda_at(0) == pytest.approx(1.45)
    tr = iterate(sched, np.array([1.0, 2.0]), StopRule(max_iter=100))
    assert np.all(tr.x_final <= 1e-12)
    with pytest.raises(ValueError):
        make_halfspace_pair(angle=0.0)


def test_registry():
    assert set(REGISTRY) == {"lasso", "fused_toy", "halfspace_pair"}
    assert get_problem("halfspace_pair", angle=math.pi / 4).params["angle"] == pytest.approx(math.pi / 4)
    with pytest.raises(UnknownProblemError, match="unknown problem"):
        get_problem("nope")


def test_instance_json(lasso):
    d = lasso.to_json()
    assert d["name"] == "lasso" and d["seed"] == 42 and d["dims"] == {"m_rows": 5, "n_cols": 20}
