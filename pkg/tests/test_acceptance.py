"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
"""

import json
import math
import time

import numpy as np
import pytest

from metric_splitting.cli import main as cli_main
from metric_splitting.driver import StopRule, fejer_monitor, iterate, summability_monitor
from metric_splitting.fb import FBParams, fb_phi, solve_fb, solve_fb_extended, validate_fb_params
from metric_splitting.metric import (Metric, MetricSequence, inverse, loewner_geq, validate_sequence)
from metric_splitting.operators import (check_averaged, compose_constants, forward_map,
                                        resolvent_map)
from metric_splitting.pd import PDParams, ProductSpace, pd_parameters, solve_pd
from metric_splitting.problems import (jacobi_metric, make_fused_toy, make_halfspace_pair,
                                       make_lasso, make_projection, make_prox_l1,
                                       make_quadratic_gradient, projection_schedule)


def verdict(k, what, ok, elapsed=None, budget=None, detail=""):
    timed = budget is None or elapsed < budget
    status = "PASS" if ok and timed else "FAIL"
    clock = "" if budget is None else f" [{elapsed:.2f}s / {budget:g}s]"
    print(f"\n{status} criterion {k}: {what}{clock} {detail}".rstrip())
    assert ok, detail
    assert timed, f"runtime {elapsed:.2f}s over budget {budget}s"


# ---------------------------------------------------------------- shared runs

def run_wedge(angle):
    inst = make_halfspace_pair(angle)
    sched = projection_schedule(inst, epsilon=0.1, lam="top")
    return iterate(sched, np.array([3.0, 1.0]), StopRule(tol=0.0, max_iter=1500),
                   reference=inst.solution)


def fb_runs(lasso):
    P = lasso.problem
    stop = StopRule(tol=1e-13, max_iter=100_000)
    rng = np.random.default_rng(1)
    ua, ub = rng.standard_normal(20), rng.standard_normal(20)
    configs = {
        "a": FBParams(Metric.identity(20), P.beta, 1.0),
        "b": FBParams(jacobi_metric(lasso.data["M"]), P.beta, "top"),
        "c": FBParams(Metric.identity(20), P.beta, 1.0, a=lambda n: 0.5 ** n * ua,
                      b=lambda n: 0.5 ** n * ub, error_budget=[10.0, 10.0]),
    }
    return {k: solve_fb(P, p, np.zeros(20), stop) for k, p in configs.items()}


def extended_run(lasso):
    P = lasso.problem
    params = FBParams(Metric.identity(20), 2.99 * P.beta, 0.5, epsilon=0.005, mode="extended_step")
    return params, solve_fb_extended(P, params, np.zeros(20), StopRule(tol=1e-13, max_iter=100_000))


def pd_run(fused, max_iter=100_000):
    params = PDParams(Metric.identity(12, 0.35), [Metric.identity(11, 0.35)],
                      zeta_variant="delta_numerator")
    return params, solve_pd(fused.problem, params, np.zeros(12), None,
                            StopRule(tol=1e-12, max_iter=max_iter))


# ---------------------------------------------------------------- criteria

def test_criterion_1_averagedness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    U = Metric.diagonal(rng.uniform(0.3, 2.0, 6))
    Us = Metric.identity(6, 1.7)
    worst = math.inf
    maps = [resolvent_map(make_prox_l1(0.5, 6), 0.9, U),
            resolvent_map(make_projection("box", lo=-np.ones(6), hi=np.ones(6)), 1.3, U),
            resolvent_map(make_projection("halfspace", a=rng.standard_normal(6), b=0.2), 1.0, Us),
            resolvent_map(make_projection("l2_ball", c=np.zeros(6), r=1.0), 1.0, Us)]
    B = make_quadratic_gradient(rng.standard_normal((4, 6)), rng.standard_normal(4))
    for frac in (0.2, 0.6, 0.99):
        T = forward_map(B, frac * 2 * B.beta / U.norm_ub, U)
        assert T.alpha == pytest.approx(frac)
        maps.append(T)
    ok = True
    for T in maps:
        rep = check_averaged(T, samples=1000, tol=1e-9, rng_seed=3)
        if T.name.startswith("J"):
            ok &= T.alpha == 0.5
        ok &= rep.passed
        worst = min(worst, rep.worst_margin)
    verdict(1, "resolvent and forward steps averaged on 1000 samples", ok,
            time.perf_counter() - t0, 5, f"worst margin {worst:.3e}")


def test_criterion_2_composition_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for beta in np.linspace(0.05, 5.0, 50):
        for t in np.linspace(0.01, 0.99, 50):
            u = 1.3
            gamma = t * 2 * beta / u
            gap = abs(fb_phi(gamma, u, beta) - compose_constants([0.5, gamma * u / (2 * beta)]))
            worst = max(worst, gap)
    verdict(2, "fb_phi equals folded composition constant on 50x50 grid", worst <= 1e-14,
            time.perf_counter() - t0, 1, f"max gap {worst:.2e}")


def test_criterion_3_driver_monitors():
    t0 = time.perf_counter()
    quad = iterate(projection_schedule(make_halfspace_pair(math.pi / 2), epsilon=0.1),
                   np.array([1.0, 1.0]), StopRule(tol=-1.0, max_iter=200), reference=np.zeros(2))
    wedge = run_wedge(0.3)
    lines = []
    ok = True
    for name, tr in (("quadrant", quad), ("wedge", wedge)):
        lam = tr.records[0].lam
        mon = summability_monitor(tr, window=100, tol=1e-10)
        fm = fejer_monitor(tr)
        ok &= lam == pytest.approx(1.45) and mon.cauchy
        ok &= fm.worst_step <= 1e-10 and fm.worst_perturbed <= 1e-10
        ok &= bool(np.all(tr.x_final <= 1e-8))
        lines.append(f"{name}: tail {mon.tail_increment:.1e}, fejer {fm.worst_step:.1e}")
    verdict(3, "summands Cauchy and quasi-Fejer at lambda=1.45", ok,
            time.perf_counter() - t0, 5, "; ".join(lines))


def test_criterion_4_fb_oracle(lasso):
    t0 = time.perf_counter()
    runs = fb_runs(lasso)
    dist = {k: float(np.max(np.abs(r.x_final - lasso.solution))) for k, r in runs.items()}
    iters = {k: r.iterations for k, r in runs.items()}
    ok = all(d <= 1e-6 for d in dist.values()) and all(n <= 100_000 for n in iters.values())
    verdict(4, "lasso FB configurations a, b, c reach the oracle", ok, time.perf_counter() - t0, 30,
            ", ".join(f"{k}: {dist[k]:.1e} in {iters[k]}" for k in runs))


def test_criterion_5_extended_step(lasso, tmp_path, capsys):
    t0 = time.perf_counter()
    params, res = extended_run(lasso)
    rep = validate_fb_params(lasso.problem, params)
    phi = rep.data["phi_0"]
    dist = float(np.max(np.abs(res.x_final - lasso.solution)))
    spec = {"schema_version": 1, "solver": "fb", "problem": {"name": "lasso", "seed": 42},
            "params": {"gamma_over_beta": 2.99, "lambda": 1.0}, "output": str(tmp_path / "ctl")}
    path = tmp_path / "control.json"
    path.write_text(json.dumps(spec))
    code = cli_main(["run", str(path)])
    err = capsys.readouterr().err
    ok = (rep.passed and phi == pytest.approx(1 / 1.01, abs=1e-14) and phi <= 1 - 0.005
          and dist <= 1e-6 and code == 2 and "gamma window" in err)
    verdict(5, "gamma=2.99 beta, mu=1/2 converges; overrelaxed control exits 2", ok,
            time.perf_counter() - t0, 30, f"phi {phi:.12f}, dist {dist:.1e}, control exit {code}")


def test_criterion_6_product_space(fused):
    t0 = time.perf_counter()
    params, _ = pd_run(fused, max_iter=1)
    P = fused.problem
    U, Us = params.metrics_at(0)
    ps = ProductSpace(P, U, Us)
    rng = np.random.default_rng(11)
    worst = 0.0
    for k in range(10):
        x0 = 2 * rng.random(12) - 0.5
        v0 = [rng.standard_normal(11)]
        res = solve_pd(P, params, x0, v0, StopRule(tol=0.0, max_iter=1))
        rec = res.trace.records[0]
        gaps = ps.membership_gaps(rec.x, rec.y)
        worst = max(worst, max(gaps.values()))
        ok_step = np.allclose(ps.step(rec.x), rec.y, atol=1e-12, rtol=0)
        if not ok_step:
            worst = math.inf
    verdict(6, "one pd iteration satisfies resolvent membership at 10 iterates", worst <= 1e-10,
            time.perf_counter() - t0, 5, f"worst gap {worst:.1e}")


def test_criterion_7_pd_convergence(fused):
    t0 = time.perf_counter()
    params, res = pd_run(fused)
    pars = pd_parameters(fused.problem, params)
    kkt = res.residuals()
    dist = float(np.max(np.abs(res.x_final - fused.solution[0])))
    ok = (res.report.passed and kkt.primal < 1e-6 and max(kkt.dual) < 1e-6 and dist <= 1e-5
          and res.trace.iterations <= 100_000)
    verdict(7, "pd residuals below 1e-6 and x within 1e-5 of oracle", ok, time.perf_counter() - t0,
            60, f"delta {pars['delta']:.3f}, zeta {pars['zeta']:.3f}, lambda {pars['lambda']:.3f}, "
                f"kkt {kkt.worst:.1e}, dist {dist:.1e}, {res.trace.iterations} iterations")


def test_criterion_8_metric_laws():
    t0 = time.perf_counter()
    ok = True
    ok &= loewner_geq(Metric.diagonal([2, 2]), Metric.diagonal([1, 1]), 0.0)
    ok &= not loewner_geq(Metric.diagonal([1, 3]), Metric.diagonal([2, 1]), 0.0)
    rng = np.random.default_rng(0)
    Q = np.linalg.qr(rng.standard_normal((4, 4)))[0]
    S = Q @ np.diag([1.0, 2.0, 3.0, 4.0]) @ Q.T
    A = Metric.from_matrix(0.5 * (S + S.T))
    Ae = Metric.from_matrix(A.matrix + 1e-8 * np.eye(4))
    ok &= loewner_geq(A, Ae, 1e-7) and loewner_geq(Ae, A, 1e-7)
    ok &= np.allclose(inverse(Metric.diagonal([2, 4])).diag, [0.5, 0.25])
    # chain: mu Id >= A >= B >= alpha Id  =>  1/alpha Id >= B^-1 >= A^-1 >= 1/mu Id
    for _ in range(200):
        a = rng.uniform(0.5, 3.0, 5)
        b = a * rng.uniform(0.2, 1.0, 5)
        mu, alpha = a.max(), b.min()
        Am, Bm = Metric.diagonal(a), Metric.diagonal(b)
        Ai, Bi = inverse(Am), inverse(Bm)
        ok &= loewner_geq(Metric.identity(5, 1 / alpha), Bi, 0.0)
        ok &= loewner_geq(Bi, Ai, 0.0)
        ok &= loewner_geq(Ai, Metric.identity(5, 1 / mu), 0.0)
    const = MetricSequence.constant(Metric.identity(3))
    ok &= validate_sequence(const, horizon=20).passed
    drop = MetricSequence([Metric.diagonal([2.0]), Metric.diagonal([1.0])], eta=[0.0])
    rep = validate_sequence(drop, horizon=2)
    ok &= (not rep.passed) and rep.first_failure().n == 0
    dec = [Metric.identity(2, 1 + 2.0 ** -n) for n in range(30)]
    ok &= not validate_sequence(MetricSequence(dec)).passed
    eta = [2.0 ** -n for n in range(30)]
    ok &= validate_sequence(MetricSequence(dec, eta=eta, eta_sum=2.0)).passed
    verdict(8, "metric laws and sequence validation examples", bool(ok), time.perf_counter() - t0, 2)


def test_criterion_9_determinism(lasso, fused, tmp_path):
    def traces(tag):
        lasso_b = make_lasso(seed=42)
        fused_b = make_fused_toy(seed=7)
        out = {"3": run_wedge(0.3)}
        out.update({f"4{k}": r.trace for k, r in fb_runs(lasso_b).items()})
        out["5"] = extended_run(lasso_b)[1].trace
        out["6-7"] = pd_run(fused_b)[1].trace
        paths = {}
        for k, tr in out.items():
            p = tmp_path / f"{tag}_{k}.csv"
            tr.to_csv(p)
            paths[k] = p.read_bytes()
        return paths

    first, second = traces("a"), traces("b")
    same = [k for k in first if first[k] == second[k]]
    verdict(9, "reruns of criteria 3-7 give byte-identical CSVs", len(same) == len(first),
            detail=f"identical: {', '.join(same)}")
