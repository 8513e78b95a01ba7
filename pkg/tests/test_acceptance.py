"""Acceptance suite: one PASS/FAIL line per criterion.

Each test prints its verdict straight to the terminal (outside pytest's
capture) and then asserts it. Criteria 3-5 run the shipped experiment
configs at full Monte-Carlo size and take tens of minutes together.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from graphprox.costs import (
    SampleStreams,
    custom_models,
    logistic_loss,
    logistic_stochastic_gradient,
    mse_stochastic_gradient,
    mse_true_gradient,
)
from graphprox.harness import load_config, run_experiment
from graphprox.harness.weather import read_weather_csv
from graphprox.prox import (
    ProxProblem,
    Regularizer,
    interval_partition,
    prox_elastic_net_sum,
    prox_l0_sum,
)
from graphprox.solver import (
    SolverConfig,
    StabilityConstants,
    simulate_curves,
    theorem_bound_recursion,
)
from graphprox.topology import build_network
from oracles import l0_candidate_argmin, oracle_elastic_net, ulp_distance

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
WEATHER_CSV = ROOT / "data" / "gsod_weather.csv"
FIXTURE = ROOT / "tests" / "data" / "weather_fixture.csv"


@pytest.fixture
def report(capsys):
    def _report(n, name, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'} [{name}] {detail}")
        assert ok, detail
    return _report


def _random_problem(rng, beta=True):
    J = int(rng.integers(1, 7))
    b = rng.uniform(-10, 10, J)
    c = 2.0 * (1.0 - rng.uniform(size=J))  # (0, 2]
    gamma = 5.0 * (1.0 - rng.uniform())  # (0, 5]
    bt = float(rng.uniform(0, 2)) if beta else 0.0
    return ProxProblem.build(b, c, gamma, bt)


# ----------------------------------------------------------------------------
# 1. prox oracle equivalence

def test_criterion_1_prox_oracle_equivalence(report):
    rng = np.random.default_rng(20240101)
    worst = 0.0
    for i in range(1000):
        p = _random_problem(rng, beta=i % 4 != 0)  # every fourth problem is pure l1
        v = float(rng.uniform(-20, 20))
        ref = oracle_elastic_net(v, p.anchors, p.coeffs, p.gamma, p.beta, grid_step=1e-7)
        worst = max(worst, abs(prox_elastic_net_sum(v, p) - ref))

    mismatches = 0
    for i in range(1000):
        J = int(rng.integers(1, 6))
        b = rng.uniform(-10, 10, J)
        c = 2.0 * (1.0 - rng.uniform(size=J))
        gamma = 5.0 * (1.0 - rng.uniform())
        lam = float(rng.uniform(0.1, 3))
        p = ProxProblem.build(b, c, gamma, lam=lam)
        # a fifth of the inputs sit exactly on an anchor
        v = float(p.anchors[rng.integers(p.J)]) if i % 5 == 0 else float(rng.uniform(-20, 20))
        want = l0_candidate_argmin(v, p.anchors, p.coeffs, p.gamma, p.lam)
        mismatches += list(prox_l0_sum(v, p).values) != want
    ok = worst <= 1e-6 and mismatches == 0
    report(1, "prox oracle equivalence", ok,
           f"convex max |prox - oracle| = {worst:.2e} (tol 1e-6) over 1000; "
           f"l0 set mismatches = {mismatches}/1000")


# ----------------------------------------------------------------------------
# 2. interval tiling

def _boundary_scale(p, n):
    b, c = np.array(p.anchors), np.array(p.coeffs)
    bn = b[n - 1]
    return abs(bn) + p.gamma * c.sum() + p.beta * p.gamma * np.sum(c * np.abs(bn - b))


def test_criterion_2_interval_tiling(report):
    rng = np.random.default_rng(20240102)
    gaps = overlaps = decreasing = 0
    worst = 0.0
    for _ in range(10_000):
        p = _random_problem(rng)
        parts = interval_partition(p)
        if parts[0][2] != -math.inf or parts[-1][3] != math.inf:
            gaps += 1
        for (_, n1, lo1, hi1), (_, n2, lo2, hi2) in zip(parts, parts[1:]):
            scale = _boundary_scale(p, max(n1, n2, 1))
            d = ulp_distance(hi1, lo2, scale)
            worst = max(worst, d)
            if d > 8:
                gaps += hi1 < lo2
                overlaps += hi1 > lo2
            if hi2 < lo2 and ulp_distance(lo2, hi2, scale) > 8:
                decreasing += 1
    ok = gaps == overlaps == decreasing == 0
    report(2, "interval tiling", ok,
           f"10000 problems: gaps={gaps} overlaps={overlaps} decreasing={decreasing}, "
           f"worst adjacent mismatch {worst:.1f} ulp (tol 8)")


# ----------------------------------------------------------------------------
# 3. O(mu) steady state

def _summary_float(bundle, key):
    return float(bundle.summary[key])


@pytest.mark.slow
def test_criterion_3_steady_state_scales_with_mu(report, tmp_path):
    cfg = load_config(CONFIGS / "step_scaling.yaml")
    bundle = run_experiment(cfg, out_dir=tmp_path)
    gap = _summary_float(bundle, "gap_db[l1,0.005/0.0025]")
    levels = {r["mu"]: r["msd_db"] for r in bundle.rows}
    ok = 2.0 <= gap <= 4.0
    report(3, "steady state O(mu)", ok,
           f"MSD at 2mu0 - MSD at mu0 = {gap:.2f} dB (band [2, 4]); levels "
           + ", ".join(f"mu={m:g}: {d:.2f} dB" for m, d in sorted(levels.items())))


# ----------------------------------------------------------------------------
# 4. / 5. cooperation benefit

def _best(bundle, label, mu="0.005"):
    return _summary_float(bundle, f"best_msd_loc_db[{label},mu={mu}]")


@pytest.mark.slow
def test_criterion_4_cooperation_sparse(report, tmp_path):
    cfg = load_config(CONFIGS / "sweep_sparse.yaml")
    bundle = run_experiment(cfg, out_dir=tmp_path)
    rw, l0, sq = "reweighted_l1(eps=0.1)", "l0(lam=1)", "squared_l2"
    gain = _summary_float(bundle, f"gain_db[{rw},mu=0.005]")
    best = {k: _best(bundle, k) for k in (rw, l0, sq)}
    ok = gain >= 3.0 and best[rw] < best[sq] and best[l0] < best[sq]
    report(4, "cooperation, sparse models", ok,
           f"reweighted l1 gain {gain:.2f} dB (need >= 3); best MSD_loc: "
           + ", ".join(f"{k} {v:.2f} dB" for k, v in best.items()))


@pytest.mark.slow
def test_criterion_5_cooperation_smooth(report, tmp_path):
    cfg = load_config(CONFIGS / "sweep_smooth.yaml")
    bundle = run_experiment(cfg, out_dir=tmp_path)
    smooth = ("elastic_net(beta=1)", "squared_l2")
    sparse = ("reweighted_l1(eps=0.1)", "l0(lam=1)")
    best = {k: _best(bundle, k) for k in smooth + sparse}
    ok = max(best[k] for k in smooth) < min(best[k] for k in sparse)
    report(5, "cooperation, smooth models", ok,
           "best MSD_loc: " + ", ".join(f"{k} {v:.3f} dB" for k, v in best.items()))


# ----------------------------------------------------------------------------
# 6. bound recursion

def _quadratic_instance(M, sigma_u2, sigma_v2):
    """One agent, w_o = 0, u ~ N(0, sigma_u2 I): the noise constants are exact."""
    ens = custom_models(np.zeros((1, M)), sigma_u2, sigma_v2)
    const = StabilityConstants(nu=sigma_u2, delta=sigma_u2, beta_s2=(M + 1) * sigma_u2 ** 2,
                               sigma_s2=M * sigma_u2 * sigma_v2, e=0.0)
    return ens, const


def test_criterion_6_bound_recursion(report):
    M, su2, sv2 = 5, 1.0, 0.1
    ens, const = _quadratic_instance(M, su2, sv2)
    net = build_network(np.zeros((1, 1), dtype=bool))
    mu, T, runs = 0.01, 1500, 50
    w0 = np.ones((1, M))
    emp = simulate_curves(net, ens, SolverConfig(mu, 0.0, Regularizer("l1"), T, init=w0), 11, runs,
                          {"truth": ens.w_true})["truth"]
    bound = theorem_bound_recursion(const, mu, 0.0, float(np.sum(w0 ** 2)), 0.0, T).sequence[1:, 0]
    dominated = bool(np.all(bound >= emp))
    slack = float(np.min(bound / emp))

    ratios = {}
    for m in (1e-3, 5e-4, 1e-4):
        a = theorem_bound_recursion(const, m, None, 0.0, 0.0, 1).limsup
        b = theorem_bound_recursion(const, m / 2, None, 0.0, 0.0, 1).limsup
        ratios[m] = a / b
    ratio_ok = all(abs(r - 2.0) <= 0.2 for r in ratios.values())
    report(6, "bound recursion", dominated and ratio_ok,
           f"bound >= empirical MSP at all {T} iterations: {dominated} (min ratio {slack:.2f}); "
           "limsup(mu)/limsup(mu/2): " + ", ".join(f"mu={m:g}: {r:.4f}" for m, r in ratios.items()))


# ----------------------------------------------------------------------------
# 7. gradient correctness

def test_criterion_7_gradients(report):
    rng = np.random.default_rng(20240107)
    worst = 0.0
    for _ in range(100):
        M = int(rng.integers(1, 11))
        w, h = rng.normal(size=M), rng.normal(size=M)
        y, rho = int(rng.choice([-1, 1])), float(rng.uniform(0, 1))
        g = logistic_stochastic_gradient(w, (h, y), rho)
        step = 1e-5
        fd = np.array([(logistic_loss(w + step * e, (h, y), rho)
                        - logistic_loss(w - step * e, (h, y), rho)) / (2 * step) for e in np.eye(M)])
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12))

    ens = custom_models([[1.0, -0.5, 2.0, 0.0]], 1.3, 0.2)
    w = np.array([[0.3, 0.1, -1.0, 0.5]])
    X, d = SampleStreams(ens, seed=7, chunk=4096).block(100_000)
    G = mse_stochastic_gradient(w[0], (X[:, 0, 0], d[:, 0, 0]))
    n = G.shape[0]
    z = np.abs(G.mean(0) - mse_true_gradient(w[0], ens.models[0])) / (G.std(0, ddof=1) / np.sqrt(n))
    ok = worst <= 1e-6 and bool(np.all(z <= 4))
    report(7, "gradient correctness", ok,
           f"logistic max rel. error vs central differences {worst:.2e} (tol 1e-6) at 100 points; "
           f"MSE mean gradient within {z.max():.2f} standard errors (tol 4) over {n} samples")


# ----------------------------------------------------------------------------
# 8. weather

def test_criterion_8_weather(report, tmp_path):
    if WEATHER_CSV.exists():
        cfg = load_config(CONFIGS / "weather.yaml")
        bundle = run_experiment(cfg, out_dir=tmp_path)
        rows = bundle.rows
        zero = next(r["prediction_error"] for r in rows if r["eta"] == 0)
        best = {}
        improves = {}
        for reg in cfg.regularizers:
            mine = [r for r in rows if r["regularizer"] == reg.label()]
            best[reg.label()] = min(r["prediction_error"] for r in mine)
            if reg.convex:
                improves[reg.label()] = any(r["prediction_error"] < zero
                                            for r in mine if r["eta"] > 0)
        en = next(k for k in best if k.startswith("elastic_net"))
        ok = 0.26 <= zero <= 0.30 and all(improves.values()) and best[en] <= best["l1"]
        report(8, "weather table", ok,
               f"eta=0 error {zero:.4f} (band [0.26, 0.30]); improves with eta>0: {improves}; "
               f"best errors {best}")
        return

    records, dropped = read_weather_csv(FIXTURE)
    parse_ok = len(records) == 30 and dropped == 1
    cfg = load_config(CONFIGS / "weather_synthetic.yaml")
    bundle = run_experiment(cfg, out_dir=tmp_path)
    zero = _summary_float(bundle, "error_eta0[mu=0.05]")
    best = {r.label(): _summary_float(bundle, f"best_error[{r.label()},mu=0.05]")
            for r in cfg.regularizers}
    coop_ok = all(b < zero for b in best.values())
    report(8, "weather (dataset absent: fixture + synthetic network)", parse_ok and coop_ok,
           f"fixture parsed {len(records)} rows, dropped {dropped}; synthetic eta=0 error "
           f"{zero:.4f}, best errors " + ", ".join(f"{k} {v:.4f}" for k, v in best.items()))
