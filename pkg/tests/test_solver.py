import numpy as np
import pytest

from graphprox.costs import SampleStreams, custom_models, generate_sparse_models
from graphprox.prox import Regularizer, prox_social_step
from graphprox.solver import (
    ConvergenceError,
    DivergenceError,
    SolverConfig,
    StabilityConstants,
    Trajectory,
    ReferenceSolution,
    global_objective,
    run_decentralized,
    simulate_curves,
    solve_reference,
    theorem_bound_recursion,
)
from graphprox.topology import build_network, random_geometric_network, ring_network


@pytest.fixture(scope="module")
def small():
    net = random_geometric_network(6, 2, seed=2)
    ens = generate_sparse_models(6, 3, seed=1)
    return net, ens


def sequential_reference(net, ens, cfg, seed, order_seed):
    """Agent-by-agent loop in a shuffled order, using the scalar prox."""
    rng = np.random.default_rng(order_seed)
    streams = SampleStreams(ens, seed)
    K, M = ens.K, ens.M
    W = cfg.initial(K, M)
    out = [W.copy()]
    p = net.p
    for _ in range(cfg.iterations):
        X, y = streams.next()
        psi = np.empty_like(W)
        for k in rng.permutation(K):
            psi[k] = W[k] - cfg.mu * ens.stochastic_gradient(W[k:k + 1], X[0, k:k + 1], y[0, k:k + 1])[0]
        new = np.empty_like(W)
        for k in rng.permutation(K):
            nbrs = net.neighbors[k]
            new[k] = prox_social_step(psi[k], [(l, psi[l]) for l in nbrs], [p[k, l] for l in nbrs],
                                      cfg.mu * cfg.eta, cfg.regularizer)
        W = new
        out.append(W.copy())
    return np.array(out)


@pytest.mark.parametrize("reg", [
    Regularizer("l1"), Regularizer("reweighted_l1", epsilon=0.1), Regularizer("l0", lam=1.0),
    Regularizer("elastic_net", beta=0.5), Regularizer("squared_l2"),
])
def test_matches_shuffled_sequential_loop(small, reg):
    net, ens = small
    cfg = SolverConfig(0.05, 2.0, reg, 40)
    traj = run_decentralized(net, ens, cfg, seed=11)
    for order_seed in (0, 1):
        ref = sequential_reference(net, ens, cfg, 11, order_seed)
        np.testing.assert_allclose(traj.estimates, ref, rtol=0, atol=1e-12)


def test_eta_zero_is_independent_lms(small):
    net, ens = small
    cfg = SolverConfig(0.02, 0.0, Regularizer("l1"), 300)
    traj = run_decentralized(net, ens, cfg, seed=4)
    streams = SampleStreams(ens, 4)
    W = np.zeros((ens.K, ens.M))
    for i in range(300):
        X, d = streams.next()
        for k in range(ens.K):
            u = X[0, k]
            W[k] = W[k] + 0.02 * u * (d[0, k] - u @ W[k])
        np.testing.assert_allclose(traj.estimates[i + 1], W, rtol=0, atol=1e-13)


def test_single_agent_ignores_eta():
    net = build_network(np.zeros((1, 1), dtype=bool))
    ens = custom_models([[1.0, -1.0]], 1.0, 0.1)
    a = run_decentralized(net, ens, SolverConfig(0.05, 0.0, Regularizer("l1"), 100), seed=0)
    b = run_decentralized(net, ens, SolverConfig(0.05, 9.0, Regularizer("l1"), 100), seed=0)
    assert np.array_equal(a.estimates, b.estimates)


def test_fixed_seed_is_bit_identical(small):
    net, ens = small
    cfg = SolverConfig(0.03, 1.0, Regularizer("reweighted_l1"), 200, init="gaussian", init_seed=5)
    a = run_decentralized(net, ens, cfg, seed=7)
    b = run_decentralized(net, ens, cfg, seed=7)
    assert a.estimates.tobytes() == b.estimates.tobytes()
    assert a.config_digest == b.config_digest
    c = run_decentralized(net, ens, cfg, seed=8)
    assert not np.array_equal(a.estimates, c.estimates)


def test_run_r_matches_batched_run(small):
    net, ens = small
    cfg = SolverConfig(0.03, 1.0, Regularizer("l1"), 150)
    runs = [run_decentralized(net, ens, cfg, seed=3, run=r).estimates for r in range(4)]
    curve = simulate_curves(net, ens, cfg, 3, 4, {"loc": ens.w_true}, batch=3)["loc"]
    manual = np.mean([np.sum((e[1:] - ens.w_true) ** 2, axis=(1, 2)) / ens.K for e in runs], axis=0)
    np.testing.assert_allclose(curve, manual, rtol=1e-12)


def test_divergence_reports_agent_and_iteration(small):
    net, ens = small
    cfg = SolverConfig(50.0, 0.0, Regularizer("l1"), 500)
    with pytest.raises(DivergenceError) as info:
        run_decentralized(net, ens, cfg, seed=0)
    assert 0 <= info.value.agent < ens.K
    assert 1 <= info.value.iteration <= 500


def test_dimension_mismatch_rejected(small):
    net, _ = small
    ens = generate_sparse_models(5, 3, seed=0)
    with pytest.raises(ValueError, match="agents"):
        run_decentralized(net, ens, SolverConfig(0.01, 0.0, Regularizer("l1"), 5), seed=0)
    with pytest.raises(ValueError, match="shape"):
        SolverConfig(0.01, 0.0, Regularizer("l1"), 5, init=np.zeros((2, 2))).initial(5, 3)


@pytest.mark.parametrize("kw", [dict(mu=0.0), dict(eta=-1.0), dict(iterations=0), dict(init="ones")])
def test_invalid_solver_config(kw):
    base = dict(mu=0.01, eta=0.0, regularizer=Regularizer("l1"), iterations=10)
    base.update(kw)
    with pytest.raises(ValueError):
        SolverConfig(**base)


def test_bounded_iterates_over_long_horizon():
    net = ring_network(4)
    ens = generate_sparse_models(4, 2, seed=3)
    # stability needs mu < nu/delta^2 ~ 0.67 here; stay well inside
    cfg = SolverConfig(0.01, 0.5, Regularizer("l1"), 100_000)
    curves = simulate_curves(net, ens, cfg, seed=0, runs=20, references={"loc": ens.w_true}, batch=20)
    assert np.all(np.isfinite(curves["loc"]))
    assert curves["loc"].max() < 10 * np.sum(ens.w_true ** 2) / ens.K


def test_trajectory_export_roundtrip(tmp_path, small):
    net, ens = small
    traj = run_decentralized(net, ens, SolverConfig(0.02, 1.0, Regularizer("l1"), 5), seed=1,
                             keep_intermediates=True)
    assert traj.intermediates.shape == (5, ens.K, ens.M)
    traj.save(tmp_path / "t.npz")
    back = Trajectory.load(tmp_path / "t.npz")
    assert np.array_equal(back.estimates, traj.estimates)
    assert back.config_digest == traj.config_digest
    traj.to_csv(tmp_path / "t.csv", header="# config_digest: x\n")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[1] == "iteration,agent,coordinate,value"
    assert len(lines) == 2 + 6 * ens.K * ens.M
    assert float(lines[-1].split(",")[-1]) == traj.estimates[-1, -1, -1]


# ----------------------------------------------------------------------------
# reference solver

def test_reference_eta_zero_is_local_models(small):
    net, ens = small
    ref = solve_reference(net, ens, 0.0, Regularizer("l1"))
    assert np.array_equal(ref.W, ens.w_true)


def test_reference_large_eta_reaches_consensus(small):
    net, ens = small
    ref = solve_reference(net, ens, 1e6, Regularizer("l1"), tolerance=1e-6)
    spread = np.max(np.abs(ref.W[:, None] - ref.W[None]))
    assert spread < 1e-3
    # consensus point minimizes the sum of the risks
    covs = ens.covs
    target = np.linalg.solve(covs.sum(0), np.einsum("kij,kj->i", covs, ens.w_true))
    assert np.allclose(ref.W.mean(0), target, atol=1e-3)


def two_agent_l1_solution(a, t, eta):
    """Analytic minimizer of sum_k a_k/2 (w_k - t_k)^2 + eta |w_1 - w_2| (p = 1)."""
    pooled = (a[0] * t[0] + a[1] * t[1]) / (a[0] + a[1])
    if abs(a[0] * (pooled - t[0])) <= eta:
        return np.array([pooled, pooled])
    s = np.sign(t[0] - t[1])
    return np.array([t[0] - s * eta / a[0], t[1] + s * eta / a[1]])


@pytest.mark.parametrize("eta", [0.1, 0.5, 0.9, 1.2, 3.0])
def test_reference_two_agent_piecewise(eta):
    adj = np.array([[False, True], [True, False]])
    net = build_network(adj)
    a, t = np.array([1.0, 2.0]), np.array([1.5, -0.3])
    ens = custom_models(t[:, None], a, 0.1)
    ref = solve_reference(net, ens, eta, Regularizer("l1"), tolerance=1e-11)
    assert ref.W[:, 0] == pytest.approx(two_agent_l1_solution(a, t, eta), abs=1e-9)


def test_reference_objective_nonincreasing(small):
    net, ens = small
    for reg in (Regularizer("l1"), Regularizer("elastic_net", beta=0.7), Regularizer("squared_l2")):
        ref = solve_reference(net, ens, 0.3, reg, W0=np.zeros((ens.K, ens.M)))
        hist = np.array(ref.objective_history)
        assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1]))
        assert ref.residual <= 1e-9
        assert hist[-1] == pytest.approx(global_objective(net, ens, ref.W, 0.3, reg), rel=1e-12)


def test_reference_rejects_nonconvex(small):
    net, ens = small
    with pytest.raises(ValueError, match="non-convex"):
        solve_reference(net, ens, 0.1, Regularizer("l0"))


def test_reference_reports_best_on_cap(small):
    net, ens = small
    with pytest.raises(ConvergenceError) as info:
        solve_reference(net, ens, 0.3, Regularizer("l1"), tolerance=1e-30, max_iter=3,
                        W0=np.zeros((ens.K, ens.M)))
    assert info.value.best.shape == (ens.K, ens.M)
    assert info.value.residual > 0


def test_reference_logistic_surrogate():
    net = ring_network(4)
    ens = generate_sparse_models(4, 2, seed=0, kind="logistic", rho=0.1)
    ref = solve_reference(net, ens, 0.05, Regularizer("l1"), tolerance=1e-8, logistic_samples=20_000)
    assert ref.residual <= 1e-8
    again = solve_reference(net, ens, 0.05, Regularizer("l1"), tolerance=1e-8, logistic_samples=20_000)
    assert np.array_equal(ref.W, again.W)


def test_reference_roundtrip(tmp_path, small):
    net, ens = small
    ref = solve_reference(net, ens, 0.2, Regularizer("l1"))
    ref.save(tmp_path / "r.npz")
    back = ReferenceSolution.load(tmp_path / "r.npz")
    assert np.array_equal(back.W, ref.W) and back.residual == ref.residual


# ----------------------------------------------------------------------------
# bound recursion

def test_bound_noiseless_decays_geometrically():
    c = StabilityConstants(nu=1.0, delta=1.0, beta_s2=0.0, sigma_s2=0.0, e=0.0)
    res = theorem_bound_recursion(c, 0.1, 0.0, 1.0, 0.0, 50)
    assert np.allclose(res.sequence[:, 0], 0.95 ** np.arange(51), rtol=1e-13)
    assert res.limsup == 0.0


def test_bound_matches_matrix_power():
    c = StabilityConstants(nu=[0.5, 1.0], delta=[1.0, 1.2], beta_s2=[0.3, 0.1], sigma_s2=[0.2, 0.0],
                           e=[1.0, 0.5])
    mu, eta = 0.02, 0.1
    res = theorem_bound_recursion(c, mu, eta, [2.0, 1.0], [1.0, 0.5], 30)
    A = np.diag(res.A)
    b = mu * (res.c + mu * res.d)
    x = np.array([2.0, 1.0])
    for i in range(30):
        x = A @ x + b
    assert np.allclose(res.sequence[-1], x, rtol=1e-12)
    # closed form of the drive terms
    assert res.A[0] == pytest.approx(1 - 0.005 + 2 * mu ** 2 * 0.3 / (1 - 0.005))
    assert res.c[0] == pytest.approx(eta ** 2 * 8 * 1.0 / 0.5)
    assert res.d[0] == pytest.approx(2 * 0.3 / (1 - 0.005) * 1.0 + 0.2 / (1 - 0.005))


def test_bound_limsup_halves_with_step():
    c = StabilityConstants(nu=1.0, delta=1.5, beta_s2=3.0, sigma_s2=0.4, e=0.7, kappa=2.0, alpha=1.0)
    for mu in (1e-3, 1e-4):
        a = theorem_bound_recursion(c, mu, None, 0.0, 1.0, 1).limsup
        b = theorem_bound_recursion(c, mu / 2, None, 0.0, 1.0, 1).limsup
        assert a / b == pytest.approx(2.0, rel=0.01)


def test_bound_rejects_unstable_step():
    c = StabilityConstants(nu=1.0, delta=2.0, beta_s2=0.0, sigma_s2=0.0, e=0.0)
    with pytest.raises(ValueError, match="nu_k/delta_k\\^2"):
        theorem_bound_recursion(c, 0.3, 0.0, 1.0, 0.0, 5)
    c = StabilityConstants(nu=1.0, delta=1.0, beta_s2=10.0, sigma_s2=0.0, e=0.0)
    with pytest.raises(ValueError, match="beta_s"):
        theorem_bound_recursion(c, 0.05, 0.0, 1.0, 0.0, 5)


def test_stability_constants_validation():
    with pytest.raises(ValueError):
        StabilityConstants(nu=2.0, delta=1.0, beta_s2=0.0, sigma_s2=0.0, e=0.0)
    with pytest.raises(ValueError):
        StabilityConstants(nu=1.0, delta=1.0, beta_s2=0.0, sigma_s2=0.0, e=0.0, alpha=0.25)
