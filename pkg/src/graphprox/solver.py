"""Decentralized stochastic proximal-gradient learning over a multitask graph.

Every iteration runs two barrier-separated phases over all agents:

1. self-learning: ``psi_k = w_k - mu * grad_hat J_k(w_k)``;
2. social learning: ``w_k = prox_{mu eta g_k}(psi_k)`` with
   ``g_k(w) = sum_l p_kl f(w, psi_l)`` built from the neighbors' fresh
   intermediate estimates.

Phase 1 finishes for every agent before phase 2 starts, which the batched
implementation gets for free by updating whole arrays at once.

The module also provides a deterministic reference solver for the global
regularized problem and the mean-square-perturbation bound recursion.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import lsq_linear
from scipy.special import expit, log_expit

from .costs import ModelEnsemble, SampleStreams
from .prox import Regularizer, social_step_indexed
from .topology import Network

__all__ = [
    "SolverConfig",
    "Trajectory",
    "DivergenceError",
    "ConvergenceError",
    "iterate",
    "run_decentralized",
    "simulate_curves",
    "ReferenceSolution",
    "solve_reference",
    "global_objective",
    "StabilityConstants",
    "BoundResult",
    "theorem_bound_recursion",
]

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """A non-finite iterate appeared during a run."""

    def __init__(self, agent, iteration):
        super().__init__(f"non-finite estimate at agent {agent}, iteration {iteration}")
        self.agent = agent
        self.iteration = iteration


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, msg, best=None, residual=None):
        super().__init__(msg)
        self.best = best
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    mu: float
    eta: float
    regularizer: Regularizer
    iterations: int
    init: str | np.ndarray = "zeros"
    init_seed: int = 0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.eta >= 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if int(self.iterations) < 1:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        if isinstance(self.init, str) and self.init not in ("zeros", "gaussian"):
            raise ValueError(f"init must be 'zeros', 'gaussian' or an array, got {self.init!r}")

    def initial(self, K: int, M: int) -> np.ndarray:
        if isinstance(self.init, str):
            if self.init == "zeros":
                return np.zeros((K, M))
            return np.random.default_rng(self.init_seed).standard_normal((K, M))
        W0 = np.asarray(self.init, dtype=float)
        if W0.shape != (K, M):
            raise ValueError(f"explicit init has shape {W0.shape}, expected {(K, M)}")
        return W0.copy()

    def digest(self) -> str:
        d = asdict(self)
        d["regularizer"] = asdict(self.regularizer)
        if not isinstance(self.init, str):
            d["init"] = np.asarray(self.init).tolist()
        blob = json.dumps(d, sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Trajectory:
    """Iterates of one run; ``estimates[0]`` is the initialization."""

    estimates: np.ndarray  # (T + 1, K, M)
    intermediates: np.ndarray | None = None  # (T, K, M)
    seed: int | None = None
    run: int = 0
    config_digest: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return self.estimates.shape[0] - 1

    def to_csv(self, path, header: str = ""):
        """Long format: iteration, agent, coordinate, value."""
        T1, K, M = self.estimates.shape
        it, ag, co = np.meshgrid(np.arange(T1), np.arange(K), np.arange(M), indexing="ij")
        table = np.column_stack([it.ravel(), ag.ravel(), co.ravel(), self.estimates.ravel()])
        with open(path, "w") as fh:
            if header:
                fh.write(header)
            fh.write("iteration,agent,coordinate,value\n")
            for i, k, m, v in table:
                fh.write(f"{int(i)},{int(k)},{int(m)},{float(v)!r}\n")

    def save(self, path):
        np.savez_compressed(
            path, estimates=self.estimates,
            intermediates=self.intermediates if self.intermediates is not None else np.empty(0),
            seed=-1 if self.seed is None else self.seed, run=self.run,
            config_digest=self.config_digest)

    @classmethod
    def load(cls, path) -> "Trajectory":
        with np.load(path) as z:
            inter = z["intermediates"]
            seed = int(z["seed"])
            return cls(z["estimates"], inter if inter.size else None,
                       None if seed < 0 else seed, int(z["run"]), str(z["config_digest"]))


def iterate(
    network: Network,
    W0: np.ndarray,
    gradient: Callable[[int, np.ndarray], np.ndarray],
    mu: float,
    eta: float,
    regularizer: Regularizer,
    iterations: int,
    observer: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
    active: Callable[[int], np.ndarray] | None = None,
) -> np.ndarray:
    """Run the two-phase recursion on a batch of runs.

    Parameters
    ----------
    W0 : ndarray, shape (R, K, M)
    gradient : callable ``(i, W) -> (R, K, M)``
        Gradient approximation used at iteration ``i`` (1-based).
    observer : callable ``(i, W, Psi)``, optional
        Called after each iteration with the new estimates and intermediates.
    active : callable ``i -> bool array (K,)``, optional
        Agents without data at iteration ``i`` skip the self-learning step.

    Returns the final estimates.
    """
    W = np.array(W0, dtype=float)
    if W.ndim != 3 or W.shape[1] != network.num_agents:
        raise ValueError(f"W0 must have shape (R, {network.num_agents}, M), got {W.shape}")
    idx, wts = network.padded_neighbors()
    step = mu * eta
    social = step > 0 and network.num_agents > 1
    for i in range(1, iterations + 1):
        G = gradient(i, W)
        if active is not None:
            G = G * active(i)[:, None]
        with np.errstate(over="ignore", invalid="ignore"):
            Psi = W - mu * G  # divergence is reported below
        W = social_step_indexed(Psi, idx, wts, step, regularizer) if social else Psi
        if not np.isfinite(W).all():
            bad = np.argwhere(~np.isfinite(W))[0]
            raise DivergenceError(int(bad[1]), i)
        if observer is not None:
            observer(i, W, Psi)
    return W


def _check_match(network: Network, ensemble: ModelEnsemble):
    if network.num_agents != ensemble.K:
        raise ValueError(f"network has {network.num_agents} agents, ensemble has {ensemble.K}")


def _stream_gradient(ensemble, streams):
    def grad(i, W):
        X, y = streams.next()
        return ensemble.stochastic_gradient(W, X, y)
    return grad


def run_decentralized(
    network: Network,
    ensemble: ModelEnsemble,
    config: SolverConfig,
    seed: int,
    run: int = 0,
    keep_intermediates: bool = False,
) -> Trajectory:
    """One run of the algorithm, recording every iterate.

    Samples come from streams keyed by ``(seed, run, agent)``; run ``r`` here
    reproduces run ``r`` of `simulate_curves` exactly.
    """
    _check_match(network, ensemble)
    K, M, T = ensemble.K, ensemble.M, int(config.iterations)
    est = np.empty((T + 1, K, M))
    est[0] = config.initial(K, M)
    inter = np.empty((T, K, M)) if keep_intermediates else None

    def observe(i, W, Psi):
        est[i] = W[0]
        if inter is not None:
            inter[i - 1] = Psi[0]

    streams = SampleStreams(ensemble, seed, runs=1, run_offset=run)
    iterate(network, est[:1].copy(), _stream_gradient(ensemble, streams), config.mu,
            config.eta, config.regularizer, T, observe)
    return Trajectory(est, inter, seed, run, config.digest())


def simulate_curves(
    network: Network,
    ensemble: ModelEnsemble,
    config: SolverConfig,
    seed: int,
    runs: int,
    references: dict[str, np.ndarray],
    batch: int = 100,
) -> dict[str, np.ndarray]:
    """Monte-Carlo squared-deviation curves without storing trajectories.

    For each named reference (shape (K, M)) returns the per-iteration mean over
    runs and agents of ``||w_{k,i} - ref_k||^2``, length ``iterations``.
    Runs are processed in batches of at most `batch`.
    """
    _check_match(network, ensemble)
    K, M, T = ensemble.K, ensemble.M, int(config.iterations)
    sums = {name: np.zeros(T) for name in references}
    refs = {name: np.asarray(ref, dtype=float) for name, ref in references.items()}
    for start in range(0, runs, batch):
        R = min(batch, runs - start)

        def observe(i, W, Psi):
            for name, ref in refs.items():
                sums[name][i - 1] += np.sum((W - ref) ** 2) / K

        streams = SampleStreams(ensemble, seed, runs=R, run_offset=start)
        W0 = np.broadcast_to(config.initial(K, M), (R, K, M))
        iterate(network, W0, _stream_gradient(ensemble, streams), config.mu, config.eta,
                config.regularizer, T, observe)
    return {name: s / runs for name, s in sums.items()}


# ----------------------------------------------------------------------------
# reference solver

class _SmoothPart:
    """Individual risks plus the differentiable part of the co-regularizer."""

    def __init__(self, network, ensemble, eta, reg, logistic_samples, seed):
        self.ens = ensemble
        self.K, self.M = ensemble.K, ensemble.M
        Lp = network.laplacian(weighted=True)
        # (eta/2) * sum_k sum_l p_kl * q(w_k - w_l) counts every edge twice
        if reg.kind == "elastic_net":
            self.coupling = eta * reg.beta * Lp
        elif reg.kind == "squared_l2":
            self.coupling = 2 * eta * Lp
        else:
            self.coupling = np.zeros_like(Lp)
        if ensemble.kind == "logistic":
            # frozen large sample standing in for the population risk
            X, y = SampleStreams(ensemble, seed).block(logistic_samples)
            self.H = X[:, 0]  # (N, K, M)
            self.y = y[:, 0]  # (N, K)
            self.rho = ensemble.rhos
            risk_L = 0.25 * np.array([np.linalg.eigvalsh(
                self.H[:, k].T @ self.H[:, k] / len(self.H))[-1] for k in range(self.K)])
            risk_L = risk_L + self.rho
            self.nu = self.rho.copy()
        else:
            eigs = np.array([np.linalg.eigvalsh(c) for c in ensemble.covs])
            risk_L, self.nu = eigs[:, -1], eigs[:, 0]
        coup_L = np.linalg.eigvalsh(self.coupling)[-1] if self.K > 1 else 0.0
        self.L = float(risk_L.max() + max(coup_L, 0.0))

    def risks(self, W) -> np.ndarray:
        if self.ens.kind == "mse":
            D = W - self.ens.w_true
            quad = np.einsum("ki,kij,kj->k", D, self.ens.covs, D)
            return 0.5 * (quad + self.ens.noise_vars)
        margin = self.y * np.einsum("nkm,km->nk", self.H, W)
        return -log_expit(margin).mean(0) + 0.5 * self.rho * np.sum(W * W, axis=1)

    def value(self, W) -> float:
        return float(self.risks(W).sum() + 0.5 * np.sum(W * (self.coupling @ W)))

    def risk_gradient(self, W) -> np.ndarray:
        if self.ens.kind == "mse":
            return self.ens.true_gradient(W)
        margin = self.y * np.einsum("nkm,km->nk", self.H, W)
        coef = -(self.y * expit(-margin))
        return np.einsum("nk,nkm->km", coef, self.H) / len(self.H) + self.rho[:, None] * W

    def gradient(self, W) -> np.ndarray:
        return self.risk_gradient(W) + self.coupling @ W


def _incidence(network: Network) -> tuple[np.ndarray, np.ndarray]:
    edges = network.edges
    D = np.zeros((len(edges), network.num_agents))
    for e, (k, l) in enumerate(edges):
        D[e, k], D[e, l] = 1.0, -1.0
    p = network.p
    return D, np.array([p[k, l] for k, l in edges])


def _tv_prox(V, D, bound):
    """``argmin_X 1/2 ||X - V||^2 + sum_e bound_e * ||D_e X||_1`` column by column.

    Solves the box-constrained dual ``min_{|z| <= bound} 1/2 ||V - D^T z||^2``
    exactly with the bounded-variable least-squares active-set method.
    Returns the primal point and the dual certificate (E, M).
    """
    E = D.shape[0]
    Z = np.zeros((E, V.shape[1]))
    if E == 0 or not np.any(bound > 0):
        return V.copy(), Z
    for m in range(V.shape[1]):
        res = lsq_linear(D.T, V[:, m], bounds=(-bound, bound), method="bvls",
                         tol=1e-15, lsmr_tol=None)
        Z[:, m] = res.x
    return V - D.T @ Z, Z


def _min_norm_residual(grad, W, D, bound, tie_tol):
    """Norm of the minimum-norm element of ``grad + D^T diag(bound) sign(D W)``.

    Edges with ``|D_e w| <= tie_tol`` may take any multiplier in ``[-1, 1]``.
    """
    total = 0.0
    DW = D @ W
    for m in range(W.shape[1]):
        tied = np.abs(DW[:, m]) <= tie_tol
        fixed = (~tied) & (bound > 0)
        r = grad[:, m] + D[fixed].T @ (bound[fixed] * np.sign(DW[fixed, m]))
        free = tied & (bound > 0)
        if np.any(free):
            A = D[free].T * bound[free]
            sol = lsq_linear(A, -r, bounds=(-1.0, 1.0), method="bvls", tol=1e-15)
            r = r + A @ sol.x
        total += float(r @ r)
    return np.sqrt(total)


@dataclass
class ReferenceSolution:
    """Minimizer of the global regularized cost."""

    W: np.ndarray  # (K, M)
    residual: float
    iterations: int
    objective_history: list = field(default_factory=list, repr=False)

    @property
    def stacked(self) -> np.ndarray:
        return self.W.ravel()

    def save(self, path):
        np.savez(path, W=self.W, residual=self.residual, iterations=self.iterations)

    @classmethod
    def load(cls, path) -> "ReferenceSolution":
        with np.load(path) as z:
            return cls(z["W"], float(z["residual"]), int(z["iterations"]))


def global_objective(network, ensemble, W, eta, regularizer, logistic_samples=10**6, seed=0):
    """``sum_k J_k(w_k) + eta/2 * sum_k sum_l p_kl f(w_k, w_l)``."""
    smooth = _SmoothPart(network, ensemble, 0.0, regularizer, logistic_samples, seed)
    W = np.asarray(W, dtype=float)
    p = network.p
    reg = sum(p[k, l] * regularizer.pair_penalty(W[k] - W[l])
              for k, nbrs in enumerate(network.neighbors) for l in nbrs)
    return float(smooth.risks(W).sum() + 0.5 * eta * reg)


def solve_reference(
    network: Network,
    ensemble: ModelEnsemble,
    eta: float,
    regularizer: Regularizer,
    tolerance: float = 1e-9,
    max_iter: int = 100_000,
    logistic_samples: int = 10**6,
    seed: int = 0,
    W0=None,
) -> ReferenceSolution:
    """Minimize ``sum_k J_k(w_k) + eta/2 R(W)`` for a convex co-regularizer.

    Full-gradient forward-backward splitting with step ``1/L`` on the stacked
    problem. Quadratic parts of the co-regularizer are kept on the smooth
    side; the weighted l1 graph penalty is handled by an exact prox. Stops when
    the minimum-norm element of the subdifferential has norm below
    `tolerance`.

    Logistic risks are replaced by the empirical risk of a frozen sample of
    `logistic_samples` draws per agent (seeded by `seed`).
    """
    _check_match(network, ensemble)
    if not regularizer.convex:
        raise ValueError(f"reference solution undefined for non-convex/adaptive "
                         f"regularizer {regularizer.kind!r}")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    smooth = _SmoothPart(network, ensemble, eta, regularizer, logistic_samples, seed)
    D, p_edges = _incidence(network)
    l1_weight = eta * p_edges if regularizer.kind in ("l1", "elastic_net") else np.zeros_like(p_edges)
    t = 1.0 / smooth.L

    def objective(W):
        return smooth.value(W) + float(np.sum(l1_weight[:, None] * np.abs(D @ W)))

    if eta == 0 and ensemble.kind == "mse":
        W = ensemble.w_true.copy()
        return ReferenceSolution(W, 0.0, 0, [objective(W)])

    W = ensemble.w_true.copy() if W0 is None else np.array(W0, dtype=float)
    history = [objective(W)]
    best = (np.inf, W)
    for it in range(1, max_iter + 1):
        V = W - t * smooth.gradient(W)
        W_new, _ = _tv_prox(V, D, t * l1_weight)
        history.append(objective(W_new))
        step = np.linalg.norm(W_new - W)
        W = W_new
        if step <= 1e-3 * tolerance * t or it % 50 == 0 or it == max_iter:
            tie = 1e-10 * (1.0 + np.abs(W).max())
            res = _min_norm_residual(smooth.gradient(W), W, D, l1_weight, tie)
            if res < best[0]:
                best = (res, W.copy())
            if res <= tolerance:
                return ReferenceSolution(W, res, it, history)
            if step == 0.0:
                break
    raise ConvergenceError(
        f"reference solver did not reach residual {tolerance:g} "
        f"(best {best[0]:.3g})", best=best[1], residual=best[0])


# ----------------------------------------------------------------------------
# mean-square perturbation bound

@dataclass(frozen=True)
class StabilityConstants:
    """Per-agent constants entering the mean-square perturbation bound.

    nu, delta : Hessian bounds ``nu I <= H_k <= delta I``.
    beta_s2, sigma_s2 : gradient-noise bounds
        ``E||s||^2 <= beta_s2 ||w||^2 + sigma_s2``.
    e : bound on the subgradients of the co-regularizer.
    kappa, alpha : regularization scaling ``eta = kappa * mu**alpha``.
    """

    nu: np.ndarray
    delta: np.ndarray
    beta_s2: np.ndarray
    sigma_s2: np.ndarray
    e: np.ndarray
    kappa: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(getattr(self, n), dtype=float))
                for n in ("nu", "delta", "beta_s2", "sigma_s2", "e")]
        K = max(a.size for a in arrs)
        arrs = [np.broadcast_to(a, (K,)).copy() for a in arrs]
        for name, a in zip(("nu", "delta", "beta_s2", "sigma_s2", "e"), arrs):
            object.__setattr__(self, name, a)
        if np.any(self.nu <= 0) or np.any(self.delta < self.nu):
            raise ValueError("need 0 < nu_k <= delta_k")
        if np.any(self.beta_s2 < 0) or np.any(self.sigma_s2 < 0) or np.any(self.e < 0):
            raise ValueError("noise and subgradient bounds must be nonnegative")
        if self.alpha < 0.5:
            raise ValueError(f"alpha must be >= 1/2, got {self.alpha}")

    def eta(self, mu: float) -> float:
        return self.kappa * mu ** self.alpha

    def max_step(self) -> tuple[float, str]:
        """Largest admissible step size and the name of the binding bound."""
        hess = float(np.min(self.nu / self.delta ** 2))
        noise = float(np.min(self.nu / (4 * self.beta_s2 + self.nu ** 2 / 2)))
        return (hess, "nu/delta^2") if hess <= noise else (noise, "nu/(4 beta_s^2 + nu^2/2)")


@dataclass
class BoundResult:
    sequence: np.ndarray  # (T + 1, K)
    limsup: float
    A: np.ndarray
    c: np.ndarray
    d: np.ndarray


def theorem_bound_recursion(
    constants: StabilityConstants,
    mu: float,
    eta: float | None,
    msp_0,
    w_eta_norms,
    iterations: int,
) -> BoundResult:
    """Iterate ``MSP_i <= A MSP_{i-1} + mu (c + mu d)`` from ``MSP_0``.

    `eta` defaults to ``kappa * mu**alpha``. `w_eta_norms` holds the norms
    ``||w_{k,eta}^o||`` of the regularized minimizer, squared internally.
    """
    s = constants
    bound = [
        (float(np.min(s.nu / s.delta ** 2)), "nu_k/delta_k^2"),
        (float(np.min(s.nu / (4 * s.beta_s2 + s.nu ** 2 / 2))), "nu_k/(4 beta_s,k^2 + nu_k^2/2)"),
    ]
    for limit, name in bound:
        if not 0 < mu < limit:
            raise ValueError(f"step size mu={mu:g} violates stability bound {name} = {limit:g}")
    if eta is None:
        eta = s.eta(mu)
    K = s.nu.size
    msp = np.broadcast_to(np.asarray(msp_0, dtype=float), (K,)).copy()
    wn2 = np.broadcast_to(np.asarray(w_eta_norms, dtype=float), (K,)) ** 2
    shrink = 1 - mu * s.nu / 2
    A = shrink + 2 * mu ** 2 * s.beta_s2 / shrink
    c = eta ** 2 * 8 * s.e ** 2 / s.nu
    d = 2 * s.beta_s2 / shrink * wn2 + s.sigma_s2 / shrink
    drive = mu * (c + mu * d)
    seq = np.empty((iterations + 1, K))
    seq[0] = msp
    for i in range(1, iterations + 1):
        msp = A * msp + drive
        seq[i] = msp
    A_inf = float(np.max(A))
    limsup = mu * float(np.max(np.abs(c + mu * d))) / (1 - A_inf)
    return BoundResult(seq, limsup, A, c, d)
