"""Agent cost families: MSE linear regression and regularized logistic regression.

Each agent owns an `AgentModel` describing its data distribution. Samples are
drawn from per-(run, agent) random streams so that changing the network size
or the number of Monte-Carlo runs never reshuffles another agent's data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .topology import Network

__all__ = [
    "AgentModel",
    "ModelEnsemble",
    "SampleStreams",
    "generate_sparse_models",
    "generate_smooth_models",
    "custom_models",
    "mse_sample",
    "mse_stochastic_gradient",
    "mse_true_gradient",
    "logistic_sample",
    "logistic_loss",
    "logistic_stochastic_gradient",
]

KINDS = ("mse", "logistic")


@dataclass(frozen=True)
class AgentModel:
    """Data-generating model of one agent.

    Attributes
    ----------
    kind : {"mse", "logistic"}
    w_true : ndarray, shape (M,)
        Ground-truth model ``w_k^o``.
    feature_cov : ndarray, shape (M, M)
        Covariance of the regressors / features.
    noise_var : float
        Measurement-noise variance (MSE only).
    rho : float
        Ridge weight of the logistic risk (logistic only).
    """

    kind: str
    w_true: np.ndarray
    feature_cov: np.ndarray
    noise_var: float = 0.0
    rho: float = 0.0
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        w = np.asarray(self.w_true, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.feature_cov, dtype=float))
        if cov.shape != (w.size, w.size):
            raise ValueError(f"covariance shape {cov.shape} does not match M={w.size}")
        if not np.allclose(cov, cov.T):
            raise ValueError("feature covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("feature covariance must be positive definite") from None
        if self.noise_var < 0 or self.rho < 0:
            raise ValueError("noise_var and rho must be nonnegative")
        object.__setattr__(self, "w_true", w)
        object.__setattr__(self, "feature_cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def M(self) -> int:
        return self.w_true.size

    @classmethod
    def isotropic(cls, kind, w_true, sigma2, noise_var=0.0, rho=0.0):
        w_true = np.asarray(w_true, dtype=float)
        return cls(kind, w_true, sigma2 * np.eye(w_true.size), noise_var, rho)

    def hessian_bounds(self) -> tuple[float, float]:
        """(nu, delta) of the MSE risk Hessian (the feature covariance)."""
        eig = np.linalg.eigvalsh(self.feature_cov)
        return float(eig[0]), float(eig[-1])


@dataclass(frozen=True)
class ModelEnsemble:
    """Per-agent models sharing one dimension and one cost family."""

    models: tuple[AgentModel, ...]
    mode: str = "custom"

    def __post_init__(self):
        if not self.models:
            raise ValueError("ensemble needs at least one model")
        dims = {m.M for m in self.models}
        kinds = {m.kind for m in self.models}
        if len(dims) != 1:
            raise ValueError(f"all agents must share M, got {sorted(dims)}")
        if len(kinds) != 1:
            raise ValueError(f"mixed cost families are not supported: {sorted(kinds)}")

    @property
    def K(self) -> int:
        return len(self.models)

    @property
    def M(self) -> int:
        return self.models[0].M

    @property
    def kind(self) -> str:
        return self.models[0].kind

    @property
    def w_true(self) -> np.ndarray:
        """Stacked ground truth, shape (K, M)."""
        return np.stack([m.w_true for m in self.models])

    @property
    def covs(self) -> np.ndarray:
        return np.stack([m.feature_cov for m in self.models])

    @property
    def chols(self) -> np.ndarray:
        return np.stack([m._chol for m in self.models])

    @property
    def noise_vars(self) -> np.ndarray:
        return np.array([m.noise_var for m in self.models])

    @property
    def rhos(self) -> np.ndarray:
        return np.array([m.rho for m in self.models])

    def true_gradient(self, W) -> np.ndarray:
        """Exact risk gradients for an MSE ensemble, shape (..., K, M)."""
        if self.kind != "mse":
            raise ValueError("closed-form true gradients exist only for MSE models")
        return np.einsum("kij,...kj->...ki", self.covs, np.asarray(W) - self.w_true)

    def stochastic_gradient(self, W, X, y) -> np.ndarray:
        """Instantaneous gradients for batched samples.

        `W` and `X` have shape (..., K, M); `y` has shape (..., K).
        """
        if self.kind == "mse":
            return mse_stochastic_gradient(W, (X, y))
        return logistic_stochastic_gradient(W, (X, y), self.rhos[:, None])


def _variances(rng, K, sigma_u_range, sigma_v_range):
    su = rng.uniform(*sigma_u_range, size=K)
    sv = rng.uniform(*sigma_v_range, size=K)
    return su, sv


def generate_sparse_models(
    K: int,
    M: int,
    seed=0,
    kind: str = "mse",
    sigma_u_range=(1.0, 1.5),
    sigma_v_range=(0.15, 0.25),
    rho: float = 0.0,
    magnitude: float = 1.0,
) -> ModelEnsemble:
    """Models ``w_k = w_c + delta_k`` that differ from a common vector in one entry.

    Agent ``k`` (0-based) perturbs entry ``k mod M`` by ``+magnitude`` when
    ``(k // M)`` is even and by ``-magnitude`` otherwise. With ``K = 2M`` the
    first M agents get +1 on their own entry and the last M get -1.
    """
    if K < 1 or M < 1:
        raise ValueError("K and M must be positive")
    rng = np.random.default_rng(seed)
    w_c = rng.standard_normal(M)
    su, sv = _variances(rng, K, sigma_u_range, sigma_v_range)
    models = []
    for k in range(K):
        delta = np.zeros(M)
        delta[k % M] = magnitude if (k // M) % 2 == 0 else -magnitude
        models.append(AgentModel.isotropic(kind, w_c + delta, su[k], sv[k], rho))
    return ModelEnsemble(tuple(models), "sparse_differences")


def generate_smooth_models(
    network: Network,
    M: int,
    tau: float,
    seed=0,
    kind: str = "mse",
    sigma_u_range=(1.0, 1.5),
    sigma_v_range=(0.15, 0.25),
    rho: float = 0.0,
) -> ModelEnsemble:
    """Models that vary smoothly over the graph.

    Draws i.i.d. standard Gaussian vectors per agent and damps them with
    ``(I + tau * L)^{-1}`` per coordinate, ``L`` being the unweighted graph
    Laplacian. High graph frequencies are attenuated by ``1 / (1 + tau * lambda)``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    rng = np.random.default_rng(seed)
    K = network.num_agents
    raw = rng.standard_normal((K, M))
    W = np.linalg.solve(np.eye(K) + tau * network.laplacian(), raw)
    su, sv = _variances(rng, K, sigma_u_range, sigma_v_range)
    models = tuple(AgentModel.isotropic(kind, W[k], su[k], sv[k], rho) for k in range(K))
    return ModelEnsemble(models, "smooth_graph")


def custom_models(w_true, sigma_u2, noise_var=0.0, kind="mse", rho=0.0) -> ModelEnsemble:
    """Ensemble from explicit ground-truth vectors and per-agent variances."""
    W = np.atleast_2d(np.asarray(w_true, dtype=float))
    K = W.shape[0]
    su = np.broadcast_to(np.asarray(sigma_u2, dtype=float), (K,))
    sv = np.broadcast_to(np.asarray(noise_var, dtype=float), (K,))
    return ModelEnsemble(tuple(AgentModel.isotropic(kind, W[k], su[k], sv[k], rho)
                               for k in range(K)), "custom")


# ----------------------------------------------------------------------------
# single-sample API

def mse_sample(model: AgentModel, rng) -> tuple[np.ndarray, float]:
    """Draw ``(u, d)`` with ``d = u^T w_true + v``."""
    if model.kind != "mse":
        raise ValueError("mse_sample needs an MSE model")
    u = model._chol @ rng.standard_normal(model.M)
    d = float(u @ model.w_true + np.sqrt(model.noise_var) * rng.standard_normal())
    return u, d


def mse_stochastic_gradient(w, sample) -> np.ndarray:
    """Instantaneous MSE gradient ``-u (d - u^T w)``; broadcasts over leading axes."""
    u, d = sample
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if u.shape[-1] != w.shape[-1]:
        raise ValueError(f"dimension mismatch: u has {u.shape[-1]}, w has {w.shape[-1]}")
    err = np.asarray(d) - np.sum(u * w, axis=-1)
    return -u * err[..., None]


def mse_true_gradient(w, model: AgentModel) -> np.ndarray:
    """Exact MSE risk gradient ``R_u (w - w_true)``."""
    if model.kind != "mse":
        raise ValueError("mse_true_gradient needs an MSE model")
    return model.feature_cov @ (np.asarray(w, dtype=float) - model.w_true)


def logistic_sample(model: AgentModel, rng) -> tuple[np.ndarray, int]:
    """Draw ``(h, label)`` with ``P(label = +1 | h) = 1 / (1 + exp(-h^T w_true))``."""
    if model.kind != "logistic":
        raise ValueError("logistic_sample needs a logistic model")
    h = model._chol @ rng.standard_normal(model.M)
    label = 1 if rng.uniform() < expit(h @ model.w_true) else -1
    return h, label


def logistic_loss(w, sample, rho=0.0):
    """``ln(1 + exp(-y h^T w)) + rho/2 ||w||^2`` evaluated stably."""
    h, y = sample
    w = np.asarray(w, dtype=float)
    margin = np.asarray(y) * np.sum(np.asarray(h) * w, axis=-1)
    return -log_expit(margin) + 0.5 * rho * np.sum(w * w, axis=-1)


def logistic_stochastic_gradient(w, sample, rho=0.0) -> np.ndarray:
    """Instantaneous logistic gradient ``rho w - y h / (1 + exp(y h^T w))``."""
    h, y = sample
    h = np.asarray(h, dtype=float)
    w = np.asarray(w, dtype=float)
    if h.shape[-1] != w.shape[-1]:
        raise ValueError(f"dimension mismatch: h has {h.shape[-1]}, w has {w.shape[-1]}")
    y = np.asarray(y, dtype=float)
    margin = y * np.sum(h * w, axis=-1)
    return rho * w - (y * expit(-margin))[..., None] * h


# ----------------------------------------------------------------------------
# batched streams

class SampleStreams:
    """Per-(run, agent) sample streams for an ensemble.

    Stream ``(seed, run, agent)`` is an independent generator; features,
    measurement noise and labels use separate sub-streams. The ``i``-th call
    to `next` yields the ``i``-th sample of every stream, so a given agent's
    data depend only on ``(seed, run, agent, i)``.
    """

    def __init__(self, ensemble: ModelEnsemble, seed, runs=1, run_offset=0, chunk=256):
        self.ensemble = ensemble
        self.runs = runs
        self.chunk = chunk
        K = ensemble.K
        self._gens = [
            [[np.random.Generator(np.random.PCG64(
                np.random.SeedSequence(int(seed), spawn_key=(run_offset + r, k, s))))
              for s in range(2)] for k in range(K)]
            for r in range(runs)
        ]
        self._chols = ensemble.chols
        self._W = ensemble.w_true
        self._sv = np.sqrt(ensemble.noise_vars)
        self._pos = chunk
        self._X = self._y = None

    def block(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw the next `n` samples at once: (n, R, K, M) and (n, R, K)."""
        R, K, M = self.runs, self.ensemble.K, self.ensemble.M
        Z = np.empty((n, R, K, M))
        E = np.empty((n, R, K))
        for r in range(R):
            for k in range(K):
                Z[:, r, k] = self._gens[r][k][0].standard_normal((n, M))
                if self.ensemble.kind == "mse":
                    E[:, r, k] = self._gens[r][k][1].standard_normal(n)
                else:
                    E[:, r, k] = self._gens[r][k][1].uniform(size=n)
        X = np.einsum("kij,nrkj->nrki", self._chols, Z)
        clean = np.sum(X * self._W, axis=-1)
        if self.ensemble.kind == "mse":
            y = clean + self._sv * E
        else:
            y = np.where(E < expit(clean), 1.0, -1.0)
        return X, y

    def _refill(self):
        self._X, self._y = self.block(self.chunk)
        self._pos = 0

    def next(self) -> tuple[np.ndarray, np.ndarray]:
        """Next samples: features (R, K, M) and targets/labels (R, K)."""
        if self._pos >= self.chunk:
            self._refill()
        i = self._pos
        self._pos += 1
        return self._X[i], self._y[i]
