"""Closed-form proximal operators for weighted sums of sparsity penalties.

The scalar building block is the prox of

    h(x) = sum_j c_j * (|x - b_j| + beta/2 * (x - b_j)**2)

with step ``gamma``, evaluated by locating ``v`` in a partition of the real
line into ``2J + 1`` intervals (one flat segment per anchor and one affine
segment between consecutive anchors). The l1 prox is the ``beta = 0`` case.
For the l0 penalty the prox is set-valued and is found by comparing the
objective on the finite candidate set ``{v} U {b_j}``.

The social-learning step of the decentralized algorithm is separable over
coordinates, so the vector prox reduces to one scalar problem per coordinate
with anchors given by the neighbors' intermediate estimates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "ProxProblem",
    "ProxResult",
    "Regularizer",
    "interval_partition",
    "prox_elastic_net_sum",
    "prox_l1_sum",
    "prox_l0_sum",
    "reweight_coefficients",
    "prox_social_step",
    "social_step_batch",
    "social_step_indexed",
    "elastic_net_prox_batch",
    "l0_prox_batch",
    "squared_l2_prox_batch",
    "brute_force_prox_oracle",
]

# relative tolerance used to declare two l0 objective values equal
L0_TIE_RTOL = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class ProxProblem:
    """Scalar weighted-anchor prox problem.

    Use `ProxProblem.build` to sort anchors and merge duplicates; the direct
    constructor only validates.
    """

    anchors: tuple[float, ...]
    coeffs: tuple[float, ...]
    gamma: float
    beta: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        b, c = self.anchors, self.coeffs
        if len(b) != len(c):
            raise ValueError(f"{len(b)} anchors but {len(c)} coefficients")
        if any(not np.isfinite(x) for x in b):
            raise ValueError("anchors must be finite")
        if any(not (x > 0 and np.isfinite(x)) for x in c):
            raise ValueError(f"coefficients must be positive, got {c}")
        if any(b[j] >= b[j + 1] for j in range(len(b) - 1)):
            raise ValueError(f"anchors must be strictly increasing, got {b}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")

    @classmethod
    def build(cls, anchors, coeffs, gamma, beta=0.0, lam=1.0) -> "ProxProblem":
        """Sort anchors and merge duplicates by summing their coefficients."""
        merged: dict[float, float] = {}
        for b, c in zip(anchors, coeffs):
            merged[float(b)] = merged.get(float(b), 0.0) + float(c)
        keys = sorted(merged)
        return cls(tuple(keys), tuple(merged[k] for k in keys), float(gamma),
                   float(beta), float(lam))

    @property
    def J(self) -> int:
        return len(self.anchors)


@dataclass(frozen=True)
class ProxResult:
    """Possibly set-valued prox output with a deterministic representative."""

    values: tuple[float, ...]
    selected: float

    def __post_init__(self):
        if not self.values:
            raise ValueError("prox result needs at least one value")
        if self.selected not in self.values:
            raise ValueError("selected value must belong to values")


def select_l0(values: Sequence[float]) -> float:
    """Tie-break among l0 minimizers: smallest magnitude, then smallest value."""
    return min(values, key=lambda x: (abs(x), x))


# ----------------------------------------------------------------------------
# elastic net / l1

def interval_partition(problem: ProxProblem) -> list[tuple[str, int, float, float]]:
    """Interval partition of the real line for the elastic-net prox.

    Each boundary is evaluated from its own closed-form expression, so that
    adjacent ends can be compared against each other.

    Returns
    -------
    list of (kind, n, lo, hi)
        ``kind`` is ``"I0"`` (left tail), ``"flat"`` (prox equals ``b_n``)
        or ``"affine"`` (segment to the right of ``b_n``); intervals are
        left-closed, right-open and listed left to right. ``n`` is 1-based.
    """
    b = np.asarray(problem.anchors, dtype=float)
    c = np.asarray(problem.coeffs, dtype=float)
    g, beta, J = problem.gamma, problem.beta, problem.J
    if J == 0:
        return [("I0", 0, -np.inf, np.inf)]

    def s(lo, hi):  # sum_{j=lo}^{hi} c_j, 1-based inclusive
        return float(c[lo - 1:hi].sum()) if hi >= lo else 0.0

    def spread(x, skip_first=False):  # sum_j c_j (x - b_j)
        cj, bj = (c[1:], b[1:]) if skip_first else (c, b)
        return float(np.sum(cj * (x - bj)))

    out = [("I0", 0, -np.inf, b[0] - g * s(1, J) + beta * g * spread(b[0], skip_first=True))]
    for n in range(1, J + 1):
        bn = b[n - 1]
        lo1 = bn - g * (s(n, J) - s(1, n - 1)) + beta * g * spread(bn)
        hi1 = bn - g * (s(n + 1, J) - s(1, n)) + beta * g * spread(bn)
        out.append(("flat", n, lo1, hi1))
        if n < J:
            bn1 = b[n]
            lo2 = bn - g * (s(n + 1, J) - s(1, n)) + beta * g * spread(bn)
            hi2 = bn1 - g * (s(n + 1, J) - s(1, n)) + beta * g * spread(bn1)
        else:
            lo2 = bn + g * s(1, J) + beta * g * spread(bn)
            hi2 = np.inf
        out.append(("affine", n, lo2, hi2))
    return out


def prox_elastic_net_sum(v: float, problem: ProxProblem) -> float:
    """Prox of ``gamma * sum_j c_j (|x - b_j| + beta/2 (x - b_j)^2)`` at `v`."""
    if not isinstance(problem, ProxProblem):
        raise TypeError("problem must be a ProxProblem")
    b = problem.anchors
    c = np.asarray(problem.coeffs, dtype=float)
    g, beta = problem.gamma, problem.beta
    if problem.J == 0:
        return float(v)
    total = float(c.sum())
    weighted = float(np.dot(c, b))
    denom = 1.0 + beta * g * total

    for kind, n, _lo, hi in interval_partition(problem):
        if v < hi:
            break
    if kind == "flat":
        return float(b[n - 1])
    # affine pieces: n = 0 is the left tail
    left = float(c[:n].sum())
    return float((v + g * ((total - left) - left) + beta * g * weighted) / denom)


def prox_l1_sum(v: float, problem: ProxProblem) -> float:
    """Prox of ``gamma * sum_j c_j |x - b_j|`` at `v` (beta ignored)."""
    if not isinstance(problem, ProxProblem):
        raise TypeError("problem must be a ProxProblem")
    return prox_elastic_net_sum(v, ProxProblem(problem.anchors, problem.coeffs,
                                               problem.gamma, 0.0, problem.lam))


def _rows(v, b, c, gamma):
    """Broadcast batch inputs and flatten them to (N,) and (N, J) rows."""
    v = np.asarray(v, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    J = np.broadcast_shapes(b.shape, c.shape)[-1]
    shape = np.broadcast_shapes(v.shape, b.shape[:-1], c.shape[:-1], np.shape(gamma))
    B = np.ascontiguousarray(np.broadcast_to(b, (*shape, J))).reshape(-1, J)
    C = np.ascontiguousarray(np.broadcast_to(c, (*shape, J))).reshape(-1, J)
    V = np.ascontiguousarray(np.broadcast_to(v, shape)).ravel()
    G = np.ascontiguousarray(np.broadcast_to(np.asarray(gamma, dtype=float), shape)).ravel()
    return shape, V, B, C, G


def elastic_net_prox_batch(v, b, c, gamma, beta=0.0):
    """Vectorized elastic-net-sum prox.

    Parameters
    ----------
    v : ndarray, shape (...)
    b, c : ndarray, shape (..., J)
        Anchors and nonnegative coefficients. Anchors need not be sorted or
        distinct; zero coefficients act as absent anchors.
    gamma : float or ndarray broadcastable to `v`
    beta : float

    Notes
    -----
    Zero-weight and repeated anchors produce zero-length intervals in the
    partition, so no explicit merge is needed here.
    """
    shape, V, B, C, G = _rows(v, b, c, gamma)
    out = np.empty(V.size)
    _kernels.elastic_net_rows(V, B, C, G, float(beta), out)
    return out.reshape(shape)


def squared_l2_prox_batch(v, b, c, gamma):
    """Prox of ``gamma * sum_j c_j (x - b_j)^2`` (an affine averaging map)."""
    v = np.asarray(v, dtype=float)
    c = np.asarray(c, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    return (v + 2 * gamma * np.sum(c * b, axis=-1)) / (1 + 2 * gamma * np.sum(c, axis=-1))


# ----------------------------------------------------------------------------
# l0

def prox_l0_sum(v: float, problem: ProxProblem) -> ProxResult:
    """Prox of ``gamma * sum_j c_j * lam * [x != b_j]`` at `v`.

    Shifting the penalty by a constant does not move its minimizers, so the
    objective is taken as ``-lam c_j + (b_j - v)^2 / (2 gamma)`` at anchor
    ``b_j`` and ``(x - v)^2 / (2 gamma)`` elsewhere; the minimum over the
    reals is attained on ``{v} U {b_j}``.
    """
    if not isinstance(problem, ProxProblem):
        raise TypeError("problem must be a ProxProblem")
    b = np.asarray(problem.anchors, dtype=float)
    c = np.asarray(problem.coeffs, dtype=float)
    g, lam = problem.gamma, problem.lam
    v = float(v)
    if problem.J == 0:
        return ProxResult((v,), v)

    quad = (b - v) ** 2 / (2 * g)
    f = -lam * c + quad
    scale = lam * c + quad
    j_min = int(np.argmin(f))
    f_min = f[j_min]
    tie = np.abs(f - f_min) <= L0_TIE_RTOL * (scale + scale[j_min])
    omega = b[tie]

    if np.any(b == v):
        # v coincides with an anchor: the candidate set is the anchors only
        values = omega
    elif abs(f_min) <= L0_TIE_RTOL * scale[j_min]:
        values = np.append(omega, v)
    elif f_min < 0:
        values = omega
    else:
        values = np.array([v])
    vals = tuple(sorted(float(x) for x in values))
    return ProxResult(vals, select_l0(vals))


def l0_prox_batch(v, b, c, gamma, lam=1.0):
    """Vectorized l0-sum prox returning the tie-broken representative.

    Shapes as in `elastic_net_prox_batch`. Repeated anchors are merged by
    summing their coefficients; zero coefficients are ignored.
    """
    shape, V, B, C, G = _rows(v, b, c, gamma)
    out = np.empty(V.size)
    _kernels.l0_rows(V, B, C, G, float(lam), L0_TIE_RTOL, out)
    return out.reshape(shape)


# ----------------------------------------------------------------------------
# social step

@dataclass(frozen=True)
class Regularizer:
    """Co-regularizer kind and its parameters.

    kind : one of ``l1``, ``reweighted_l1``, ``l0``, ``elastic_net``,
        ``squared_l2``.
    """

    kind: str
    beta: float = 0.0
    lam: float = 1.0
    epsilon: float = 0.1

    KINDS = ("l1", "reweighted_l1", "l0", "elastic_net", "squared_l2")
    CONVEX = ("l1", "elastic_net", "squared_l2")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown regularizer {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "reweighted_l1" and not self.epsilon > 0:
            raise ValueError(f"reweighted_l1 needs epsilon > 0, got {self.epsilon}")
        if self.kind == "l0" and not self.lam > 0:
            raise ValueError(f"l0 needs lambda > 0, got {self.lam}")
        if self.kind == "elastic_net" and not self.beta >= 0:
            raise ValueError(f"elastic_net needs beta >= 0, got {self.beta}")

    @property
    def convex(self) -> bool:
        return self.kind in self.CONVEX

    def label(self) -> str:
        if self.kind == "reweighted_l1":
            return f"reweighted_l1(eps={self.epsilon:g})"
        if self.kind == "l0":
            return f"l0(lam={self.lam:g})"
        if self.kind == "elastic_net":
            return f"elastic_net(beta={self.beta:g})"
        return self.kind

    def pair_penalty(self, diff) -> np.ndarray:
        """``f(w_k, w_l)`` as a function of ``diff = w_k - w_l`` (last axis)."""
        diff = np.asarray(diff, dtype=float)
        if self.kind in ("l1", "reweighted_l1"):
            return np.abs(diff).sum(-1)
        if self.kind == "elastic_net":
            return np.abs(diff).sum(-1) + 0.5 * self.beta * (diff ** 2).sum(-1)
        if self.kind == "squared_l2":
            return (diff ** 2).sum(-1)
        return self.lam * np.count_nonzero(diff, axis=-1)


def reweight_coefficients(delta, base_p: float, epsilon: float) -> np.ndarray:
    """Per-coordinate reweighted-l1 coefficients ``base_p / (eps + |delta|)``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return base_p / (epsilon + np.abs(np.asarray(delta, dtype=float)))


def social_step_batch(psi, nbr_psi, nbr_weight, step, reg: Regularizer):
    """Batched social step.

    Parameters
    ----------
    psi : ndarray, shape (..., M)
        Own intermediate estimates.
    nbr_psi : ndarray, shape (..., D, M)
        Neighbors' intermediate estimates (padding slots allowed).
    nbr_weight : ndarray, shape (..., D)
        ``p_kl`` per neighbor; zero for padding slots.
    step : float
        ``mu * eta``.
    """
    psi = np.asarray(psi, dtype=float)
    if step == 0:
        return psi.copy()
    # coordinate-major anchors: (..., M, D)
    anchors = np.swapaxes(np.asarray(nbr_psi, dtype=float), -1, -2)
    coeffs = np.asarray(nbr_weight, dtype=float)[..., None, :]
    if reg.kind == "reweighted_l1":
        coeffs = coeffs * reweight_coefficients(psi[..., :, None] - anchors, 1.0, reg.epsilon)
    if reg.kind in ("l1", "reweighted_l1"):
        return elastic_net_prox_batch(psi, anchors, coeffs, step, 0.0)
    if reg.kind == "elastic_net":
        return elastic_net_prox_batch(psi, anchors, coeffs, step, reg.beta)
    if reg.kind == "squared_l2":
        return squared_l2_prox_batch(psi, anchors, coeffs, step)
    return l0_prox_batch(psi, anchors, coeffs, step, reg.lam)


def social_step_indexed(psi, idx, weights, step, reg: Regularizer):
    """Social step for a batch of runs with neighbors given by index.

    Parameters
    ----------
    psi : ndarray, shape (R, K, M)
        Intermediate estimates of every agent.
    idx, weights : ndarray, shape (K, D)
        Padded neighbor lists and weights ``p_kl`` (zero for padding), as
        returned by `Network.padded_neighbors`.
    step : float
        ``mu * eta``.

    Same result as `social_step_batch` with ``nbr_psi = psi[:, idx, :]``.
    """
    psi = np.ascontiguousarray(psi, dtype=float)
    if step == 0:
        return psi.copy()
    out = np.empty_like(psi)
    _kernels.social_rows(psi, np.ascontiguousarray(idx, dtype=np.int64),
                         np.ascontiguousarray(weights, dtype=float), float(step),
                         _KIND_CODES[reg.kind], float(reg.beta), float(reg.lam),
                         float(reg.epsilon), L0_TIE_RTOL, out)
    return out


_KIND_CODES = {"l1": _kernels.L1, "reweighted_l1": _kernels.REWEIGHTED_L1, "l0": _kernels.L0,
               "elastic_net": _kernels.ELASTIC_NET, "squared_l2": _kernels.SQUARED_L2}


def prox_social_step(psi_k, neighbor_psis, p_weights, step: float, regularizer: Regularizer):
    """Social-learning step of one agent.

    Evaluates ``prox_{step * g}(psi_k)`` with
    ``g(w) = sum_l p_kl f(w, psi_l)`` coordinate by coordinate.

    Parameters
    ----------
    psi_k : array_like, shape (M,)
    neighbor_psis : sequence of (l, array_like) or of arrays, each shape (M,)
    p_weights : sequence of float, one per neighbor
    step : float
        ``mu * eta``; zero returns `psi_k` unchanged.
    regularizer : Regularizer
    """
    psi_k = np.asarray(psi_k, dtype=float)
    vecs = [np.asarray(item[1] if isinstance(item, tuple) else item, dtype=float)
            for item in neighbor_psis]
    if len(vecs) != len(p_weights):
        raise ValueError(f"{len(vecs)} neighbors but {len(p_weights)} weights")
    if any(x.shape != psi_k.shape for x in vecs):
        raise ValueError("neighbor vectors must match psi_k in length")
    if step < 0:
        raise ValueError(f"step must be nonnegative, got {step}")
    if not vecs or step == 0:
        return psi_k.copy()
    out = np.empty_like(psi_k)
    w = np.asarray(p_weights, dtype=float)
    for m in range(psi_k.size):
        b = np.array([x[m] for x in vecs])
        if regularizer.kind == "squared_l2":
            out[m] = squared_l2_prox_batch(psi_k[m], b, w, step)
            continue
        c = w
        if regularizer.kind == "reweighted_l1":
            c = w * reweight_coefficients(psi_k[m] - b, 1.0, regularizer.epsilon)
        beta = regularizer.beta if regularizer.kind == "elastic_net" else 0.0
        problem = ProxProblem.build(b, c, step, beta=beta, lam=regularizer.lam)
        if regularizer.kind == "l0":
            out[m] = prox_l0_sum(psi_k[m], problem).selected
        else:
            out[m] = prox_elastic_net_sum(psi_k[m], problem)
    return out


# ----------------------------------------------------------------------------
# oracle

def brute_force_prox_oracle(
    v: float,
    objective: Callable[[np.ndarray], np.ndarray],
    search_interval: tuple[float, float],
    grid_step: float,
    gamma: float = 1.0,
    anchors: Sequence[float] | None = None,
    weight_sum: float | None = None,
    points_per_level: int = 2001,
) -> float:
    """Grid minimizer of ``objective(x) + (x - v)^2 / (2 gamma)``.

    The grid is searched coarse to fine (each level zooms onto the two cells
    around the incumbent) down to spacing `grid_step`, then refined by a
    ternary search. Valid for unimodal objectives, which covers every convex
    penalty. `objective` must accept an ndarray of ``np.longdouble`` and
    return values of the same shape; evaluation stays in extended precision
    so that rounding noise does not swamp the flat bottom of the quadratic.

    When `anchors` and `weight_sum` are given, the interval must cover the
    anchors and `v` with a margin of ``10 * gamma * weight_sum``.
    """
    lo, hi = map(float, search_interval)
    if not lo < hi:
        raise ValueError(f"empty search interval [{lo}, {hi}]")
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    if anchors is not None and len(anchors):
        margin = 10 * gamma * (weight_sum if weight_sum is not None else 0.0)
        need_lo = min(min(anchors), v) - margin
        need_hi = max(max(anchors), v) + margin
        if lo > need_lo or hi < need_hi:
            raise ValueError(
                f"search interval [{lo}, {hi}] does not cover [{need_lo}, {need_hi}]")
    elif not lo <= v <= hi:
        raise ValueError(f"v={v} outside search interval [{lo}, {hi}]")

    ld = np.longdouble
    vv, gg = ld(v), ld(gamma)

    def total(x):
        return objective(x) + (x - vv) ** 2 / (2 * gg)

    a, z = ld(lo), ld(hi)
    while True:
        n = points_per_level
        spacing = (z - a) / (n - 1)
        if spacing <= grid_step:
            n = int(np.ceil(float(z - a) / grid_step)) + 1
            spacing = (z - a) / (n - 1)
        x = a + spacing * np.arange(n, dtype=ld)
        i = int(np.argmin(total(x)))
        a = x[max(i - 1, 0)]
        z = x[min(i + 1, n - 1)]
        if spacing <= grid_step:
            break
    for _ in range(200):
        if z - a <= ld(1e-15) * max(ld(1), abs(a)):
            break
        m1 = a + (z - a) / 3
        m2 = z - (z - a) / 3
        if total(np.array([m1]))[0] <= total(np.array([m2]))[0]:
            z = m2
        else:
            a = m1
    return float((a + z) / 2)
