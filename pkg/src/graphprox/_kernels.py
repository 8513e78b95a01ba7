"""Compiled per-element loops behind the batched prox operators.

The row kernels take flattened inputs: ``v`` and ``g`` of shape (N,),
anchors ``B`` and coefficients ``C`` of shape (N, J). `social_rows` gathers
the anchors from the neighbors' intermediate estimates directly.
"""

import numpy as np
from numba import njit

# regularizer codes understood by `social_rows`
L1, REWEIGHTED_L1, L0, ELASTIC_NET, SQUARED_L2 = range(5)


@njit(cache=True)
def _elastic_net(v, b, c, J, g, beta):
    """Prox at `v`; sorts ``b[:J]`` and ``c[:J]`` in place."""
    for j in range(1, J):  # stable insertion sort
        x, w = b[j], c[j]
        n = j
        while n > 0 and b[n - 1] > x:
            b[n] = b[n - 1]
            c[n] = c[n - 1]
            n -= 1
        b[n] = x
        c[n] = w
    total = 0.0
    weighted = 0.0
    for j in range(J):
        total += c[j]
        weighted += c[j] * b[j]
    # flat piece [start_n, end_n) at b_n, affine pieces in between
    left = 0.0
    for n in range(J):
        off = beta * g * (total * b[n] - weighted)
        start = b[n] - g * (total - 2 * left) + off
        if v < start:
            break
        cum = left + c[n]
        end = b[n] - g * (total - 2 * cum) + off
        if v < end:
            return b[n]
        left = cum
    return (v + g * (total - 2 * left) + beta * g * weighted) / (1.0 + beta * g * total)


@njit(cache=True)
def _l0(v, b, c, J, g, lam, rtol):
    best_f = np.inf
    best_s = 0.0
    at_v = 0.0
    # first minimizer over the anchors, then v
    for j in range(J):
        if c[j] > 0:
            merged = 0.0
            for l in range(J):
                if c[l] > 0 and b[l] == b[j]:
                    merged += c[l]
            quad = (b[j] - v) ** 2 / (2 * g)
            f = -lam * merged + quad
            if f < best_f:
                best_f = f
                best_s = lam * merged + quad
            if b[j] == v:
                at_v += c[j]
    f_v = -lam * at_v
    if f_v < best_f:
        best_f = f_v
        best_s = lam * at_v
    # near-ties: smallest magnitude, then smallest value
    pick = np.inf
    key = np.inf
    for j in range(J + 1):
        if j < J:
            if not c[j] > 0:
                continue
            x = b[j]
            merged = 0.0
            for l in range(J):
                if c[l] > 0 and b[l] == x:
                    merged += c[l]
            quad = (x - v) ** 2 / (2 * g)
            f = -lam * merged + quad
            s = lam * merged + quad
        else:
            x, f, s = v, f_v, lam * at_v
        if abs(f - best_f) <= rtol * (s + best_s):
            k = abs(x)
            if k < key or (k == key and x < pick):
                key = k
                pick = x
    return pick


@njit(cache=True)
def elastic_net_rows(v, B, C, g, beta, out):
    N, J = B.shape
    b = np.empty(J)
    c = np.empty(J)
    for r in range(N):
        b[:] = B[r]
        c[:] = C[r]
        out[r] = _elastic_net(v[r], b, c, J, g[r], beta)


@njit(cache=True)
def l0_rows(v, B, C, g, lam, rtol, out):
    N, J = B.shape
    for r in range(N):
        out[r] = _l0(v[r], B[r], C[r], J, g[r], lam, rtol)


@njit(cache=True)
def social_rows(psi, idx, wts, step, kind, beta, lam, eps, rtol, out):
    """Social step for estimates `psi` of shape (R, K, M).

    ``idx[k, d]`` and ``wts[k, d]`` list agent ``k``'s neighbors and the
    weights ``p_kl``; padding slots carry weight 0.
    """
    R, K, M = psi.shape
    D = idx.shape[1]
    b = np.empty(D)
    c = np.empty(D)
    for r in range(R):
        for k in range(K):
            for m in range(M):
                v = psi[r, k, m]
                for d in range(D):
                    b[d] = psi[r, idx[k, d], m]
                    c[d] = wts[k, d]
                    if kind == REWEIGHTED_L1:
                        c[d] = c[d] / (eps + abs(v - b[d]))
                if kind == L0:
                    out[r, k, m] = _l0(v, b, c, D, step, lam, rtol)
                elif kind == SQUARED_L2:
                    num = v
                    den = 1.0
                    for d in range(D):
                        num += 2 * step * c[d] * b[d]
                        den += 2 * step * c[d]
                    out[r, k, m] = num / den
                else:
                    out[r, k, m] = _elastic_net(v, b, c, D, step,
                                                beta if kind == ELASTIC_NET else 0.0)
