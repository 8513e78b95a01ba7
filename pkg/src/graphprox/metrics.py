"""Learning curves, steady-state levels and classification error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .costs import ModelEnsemble

__all__ = [
    "LearningCurve",
    "SteadyStateError",
    "msd_curve",
    "msd_loc_curve",
    "steady_state_db",
    "prediction_error",
    "tail_average",
    "write_curve_csv",
]

REFERENCE_KINDS = ("regularized_solution", "local_models")


class SteadyStateError(ValueError):
    """The curve has not settled over the averaging window."""


@dataclass(frozen=True)
class LearningCurve:
    """Mean-square deviation per iteration, averaged over agents and runs.

    ``values[i - 1]`` is the deviation after iteration ``i``.
    """

    values: np.ndarray
    n_runs: int
    reference_kind: str = "regularized_solution"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("curve values must be one-dimensional")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite and nonnegative")
        if self.reference_kind not in REFERENCE_KINDS:
            raise ValueError(f"reference_kind must be one of {REFERENCE_KINDS}")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    def db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10 * np.log10(self.values)


def _stack_estimates(trajectories) -> np.ndarray:
    est = [np.asarray(getattr(t, "estimates", t), dtype=float) for t in trajectories]
    if not est:
        raise ValueError("need at least one trajectory")
    shapes = {e.shape for e in est}
    if len(shapes) != 1:
        raise ValueError(f"trajectories differ in shape: {sorted(shapes)}")
    return np.stack(est)  # (R, T + 1, K, M)


def msd_curve(trajectories: Sequence, reference, reference_kind="regularized_solution") -> LearningCurve:
    """``MSD(i) = (1/K) sum_k mean_runs ||w_ref_k - w_{k,i}||^2`` for ``i >= 1``.

    Parameters
    ----------
    trajectories : sequence of `Trajectory` or arrays of shape (T + 1, K, M)
    reference : array_like, shape (K, M) or (K * M,)
    """
    est = _stack_estimates(trajectories)
    R, T1, K, M = est.shape
    ref = np.asarray(reference, dtype=float)
    if ref.size != K * M:
        raise ValueError(f"reference has {ref.size} entries, expected K*M = {K * M}")
    ref = ref.reshape(K, M)
    dev = np.sum((est[:, 1:] - ref) ** 2, axis=(0, 2, 3)) / (R * K)
    return LearningCurve(dev, R, reference_kind)


def msd_loc_curve(trajectories: Sequence, ensemble: ModelEnsemble) -> LearningCurve:
    """Deviation from the local models ``w_k^o``."""
    return msd_curve(trajectories, ensemble.w_true, "local_models")


def steady_state_db(curve, window: int = 200, check: bool = True, tol_db: float = 0.2) -> float:
    """``10 log10`` of the mean of the last `window` curve values.

    With `check`, the means of the two halves of the window must agree within
    `tol_db`; otherwise the horizon is too short and `SteadyStateError` is
    raised.
    """
    vals = np.asarray(getattr(curve, "values", curve), dtype=float)
    if window < 1:
        raise ValueError("window must be positive")
    if vals.size <= window:
        raise ValueError(f"curve length {vals.size} does not exceed window {window}")
    tail = vals[-window:]
    if np.any(tail <= 0):
        raise ValueError("steady-state level undefined: nonpositive values in window")
    if check and window >= 2:
        h = window // 2
        a, b = 10 * np.log10(tail[:h].mean()), 10 * np.log10(tail[h:].mean())
        if abs(a - b) >= tol_db:
            raise SteadyStateError(
                f"half-window means differ by {abs(a - b):.3f} dB (>= {tol_db}); "
                "lengthen the horizon")
    return float(10 * np.log10(tail.mean()))


def tail_average(estimates, window: int = 200) -> np.ndarray:
    """Average of the last `window` iterates, shape (K, M)."""
    est = np.asarray(getattr(estimates, "estimates", estimates), dtype=float)
    if est.shape[0] < window:
        raise ValueError(f"only {est.shape[0]} iterates, need {window}")
    return est[-window:].mean(axis=0)


def prediction_error(weights, test_set) -> float:
    """Mean over agents of the fraction of misclassified test samples.

    Parameters
    ----------
    weights : array_like, shape (K, M)
    test_set : sequence of ``(H_k, y_k)`` with ``H_k`` of shape (D_k, M)
        and labels ``y_k`` in {-1, +1}.

    A zero score ``h^T w = 0`` has sign 0 and always counts as an error.
    """
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    if len(test_set) != W.shape[0]:
        raise ValueError(f"{len(test_set)} test sets for {W.shape[0]} agents")
    errs = []
    for k, (H, y) in enumerate(test_set):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if y.size == 0:
            raise ValueError(f"agent {k} has an empty test set")
        if H.shape != (y.size, W.shape[1]):
            raise ValueError(f"agent {k}: features {H.shape} vs {y.size} labels, M={W.shape[1]}")
        errs.append(np.mean(np.sign(H @ W[k]) != y))
    return float(np.mean(errs))


def write_curve_csv(path, curve: LearningCurve, header: str = ""):
    """Columns ``iteration, msd, msd_db``."""
    with open(path, "w") as fh:
        fh.write(header)
        fh.write("iteration,msd,msd_db\n")
        for i, (v, d) in enumerate(zip(curve.values, curve.db()), start=1):
            fh.write(f"{i},{float(v)!r},{float(d)!r}\n")
