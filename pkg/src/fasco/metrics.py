"""Q-error and workload summaries."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize_scalar


def q_error(est: float, actual: float) -> float:
    if not (est > 0 and actual > 0):
        raise ValueError(f"q_error needs positive inputs, got est={est}, actual={actual}")
    return max(est / actual, actual / est)


def q_errors(est, actual) -> np.ndarray:
    est, actual = np.asarray(est, dtype=float), np.asarray(actual, dtype=float)
    if np.any(est <= 0) or np.any(actual <= 0):
        raise ValueError("q_errors needs positive inputs")
    return np.maximum(est / actual, actual / est)


@dataclass(frozen=True)
class ErrorSummary:
    mean: float
    p50: float
    p90: float
    p95: float
    p99: float
    max: float
    n: int

    def as_record(self) -> dict:
        return asdict(self)

    def __str__(self):
        return (f"n={self.n} mean={self.mean:.3f} p50={self.p50:.3f} p90={self.p90:.3f} "
                f"p95={self.p95:.3f} p99={self.p99:.3f} max={self.max:.3f}")


def nearest_rank(sorted_vals, k: float):
    n = len(sorted_vals)
    idx = max(1, math.ceil(k / 100.0 * n))
    return sorted_vals[idx - 1]


def summarize(errors) -> ErrorSummary:
    errs = sorted(float(e) for e in errors)
    if not errs:
        raise ValueError("cannot summarize an empty error list")
    return ErrorSummary(
        mean=float(np.mean(errs)),
        p50=nearest_rank(errs, 50), p90=nearest_rank(errs, 90),
        p95=nearest_rank(errs, 95), p99=nearest_rank(errs, 99),
        max=errs[-1], n=len(errs),
    )


def fit_cost_scale(est_costs, actuals) -> float:
    """Scale ``a`` minimising mean Q-error of ``a * est_cost`` against ``actuals``.

    The objective is convex in ``log a``.
    """
    r = np.log(np.asarray(actuals, float)) - np.log(np.asarray(est_costs, float))
    obj = lambda s: float(np.mean(np.exp(np.abs(s - r))))
    lo, hi = float(r.min()), float(r.max())
    if lo == hi:
        return math.exp(lo)
    res = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return math.exp(res.x)
