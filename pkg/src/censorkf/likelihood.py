"""Censored predictive log-likelihood and measurement-noise estimation.

The likelihood of a censored measurement sequence factorizes into one-step
predictive terms produced by a filter pass: a Gaussian density for interior
observations and a tail probability for clamped ones.  Every term's scale is
the full predictive standard deviation sqrt(H P H^T + r2); dropping the
H P H^T part noticeably biases the noise-variance estimate, so that omission
exists only as a test ablation (``_omit_prediction_var``).

Maximizing the total log-likelihood over r2 (coarse log-spaced grid, then
golden-section refinement of the bracketing triple) recovers the latent
measurement-noise variance from censored data alone.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .filters import FilterVariant, GaussianBelief, PredictiveStats, run_filter
from .model import CensoredMeasurement, CensorInterval, CensorStatus, StateSpaceModel
from .truncnorm import norm_logcdf

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LogLikSummary:
    """Total and per-step censored predictive log-likelihood."""

    total: float
    per_step: np.ndarray
    counts: dict[str, int]


@dataclass(frozen=True)
class NoiseEstimate:
    """Result of maximizing the censored likelihood over r2."""

    r2_hat: float
    loglik_at_opt: float
    search_trace: tuple[tuple[float, float], ...]
    at_boundary: bool

    def to_json_dict(self) -> dict:
        return {
            "r2_hat": self.r2_hat,
            "loglik_at_opt": self.loglik_at_opt,
            "at_boundary": self.at_boundary,
            "search_trace": [[r2, ll] for r2, ll in self.search_trace],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def step_loglik(pred: PredictiveStats, meas: CensoredMeasurement, interval: CensorInterval) -> float:
    """Log-density of one censored scalar observation under its predictive law.

    Interior: log N(y; mean_y, var_y).  At a limit: the log tail probability
    beyond that limit, evaluated in log space so deep tails stay finite.
    """
    if pred.mean_y.shape[0] != 1 or len(meas.status) != 1:
        raise ValueError("step_loglik handles one measurement coordinate at a time")
    s2 = float(pred.var_y[0])
    if not (s2 > 0.0 and math.isfinite(s2)):
        raise ValueError(f"predictive variance must be positive and finite, got {s2!r}")
    mean_y = float(pred.mean_y[0])
    s = math.sqrt(s2)
    status = meas.status[0]
    if status is CensorStatus.INTERIOR:
        z = (float(meas.value[0]) - mean_y) / s
        return -0.5 * z * z - math.log(s) - _LOG_SQRT_2PI
    if status is CensorStatus.AT_LOWER:
        if not math.isfinite(interval.lower):
            raise ValueError("status at_lower is inconsistent with an infinite lower limit")
        return norm_logcdf((interval.lower - mean_y) / s)
    if not math.isfinite(interval.upper):
        raise ValueError("status at_upper is inconsistent with an infinite upper limit")
    return norm_logcdf(-(interval.upper - mean_y) / s)


def _with_r2(model: StateSpaceModel, r2: float) -> StateSpaceModel:
    if model.measurement_dim != 1:
        raise ValueError("noise-variance likelihood is defined for scalar measurements")
    return replace(model, R=np.array([[float(r2)]]), r_schedule=None)


def total_loglik(
    r2: float,
    model: StateSpaceModel,
    measurements,
    limits,
    init: GaussianBelief,
    _omit_prediction_var: bool = False,
) -> LogLikSummary:
    """Censored log-likelihood of the data under measurement variance r2.

    Runs a full censored-filter pass with R = [[r2]] so every predictive term
    reflects the candidate variance through the gain history.
    """
    r2 = float(r2)
    if not (r2 > 0.0 and math.isfinite(r2)):
        raise ValueError(f"r2 must be positive and finite, got {r2!r}")
    trace = run_filter(
        _with_r2(model, r2),
        measurements,
        limits,
        variant=FilterVariant.CKF,
        init=init,
        warn_correlation=None,
    )
    if _omit_prediction_var:
        per_step = _ablated_per_step(trace, model, measurements, limits, r2)
    else:
        per_step = trace.step_loglik
    counts = trace.counts
    return LogLikSummary(total=float(np.sum(per_step)), per_step=per_step, counts=counts)


def _ablated_per_step(trace, model, measurements, limits, r2: float) -> np.ndarray:
    # diagnostic ablation: score each step with s^2 = r2 alone, dropping the
    # H P- H^T contribution; the filter pass itself is unchanged
    interval = limits if isinstance(limits, CensorInterval) else tuple(limits)[0]
    n = trace.prior_means.shape[1]
    out = np.empty(len(trace))
    for t, meas in enumerate(measurements):
        pred = PredictiveStats(
            mean_y=model.H @ trace.prior_means[t],
            var_y=np.array([r2]),
            cross_xy=np.zeros((n, 1)),
        )
        out[t] = step_loglik(pred, meas, interval)
    return out


def estimate_r2(
    model: StateSpaceModel,
    measurements,
    limits,
    init: GaussianBelief,
    bounds: tuple[float, float] | None = None,
    grid_points: int = 25,
    rel_tol: float = 1e-4,
) -> NoiseEstimate:
    """Maximum-likelihood estimate of the measurement-noise variance.

    A log-spaced grid over ``bounds`` locates the mode coarsely; golden-section
    search on the bracketing triple then refines it to a relative width of
    ``rel_tol``.  When ``bounds`` is omitted it defaults to
    [1e-4, 1e2] times the variance of the observed values.  An optimum hugging
    either bound is flagged (``at_boundary``) and warned about, since the true
    maximizer then likely lies outside the search range.
    """
    measurements = list(measurements)
    if bounds is None:
        scale = float(np.var([m.value[0] for m in measurements]))
        if scale <= 0.0:
            scale = 1.0
        bounds = (1e-4 * scale, 1e2 * scale)
    lo, hi = (float(b) for b in bounds)
    if not (0.0 < lo < hi):
        raise ValueError(f"bounds must satisfy 0 < lo < hi, got {bounds!r}")
    if grid_points < 3:
        raise ValueError("grid needs at least 3 points to bracket a maximum")

    trace: list[tuple[float, float]] = []

    def objective(r2: float) -> float:
        ll = total_loglik(r2, model, measurements, limits, init).total
        trace.append((r2, ll))
        return ll

    grid = np.geomspace(lo, hi, grid_points)
    values = [objective(r2) for r2 in grid]
    best = int(np.argmax(values))
    at_boundary = best in (0, grid_points - 1)

    left = grid[max(best - 1, 0)]
    right = grid[min(best + 1, grid_points - 1)]
    _golden_section_max(objective, left, right, rel_tol)

    r2_hat, loglik_at_opt = max(trace, key=lambda pair: pair[1])
    if at_boundary:
        warnings.warn(
            f"likelihood maximum at the search boundary (r2_hat={r2_hat:.4g}, "
            f"bounds={bounds}); the estimate is unreliable",
            RuntimeWarning,
            stacklevel=2,
        )
    return NoiseEstimate(
        r2_hat=float(r2_hat),
        loglik_at_opt=float(loglik_at_opt),
        search_trace=tuple(trace),
        at_boundary=at_boundary,
    )


_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section_max(f, lo: float, hi: float, rel_tol: float) -> None:
    """Golden-section maximization on a log axis; evaluations reach f's traces."""
    a, b = math.log(lo), math.log(hi)
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc, fd = f(math.exp(c)), f(math.exp(d))
    while (b - a) > rel_tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = f(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = f(math.exp(d))
    f(math.exp(0.5 * (a + b)))
