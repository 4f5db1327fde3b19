"""Recursive filters for interval-censored measurements.

Variants
--------
KF        feeds clamped measurement values to the standard Kalman update as
          if they were exact.
MISSING   skips the measurement update entirely on censored steps, so the
          posterior is the prediction.
CKF       replaces the update on censored steps with the exact conditional
          moments of the state given that the latent measurement fell beyond
          the limit; interior steps are the standard Kalman update.

A filter run is a sequential fold over time steps.  Distinct runs over
distinct data are freely parallel: models, beliefs, and traces are immutable
or owned by the caller.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import CensoredMeasurement, CensorInterval, CensorStatus, StateSpaceModel, censor
from .truncnorm import (
    conditional_moments_lower,
    conditional_moments_upper,
    mills_lower,
    mills_upper,
    symmetrize,
    symmetrize_clamp,
)

#: Predictive correlations above this make the rolled-forward Gaussian
#: approximation of a censored posterior questionable.
CORRELATION_WARN_THRESHOLD = 0.75


class FilterVariant(enum.Enum):
    KF = "kf"
    MISSING = "missing"
    CKF = "ckf"


@dataclass(frozen=True)
class GaussianBelief:
    """State mean and covariance carried by the filter."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"cov must be {n}x{n}, got {cov.shape}")
        if not np.array_equal(cov, cov.T):
            # tolerate rounding asymmetry, reject anything larger
            if np.max(np.abs(cov - cov.T)) > 1e-10:
                raise ValueError("cov must be symmetric (within 1e-10)")
            cov = symmetrize(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class PredictiveStats:
    """One-step-ahead measurement statistics implied by a predicted belief.

    mean_y[i]  = (H x)_i
    var_y[i]   = (H P H^T + R)_{ii}
    cross_xy   = P H^T, the state/measurement cross-covariance.
    """

    mean_y: np.ndarray
    var_y: np.ndarray
    cross_xy: np.ndarray


@dataclass(frozen=True)
class AdaptiveLimits:
    """Recompute censoring limits each step as (H x_pred)_i -/+ offset."""

    offset: float

    def __post_init__(self):
        offset = float(self.offset)
        if not (math.isfinite(offset) and offset > 0.0):
            raise ValueError(f"adaptive offset must be positive and finite, got {offset!r}")
        object.__setattr__(self, "offset", offset)


def predict(belief: GaussianBelief, model: StateSpaceModel, t: int = 0) -> GaussianBelief:
    """Time update: mean -> A mean, cov -> A cov A^T + Q_t (symmetrized)."""
    mean = model.A @ belief.mean
    cov = symmetrize(model.A @ belief.cov @ model.A.T + model.q_at(t))
    return GaussianBelief(mean=mean, cov=cov)


def predictive_stats(predicted: GaussianBelief, model: StateSpaceModel, t: int = 0) -> PredictiveStats:
    cross = predicted.cov @ model.H.T
    var_y = np.einsum("ij,ji->i", model.H, cross) + np.diag(model.r_at(t))
    return PredictiveStats(mean_y=model.H @ predicted.mean, var_y=var_y, cross_xy=cross)


def kf_update(prior: GaussianBelief, y, model: StateSpaceModel, t: int = 0) -> GaussianBelief:
    """Standard Kalman measurement update of a predicted belief."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    H = model.H
    cross = prior.cov @ H.T                     # (n, m)
    innovation = y - H @ prior.mean
    R = model.r_at(t)
    if H.shape[0] == 1:
        s2 = float(H[0] @ cross[:, 0]) + float(R[0, 0])
        if s2 <= 0.0 or not math.isfinite(s2):
            raise np.linalg.LinAlgError(f"innovation variance {s2!r} is not usable")
        gain = cross[:, 0] / s2
        mean = prior.mean + gain * innovation[0]
        cov = prior.cov - np.outer(gain, cross[:, 0])
    else:
        S = H @ cross + R
        try:
            gain = np.linalg.solve(S, cross.T).T    # P H^T S^{-1} without forming S^{-1}
        except np.linalg.LinAlgError as err:
            raise np.linalg.LinAlgError(
                f"innovation covariance is singular at step {t}: {err}"
            ) from err
        mean = prior.mean + gain @ innovation
        cov = prior.cov - gain @ cross.T
    return GaussianBelief(mean=mean, cov=symmetrize(cov))


def _require_finite_limit(value: float, status: CensorStatus) -> float:
    if not math.isfinite(value):
        raise ValueError(
            f"measurement flagged {status.value} but the corresponding limit is {value}"
        )
    return value


def ckf_update_scalar(
    prior: GaussianBelief,
    meas: CensoredMeasurement,
    interval: CensorInterval,
    model: StateSpaceModel,
    t: int = 0,
) -> GaussianBelief:
    """Censored update for a one-dimensional measurement.

    Interior measurements reduce exactly to :func:`kf_update`.  A clamped
    measurement contributes only the event {y* <= lower} (or {y* >= upper}),
    which conditions the state through its predictive cross-covariance.
    """
    if model.measurement_dim != 1 or len(meas.status) != 1:
        raise ValueError("scalar update requires a one-dimensional measurement")
    status = meas.status[0]
    if status is CensorStatus.INTERIOR:
        return kf_update(prior, meas.value, model, t)
    stats = predictive_stats(prior, model, t)
    s_y = math.sqrt(stats.var_y[0])
    if status is CensorStatus.AT_LOWER:
        limit = _require_finite_limit(interval.lower, status)
        cm = conditional_moments_lower(prior.mean, prior.cov, stats.cross_xy[:, 0], stats.mean_y[0], s_y, limit)
    else:
        limit = _require_finite_limit(interval.upper, status)
        cm = conditional_moments_upper(prior.mean, prior.cov, stats.cross_xy[:, 0], stats.mean_y[0], s_y, limit)
    return GaussianBelief(mean=cm.mean, cov=cm.cov)


def ckf_update_multi(
    prior: GaussianBelief,
    meas: CensoredMeasurement,
    intervals,
    model: StateSpaceModel,
    t: int = 0,
) -> GaussianBelief:
    """Censored update for multidimensional measurements with diagonal R.

    Builds a per-coordinate innovation surrogate E and a diagonal factor G
    (identity entries for interior coordinates, the conditional-moment
    shrink factors for censored ones), then applies the joint gain
    K = P H^T S^{-1}:  mean += K E,  cov = (I - K G H) P.
    """
    m = model.measurement_dim
    if len(meas.status) != m:
        raise ValueError("measurement dimension does not match the model")
    if not model.has_diagonal_r:
        raise ValueError(
            "censored multidimensional updates require uncorrelated measurement "
            "coordinates (diagonal R)"
        )
    if isinstance(intervals, CensorInterval):
        intervals = (intervals,) * m
    intervals = tuple(intervals)
    if len(intervals) != m:
        raise ValueError(f"expected {m} censoring intervals, got {len(intervals)}")
    if meas.all_interior:
        return kf_update(prior, meas.value, model, t)

    H = model.H
    cross = prior.cov @ H.T                       # S1 = P H^T
    S2 = H @ cross + model.r_at(t)
    surrogate = np.empty(m)
    shrink = np.ones(m)
    for i, status in enumerate(meas.status):
        s_i = math.sqrt(S2[i, i])
        if status is CensorStatus.INTERIOR:
            surrogate[i] = meas.value[i] - H[i] @ prior.mean
        elif status is CensorStatus.AT_LOWER:
            limit = _require_finite_limit(intervals[i].lower, status)
            z = (limit - H[i] @ prior.mean) / s_i
            lam = mills_lower(z)
            surrogate[i] = -s_i * lam
            shrink[i] = z * lam + lam * lam
        else:
            limit = _require_finite_limit(intervals[i].upper, status)
            z = (limit - H[i] @ prior.mean) / s_i
            lam = mills_upper(z)
            surrogate[i] = s_i * lam
            shrink[i] = lam * lam - z * lam
    try:
        gain = np.linalg.solve(S2, cross.T).T
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(
            f"predictive measurement covariance is singular at step {t}: {err}"
        ) from err
    mean = prior.mean + gain @ surrogate
    cov = prior.cov - (gain * shrink) @ cross.T   # (I - K diag(G) H) P
    return GaussianBelief(mean=mean, cov=symmetrize_clamp(cov))


def adaptive_limits(predicted: GaussianBelief, model: StateSpaceModel, c: float) -> tuple[CensorInterval, ...]:
    """Per-coordinate limits (H x_pred)_i - c and (H x_pred)_i + c."""
    c = float(c)
    if not (math.isfinite(c) and c > 0.0):
        raise ValueError(f"limit offset c must be positive and finite, got {c!r}")
    center = model.H @ predicted.mean
    return tuple(CensorInterval(lower=mu - c, upper=mu + c) for mu in center)


@dataclass(frozen=True)
class FilterTrace:
    """Per-step record of one filter run."""

    variant: FilterVariant
    prior_means: np.ndarray     # (T, n)
    prior_covs: np.ndarray      # (T, n, n)
    post_means: np.ndarray      # (T, n)
    post_covs: np.ndarray       # (T, n, n)
    statuses: tuple[tuple[CensorStatus, ...], ...]
    step_loglik: np.ndarray     # (T,)
    correlation: np.ndarray     # (T,) max |rho| on censored steps, else nan

    def __len__(self) -> int:
        return self.prior_means.shape[0]

    @property
    def total_loglik(self) -> float:
        return float(np.sum(self.step_loglik))

    @property
    def counts(self) -> dict[str, int]:
        flat = [s for step in self.statuses for s in step]
        return {
            "interior": sum(s is CensorStatus.INTERIOR for s in flat),
            "at_lower": sum(s is CensorStatus.AT_LOWER for s in flat),
            "at_upper": sum(s is CensorStatus.AT_UPPER for s in flat),
        }

    def to_csv(self, path) -> None:
        n = self.prior_means.shape[1]
        header = (
            ["t"]
            + [f"prior_mean_{i + 1}" for i in range(n)]
            + [f"prior_var_{i + 1}" for i in range(n)]
            + [f"post_mean_{i + 1}" for i in range(n)]
            + [f"post_var_{i + 1}" for i in range(n)]
            + ["status", "step_loglik", "correlation"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t in range(len(self)):
                writer.writerow(
                    [t]
                    + [repr(v) for v in self.prior_means[t]]
                    + [repr(v) for v in np.diag(self.prior_covs[t])]
                    + [repr(v) for v in self.post_means[t]]
                    + [repr(v) for v in np.diag(self.post_covs[t])]
                    + ["|".join(s.value for s in self.statuses[t])]
                    + [repr(float(self.step_loglik[t])), repr(float(self.correlation[t]))]
                )

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "prior_means": self.prior_means.tolist(),
            "prior_covs": self.prior_covs.tolist(),
            "post_means": self.post_means.tolist(),
            "post_covs": self.post_covs.tolist(),
            "statuses": [[s.value for s in step] for step in self.statuses],
            "step_loglik": self.step_loglik.tolist(),
            "correlation": self.correlation.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def _max_abs_correlation(stats: PredictiveStats, prior: GaussianBelief) -> float:
    s_y = math.sqrt(stats.var_y[0])
    diag = np.diag(prior.cov)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = stats.cross_xy[:, 0] / (np.sqrt(diag) * s_y)
    rho = rho[np.isfinite(rho)]
    return float(np.max(np.abs(rho))) if rho.size else 0.0


def run_filter(
    model: StateSpaceModel,
    measurements,
    limits,
    variant: FilterVariant = FilterVariant.CKF,
    init: GaussianBelief | None = None,
    warn_correlation: float | None = CORRELATION_WARN_THRESHOLD,
) -> FilterTrace:
    """Fold a filter variant over a measurement sequence.

    ``measurements`` is a sequence of :class:`CensoredMeasurement` when
    ``limits`` is a fixed interval (or per-coordinate tuple of intervals).
    With :class:`AdaptiveLimits`, raw measurement vectors are expected
    instead: each step derives its limits from the prediction and censors the
    incoming value against them.

    The per-step log-likelihood of the censored predictive law is recorded
    for every variant from that variant's own predictive statistics.  For
    multidimensional measurements the recorded value is the sum of
    per-coordinate contributions.
    """
    from .likelihood import step_loglik  # local import; likelihood builds on this module

    if init is None:
        raise ValueError("an initial belief is required")
    variant = FilterVariant(variant)
    n, m = model.state_dim, model.measurement_dim
    adaptive = isinstance(limits, AdaptiveLimits)
    if not adaptive:
        fixed_intervals = _normalize_limits(limits, m)

    measurements = list(measurements)
    T = len(measurements)
    prior_means = np.empty((T, n))
    prior_covs = np.empty((T, n, n))
    post_means = np.empty((T, n))
    post_covs = np.empty((T, n, n))
    steps_ll = np.empty(T)
    corr = np.full(T, np.nan)
    statuses: list[tuple[CensorStatus, ...]] = []
    warned = False

    belief = init
    for t, raw in enumerate(measurements):
        belief = predict(belief, model, t)
        prior_means[t] = belief.mean
        prior_covs[t] = belief.cov

        if adaptive:
            intervals = adaptive_limits(belief, model, limits.offset)
            value = raw.value if isinstance(raw, CensoredMeasurement) else raw
            meas = censor(value, intervals)
        else:
            intervals = fixed_intervals
            meas = raw
            if not isinstance(meas, CensoredMeasurement):
                raise TypeError(
                    "fixed-limit runs take CensoredMeasurement inputs; "
                    "use AdaptiveLimits for raw values"
                )
        statuses.append(meas.status)

        stats = predictive_stats(belief, model, t)
        steps_ll[t] = sum(
            step_loglik(_coordinate_stats(stats, i), _coordinate_meas(meas, i), intervals[i])
            for i in range(m)
        )
        if meas.any_censored:
            corr[t] = _max_abs_correlation(stats, belief) if m == 1 else np.nan
            if m == 1 and not warned and warn_correlation is not None and corr[t] > warn_correlation:
                warnings.warn(
                    f"predictive correlation {corr[t]:.3f} exceeds {warn_correlation} "
                    f"at step {t}; the Gaussian approximation of the censored "
                    "posterior may be poor",
                    RuntimeWarning,
                    stacklevel=2,
                )
                warned = True

        if variant is FilterVariant.KF:
            belief = kf_update(belief, meas.value, model, t)
        elif variant is FilterVariant.MISSING:
            if meas.all_interior:
                belief = kf_update(belief, meas.value, model, t)
            # censored step: posterior stays the prediction
        else:
            if m == 1:
                belief = ckf_update_scalar(belief, meas, intervals[0], model, t)
            else:
                belief = ckf_update_multi(belief, meas, intervals, model, t)
        post_means[t] = belief.mean
        post_covs[t] = belief.cov

    return FilterTrace(
        variant=variant,
        prior_means=prior_means,
        prior_covs=prior_covs,
        post_means=post_means,
        post_covs=post_covs,
        statuses=tuple(statuses),
        step_loglik=steps_ll,
        correlation=corr,
    )


def _normalize_limits(limits, m: int) -> tuple[CensorInterval, ...]:
    if isinstance(limits, CensorInterval):
        return (limits,) * m
    limits = tuple(limits)
    if len(limits) != m:
        raise ValueError(f"expected {m} censoring intervals, got {len(limits)}")
    return limits


def _coordinate_stats(stats: PredictiveStats, i: int) -> PredictiveStats:
    if stats.mean_y.shape[0] == 1:
        return stats
    return PredictiveStats(
        mean_y=stats.mean_y[i : i + 1],
        var_y=stats.var_y[i : i + 1],
        cross_xy=stats.cross_xy[:, i : i + 1],
    )


def _coordinate_meas(meas: CensoredMeasurement, i: int) -> CensoredMeasurement:
    if len(meas.status) == 1:
        return meas
    return CensoredMeasurement(value=meas.value[i : i + 1], status=(meas.status[i],))
