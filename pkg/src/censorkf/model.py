"""Linear-Gaussian state-space model, simulation, and interval censoring.

The observation channel saturates: a latent measurement y* is reported
exactly while it stays inside (lower, upper) and is clamped to the nearer
limit outside, with the clamping recorded as a per-coordinate status flag.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .truncnorm import psd_sqrt, symmetrize


class CensorStatus(enum.Enum):
    INTERIOR = "interior"
    AT_LOWER = "at_lower"
    AT_UPPER = "at_upper"


@dataclass(frozen=True)
class CensorInterval:
    """Saturation limits of one measurement coordinate; either may be infinite."""

    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        lower, upper = float(self.lower), float(self.upper)
        if math.isnan(lower) or math.isnan(upper):
            raise ValueError("censoring limits must not be NaN")
        if not lower < upper:
            raise ValueError(f"require lower < upper, got ({lower}, {upper})")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)


UNBOUNDED = CensorInterval()


@dataclass(frozen=True)
class CensoredMeasurement:
    """Observed vector with one status flag per coordinate.

    A coordinate flagged AT_LOWER/AT_UPPER carries the exact limit value it was
    clamped to; this invariant is established by :func:`censor` and trusted
    downstream (filters never re-derive a status from value comparisons).
    """

    value: np.ndarray
    status: tuple[CensorStatus, ...]

    def __post_init__(self):
        value = np.atleast_1d(np.asarray(self.value, dtype=float))
        if value.ndim != 1:
            raise ValueError("measurement value must be one-dimensional")
        if len(self.status) != value.shape[0]:
            raise ValueError("one status flag is required per coordinate")
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "status", tuple(self.status))

    @property
    def all_interior(self) -> bool:
        return all(s is CensorStatus.INTERIOR for s in self.status)

    @property
    def any_censored(self) -> bool:
        return not self.all_interior


def _as_intervals(limits, m: int) -> tuple[CensorInterval, ...]:
    if isinstance(limits, CensorInterval):
        return (limits,) * m
    limits = tuple(limits)
    if len(limits) != m:
        raise ValueError(f"expected {m} censoring intervals, got {len(limits)}")
    return limits


def censor(latent, intervals) -> CensoredMeasurement:
    """Clamp a latent measurement coordinate-wise and record what happened.

    Values exactly at a limit count as censored, so the operation is
    idempotent: re-censoring the output reproduces it.
    """
    latent = np.atleast_1d(np.asarray(latent, dtype=float))
    intervals = _as_intervals(intervals, latent.shape[0])
    value = latent.copy()
    status = []
    for i, (y, iv) in enumerate(zip(latent, intervals)):
        if y <= iv.lower:
            value[i] = iv.lower
            status.append(CensorStatus.AT_LOWER)
        elif y >= iv.upper:
            value[i] = iv.upper
            status.append(CensorStatus.AT_UPPER)
        else:
            status.append(CensorStatus.INTERIOR)
    return CensoredMeasurement(value=value, status=tuple(status))


def _validate_cov(name: str, mat: np.ndarray, dim: int) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(symmetrize(mat))[0] < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")
    return symmetrize(mat)


@dataclass(frozen=True)
class StateSpaceModel:
    """x_{t+1} = A x_t + w_t,  y*_t = H x_t + v_t, with Gaussian noises.

    A: (n, n) transition; H: (m, n) observation; Q: (n, n) process-noise
    covariance; R: (m, m) measurement-noise covariance with strictly positive
    diagonal.  Optional per-step schedules override Q/R at given time indices;
    the constant matrices are the default.  Instances are immutable and safe
    to share across threads.
    """

    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    q_schedule: tuple[np.ndarray, ...] | None = None
    r_schedule: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if H.shape[1] != n:
            raise ValueError(f"H must have {n} columns, got {H.shape}")
        m = H.shape[0]
        Q = _validate_cov("Q", self.Q, n)
        R = _validate_cov("R", self.R, m)
        if np.any(np.diag(R) <= 0.0):
            raise ValueError("R must have a strictly positive diagonal")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        if self.q_schedule is not None:
            object.__setattr__(
                self, "q_schedule", tuple(_validate_cov("Q_t", q, n) for q in self.q_schedule)
            )
        if self.r_schedule is not None:
            r_sched = tuple(_validate_cov("R_t", r, m) for r in self.r_schedule)
            if any(np.any(np.diag(r) <= 0.0) for r in r_sched):
                raise ValueError("every scheduled R_t must have a strictly positive diagonal")
            object.__setattr__(self, "r_schedule", r_sched)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def measurement_dim(self) -> int:
        return self.H.shape[0]

    @property
    def has_diagonal_r(self) -> bool:
        off = self.R - np.diag(np.diag(self.R))
        return not np.any(off)

    def q_at(self, t: int) -> np.ndarray:
        if self.q_schedule is not None and t < len(self.q_schedule):
            return self.q_schedule[t]
        return self.Q

    def r_at(self, t: int) -> np.ndarray:
        if self.r_schedule is not None and t < len(self.r_schedule):
            return self.r_schedule[t]
        return self.R


def oscillator_model(c: float, omega: float, q: float, r2: float) -> StateSpaceModel:
    """Two-state rotation model: A = c*[[cos w, -sin w], [sin w, cos w]].

    The first state coordinate is observed (H = [1 0]), process noise is
    isotropic with standard deviation q, and r2 is the measurement variance.
    """
    c, omega, q, r2 = (float(v) for v in (c, omega, q, r2))
    if q < 0.0:
        raise ValueError(f"process-noise std must be nonnegative, got {q}")
    if r2 <= 0.0:
        raise ValueError(f"measurement variance must be positive, got {r2}")
    A = c * np.array([[math.cos(omega), -math.sin(omega)], [math.sin(omega), math.cos(omega)]])
    return StateSpaceModel(A=A, H=np.array([[1.0, 0.0]]), Q=q * q * np.eye(2), R=np.array([[r2]]))


@dataclass(frozen=True)
class SimulationRecord:
    """Ground truth states, latent measurements, and their censored versions."""

    states: np.ndarray                      # (T, n)
    latent: np.ndarray                      # (T, m)
    observed: tuple[CensoredMeasurement, ...]
    intervals: tuple[CensorInterval, ...] = field(default=())

    @property
    def T(self) -> int:
        return self.states.shape[0]

    @property
    def values(self) -> np.ndarray:
        return np.array([obs.value for obs in self.observed])

    @property
    def statuses(self) -> list[tuple[CensorStatus, ...]]:
        return [obs.status for obs in self.observed]

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        m = self.latent.shape[1]
        header = (
            ["t"]
            + [f"x_{i + 1}" for i in range(n)]
            + [f"ystar_{j + 1}" for j in range(m)]
            + [f"y_{j + 1}" for j in range(m)]
            + [f"status_{j + 1}" for j in range(m)]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t in range(self.T):
                obs = self.observed[t]
                writer.writerow(
                    [t]
                    + [repr(v) for v in self.states[t]]
                    + [repr(v) for v in self.latent[t]]
                    + [repr(v) for v in obs.value]
                    + [s.value for s in obs.status]
                )

    def to_json_dict(self) -> dict:
        return {
            "states": self.states.tolist(),
            "latent": self.latent.tolist(),
            "observed": [
                {"value": obs.value.tolist(), "status": [s.value for s in obs.status]}
                for obs in self.observed
            ],
            "intervals": [[iv.lower, iv.upper] for iv in self.intervals],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate(
    model: StateSpaceModel,
    x0,
    T: int,
    intervals=UNBOUNDED,
    seed=None,
) -> SimulationRecord:
    """Roll the model forward T steps from x0 and censor every measurement.

    Noise is drawn in a fixed order (all process noise, then all measurement
    noise) from a single generator, so a given seed always reproduces the
    same record.  ``seed`` may be an int, a seed sequence, or an existing
    ``numpy.random.Generator`` whose stream is consumed in place.
    """
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    rng = _as_rng(seed)
    n, m = model.state_dim, model.measurement_dim
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},), got {x0.shape}")
    intervals = _as_intervals(intervals, m)

    zw = rng.standard_normal((T, n))
    zv = rng.standard_normal((T, m))
    if model.q_schedule is None:
        w = zw @ psd_sqrt(model.Q).T
    else:
        w = np.stack([psd_sqrt(model.q_at(t)) @ zw[t] for t in range(T)])
    if model.r_schedule is None:
        v = zv @ psd_sqrt(model.R).T
    else:
        v = np.stack([psd_sqrt(model.r_at(t)) @ zv[t] for t in range(T)])

    states = np.empty((T, n))
    latent = np.empty((T, m))
    x = x0
    for t in range(T):
        x = model.A @ x + w[t]
        states[t] = x
        latent[t] = model.H @ x + v[t]
    observed = tuple(censor(latent[t], intervals) for t in range(T))
    return SimulationRecord(states=states, latent=latent, observed=observed, intervals=intervals)
