"""Stable normal-tail kernels and truncated/censored conditional moments.

Everything here is a pure function of its arguments.  The inverse Mills
ratios route through the scaled complementary error function, which keeps
full relative precision in the far lower tail where a naive ``pdf/cdf``
division would underflow to 0/0 (the standard-normal cdf is below the
smallest double near z = -38.5).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtr

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

#: Eigenvalues of a returned covariance below this threshold are treated as
#: a genuine violation (diagnostic warning), not floating-point noise.
EIG_WARN_THRESHOLD = -1e-9


def norm_pdf(z):
    """Standard normal density; accepts scalars or arrays."""
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def norm_cdf(z):
    """Standard normal cdf; accepts scalars or arrays."""
    out = ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


def norm_logcdf(z):
    """log(cdf(z)), finite for any representable z (no underflow to -inf)."""
    out = log_ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


def norm_logsf(z):
    """log(1 - cdf(z)) evaluated as the reflected log-cdf."""
    return norm_logcdf(-np.asarray(z, dtype=float) if np.ndim(z) else -z)


def _finite_scalar(x, name: str) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"{name} must be finite, got {x!r}")
    return x


def mills_lower(z: float) -> float:
    """Lower-tail inverse Mills ratio pdf(z)/cdf(z).

    Strictly decreasing and positive; behaves like -z + 1/(-z) as z -> -inf.
    For z <= 0 it is computed as sqrt(2/pi) / erfcx(-z/sqrt(2)), which never
    underflows; for z > 0 the cdf is at least 1/2 and plain division is
    already exact to rounding.
    """
    z = _finite_scalar(z, "z")
    if z <= 0.0:
        return _SQRT_2_OVER_PI / float(erfcx(-z / _SQRT2))
    return math.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * float(ndtr(z)))


def mills_upper(z: float) -> float:
    """Upper-tail inverse Mills ratio pdf(z)/(1 - cdf(z)) = mills_lower(-z)."""
    return mills_lower(-_finite_scalar(z, "z"))


def truncated_mean_below(m: float, s: float, a: float) -> float:
    """Mean of N(m, s^2) truncated to (-inf, a]: m - s * mills_lower((a-m)/s)."""
    m = _finite_scalar(m, "m")
    a = _finite_scalar(a, "a")
    s = float(s)
    if not (math.isfinite(s) and s > 0.0):
        raise ValueError(f"s must be a positive finite scale, got {s!r}")
    return m - s * mills_lower((a - m) / s)


def truncated_second_moment_below(m: float, s: float, a: float) -> float:
    """Second moment of N(m, s^2) truncated to (-inf, a].

    With z = (a-m)/s and lam = mills_lower(z):

        E[Y^2 | Y <= a] = m^2 + s^2 - 2*m*s*lam - s^2*z*lam

    so the implied truncated variance s^2*(1 - z*lam - lam^2) is nonnegative
    and never exceeds s^2.
    """
    m = _finite_scalar(m, "m")
    a = _finite_scalar(a, "a")
    s = float(s)
    if not (math.isfinite(s) and s > 0.0):
        raise ValueError(f"s must be a positive finite scale, got {s!r}")
    z = (a - m) / s
    lam = mills_lower(z)
    return m * m + s * s - 2.0 * m * s * lam - s * s * z * lam


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """(M + M^T)/2; cheap hygiene applied after every covariance update."""
    return 0.5 * (mat + mat.T)


def _min_eigenvalue(sym: np.ndarray) -> float:
    # closed forms for the common tiny sizes keep filter loops cheap
    n = sym.shape[0]
    if n == 1:
        return float(sym[0, 0])
    if n == 2:
        half_tr = 0.5 * (sym[0, 0] + sym[1, 1])
        disc = math.sqrt(max(0.25 * (sym[0, 0] - sym[1, 1]) ** 2 + sym[0, 1] ** 2, 0.0))
        return half_tr - disc
    return float(np.linalg.eigvalsh(sym)[0])


def symmetrize_clamp(mat: np.ndarray, warn_below: float = EIG_WARN_THRESHOLD) -> np.ndarray:
    """Symmetrize a covariance and clamp any negative eigenvalues at zero.

    Eigenvalues below ``warn_below`` indicate something worse than rounding
    noise and raise a RuntimeWarning before being clamped.
    """
    sym = symmetrize(np.asarray(mat, dtype=float))
    min_eig = _min_eigenvalue(sym)
    if min_eig >= 0.0:
        return sym
    if min_eig < warn_below:
        warnings.warn(
            f"covariance eigenvalue {min_eig:.3e} below {warn_below:.1e}; clamping",
            RuntimeWarning,
            stacklevel=2,
        )
    w, v = np.linalg.eigh(sym)
    return symmetrize((v * np.clip(w, 0.0, None)) @ v.T)


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (eigendecomposition based).

    Works for singular inputs such as a zero process-noise covariance.
    """
    sym = symmetrize(np.asarray(mat, dtype=float))
    w, v = np.linalg.eigh(sym)
    if w[0] < EIG_WARN_THRESHOLD:
        raise ValueError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    return symmetrize((v * np.sqrt(np.clip(w, 0.0, None))) @ v.T)


@dataclass(frozen=True)
class ConditionalMoments:
    """Mean and covariance of a state vector given a censored observation."""

    mean: np.ndarray
    cov: np.ndarray


def _validate_conditional_args(m_x, S_x, S_xy, s_y):
    m_x = np.atleast_1d(np.asarray(m_x, dtype=float))
    S_x = np.atleast_2d(np.asarray(S_x, dtype=float))
    S_xy = np.atleast_1d(np.asarray(S_xy, dtype=float))
    s_y = float(s_y)
    if not (math.isfinite(s_y) and s_y > 0.0):
        raise ValueError(f"s_y must be a positive finite scale, got {s_y!r}")
    n = m_x.shape[0]
    if S_x.shape != (n, n):
        raise ValueError(f"S_x shape {S_x.shape} incompatible with state dim {n}")
    if S_xy.shape != (n,):
        raise ValueError(f"S_xy shape {S_xy.shape} incompatible with state dim {n}")
    return m_x, S_x, S_xy, s_y


def conditional_moments_lower(m_x, S_x, S_xy, m_y: float, s_y: float, a: float) -> ConditionalMoments:
    """Moments of x given that a jointly normal scalar y fell at/below a.

    With z = (a - m_y)/s_y and lam = mills_lower(z):

        mean = m_x - (S_xy / s_y) * lam
        cov  = S_x - (S_xy S_xy^T / s_y^2) * (z*lam + lam^2)

    The shrink factor z*lam + lam^2 lies in (0, 1), so the covariance is a
    genuine contraction of S_x (never inflates uncertainty).
    """
    m_x, S_x, S_xy, s_y = _validate_conditional_args(m_x, S_x, S_xy, s_y)
    m_y = _finite_scalar(m_y, "m_y")
    a = _finite_scalar(a, "a")
    z = (a - m_y) / s_y
    lam = mills_lower(z)
    shrink = z * lam + lam * lam
    mean = m_x - (S_xy / s_y) * lam
    cov = S_x - np.outer(S_xy, S_xy) * (shrink / (s_y * s_y))
    return ConditionalMoments(mean=mean, cov=symmetrize_clamp(cov))


def conditional_moments_upper(m_x, S_x, S_xy, m_y: float, s_y: float, b: float) -> ConditionalMoments:
    """Moments of x given that a jointly normal scalar y fell at/above b.

    Mirror image of :func:`conditional_moments_lower` under y -> -y.  With
    z = (b - m_y)/s_y and lam = mills_upper(z):

        mean = m_x + (S_xy / s_y) * lam
        cov  = S_x - (S_xy S_xy^T / s_y^2) * (lam^2 - z*lam)

    and lam^2 - z*lam again lies in (0, 1).
    """
    m_x, S_x, S_xy, s_y = _validate_conditional_args(m_x, S_x, S_xy, s_y)
    m_y = _finite_scalar(m_y, "m_y")
    b = _finite_scalar(b, "b")
    z = (b - m_y) / s_y
    lam = mills_upper(z)
    shrink = lam * lam - z * lam
    mean = m_x + (S_xy / s_y) * lam
    cov = S_x - np.outer(S_xy, S_xy) * (shrink / (s_y * s_y))
    return ConditionalMoments(mean=mean, cov=symmetrize_clamp(cov))
