"""G/D/1 tail approximation of the loss probability of one finite-buffer shallow queue.

``P = gamma * exp(-min_n M_n / 2)`` with ``gamma`` the Gaussian prefactor and
``M_n = (B + n(s - mean))**2 / Var(sum of n inputs)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfcx

from .errors import ModelError, ValidityError
from .workload import WorkloadStats

N_MAX = 10_000
# consecutive increases after the running minimum that end the n scan
PATIENCE = 50
# relative slack on the s >= mean check, absorbs rounding of rho*alpha
_VALIDITY_RTOL = 1e-12

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _check_valid(stats: WorkloadStats, service: float) -> None:
    if service < stats.mean * (1.0 - _VALIDITY_RTOL):
        raise ValidityError(f"G/D/1 estimate needs service >= mean ({service:g} < {stats.mean:g})")
    if not stats.variance > 0:
        raise ModelError("G/D/1 estimate needs a positive input variance")


def gamma(stats: WorkloadStats, service: float) -> float:
    """Prefactor of the tail approximation.

    The Gaussian integral has the closed form
    ``sigma*sqrt(2*pi)*sigma*(phi(z) - z*Q(z))``, ``z = (s - mean)/sigma``;
    ``exp(z^2/2)*Q(z)`` is taken from ``erfcx`` to stay finite for large z.
    """
    _check_valid(stats, service)
    sigma = stats.std
    z = max((service - stats.mean) / sigma, 0.0)
    return sigma / stats.mean * (_INV_SQRT_2PI - 0.5 * z * erfcx(z / math.sqrt(2.0)))


def _variance_sums(autocov: np.ndarray, n: np.ndarray) -> np.ndarray:
    """``n*C(0) + 2*sum_{l<n} (n-l) C(l)`` for each n, zero beyond the known lags."""
    c = autocov[1:]
    lags = np.arange(1, c.size + 1)
    s0 = np.concatenate([[0.0], np.cumsum(c)])
    s1 = np.concatenate([[0.0], np.cumsum(lags * c)])
    k = np.minimum(n - 1, c.size).astype(np.intp)
    return n * autocov[0] + 2.0 * (n * s0[k] - s1[k])


def min_exponent(stats: WorkloadStats, service: float, buffer: float, n_max: int = N_MAX) -> float:
    """``min_{1<=n<=n_max} M_n``, stopping once M_n rose ``PATIENCE`` times in a row."""
    _check_valid(stats, service)
    drift = max(service - stats.mean, 0.0)
    best = math.inf
    start, chunk = 1, 64
    while start <= n_max:
        n = np.arange(start, min(start + chunk, n_max + 1), dtype=float)
        var = _variance_sums(stats.autocov, n)
        if np.any(var <= 0):
            bad = int(n[np.argmax(var <= 0)])
            raise ModelError(f"non-positive variance sum at n={bad}; autocovariance is not valid")
        m = (buffer + n * drift) ** 2 / var
        best = min(best, float(m.min()))
        # stop once the tail of the scan rose PATIENCE times after its minimum
        k = int(np.argmin(m))
        if m.size - 1 - k >= PATIENCE and np.all(np.diff(m[k:]) > 0):
            break
        start += n.size
        chunk = min(chunk * 2, 4096)
    return best


def loss_probability(
    stats: WorkloadStats, rho_i: float, alpha: float, deadline: float, n_max: int = N_MAX
) -> float:
    """Estimated loss probability of a queue with service ``rho_i*alpha`` and buffer ``rho_i*alpha*D``.

    Clamped to 1; the expected overflow is this value times the mean input.
    """
    service = rho_i * alpha
    g = gamma(stats, service)
    m = min_exponent(stats, service, service * deadline, n_max)
    return min(1.0, g * math.exp(-0.5 * m))


def expected_overflow(stats: WorkloadStats, rho_i: float, alpha: float, deadline: float, n_max: int = N_MAX) -> float:
    return loss_probability(stats, rho_i, alpha, deadline, n_max) * stats.mean
