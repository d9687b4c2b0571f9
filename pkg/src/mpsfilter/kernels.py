"""Chebyshev kernel weights and filter-width predictions.

The spectral delta filter truncated at order M uses Jackson damping to
suppress Gibbs oscillations.  With the operator spectrum mapped into
(-1, 1), the damped delta expansion at x0 = 0 keeps only even orders, and
the resulting energy-domain profile is close to a Gaussian of standard
deviation pi/M in the mapped variable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelCoefficients",
    "jackson",
    "delta_coefficients",
    "envelope_sigma",
    "predicted_delta_cheby",
    "predicted_delta_cos",
]


@dataclass(frozen=True)
class KernelCoefficients:
    """Jackson damping weights and delta-expansion coefficients of order M.

    ``g[k]`` is the damping factor for order k (g[0] = 1, g[M] ~ 0,
    decreasing); ``c[n]`` is the full expansion coefficient of T_n, zero for
    odd n.
    """

    M: int
    g: np.ndarray
    c: np.ndarray


def jackson(k: int, M: int) -> float:
    """Jackson kernel damping factor g_k for a degree-M expansion.

    Defined for 0 <= k <= M; g_0 = 1 and g_M ~ 0.  The M = 0 expansion has
    the single undamped term g_0 = 1.
    """
    if M < 0:
        raise ValueError("M must be >= 0")
    if not 0 <= k <= M:
        raise ValueError("k must satisfy 0 <= k <= M")
    if M == 0:
        return 1.0
    q = np.pi / (M + 1)
    return float(((M - k + 1) * np.cos(q * k)
                  + np.sin(q * k) / np.tan(q)) / (M + 1))


def delta_coefficients(M: int) -> KernelCoefficients:
    """Damping weights and Chebyshev coefficients of the damped delta at x0 = 0.

    Returns a :class:`KernelCoefficients` whose ``c`` entries satisfy
    c_0 = g_0/pi, c_{2n} = (-1)^n (2/pi) g_{2n}, and all odd coefficients
    zero, so that sum_k c_k T_k(x) approximates delta(x) on (-1, 1) with the
    square-root weight absorbed.
    """
    if M < 0:
        raise ValueError("M must be >= 0")
    g = np.array([jackson(k, M) for k in range(M + 1)])
    c = np.zeros(M + 1)
    for n in range(0, M + 1, 2):
        half = n // 2
        factor = 1.0 if n == 0 else 2.0
        c[n] = (-1.0) ** half * factor / np.pi * g[n]
    return KernelCoefficients(M=M, g=g, c=c)


def envelope_sigma(M: int) -> float:
    """Gaussian width (in the mapped variable x) of the order-M delta filter."""
    if M < 1:
        raise ValueError("M must be >= 1")
    return float(np.pi / M)


def predicted_delta_cheby(N: int, M: int, sigma_p: float | None = None) -> float:
    """Predicted standard deviation of energy after the order-M delta filter.

    For a start state of energy spread sigma_p the filtered variance is the
    harmonic combination 1/(1/sigma_p^2 + 2 M^2 / (pi^2 N^2)); without a
    start width the asymptotic envelope value pi N / (sqrt(2) M) is used.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    filt = 2.0 * M * M / (np.pi * np.pi * N * N)
    if sigma_p is None:
        return float(np.sqrt(1.0 / filt))
    var = 1.0 / (1.0 / (sigma_p * sigma_p) + filt)
    return float(np.sqrt(var))


def predicted_delta_cos(N: int, M: int, sigma_p: float | None = None) -> float:
    """Predicted energy spread after M applications of the cosine filter.

    The M-fold cosine filter acts like a Gaussian of variance N^2/(2M);
    combined with a start spread sigma_p the result is the harmonic mean of
    the two variances.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    filt = 2.0 * M / (N * N)
    if sigma_p is None:
        return float(np.sqrt(1.0 / filt))
    var = 1.0 / (1.0 / (sigma_p * sigma_p) + filt)
    return float(np.sqrt(var))
