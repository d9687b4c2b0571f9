"""Exact state-vector backend for small chains.

Vectors index the computational basis with site 0 as the least significant
bit.  All operators come from a Model's local terms, so results here are an
independent oracle for the MPS path: nothing below builds on the MPO or on
MPS truncation.

Size caps: matvec-based routines hold a handful of 2^N vectors (N <= 24);
dense diagonalization is capped at N <= 12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.special

from .hamiltonian import Model, resolve_alpha, to_dense
from .kernels import delta_coefficients
from .mps import MPS
from .tensor import split_truncate

MATVEC_MAX_SITES = 24
DENSE_MAX_SITES = 12
PROPAGATOR_TAIL = 1e-12


def product_vector(states) -> np.ndarray:
    """Dense vector of a product state (site 0 = least significant bit)."""
    v = np.array([1.0], dtype=complex)
    for s in states:
        v = np.kron(np.asarray(s, dtype=complex).ravel(), v)
    return v


def mps_to_vector(s: MPS) -> np.ndarray:
    """Contract an MPS into a dense vector, including its log-norm factor."""
    if s.N > MATVEC_MAX_SITES:
        raise ValueError("vector conversion capped at N=24")
    acc = np.ones((1, 1), dtype=complex)  # (prefix index, bond)
    for t in s.tensors:
        acc = np.tensordot(acc, t, axes=([1], [0]))  # (prefix, s_i, bond)
        # later sites are more significant: new physical axis leads
        acc = acc.transpose(1, 0, 2).reshape(acc.shape[0] * acc.shape[1],
                                             acc.shape[2])
    return acc[:, 0] * float(np.exp(s.log_norm))


def vector_to_mps(v: np.ndarray, N: int, d_max: int | None = None,
                  weight_tol: float = 0.0) -> MPS:
    """Factor a dense vector into an MPS by sequential splitting."""
    if v.size != 2**N:
        raise ValueError("vector length is not 2^N")
    # axes ordered (s_{N-1}, ..., s_0); bring to (s_0, ..., s_{N-1})
    t = np.asarray(v, dtype=complex).reshape((2,) * N)
    t = t.transpose(tuple(range(N - 1, -1, -1)))
    tensors = []
    rest = t.reshape(1, -1)
    bond = 1
    for i in range(N - 1):
        rest = rest.reshape(bond, 2, -1)
        left, right, spec = split_truncate(rest, (0, 1), d_max, weight_tol)
        tensors.append(left)
        rest = spec.values[:, None] * right.reshape(spec.rank, -1)
        bond = spec.rank
    tensors.append(rest.reshape(bond, 2, 1))
    return MPS(tensors, center=N - 1, log_norm=0.0)


def _machine_terms(model: Model) -> list[np.ndarray]:
    """Local terms rearranged so the pair index is (bit n+1, bit n)."""
    key = "machine_terms"
    if key not in model._cache:
        out = []
        for t in model.local_terms[: model.N - 1]:
            out.append(np.ascontiguousarray(
                t.reshape(2, 2, 2, 2).transpose(1, 0, 3, 2).reshape(4, 4)))
        model._cache[key] = out
    return model._cache[key]


def matvec(model: Model, v: np.ndarray) -> np.ndarray:
    """Apply H = sum_n h_n to a dense vector."""
    N = model.N
    if N > MATVEC_MAX_SITES:
        raise ValueError("matvec capped at N=24")
    if v.size != 2**N:
        raise ValueError("vector length is not 2^N")
    out = np.zeros_like(v, dtype=complex)
    terms = _machine_terms(model)
    for n in range(N - 1):
        w = v.reshape(2 ** (N - n - 2), 4, 2**n)
        y = np.tensordot(terms[n], w, axes=([1], [1]))  # (4, high, low)
        out += y.transpose(1, 0, 2).reshape(v.size)
    tail = model.local_terms[-1]
    if np.max(np.abs(tail)) > 0.0:
        w = v.reshape(2, 2 ** (N - 1))
        out += (np.asarray(tail, dtype=complex) @ w).reshape(v.size)
    return out


def dense_hamiltonian(model: Model) -> np.ndarray:
    """Dense H from the local terms (N <= 12)."""
    if model.N > DENSE_MAX_SITES:
        raise ValueError("dense H capped at N=12")
    return to_dense(model)


def energy(model: Model, v: np.ndarray) -> float:
    """Normalized <v|H|v>."""
    n2 = float(np.vdot(v, v).real)
    return float(np.vdot(v, matvec(model, v)).real) / n2


def exact_variance(model: Model, v: np.ndarray) -> float:
    """Energy variance <H^2> - <H>^2 of a dense vector, computed stably."""
    n2 = float(np.vdot(v, v).real)
    hv = matvec(model, v)
    e = float(np.vdot(v, hv).real) / n2
    r = hv - e * v
    return float(np.vdot(r, r).real) / n2


def local_norm_bound(model: Model) -> float:
    """Upper bound on ||H|| as the sum of local-term operator norms."""
    return float(sum(np.linalg.norm(t, 2) for t in model.local_terms))


def make_htilde_apply(model: Model, e0: float, alpha: float | None = None):
    """Shared rescaling path: returns (apply_fn, alpha) for H~ = a(H-E0)/N.

    alpha defaults to the same DMRG-edge rule used by the MPO pipeline, so
    both backends filter with the identical operator.
    """
    alpha, _ = resolve_alpha(model, e0, alpha)
    scale = alpha / model.N

    def apply_fn(v):
        return scale * (matvec(model, v) - e0 * v)

    return apply_fn, alpha


def exact_cheby_filter(p: np.ndarray, model: Model, M: int, e0: float,
                       alpha: float | None = None) -> np.ndarray:
    """Order-M Jackson-damped delta filter applied to a dense vector.

    Uses the same coefficients as the MPS filter and returns a normalized
    vector.
    """
    coeffs = delta_coefficients(M).c
    apply_h, _ = make_htilde_apply(model, e0, alpha)
    t_prev = np.asarray(p, dtype=complex).copy()
    y = coeffs[0] * t_prev
    if M > 0:
        t_cur = apply_h(t_prev)
        for n in range(2, M + 1):
            t_next = 2.0 * apply_h(t_cur) - t_prev
            t_prev, t_cur = t_cur, t_next
            if coeffs[n] != 0.0:
                y += coeffs[n] * t_cur
    return y / np.linalg.norm(y)


def _cheby_function_apply(apply_x, v, coeff_fn, tail_tol=PROPAGATOR_TAIL):
    """Evaluate f(X)|v> from Chebyshev coefficients c_m = coeff_fn(m).

    apply_x applies an operator with spectrum in (-1, 1).  Terms are added
    until the coefficient magnitudes stay below tail_tol for 8 consecutive
    orders (they decay like Bessel functions beyond the arc length).
    """
    t_prev = v
    y = coeff_fn(0) * t_prev
    t_cur = apply_x(v)
    y = y + coeff_fn(1) * t_cur
    small_run = 0
    m = 1
    while small_run < 8:
        m += 1
        if m > 100000:
            raise RuntimeError("Chebyshev series failed to converge")
        t_next = 2.0 * apply_x(t_cur) - t_prev
        t_prev, t_cur = t_cur, t_next
        c = coeff_fn(m)
        if c != 0.0:
            y = y + c * t_cur
        small_run = small_run + 1 if abs(c) < tail_tol else 0
    return y


def evolve(model: Model, v: np.ndarray, theta: float) -> np.ndarray:
    """Apply exp(i theta H) by an adaptive Chebyshev-Bessel expansion."""
    R = local_norm_bound(model)
    z = theta * R

    phases = (1.0, 1.0j, -1.0, -1.0j)

    def apply_x(w):
        return matvec(model, w) / R

    def coeff(m):
        factor = 1.0 if m == 0 else 2.0
        return factor * phases[m % 4] * scipy.special.jv(m, z)

    return _cheby_function_apply(apply_x, np.asarray(v, dtype=complex), coeff)


def exact_evolution_overlap(p: np.ndarray, model: Model, k: int) -> complex:
    """<p| exp(i 2k H / N) |p> for a normalized dense state."""
    if model.N > 20:
        raise ValueError("evolution overlap capped at N=20")
    v = np.asarray(p, dtype=complex)
    n2 = float(np.vdot(v, v).real)
    u = evolve(model, v, 2.0 * k / model.N)
    return complex(np.vdot(v, u)) / n2


def cosine_filter_vector(p: np.ndarray, model: Model, M: int,
                         e0: float) -> np.ndarray:
    """Apply cos((H - E0)/N)^M to a dense vector.

    Each cosine application is an even Chebyshev-Bessel series, evaluated to
    full precision, so the only approximation is floating-point roundoff.
    """
    R = local_norm_bound(model) + abs(e0)
    theta = R / model.N
    scale = 1.0 / R

    def apply_x(w):
        return scale * (matvec(model, w) - e0 * w)

    def coeff(m):
        if m % 2:
            return 0.0
        half = m // 2
        factor = 1.0 if m == 0 else 2.0
        return factor * (-1.0) ** half * scipy.special.jv(m, theta)

    v = np.asarray(p, dtype=complex).copy()
    for _ in range(M):
        v = _cheby_function_apply(apply_x, v, coeff)
    return v


@dataclass(frozen=True)
class DosCheck:
    """Local density of states of a state against its Gaussian surrogate."""

    bin_edges: np.ndarray
    weights: np.ndarray
    ks_distance: float
    mean: float
    sigma: float


def local_dos_check(p: np.ndarray, model: Model, bins: int = 40) -> DosCheck:
    """Histogram the energy distribution of |p> and compare to a Gaussian.

    Dense diagonalization (N <= 12).  The Kolmogorov-Smirnov distance is
    between the weighted empirical CDF over eigenvalues and the normal CDF
    with the state's mean and standard deviation.
    """
    if model.N > DENSE_MAX_SITES:
        raise ValueError("dense diagonalization capped at N=12")
    v = np.asarray(p, dtype=complex)
    v = v / np.linalg.norm(v)
    evals, evecs = np.linalg.eigh(to_dense(model))
    amps = evecs.conj().T @ v
    w = np.abs(amps) ** 2
    mean = float(np.sum(w * evals))
    var = float(np.sum(w * (evals - mean) ** 2))
    sigma = float(np.sqrt(max(var, 0.0)))
    edges = np.linspace(evals[0], evals[-1], bins + 1)
    hist, _ = np.histogram(evals, bins=edges, weights=w)
    if sigma < 1e-12:
        off = float(np.sum(w[np.abs(evals - mean) > 1e-9]))
        ks = off
    else:
        cdf_emp = np.cumsum(w)
        cdf_ref = scipy.special.ndtr((evals - mean) / sigma)
        before = np.concatenate([[0.0], cdf_emp[:-1]])
        ks = float(np.max(np.maximum(np.abs(cdf_emp - cdf_ref),
                                     np.abs(before - cdf_ref))))
    return DosCheck(bin_edges=edges, weights=hist, ks_distance=ks,
                    mean=mean, sigma=sigma)
