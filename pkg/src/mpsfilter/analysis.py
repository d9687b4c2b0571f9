"""Entanglement, correlation, and scaling-law analysis of filtered states.

The measurement side of the package: energy variance of a state against its
Hamiltonian, trace distance of subsystems from the infinite-temperature
state, truncated Schmidt rank, connected correlations of the local energy
terms, and the power-law / entropy-growth fits used to check how filter
width trades against bond dimension.

Entropies are in bits (log base 2) throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .hamiltonian import Model, shifted
from .mps import (
    MPS,
    canonicalize,
    expectation,
    expectation2,
    window_density_matrix,
)

__all__ = [
    "ScalingFit",
    "energy_variance",
    "variance",
    "trace_distance_inf_T",
    "d_tr",
    "energy_profile",
    "energy_correlations",
    "fit_power",
    "fit_D0",
    "bound_rhs",
    "bound_rhs_finite",
    "entropy_bound",
    "select_converged",
    "xyz_reference_site",
    "fits_to_csv",
]

D_TR_EPSILON = 0.01
CONVERGED_WEIGHT_TOL = 1e-4


# ---------------------------------------------------------------------------
# state-level measurements


def energy_variance(s: MPS, model: Model) -> tuple[float, float]:
    """Energy and energy variance of a state, contracted without truncation.

    The variance is evaluated as <(H - <H>)^2> through an exact double-layer
    sandwich, so the result is non-negative up to contraction roundoff
    (above -1e-9 in practice).
    """
    e = expectation(s, model.mpo)
    var = expectation2(s, shifted(model.mpo, -e))
    return float(e), float(var)


def variance(s: MPS, model: Model) -> float:
    """Energy variance <H^2> - <H>^2 of a state."""
    return energy_variance(s, model)[1]


def trace_distance_inf_T(rho) -> float:
    """Trace distance of a density matrix from the maximally mixed state.

    Accepts a raw matrix or anything with an ``entries`` attribute.  The
    value lies in [0, 1 - 1/dim]; the upper end is reached by pure states.
    """
    m = np.asarray(getattr(rho, "entries", rho))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("density matrix must be square")
    dim = m.shape[0]
    w = np.linalg.eigvalsh(m - np.eye(dim) / dim)
    return float(0.5 * np.sum(np.abs(w)))


def d_tr(spectrum, epsilon: float = D_TR_EPSILON) -> int:
    """Schmidt rank needed to keep all but epsilon of the squared weight.

    ``spectrum`` is a Schmidt spectrum object or an array of Schmidt values;
    the result is the smallest prefix length whose squared weights sum to at
    least 1 - epsilon of the total.
    """
    vals = np.asarray(getattr(spectrum, "values", spectrum), dtype=float)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("need a one-dimensional, non-empty spectrum")
    p = np.sort(vals * vals)[::-1]
    total = p.sum()
    if total <= 0.0:
        raise ValueError("zero spectrum")
    c = np.cumsum(p) / total
    return int(np.searchsorted(c, 1.0 - epsilon - 1e-12, side="left") + 1)


# ---------------------------------------------------------------------------
# local energy terms: profile and connected correlations


def _unit_right_tensors(s: MPS) -> list[np.ndarray]:
    """Tensors of the state with center 0, normalized to a unit-norm chain."""
    sc = canonicalize(s, 0)
    ts = [t.copy() for t in sc.tensors]
    n0 = np.linalg.norm(ts[0])
    if n0 == 0.0:
        raise ValueError("zero state")
    ts[0] /= n0
    return ts


def _absorb(L, a):
    t = np.tensordot(L, a, axes=([1], [0]))
    return np.tensordot(a.conj(), t, axes=([0, 1], [0, 1]))


def _absorb_two_site(L, a1, a2, h4):
    b = np.tensordot(a1, a2, axes=([2], [0]))
    hb = np.asarray(h4, dtype=complex).reshape(2, 2, 2, 2)
    kb = np.einsum("pqij,lijr->lpqr", hb, b)
    t = np.tensordot(L, kb, axes=([1], [0]))
    return np.tensordot(b.conj(), t, axes=([0, 1, 2], [0, 1, 2]))


def _absorb_one_site(L, a, h2):
    ka = np.einsum("pi,lir->lpr", np.asarray(h2, dtype=complex), a)
    t = np.tensordot(L, ka, axes=([1], [0]))
    return np.tensordot(a.conj(), t, axes=([0, 1], [0, 1]))


def _absorb_right(R, a):
    t = np.tensordot(R, a, axes=([1], [2]))
    return np.tensordot(a.conj(), t, axes=([2, 1], [0, 2]))


def _absorb_two_site_right(R, a1, a2, h4):
    b = np.tensordot(a1, a2, axes=([2], [0]))
    hb = np.asarray(h4, dtype=complex).reshape(2, 2, 2, 2)
    kb = np.einsum("pqij,lijr->lpqr", hb, b)
    t = np.tensordot(kb, R, axes=([3], [1]))
    return np.tensordot(b.conj(), t, axes=([1, 2, 3], [1, 2, 3]))


def _absorb_one_site_right(R, a, h2):
    ka = np.einsum("pi,lir->lpr", np.asarray(h2, dtype=complex), a)
    t = np.tensordot(ka, R, axes=([2], [1]))
    return np.tensordot(a.conj(), t, axes=([1, 2], [1, 2]))


def _term_width(model: Model, n: int) -> int:
    return 1 if model.local_terms[n].shape[0] == 2 else 2


def _machine_pair(h4: np.ndarray) -> np.ndarray:
    """Two-site term with the pair index reordered so the left site is the
    low bit, matching the window density-matrix convention."""
    return h4.reshape(2, 2, 2, 2).transpose(1, 0, 3, 2).reshape(4, 4)


def _window_op(model: Model, n: int, first: int, length: int) -> np.ndarray:
    """Term n embedded in a window of ``length`` sites starting at ``first``
    (window bit k corresponds to site first + k)."""
    k = n - first
    h = np.asarray(model.local_terms[n], dtype=complex)
    if _term_width(model, n) == 1:
        op, w = h, 1
    else:
        op, w = _machine_pair(h), 2
    hi = np.eye(2 ** (length - k - w))
    lo = np.eye(2 ** k)
    return np.kron(hi, np.kron(op, lo))


def _profile_from(ts, model: Model) -> np.ndarray:
    N = model.N
    vals = np.zeros(N)
    L = np.ones((1, 1), dtype=complex)
    for k in range(N):
        h = model.local_terms[k]
        if _term_width(model, k) == 2:
            vals[k] = np.trace(_absorb_two_site(L, ts[k], ts[k + 1], h)).real
        else:
            vals[k] = np.trace(_absorb_one_site(L, ts[k], h)).real
        L = _absorb(L, ts[k])
    return vals


def energy_profile(s: MPS, model: Model) -> np.ndarray:
    """Expectation value of each local energy term; the entries sum to <H>."""
    return _profile_from(_unit_right_tensors(s), model)


def _overlap_value(s: MPS, model: Model, a: int, b: int) -> float:
    """Re <h_a h_b> for terms with overlapping windows (0 <= b - a <= 1),
    evaluated on the reduced density matrix of the union window."""
    length = (b + _term_width(model, b)) - a
    rho = window_density_matrix(s, a, length)
    oa = _window_op(model, a, a, length)
    ob = _window_op(model, b, a, length)
    return float(np.trace(rho @ oa @ ob).real)


def energy_correlations(s: MPS, model: Model, n_c: int) -> list[tuple[int, float]]:
    """Connected correlations <h_{n_c} h_{n_c+x}> - <h_{n_c}><h_{n_c+x}>.

    Returns (x, value) pairs for every legal separation, x = -n_c up to
    N-1-n_c, including x = 0.  Summing the rows over all n_c reproduces the
    energy variance of the state.
    """
    N = model.N
    if not 0 <= n_c < N:
        raise ValueError("reference term out of range")
    ts = _unit_right_tensors(s)
    prof = _profile_from(ts, model)
    w_c = _term_width(model, n_c)
    h_c = model.local_terms[n_c]

    raw = {n_c: _overlap_value(s, model, n_c, n_c)}

    # overlapping neighbors via the union-window density matrix
    if n_c + 1 < N and w_c == 2:
        raw[n_c + 1] = _overlap_value(s, model, n_c, n_c + 1)
    if n_c - 1 >= 0:
        raw[n_c - 1] = _overlap_value(s, model, n_c - 1, n_c)

    # plain left environments up to each site
    lefts = [np.ones((1, 1), dtype=complex)]
    for k in range(N):
        lefts.append(_absorb(lefts[k], ts[k]))

    # disjoint targets to the right: one forward sweep from the insertion
    if n_c + w_c < N:
        if w_c == 2:
            L = _absorb_two_site(lefts[n_c], ts[n_c], ts[n_c + 1], h_c)
        else:
            L = _absorb_one_site(lefts[n_c], ts[n_c], h_c)
        for n in range(n_c + w_c, N):
            h = model.local_terms[n]
            if _term_width(model, n) == 2:
                raw[n] = np.trace(
                    _absorb_two_site(L, ts[n], ts[n + 1], h)).real
            else:
                raw[n] = np.trace(_absorb_one_site(L, ts[n], h)).real
            L = _absorb(L, ts[n])

    # disjoint targets to the left: one backward sweep of the inserted
    # right environment (the plain right environment is the identity in
    # this gauge)
    if n_c >= 2:
        if w_c == 2:
            dim = ts[n_c + 1].shape[2]
            R = _absorb_two_site_right(
                np.eye(dim, dtype=complex), ts[n_c], ts[n_c + 1], h_c)
        else:
            dim = ts[n_c].shape[2]
            R = _absorb_one_site_right(np.eye(dim, dtype=complex), ts[n_c], h_c)
        for bond in range(n_c, 1, -1):
            n = bond - 2
            h = model.local_terms[n]
            block = _absorb_two_site(lefts[n], ts[n], ts[n + 1], h)
            raw[n] = np.tensordot(block, R, axes=([0, 1], [0, 1])).real
            R = _absorb_right(R, ts[bond - 1])

    out = []
    for n in sorted(raw):
        out.append((n - n_c, float(raw[n] - prof[n_c] * prof[n])))
    return out


# ---------------------------------------------------------------------------
# scaling fits


@dataclass(frozen=True)
class ScalingFit:
    """Result of a scaling-law fit: functional form, parameters with their
    standard errors, and the data window the fit used."""

    form: str
    params: dict
    errors: dict
    n_points: int
    window: tuple

    def to_dict(self) -> dict:
        return {
            "form": self.form,
            "params": dict(self.params),
            "errors": dict(self.errors),
            "n_points": self.n_points,
            "window": list(self.window),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fits_to_csv(fits) -> str:
    """Flatten fits into tidy CSV rows, one row per parameter."""
    lines = ["form,param,value,error,n_points,window_lo,window_hi"]
    for f in fits:
        for name in sorted(f.params):
            err = f.errors.get(name, float("nan"))
            lines.append(
                f"{f.form},{name},{f.params[name]!r},{err!r},"
                f"{f.n_points},{f.window[0]!r},{f.window[1]!r}")
    return "\n".join(lines) + "\n"


def fit_power(x, y) -> ScalingFit:
    """Least-squares power law y = amplitude * x**exponent on log-log axes.

    Needs at least three strictly positive points; standard errors come
    from the linear-regression covariance.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 3:
        raise ValueError("need at least 3 points")
    if np.any(x <= 0.0) or np.any(y <= 0.0):
        raise ValueError("power-law fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    coef, cov = np.polyfit(lx, ly, 1, cov="unscaled")
    # rescale covariance by residual variance when there are spare dof
    dof = x.size - 2
    resid = ly - np.polyval(coef, lx)
    scale = float(resid @ resid) / dof if dof > 0 else 0.0
    slope_err = float(np.sqrt(cov[0, 0] * scale))
    icpt_err = float(np.sqrt(cov[1, 1] * scale))
    amplitude = float(np.exp(coef[1]))
    return ScalingFit(
        form="power",
        params={"amplitude": amplitude, "exponent": float(coef[0])},
        errors={"amplitude": amplitude * icpt_err, "exponent": slope_err},
        n_points=int(x.size),
        window=(float(x.min()), float(x.max())),
    )


def _d0_design_residual(d0: float, invd: np.ndarray, y: np.ndarray):
    """Best (a, b) and squared residual of y = a * d0**invd + b at fixed d0."""
    z = d0 ** invd
    A = np.column_stack([z, np.ones_like(z)])
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    return coef, float(r @ r)


def fit_D0(deltas, entropies) -> ScalingFit:
    """Fit 2**S = a * D0**(1/delta) + b over (delta, S) samples.

    The inner (a, b) problem is linear; D0 is located by a coarse scan plus
    golden-section refinement of the squared residual, then polished with a
    full nonlinear fit for the standard errors.  Requires at least four
    points whose 1/delta values span at least a factor of two.
    """
    deltas = np.asarray(deltas, dtype=float)
    entropies = np.asarray(entropies, dtype=float)
    if deltas.size != entropies.size or deltas.size < 4:
        raise ValueError("need at least 4 points")
    if np.any(deltas <= 0.0):
        raise ValueError("filter widths must be positive")
    invd = 1.0 / deltas
    if invd.max() < 2.0 * invd.min():
        raise ValueError("1/delta values must span at least a factor of 2")
    y = 2.0 ** entropies

    lo = 1.0 + 1e-9
    hi = max(8.0, float(y.max()) ** (1.0 / invd.max()) * 4.0)
    grid = np.exp(np.linspace(np.log(lo), np.log(hi), 64))
    costs = [_d0_design_residual(d, invd, y)[1] for d in grid]
    k = int(np.argmin(costs))
    a_lo = grid[max(k - 1, 0)]
    a_hi = grid[min(k + 1, grid.size - 1)]

    phi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = a_hi - phi * (a_hi - a_lo)
    x2 = a_lo + phi * (a_hi - a_lo)
    f1 = _d0_design_residual(x1, invd, y)[1]
    f2 = _d0_design_residual(x2, invd, y)[1]
    for _ in range(120):
        if f1 <= f2:
            a_hi, x2, f2 = x2, x1, f1
            x1 = a_hi - phi * (a_hi - a_lo)
            f1 = _d0_design_residual(x1, invd, y)[1]
        else:
            a_lo, x1, f1 = x1, x2, f2
            x2 = a_lo + phi * (a_hi - a_lo)
            f2 = _d0_design_residual(x2, invd, y)[1]
        if a_hi - a_lo < 1e-12 * a_hi:
            break
    d0 = 0.5 * (a_lo + a_hi)
    (a, b), _ = _d0_design_residual(d0, invd, y)

    errors = {"D0": float("nan"), "a": float("nan"), "b": float("nan")}
    try:
        popt, pcov = scipy.optimize.curve_fit(
            lambda inv, aa, bb, dd: aa * dd ** inv + bb,
            invd, y, p0=[a, b, d0], maxfev=20000)
        if np.all(np.isfinite(popt)) and popt[2] > 1.0:
            a, b, d0 = (float(v) for v in popt)
            diag = np.diag(pcov)
            if np.all(np.isfinite(diag)):
                errors = {"a": float(np.sqrt(diag[0])),
                          "b": float(np.sqrt(diag[1])),
                          "D0": float(np.sqrt(diag[2]))}
    except RuntimeError:
        pass

    return ScalingFit(
        form="entropy-growth",
        params={"D0": float(d0), "a": float(a), "b": float(b)},
        errors=errors,
        n_points=int(deltas.size),
        window=(float(invd.min()), float(invd.max())),
    )


# ---------------------------------------------------------------------------
# entropy bounds


def bound_rhs(N: int, delta: float, D0: float, D1: float,
              gamma: float = 1.0) -> float:
    """Asymptotic bound gamma sqrt(N)/ln(D1) * (D0**(1/delta) - 1) on 2**S."""
    return float(gamma * np.sqrt(N) / np.log(D1) * (D0 ** (1.0 / delta) - 1.0))


def bound_rhs_finite(N: int, delta: float, D0: float, D1: float,
                     gamma: float = 1.0) -> float:
    """Finite-N bound 2(1+g) D0**(1/delta) - (1+2g) on 2**S,
    with g = 1/(D1**(2/(gamma sqrt(N))) - 1); approaches :func:`bound_rhs`
    for large N."""
    g = 1.0 / (D1 ** (2.0 / (gamma * np.sqrt(N))) - 1.0)
    return float(2.0 * (1.0 + g) * D0 ** (1.0 / delta) - (1.0 + 2.0 * g))


def entropy_bound(N: int, delta: float, D0: float, k2: float) -> float:
    """Entropy form of the bound: log2(D0**(1/delta) - 1) + log2(N)/2 + k2."""
    arg = D0 ** (1.0 / delta) - 1.0
    if arg <= 0.0:
        raise ValueError("bound undefined: D0**(1/delta) must exceed 1")
    return float(np.log2(arg) + 0.5 * np.log2(N) + k2)


# ---------------------------------------------------------------------------
# fit-window selection and reference sites


def select_converged(traces, tol: float = CONVERGED_WEIGHT_TOL) -> list[bool]:
    """Mask of runs whose accumulated discarded weight stayed within tol."""
    return [bool(float(t.final["discarded"]) <= tol) for t in traces]


def xyz_reference_site(N: int) -> int:
    """Start site of the staggered-pair pattern block nearest the center.

    The pattern repeats 0,0,1,1 with period four; candidates are the block
    starts p = 0, 4, 8, ... with a complete block p..p+3 inside the chain,
    and ties resolve to the lower site.
    """
    if N < 4:
        raise ValueError("need at least one complete block of four sites")
    candidates = np.arange(0, N - 3, 4)
    mid = (N - 1) / 2.0
    dist = np.abs(candidates + 1.5 - mid)
    return int(candidates[int(np.argmin(dist))])
