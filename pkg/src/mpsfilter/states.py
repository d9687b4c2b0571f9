"""Initial product states for filtering experiments.

Four families: the uniform y+ state, the period-4 staggered z pattern, a
two-plateau step profile with zero total energy, and product states tuned
to an arbitrary target energy by per-pair optimization.  All constructors
return bond-dimension-1 matrix product states.
"""

from __future__ import annotations

import math
import re

import numpy as np
import scipy.optimize

from .hamiltonian import Model
from .mps import MPS, from_product

__all__ = [
    "build_initial_state",
    "energy_target_state",
    "product_energy",
    "step_state",
    "y_plus_state",
    "z_staggered2_state",
]

Y_PLUS_SPINOR = np.array([1.0, 1.0j], dtype=complex) / math.sqrt(2)

ZERO = np.array([1.0, 0.0], dtype=complex)
ONE = np.array([0.0, 1.0], dtype=complex)

# multi-start budget of the per-pair energy optimizer
TARGET_STARTS = 64

# grid resolution for locating roots of angle scans
_SCAN_POINTS = 720


def product_energy(spinors, model: Model) -> float:
    """<H> of the product state with the given single-site spinors."""
    if len(spinors) != model.N:
        raise ValueError("one spinor per site expected")
    e = 0.0
    for n in range(model.N - 1):
        v = np.kron(spinors[n], spinors[n + 1])
        e += float(np.vdot(v, model.local_terms[n] @ v).real)
    tail = model.local_terms[-1]
    s = spinors[-1]
    e += float(np.vdot(s, tail @ s).real)
    return e


def y_plus_state(N: int) -> MPS:
    """Uniform product of (|0> + i|1>)/sqrt(2); zero mean energy for the
    transverse-plus-longitudinal Ising chain."""
    return from_product([Y_PLUS_SPINOR] * N)


def z_staggered2_state(N: int) -> MPS:
    """|0011 0011 ...> pattern; for even N not divisible by 4 the chain
    ends with the pair |00>."""
    if N % 2:
        raise ValueError("staggered pattern needs even N")
    pattern = (ZERO, ZERO, ONE, ONE)
    return from_product([pattern[i % 4] for i in range(N)])


def _spinor(theta: float) -> np.ndarray:
    return np.array([math.cos(theta / 2.0), math.sin(theta / 2.0)],
                    dtype=complex)


def _scan_roots(f, lo: float, hi: float) -> list[float]:
    """All roots of f on [lo, hi] located by a sign-change scan + brentq."""
    xs = np.linspace(lo, hi, _SCAN_POINTS)
    ys = np.array([f(x) for x in xs])
    roots = []
    for i in range(len(xs) - 1):
        if ys[i] == 0.0:
            roots.append(float(xs[i]))
        elif ys[i] * ys[i + 1] < 0.0:
            roots.append(float(scipy.optimize.brentq(
                f, xs[i], xs[i + 1], xtol=1e-15, rtol=8.9e-16)))
    return roots


def step_state(model: Model, e: float | None = None) -> MPS:
    """Two-plateau product state: bond energy +e on the left half, close to
    -e on the right half, zero total energy.

    Every site in a half shares one real rotation angle.  The left angle
    solves plateau(theta) = +e on the bulk bond term; the right angle then
    solves total energy = 0, picking the root whose plateau value is
    nearest -e.  Default step height is half the largest local-term norm.
    """
    N = model.N
    if N < 4 or N % 2:
        raise ValueError("step state needs even N >= 4")
    if e is None:
        e = 0.5 * model.h_norm_max
    bulk = model.two_site_term(1)

    def plateau(theta):
        v = np.kron(_spinor(theta), _spinor(theta))
        return float(np.vdot(v, bulk @ v).real)

    left_roots = _scan_roots(lambda t: plateau(t) - e, -math.pi, math.pi)
    if not left_roots:
        vals = [plateau(t) for t in np.linspace(-math.pi, math.pi, 361)]
        raise ValueError(
            f"step height {e:.4g} unreachable; plateau range is "
            f"[{min(vals):.4g}, {max(vals):.4g}]")
    theta_l = left_roots[0]
    half = N // 2

    def total(theta_r):
        spinors = [_spinor(theta_l)] * half + [_spinor(theta_r)] * half
        return product_energy(spinors, model)

    right_roots = _scan_roots(total, -math.pi, math.pi)
    if not right_roots:
        raise ValueError("no zero-energy companion angle exists for this "
                         f"step height {e:.4g}")
    theta_r = min(right_roots, key=lambda t: abs(plateau(t) + e))
    spinors = [_spinor(theta_l)] * half + [_spinor(theta_r)] * half
    resid = product_energy(spinors, model)
    if abs(resid) > 1e-8:
        raise RuntimeError(f"step-state energy residual {resid:.2e}")
    return from_product(spinors)


# ---------------------------------------------------------------------------
# product states at a prescribed mean energy


def _angles_to_spinor(theta: float, phi: float) -> np.ndarray:
    return np.array([math.cos(theta / 2.0),
                     np.exp(1j * phi) * math.sin(theta / 2.0)],
                    dtype=complex)


def _spinor_to_angles(s: np.ndarray) -> tuple[float, float]:
    theta = 2.0 * math.atan2(abs(s[1]), abs(s[0]))
    phi = float(np.angle(s[1]) - np.angle(s[0]))
    return theta, phi


def _pair_value(term: np.ndarray, angles) -> float:
    a = _angles_to_spinor(angles[0], angles[1])
    b = _angles_to_spinor(angles[2], angles[3])
    v = np.kron(a, b)
    return float(np.vdot(v, term @ v).real)


def _optimize_pair(term: np.ndarray, rng: np.random.Generator,
                   sign: float, starts: int = TARGET_STARTS):
    """Extremal product expectation of a two-site term.

    sign=+1 maximizes, sign=-1 minimizes; returns (value, spinor, spinor).
    Multi-start Nelder-Mead over the four Bloch angles.
    """
    best_val = -math.inf
    best_angles = None
    for _ in range(starts):
        x0 = np.array([rng.uniform(0.0, math.pi),
                       rng.uniform(-math.pi, math.pi),
                       rng.uniform(0.0, math.pi),
                       rng.uniform(-math.pi, math.pi)])
        res = scipy.optimize.minimize(
            lambda x: -sign * _pair_value(term, x), x0,
            method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-12, "maxiter": 4000})
        if -res.fun > best_val:
            best_val = -res.fun
            best_angles = res.x
    a = _angles_to_spinor(best_angles[0], best_angles[1])
    b = _angles_to_spinor(best_angles[2], best_angles[3])
    return sign * best_val, a, b


def _prefix_energy(spinors, model: Model) -> float:
    """Energy of all terms fully contained in the assembled prefix."""
    e = 0.0
    for n in range(len(spinors) - 1):
        v = np.kron(spinors[n], spinors[n + 1])
        e += float(np.vdot(v, model.local_terms[n] @ v).real)
    if len(spinors) == model.N:
        s = spinors[-1]
        e += float(np.vdot(s, model.local_terms[-1] @ s).real)
    return e


def _greedy_extreme(pair_solutions, model: Model, maximize: bool):
    """Assemble pair configurations left to right, extremizing the energy."""
    spinors = []
    for plus, minus in pair_solutions:
        candidates = []
        for _, a, b in (plus, minus):
            candidates.append(_prefix_energy(spinors + [a, b], model))
        pick = int(np.argmax(candidates) if maximize
                   else np.argmin(candidates))
        chosen = (plus, minus)[pick]
        spinors.extend([chosen[1], chosen[2]])
    return spinors


def energy_target_state(model: Model, e0: float, seed: int = 0) -> MPS:
    """Product state with <H> = e0 within 1e-8.

    Disjoint site pairs (2k, 2k+1) are driven to their extremal two-site
    expectations by seeded multi-start optimization; greedy left-to-right
    sign choices assemble the highest- and lowest-energy endpoints, and the
    target is hit exactly by root finding along the path that interpolates
    every pair between its two configurations.  Any |e0| up to
    N * h_min / 6 is guaranteed reachable; the error message reports the
    achieved range otherwise.
    """
    N = model.N
    if N % 2:
        raise ValueError("energy targeting needs even N")
    rng = np.random.default_rng(seed)
    h_min = model.h_min

    cache = {}
    pair_solutions = []
    for k in range(N // 2):
        term = model.two_site_term(2 * k)
        key = term.tobytes()
        if key not in cache:
            plus = _optimize_pair(term, rng, +1.0)
            minus = _optimize_pair(term, rng, -1.0)
            m = max(plus[0], -minus[0])
            if m < h_min / 3.0 - 1e-8:
                raise RuntimeError(
                    f"pair optimum {m:.6g} under the h_min/3 = "
                    f"{h_min / 3.0:.6g} floor; optimizer failed")
            cache[key] = (plus, minus)
        pair_solutions.append(cache[key])

    hi = _greedy_extreme(pair_solutions, model, maximize=True)
    lo = _greedy_extreme(pair_solutions, model, maximize=False)
    e_hi = product_energy(hi, model)
    e_lo = product_energy(lo, model)
    if not e_lo - 1e-9 <= e0 <= e_hi + 1e-9:
        raise ValueError(
            f"target energy {e0:.6g} outside the achievable range "
            f"[{e_lo:.6g}, {e_hi:.6g}] (guaranteed up to |E0| <= "
            f"{N * h_min / 6.0:.6g})")

    ang_lo = [_spinor_to_angles(s) for s in lo]
    ang_hi = [_spinor_to_angles(s) for s in hi]

    def state_at(t):
        spinors = []
        for (tl, pl), (th, ph) in zip(ang_lo, ang_hi):
            dphi = (ph - pl + math.pi) % (2.0 * math.pi) - math.pi
            spinors.append(_angles_to_spinor(tl + t * (th - tl),
                                             pl + t * dphi))
        return spinors

    def offset(t):
        return product_energy(state_at(t), model) - e0

    f0, f1 = offset(0.0), offset(1.0)
    if f0 == 0.0:
        t_star = 0.0
    elif f1 == 0.0:
        t_star = 1.0
    else:
        t_star = scipy.optimize.brentq(offset, 0.0, 1.0,
                                       xtol=1e-15, rtol=8.9e-16)
    spinors = state_at(t_star)
    resid = product_energy(spinors, model) - e0
    if abs(resid) > 1e-8:
        raise RuntimeError(f"energy-target residual {resid:.2e}")
    return from_product(spinors)


_STATE_RE = re.compile(r"^([A-Za-z_+]+[A-Za-z0-9_+]*)(?:\(([^)]*)\))?$")


def build_initial_state(spec: str, model: Model, seed: int = 0) -> MPS:
    """Construct the start state named by spec.

    Accepted forms: "Y+", "Z_st2", "step", "step(<e>)", and
    "energy_target(<E0>)".  The seed feeds the energy-target optimizer.
    """
    m = _STATE_RE.match(spec.strip())
    if not m:
        raise ValueError(f"unparseable initial state spec {spec!r}")
    name, arg = m.group(1), m.group(2)
    if name == "Y+":
        if arg is not None:
            raise ValueError("Y+ takes no argument")
        return y_plus_state(model.N)
    if name == "Z_st2":
        if arg is not None:
            raise ValueError("Z_st2 takes no argument")
        return z_staggered2_state(model.N)
    if name == "step":
        e = float(arg) if arg not in (None, "") else None
        return step_state(model, e)
    if name == "energy_target":
        if arg in (None, ""):
            raise ValueError("energy_target requires a target, e.g. "
                             "energy_target(0.0)")
        return energy_target_state(model, float(arg), seed=seed)
    raise ValueError(f"unknown initial state {name!r}")
