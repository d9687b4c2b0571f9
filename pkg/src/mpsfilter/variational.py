"""Variational minimization of energy variance at fixed bond dimension.

The optimizer sweeps one-site updates over the chain, DMRG style, descending
the penalized cost

    C = <H^2> - <H>^2 + lam * (<H> - e0)^2

with a Wirtinger gradient and backtracking line search at each tensor.  The
bond dimension never grows: each site keeps its shape and the chain is moved
through mixed-canonical gauges by QR factorizations.  Divergent attempts are
restarted from the perturbed best state; the best attempt wins.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import energy_variance
from .hamiltonian import Model
from .mps import MPS, _mpo_env_left, _mpo_env_right, canonicalize, normalized

__all__ = [
    "VAR_TRACE_COLUMNS",
    "CostTrace",
    "VarOpts",
    "local_cost_and_gradient",
    "minimize_variance",
]

VAR_TRACE_COLUMNS = ("sweep", "cost", "variance", "energy", "seconds")

# relative amplitude of the Gaussian tensor noise used for restarts
RESTART_NOISE = 1e-2

# slack on the non-increase of the sweep cost before an attempt counts as
# numerically diverged
DIVERGENCE_SLACK = 1e-10


@dataclass
class VarOpts:
    """Settings of the variance minimizer.

    ``lam`` is the weight of the mean-energy penalty; ``None`` picks
    10 * (initial variance) / N^2 and rescales it once after the first
    sweep.  ``tol`` is the relative cost change that counts as converged.
    """

    d_max: int
    e0: float = 0.0
    lam: float | None = None
    max_sweeps: int = 30
    inner_steps: int = 200
    step_size: float = 0.5
    restarts: int = 3
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if self.lam is not None and self.lam < 0.0:
            raise ValueError("lam must be >= 0")
        if self.max_sweeps < 1 or self.inner_steps < 1:
            raise ValueError("sweep and step counts must be >= 1")
        if self.step_size <= 0.0:
            raise ValueError("step_size must be > 0")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must lie in (0, 1)")


@dataclass
class CostTrace:
    """Per-sweep log of the best optimization attempt."""

    meta: dict
    rows: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    columns = VAR_TRACE_COLUMNS

    def column(self, name: str) -> np.ndarray:
        if name not in VAR_TRACE_COLUMNS:
            raise KeyError(name)
        return np.array([row[name] for row in self.rows])

    @property
    def final(self) -> dict:
        if not self.rows:
            raise ValueError("trace has no rows")
        return self.rows[-1]

    def to_csv(self, zero_seconds: bool = False) -> str:
        lines = [",".join(VAR_TRACE_COLUMNS)]
        for row in self.rows:
            cells = []
            for name in VAR_TRACE_COLUMNS:
                v = row[name]
                if name == "seconds" and zero_seconds:
                    v = 0.0
                if name == "sweep":
                    cells.append(str(int(v)))
                else:
                    cells.append(repr(float(v)))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def save_csv(self, path, zero_seconds: bool = False) -> None:
        with open(path, "w") as f:
            f.write(self.to_csv(zero_seconds=zero_seconds))


def local_cost_and_gradient(apply_a, apply_b, x: np.ndarray, lam: float,
                            e0: float):
    """Cost and Wirtinger gradient of the penalized variance at one tensor.

    ``apply_a`` and ``apply_b`` apply the effective mean-energy and squared-
    energy operators of the frozen environment to a tensor shaped like ``x``.
    Writing n = <x, x>, a = <x, A x>/n and b = <x, B x>/n, the cost is

        C = b - a^2 + lam * (a - e0)^2

    and the returned gradient g = dC/dx* satisfies the finite-difference
    relations dC/dRe(x_i) = 2 Re(g_i) and dC/dIm(x_i) = 2 Im(g_i).
    """
    n = float(np.vdot(x, x).real)
    ax = apply_a(x)
    bx = apply_b(x)
    a = float(np.vdot(x, ax).real) / n
    b = float(np.vdot(x, bx).real) / n
    cost = b - a * a + lam * (a - e0) ** 2
    ga = (ax - a * x) / n
    gb = (bx - b * x) / n
    grad = gb - (2.0 * a - 2.0 * lam * (a - e0)) * ga
    return cost, grad


def _moments(apply_a, apply_b, x):
    """(norm^2, <A>, <B>) of a local tensor in its frozen environment."""
    n = float(np.vdot(x, x).real)
    a = float(np.vdot(x, apply_a(x)).real) / n
    b = float(np.vdot(x, apply_b(x)).real) / n
    return n, a, b


def _apply_local(left, w, right, x):
    """Effective one-site operator: contract (left env, MPO site, right env)."""
    t = np.tensordot(left, x, axes=([2], [0]))
    t = np.tensordot(t, w, axes=([1, 2], [0, 2]))
    return np.tensordot(t, right, axes=([1, 3], [2, 1]))


def _descend(apply_a, apply_b, x, lam, e0, opts: VarOpts):
    """Backtracking gradient descent on one tensor; never accepts an increase."""
    x = np.array(x, dtype=complex)
    x /= math.sqrt(float(np.vdot(x, x).real))
    cost, grad = local_cost_and_gradient(apply_a, apply_b, x, lam, e0)
    step = opts.step_size
    for _ in range(opts.inner_steps):
        gn2 = float(np.vdot(grad, grad).real)
        if gn2 <= 1e-24:
            break
        accepted = False
        while step >= 1e-14:
            cand = x - step * grad
            c_new, g_new = local_cost_and_gradient(apply_a, apply_b, cand,
                                                   lam, e0)
            if c_new <= cost - 1e-4 * step * 2.0 * gn2:
                x, cost, grad = cand, c_new, g_new
                accepted = True
                step = min(step * 1.5, 10.0 * opts.step_size)
                break
            step *= 0.5
        if not accepted:
            break
    return x, cost


def _qr_step_right(ts, i):
    """Left-isometrize site i, absorbing the factor into site i + 1."""
    dl, d, dr = ts[i].shape
    q, r = np.linalg.qr(ts[i].reshape(dl * d, dr))
    ts[i] = q.reshape(dl, d, -1)
    ts[i + 1] = np.tensordot(r, ts[i + 1], axes=([1], [0]))


def _qr_step_left(ts, i):
    """Right-isometrize site i, absorbing the factor into site i - 1."""
    dl, d, dr = ts[i].shape
    qt, rt = np.linalg.qr(ts[i].reshape(dl, d * dr).conj().T)
    ts[i] = qt.conj().T.reshape(-1, d, dr)
    ts[i - 1] = np.tensordot(ts[i - 1], rt.conj().T, axes=([2], [0]))


def _sweep(ts, w1ts, w2ts, lam, e0, opts: VarOpts):
    """One full left-right-left optimization pass.

    ``ts`` must arrive canonical with center 0 and is updated in place,
    returning there normalized.  Returns the internal (<H>, <H^2>) of the
    final state.
    """
    N = len(ts)
    eye = np.ones((1, 1, 1), dtype=complex)
    r1 = [eye] * (N + 1)
    r2 = [eye] * (N + 1)
    for i in range(N - 1, 0, -1):
        r1[i] = _mpo_env_right(r1[i + 1], ts[i], w1ts[i], ts[i])
        r2[i] = _mpo_env_right(r2[i + 1], ts[i], w2ts[i], ts[i])
    l1 = [eye] * (N + 1)
    l2 = [eye] * (N + 1)

    for i in range(N):
        ops = (lambda x, i=i: _apply_local(l1[i], w1ts[i], r1[i + 1], x),
               lambda x, i=i: _apply_local(l2[i], w2ts[i], r2[i + 1], x))
        ts[i], _ = _descend(*ops, ts[i], lam, e0, opts)
        if i < N - 1:
            _qr_step_right(ts, i)
            l1[i + 1] = _mpo_env_left(l1[i], ts[i], w1ts[i], ts[i])
            l2[i + 1] = _mpo_env_left(l2[i], ts[i], w2ts[i], ts[i])

    apply_a = apply_b = None
    for i in range(N - 1, -1, -1):
        apply_a = lambda x, i=i: _apply_local(l1[i], w1ts[i], r1[i + 1], x)
        apply_b = lambda x, i=i: _apply_local(l2[i], w2ts[i], r2[i + 1], x)
        ts[i], _ = _descend(apply_a, apply_b, ts[i], lam, e0, opts)
        if i > 0:
            _qr_step_left(ts, i)
            r1[i] = _mpo_env_right(r1[i + 1], ts[i], w1ts[i], ts[i])
            r2[i] = _mpo_env_right(r2[i + 1], ts[i], w2ts[i], ts[i])

    n, a, b = _moments(apply_a, apply_b, ts[0])
    ts[0] = ts[0] / math.sqrt(n)
    return a, b


def _perturbed(s: MPS, rng: np.random.Generator) -> MPS:
    """Copy of s with relative Gaussian noise on every tensor."""
    tensors = []
    for t in s.tensors:
        rms = np.linalg.norm(t) / math.sqrt(t.size)
        noise = rng.standard_normal(t.shape) + 1j * rng.standard_normal(t.shape)
        tensors.append(t + RESTART_NOISE * rms * noise)
    out = MPS(tensors, center=None, log_norm=s.log_norm)
    return canonicalize(normalized(out), 0)


def _run_attempt(start: MPS, w1ts, w2ts, lam, model, opts: VarOpts,
                 allow_rescale: bool, t_start: float):
    """Sweep until converged or diverged; returns (rows, state, ok, lam)."""
    ts = [t.copy() for t in start.tensors]
    rows = []
    prev_cost = None
    ok = True
    for sweep in range(1, opts.max_sweeps + 1):
        a, b = _sweep(ts, w1ts, w2ts, lam, opts.e0, opts)
        var = b - a * a
        cost = var + lam * (a - opts.e0) ** 2
        if not np.isfinite(cost):
            ok = False
            break
        rows.append({
            "sweep": sweep,
            "variance": float(var),
            "energy": float(a),
            "seconds": float(time.perf_counter() - t_start),
        })
        if allow_rescale and sweep == 1:
            lam = 10.0 * max(var, 0.0) / model.N**2
            allow_rescale = False
            cost = var + lam * (a - opts.e0) ** 2
        if prev_cost is not None:
            if cost > prev_cost + DIVERGENCE_SLACK * max(1.0, abs(prev_cost)):
                ok = False
                break
            if abs(cost - prev_cost) <= opts.tol * max(1.0, abs(prev_cost)):
                prev_cost = cost
                break
        prev_cost = cost
    state = MPS(ts, center=0, log_norm=0.0)
    return rows, state, ok, lam


def minimize_variance(s0: MPS, model: Model, opts: VarOpts):
    """Minimize the penalized energy variance of s0 at fixed bond dimension.

    Returns (state, trace): the normalized, canonical optimized state and a
    :class:`CostTrace` with one row per sweep of the winning attempt.  The
    ``cost`` column is evaluated under the final penalty weight, so it is
    non-increasing; restart and energy-drift anomalies appear in ``flags``.
    """
    N = model.N
    if len(s0.tensors) != N:
        raise ValueError("state and model lengths differ")
    if s0.max_bond > opts.d_max:
        raise ValueError("start state bond dimension exceeds d_max")

    w1ts = model.mpo.tensors
    w2ts = model.mpo.compose(model.mpo).compressed().tensors
    rng = np.random.default_rng(opts.seed)
    t_start = time.perf_counter()

    e_init, var_init = energy_variance(s0, model)
    lam = opts.lam if opts.lam is not None else 10.0 * var_init / N**2
    allow_rescale = opts.lam is None

    start = canonicalize(normalized(s0), 0)
    flags = []
    best = None
    for attempt in range(opts.restarts + 1):
        if attempt > 0:
            usable = best is not None and math.isfinite(best[0])
            begin = _perturbed(best[1] if usable else start, rng)
        else:
            begin = start
        rows, state, ok, lam = _run_attempt(
            begin, w1ts, w2ts, lam, model, opts, allow_rescale, t_start)
        allow_rescale = False
        if rows:
            last = rows[-1]
            cost = last["variance"] + lam * (last["energy"] - opts.e0) ** 2
        else:
            cost = math.inf
        if best is None or cost < best[0]:
            best = (cost, state, rows)
        if ok:
            break
        flags.append(f"attempt {attempt + 1} diverged")
    else:
        flags.append("restarts exhausted; returning best attempt")

    _, state, rows = best
    for row in rows:
        row["cost"] = float(
            row["variance"] + lam * (row["energy"] - opts.e0) ** 2)
    trace = CostTrace(meta={
        "model": model.name,
        "params": dict(model.params),
        "N": N,
        "d_max": int(opts.d_max),
        "E0": float(opts.e0),
        "lambda": float(lam),
        "max_sweeps": opts.max_sweeps,
        "inner_steps": opts.inner_steps,
        "step_size": opts.step_size,
        "restarts": opts.restarts,
        "tol": opts.tol,
        "seed": opts.seed,
        "initial_energy": float(e_init),
        "initial_variance": float(var_init),
    })
    trace.rows = [{k: row[k] for k in VAR_TRACE_COLUMNS} for row in rows]
    trace.flags = flags

    if rows:
        delta = math.sqrt(max(rows[-1]["variance"], 0.0))
        drift = abs(rows[-1]["energy"] - opts.e0)
        if drift > max(delta / 10.0, 1e-4 * N):
            trace.flags.append(
                f"energy drift {drift:.3e} exceeds "
                f"max(delta/10, 1e-4 N) = {max(delta / 10.0, 1e-4 * N):.3e}")

    return normalized(canonicalize(state, 0)), trace
