"""Chebyshev delta filtering of matrix-product states.

Builds states of prescribed small energy variance by applying a
Jackson-damped Chebyshev expansion of a spectral delta function to a start
state.  The operator recurrence T_n = 2 H~ T_{n-1} - T_{n-2} runs directly
on MPS tensors with per-step compression, so peak memory holds two chain
states plus one partial sum per requested order; every requested order M
shares one T chain.

Each run produces a :class:`FilterTrace` with per-step energy, variance,
entanglement entropies, bond data, and accumulated discarded weight.  An
exact dense backend with the identical coefficients and trace format backs
small systems and cross-checks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import exact as exact_backend
from .analysis import d_tr, energy_variance
from .hamiltonian import Model, rescaled
from .kernels import (
    KernelCoefficients,
    delta_coefficients,
    envelope_sigma,
    jackson,
    predicted_delta_cheby,
    predicted_delta_cos,
)
from .mps import (
    MPS,
    _mpo_env_left,
    _mpo_env_right,
    _ovl_left,
    _ovl_right,
    add,
    block_entropy,
    canonicalize,
    compress,
    inner,
    mpo_matrix_element,
    norm,
    normalized,
    schmidt,
)
from .tensor import split_truncate

__all__ = [
    "FilterTrace",
    "TRACE_COLUMNS",
    "cheby_filter",
    "cheby_filter_multi",
    "cheby_filter_exact_traced",
    "cosine_filter_exact",
    "KernelCoefficients",
    "delta_coefficients",
    "envelope_sigma",
    "jackson",
    "predicted_delta_cheby",
    "predicted_delta_cos",
]

# bond ceiling under which a recurrence step is built by direct sum and a
# single compression instead of a variational fit
DIRECT_BOND_MAX = 192
# per-bond relative weight budget for partial-sum and chain compressions
SUM_WEIGHT_TOL = 1e-12
# relative weight trimmed off a state copy before measurements
TRIM_WEIGHT_TOL = 1e-12
# a variance growing by this factor between records flags the run
VARIANCE_JUMP_FACTOR = 10.0
# block entropies are measured on windows of 1..10 sites
BLOCK_LENGTH_MAX = 10
# windows at least this long are measured on a copy capped at
# WINDOW_MEAS_BOND to keep the window density matrix affordable
WINDOW_MEAS_MIN_LEN = 7
WINDOW_MEAS_BOND = 64

TRACE_COLUMNS = (
    "step",
    "energy",
    "variance",
    "S_half",
    *[f"S_block_{l}" for l in range(1, BLOCK_LENGTH_MAX + 1)],
    "max_bond",
    "discarded",
    "d_tr",
    "seconds",
)

_INT_COLUMNS = {"step", "max_bond", "d_tr"}


@dataclass
class FilterTrace:
    """Measurement log of one filtering run.

    ``rows`` hold one dict per record with the keys in :data:`TRACE_COLUMNS`;
    ``meta`` carries the run manifest (model, sizes, rescaling); ``flags``
    collect anomalies such as variance jumps in the truncation regime.
    """

    meta: dict
    rows: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    columns = TRACE_COLUMNS

    def add_row(self, row: dict) -> None:
        missing = set(TRACE_COLUMNS) - set(row)
        if missing:
            raise ValueError(f"row is missing columns: {sorted(missing)}")
        if self.rows and row["step"] <= self.rows[-1]["step"]:
            raise ValueError("step indices must increase strictly")
        self.rows.append({k: row[k] for k in TRACE_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        if name not in TRACE_COLUMNS:
            raise KeyError(name)
        return np.array([row[name] for row in self.rows])

    @property
    def steps(self) -> np.ndarray:
        return self.column("step")

    @property
    def final(self) -> dict:
        if not self.rows:
            raise ValueError("trace has no rows")
        return self.rows[-1]

    def to_csv(self, zero_seconds: bool = False) -> str:
        lines = [",".join(TRACE_COLUMNS)]
        for row in self.rows:
            cells = []
            for name in TRACE_COLUMNS:
                v = row[name]
                if name == "seconds" and zero_seconds:
                    v = 0.0
                if name in _INT_COLUMNS:
                    cells.append(str(int(v)))
                else:
                    cells.append(repr(float(v)))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def save_csv(self, path, zero_seconds: bool = False) -> None:
        with open(path, "w") as f:
            f.write(self.to_csv(zero_seconds=zero_seconds))


def _record_cadence(M: int, record_every: int | None) -> int:
    if record_every is not None:
        if record_every < 1:
            raise ValueError("record_every must be >= 1")
        return int(record_every)
    return max(1, math.ceil(M / 50))


# ---------------------------------------------------------------------------
# MPS recurrence engine


def _mpo_product(w, s: MPS) -> MPS:
    """W|s> as an uncompressed MPS with bond dims multiplied."""
    tensors = []
    for wt, st in zip(w.tensors, s.tensors):
        t = np.einsum("aijb,ljr->alibr", wt, st)
        wl, dl, d, wr, dr = t.shape
        tensors.append(t.reshape(wl * dl, d, wr * dr))
    return MPS(tensors, center=None, log_norm=s.log_norm)


def _block3(L, w1, w2, k1, k2, R):
    """Two-site target block of an MPO-times-state term."""
    t = np.tensordot(L, k1, axes=([2], [0]))          # (bl, wm, s1, m)
    t = np.tensordot(t, w1, axes=([1, 2], [0, 2]))    # (bl, m, p1, wm')
    t = np.tensordot(t, k2, axes=([1], [0]))          # (bl, p1, wm', s2, m')
    t = np.tensordot(t, w2, axes=([2, 3], [0, 2]))    # (bl, p1, m', p2, wr)
    return np.tensordot(t, R, axes=([4, 2], [1, 2]))  # (bl, p1, p2, br)


def _block2(L, k1, k2, R):
    """Two-site target block of a plain-state term."""
    t = np.tensordot(L, k1, axes=([1], [0]))          # (bl, s1, m)
    t = np.tensordot(t, k2, axes=([2], [0]))          # (bl, s1, s2, m')
    return np.tensordot(t, R, axes=([3], [1]))        # (bl, s1, s2, br)


def _fit_step(ht, t1: MPS, t0: MPS, d_max, weight_tol) -> MPS:
    """Variational two-site fit of 2 H~ t1 - t0, seeded from t1.

    One left-to-right plus one right-to-left alternating-least-squares pass;
    environments against both targets are kept incrementally.
    """
    N = t1.N
    base = max(np.log(2.0) + t1.log_norm, t0.log_norm)
    f1 = 2.0 * np.exp(t1.log_norm - base)
    f0 = -np.exp(t0.log_norm - base)
    phi = [t.copy() for t in canonicalize(t1, 0).tensors]
    wts = ht.tensors
    a_ts = t1.tensors
    b_ts = t0.tensors

    rh = [None] * (N + 1)
    ro = [None] * (N + 1)
    rh[N] = np.ones((1, 1, 1), dtype=complex)
    ro[N] = np.ones((1, 1), dtype=complex)
    for i in range(N - 1, 1, -1):
        rh[i] = _mpo_env_right(rh[i + 1], phi[i], wts[i], a_ts[i])
        ro[i] = _ovl_right(ro[i + 1], phi[i], b_ts[i])

    lh = [np.ones((1, 1, 1), dtype=complex)]
    lo = [np.ones((1, 1), dtype=complex)]

    def local_block(i):
        g = f1 * _block3(lh[i], wts[i], wts[i + 1], a_ts[i], a_ts[i + 1],
                         rh[i + 2])
        g += f0 * _block2(lo[i], b_ts[i], b_ts[i + 1], ro[i + 2])
        return g

    # left-to-right pass
    for i in range(N - 1):
        g = local_block(i)
        left, right, spec = split_truncate(g, (0, 1), d_max, weight_tol)
        phi[i] = left
        phi[i + 1] = spec.values[:, None, None] * right
        lh.append(_mpo_env_left(lh[i], phi[i], wts[i], a_ts[i]))
        lo.append(_ovl_left(lo[i], phi[i], b_ts[i]))

    # right-to-left pass
    for i in range(N - 2, -1, -1):
        g = local_block(i)
        left, right, spec = split_truncate(g, (0, 1), d_max, weight_tol)
        phi[i + 1] = right
        phi[i] = left * spec.values[None, None, :]
        rh[i + 1] = _mpo_env_right(rh[i + 2], phi[i + 1], wts[i + 1], a_ts[i + 1])
        ro[i + 1] = _ovl_right(ro[i + 2], phi[i + 1], b_ts[i + 1])

    # the passes leave co-isometries on sites 1..N-1 and the whole raw
    # magnitude on phi[0]; fold it into log_norm so repeated fit steps
    # keep tensors at unit scale instead of drifting by ~log 2 per step
    raw = float(np.linalg.norm(phi[0]))
    if raw > 0.0:
        phi[0] = phi[0] / raw
        base = float(base) + float(np.log(raw))
    return MPS(phi, center=0, log_norm=float(base))


def _step_residual(phi: MPS, ht, ht2, t1: MPS, t0: MPS | None,
                   ca: float = 2.0, cb: float = -1.0) -> float:
    """Exact relative residual ||y - phi||^2 / ||y||^2 for y = ca H~ t1 + cb t0."""
    a2 = mpo_matrix_element(t1, ht2, t1).real
    ny2 = ca * ca * a2
    py = ca * mpo_matrix_element(phi, ht, t1)
    if t0 is not None:
        b2 = norm(t0) ** 2
        cross = mpo_matrix_element(t0, ht, t1).real
        ny2 += cb * cb * b2 + 2.0 * ca * cb * cross
        py += cb * inner(phi, t0)
    if ny2 <= 0.0:
        return 0.0
    res2 = ny2 - 2.0 * py.real + norm(phi) ** 2
    return max(res2, 0.0) / ny2


def _chain_step(ht, ht2, t1: MPS, t0: MPS, d_max, weight_tol):
    """One Chebyshev recurrence step with exact residual accounting."""
    w_bond = max(ht.bond_dims)
    if w_bond * t1.max_bond + t0.max_bond <= DIRECT_BOND_MAX:
        y = add([(2.0, _mpo_product(ht, t1)), (-1.0, t0)])
        t_next, _ = compress(y, d_max, weight_tol)
    else:
        t_next = _fit_step(ht, t1, t0, d_max, weight_tol)
    res = _step_residual(t_next, ht, ht2, t1, t0)
    return t_next, res


def _scaled_copy(s: MPS, c: float) -> MPS:
    out = s.copy()
    if c <= 0.0:
        raise ValueError("positive scale expected")
    out.log_norm = s.log_norm + np.log(c)
    return out


def _block_entropies(trimmed: MPS, N: int) -> dict:
    """Entropies of centered windows of 1..BLOCK_LENGTH_MAX sites, in bits.

    Long windows are measured on a bond-capped copy so the window density
    matrix stays affordable; windows reaching the full chain are pure and
    report zero.
    """
    vals = {}
    capped = None
    for length in range(1, BLOCK_LENGTH_MAX + 1):
        key = f"S_block_{length}"
        if length >= N:
            vals[key] = 0.0
            continue
        state = trimmed
        if (length >= WINDOW_MEAS_MIN_LEN
                and trimmed.max_bond > WINDOW_MEAS_BOND):
            if capped is None:
                capped, _ = compress(trimmed, WINDOW_MEAS_BOND, 0.0)
            state = capped
        first = (N - length) // 2
        vals[key] = block_entropy(state, first, length)
    return vals


def _measure_mps(psi: MPS, model: Model, step: int, discarded: float,
                 t_start: float) -> dict:
    trimmed, _ = compress(psi, d_max=None, weight_tol=TRIM_WEIGHT_TOL)
    energy, var = energy_variance(trimmed, model)
    spec = schmidt(trimmed, model.N // 2)
    row = {
        "step": int(step),
        "energy": float(energy),
        "variance": float(var),
        "S_half": float(spec.entropy()),
        **_block_entropies(trimmed, model.N),
        "max_bond": int(psi.max_bond),
        "discarded": float(discarded),
        "d_tr": int(d_tr(spec)),
        "seconds": float(time.perf_counter() - t_start),
    }
    return row


def _check_variance_jump(trace: FilterTrace, M: int) -> None:
    if len(trace.rows) < 2:
        return
    prev = trace.rows[-2]["variance"]
    cur = trace.rows[-1]["variance"]
    if prev > 0.0 and cur > VARIANCE_JUMP_FACTOR * prev:
        trace.flags.append(
            f"M={M}: variance rose {cur / prev:.2f}x between steps "
            f"{trace.rows[-2]['step']} and {trace.rows[-1]['step']}; "
            "truncation-dominated regime")


def cheby_filter_multi(p: MPS, model: Model, Ms, d_max: int, e0: float,
                       alpha: float | None = None,
                       record_every: int | None = None,
                       weight_tol: float = SUM_WEIGHT_TOL) -> dict:
    """Filter one start state at several expansion orders sharing one chain.

    Returns {M: (state, trace)} with normalized output states.  All orders
    reuse the same T_n sequence; partial sums update at even orders (odd
    delta-filter coefficients vanish) and are compressed to ``d_max`` after
    every update.  The ``discarded`` trace column accumulates the exact
    relative chain residuals plus the partial-sum compression weights.
    """
    ms = sorted({int(M) for M in Ms})
    if not ms:
        raise ValueError("no expansion orders given")
    if ms[0] < 0:
        raise ValueError("expansion order must be >= 0")
    m_max = ms[-1]
    t_start = time.perf_counter()

    op = rescaled(model, e0, alpha)
    ht = op.mpo
    ht2 = ht.compose(ht).compressed()
    coeffs = {M: delta_coefficients(M).c for M in ms}
    cadence = {M: _record_cadence(M, record_every) for M in ms}

    def meta_for(M):
        return {
            "model": model.name,
            "params": dict(model.params),
            "N": model.N,
            "M": M,
            "d_max": int(d_max),
            "E0": float(e0),
            "alpha": float(op.alpha),
            "backend": "mps",
            "record_every": cadence[M],
            "weight_tol": float(weight_tol),
        }

    p_unit = normalized(p)
    sums = {M: _scaled_copy(p_unit, coeffs[M][0]) for M in ms}
    traces = {M: FilterTrace(meta=meta_for(M)) for M in ms}
    sum_weight = dict.fromkeys(ms, 0.0)
    chain_weight = 0.0

    for M in ms:
        traces[M].add_row(
            _measure_mps(sums[M], model, 0, 0.0, t_start))

    if m_max >= 1:
        t_prev = p_unit
        t_cur, _ = compress(_mpo_product(ht, p_unit), d_max, weight_tol)
        chain_weight += _step_residual(t_cur, ht, ht2, p_unit, None,
                                       ca=1.0, cb=0.0)
        for M in ms:
            if M >= 1 and (1 % cadence[M] == 0 or M == 1):
                traces[M].add_row(_measure_mps(
                    sums[M], model, 1,
                    chain_weight + sum_weight[M], t_start))
                _check_variance_jump(traces[M], M)

        for n in range(2, m_max + 1):
            t_next, res = _chain_step(ht, ht2, t_cur, t_prev,
                                      d_max, weight_tol)
            chain_weight += res
            t_prev, t_cur = t_cur, t_next
            if n % 2 == 0:
                for M in ms:
                    if M >= n:
                        acc = add([(1.0, sums[M]), (coeffs[M][n], t_cur)])
                        sums[M], w_s = compress(acc, d_max, weight_tol)
                        sum_weight[M] += w_s
            for M in ms:
                if M >= n and (n % cadence[M] == 0 or n == M):
                    traces[M].add_row(_measure_mps(
                        sums[M], model, n,
                        chain_weight + sum_weight[M], t_start))
                    _check_variance_jump(traces[M], M)

    return {M: (normalized(sums[M]), traces[M]) for M in ms}


def cheby_filter(p: MPS, model: Model, M: int, d_max: int, e0: float,
                 alpha: float | None = None,
                 record_every: int | None = None,
                 weight_tol: float = SUM_WEIGHT_TOL):
    """Order-M delta filter of a start state; returns (state, trace).

    The output state is normalized; M = 0 reproduces the start state.  See
    :func:`cheby_filter_multi` for the trace contents and the sharing of
    one recurrence chain across several orders.
    """
    out = cheby_filter_multi(p, model, [M], d_max, e0, alpha=alpha,
                             record_every=record_every,
                             weight_tol=weight_tol)
    return out[int(M)]


# ---------------------------------------------------------------------------
# exact dense backend with the same trace format


def _vector_schmidt(v: np.ndarray, N: int, cut: int) -> np.ndarray:
    m = v.reshape(2 ** (N - cut), 2 ** cut)
    return np.linalg.svd(m, compute_uv=False)


def _vector_block_entropy(v: np.ndarray, N: int, first: int,
                          length: int) -> float:
    if length >= N:
        return 0.0
    m = v.reshape(2 ** (N - first - length), 2 ** length, 2 ** first)
    x = m.transpose(1, 0, 2).reshape(2 ** length, -1)
    s = np.linalg.svd(x, compute_uv=False)
    p = s * s
    p = p[p > 1e-300]
    p = p / p.sum()
    return float(-(p @ np.log2(p)))


def _bond_rank(svals: np.ndarray, weight_tol: float = TRIM_WEIGHT_TOL) -> int:
    p = svals * svals
    total = p.sum()
    if total <= 0.0:
        return 1
    c = np.cumsum(p) / total
    return int(np.searchsorted(c, 1.0 - weight_tol, side="left") + 1)


def _measure_vector(v: np.ndarray, model: Model, step: int,
                    t_start: float) -> dict:
    u = v / np.linalg.norm(v)
    N = model.N
    spec = _vector_schmidt(u, N, N // 2)
    p = spec * spec
    p_pos = p[p > 1e-300]
    s_half = float(-(p_pos @ np.log2(p_pos)))
    row = {
        "step": int(step),
        "energy": float(exact_backend.energy(model, u)),
        "variance": float(exact_backend.exact_variance(model, u)),
        "S_half": s_half,
        "max_bond": int(_bond_rank(spec)),
        "discarded": 0.0,
        "d_tr": int(d_tr(spec)),
        "seconds": float(time.perf_counter() - t_start),
    }
    for length in range(1, BLOCK_LENGTH_MAX + 1):
        first = (N - length) // 2
        row[f"S_block_{length}"] = _vector_block_entropy(u, N, first, length)
    return row


def cheby_filter_exact_traced(p: np.ndarray, model: Model, Ms, e0: float,
                              alpha: float | None = None,
                              record_every: int | None = None) -> dict:
    """Dense-vector version of :func:`cheby_filter_multi`.

    Identical coefficients and trace format; the ``discarded`` column is
    zero and ``max_bond`` reports the Schmidt rank at the center cut above
    the trim weight floor.  Returns {M: (vector, trace)} with normalized
    vectors.
    """
    ms = sorted({int(M) for M in Ms})
    if not ms or ms[0] < 0:
        raise ValueError("expansion orders must be >= 0")
    m_max = ms[-1]
    t_start = time.perf_counter()
    apply_h, alpha_val = exact_backend.make_htilde_apply(model, e0, alpha)
    coeffs = {M: delta_coefficients(M).c for M in ms}
    cadence = {M: _record_cadence(M, record_every) for M in ms}
    traces = {}
    for M in ms:
        traces[M] = FilterTrace(meta={
            "model": model.name,
            "params": dict(model.params),
            "N": model.N,
            "M": M,
            "d_max": None,
            "E0": float(e0),
            "alpha": float(alpha_val),
            "backend": "exact",
            "record_every": cadence[M],
            "weight_tol": 0.0,
        })

    v = np.asarray(p, dtype=complex)
    v = v / np.linalg.norm(v)
    sums = {M: coeffs[M][0] * v for M in ms}
    for M in ms:
        traces[M].add_row(_measure_vector(sums[M], model, 0, t_start))

    if m_max >= 1:
        t_prev = v
        t_cur = apply_h(v)
        for M in ms:
            if M >= 1 and (1 % cadence[M] == 0 or M == 1):
                traces[M].add_row(
                    _measure_vector(sums[M], model, 1, t_start))
        for n in range(2, m_max + 1):
            t_prev, t_cur = t_cur, 2.0 * apply_h(t_cur) - t_prev
            if n % 2 == 0:
                for M in ms:
                    if M >= n:
                        sums[M] = sums[M] + coeffs[M][n] * t_cur
            for M in ms:
                if M >= n and (n % cadence[M] == 0 or n == M):
                    traces[M].add_row(
                        _measure_vector(sums[M], model, n, t_start))
                    _check_variance_jump(traces[M], M)

    out = {}
    for M in ms:
        u = sums[M] / np.linalg.norm(sums[M])
        out[M] = (u, traces[M])
    return out


def cosine_filter_exact(v: np.ndarray, model: Model, M: int,
                        e0: float) -> np.ndarray:
    """M applications of cos((H - E0)/N) to a dense vector, then normalize.

    M = 0 returns the input unchanged.  Each application is expanded in
    Chebyshev polynomials with Bessel coefficients, so the result is exact
    to propagator tolerance rather than a truncated binomial sum.
    """
    u = np.asarray(v, dtype=complex).copy()
    if M == 0:
        return u
    y = exact_backend.cosine_filter_vector(u, model, M, e0)
    return y / np.linalg.norm(y)
