"""Matrix product states with open boundaries.

Tensors are rank-3 arrays indexed (left bond, physical, right bond); the
first and last bonds have dimension 1.  States carry an orthogonality
``center`` (or None when unknown) and a ``log_norm`` accumulator so that
overall scale factors never enter the tensors themselves: the physical
vector is ``exp(log_norm)`` times the tensor-network contraction.

All operations are functional: they return new states and never mutate
their inputs.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .tensor import SchmidtSpectrum, split_truncate

COMPRESS_REFINE_MAX_SWEEPS = 4
COMPRESS_REFINE_GAIN = 1e-10


@dataclass
class MPS:
    tensors: list[np.ndarray]
    center: int | None = None
    log_norm: float = 0.0

    @property
    def N(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [self.tensors[0].shape[0]] + [t.shape[2] for t in self.tensors]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims)

    def copy(self) -> "MPS":
        return MPS([t.copy() for t in self.tensors], self.center, self.log_norm)


@dataclass(frozen=True)
class DensityMatrix:
    """Reduced density matrix of a contiguous window of sites.

    ``entries[i, j]`` uses window basis index ``i = sum_k s_{first+k} 2^k``
    (the leftmost window site is the least significant bit, matching the
    global convention that site 0 is the least significant bit).
    """

    dim: int
    entries: np.ndarray
    window: tuple[int, int]

    def entropy(self) -> float:
        """Von Neumann entropy in bits."""
        p = np.linalg.eigvalsh(self.entries)
        p = p[p > 1e-18]
        return float(-np.sum(p * np.log2(p)))


def from_product(states) -> MPS:
    """Bond-1 MPS from per-site amplitude vectors (not normalized here)."""
    tensors = []
    for v in states:
        v = np.asarray(v, dtype=complex).ravel()
        tensors.append(v.reshape(1, v.size, 1))
    if not tensors:
        raise ValueError("empty site list")
    return MPS(tensors, center=0, log_norm=0.0)


def random_mps(N: int, d_max: int, rng: np.random.Generator, d: int = 2) -> MPS:
    """Normalized random MPS with bonds capped by d_max and the exact-rank cap."""
    dims = [min(d_max, d ** min(i, N - i)) for i in range(N + 1)]
    tensors = []
    for i in range(N):
        shape = (dims[i], d, dims[i + 1])
        t = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        tensors.append(t / np.sqrt(t.size))
    s = canonicalize(MPS(tensors), 0)
    c = s.tensors[0]
    s.tensors[0] = c / np.linalg.norm(c)
    s.log_norm = 0.0
    return s


def _raw_norm(s: MPS) -> float:
    """Norm of the tensor contraction, excluding exp(log_norm)."""
    if s.center is not None:
        return float(np.linalg.norm(s.tensors[s.center]))
    e = np.ones((1, 1), dtype=complex)
    for t in s.tensors:
        e = np.tensordot(e, t, axes=([1], [0]))
        e = np.tensordot(t.conj(), e, axes=([0, 1], [0, 1]))
    return float(np.sqrt(abs(e[0, 0].real)))


def norm(s: MPS) -> float:
    """Physical 2-norm of the state."""
    return float(np.exp(s.log_norm)) * _raw_norm(s)


def normalized(s: MPS) -> MPS:
    """Same ray, unit norm, log_norm reset to zero."""
    out = canonicalize(s, s.center if s.center is not None else 0)
    c = out.tensors[out.center]
    n = np.linalg.norm(c)
    if n == 0.0:
        raise ValueError("cannot normalize the zero state")
    out.tensors[out.center] = c / n
    out.log_norm = 0.0
    return out


def inner(a: MPS, b: MPS) -> complex:
    """Overlap <a|b> including both log-norm factors."""
    if a.N != b.N:
        raise ValueError("length mismatch")
    e = np.ones((1, 1), dtype=complex)
    for ta, tb in zip(a.tensors, b.tensors):
        e = np.tensordot(e, tb, axes=([1], [0]))
        e = np.tensordot(ta.conj(), e, axes=([0, 1], [0, 1]))
    return complex(e[0, 0]) * float(np.exp(a.log_norm + b.log_norm))


def canonicalize(s: MPS, center: int) -> MPS:
    """Bring the state into mixed canonical form with the given center."""
    N = s.N
    if not 0 <= center < N:
        raise ValueError("center out of range")
    ts = [t.copy() for t in s.tensors]
    for i in range(center):
        dl, d, dr = ts[i].shape
        q, r = np.linalg.qr(ts[i].reshape(dl * d, dr))
        ts[i] = q.reshape(dl, d, q.shape[1])
        ts[i + 1] = np.tensordot(r, ts[i + 1], axes=([1], [0]))
    for i in range(N - 1, center, -1):
        dl, d, dr = ts[i].shape
        q, r = np.linalg.qr(ts[i].reshape(dl, d * dr).conj().T)
        k = q.shape[1]
        ts[i] = q.conj().T.reshape(k, d, dr)
        ts[i - 1] = np.tensordot(ts[i - 1], r.conj().T, axes=([2], [0]))
    return MPS(ts, center=center, log_norm=s.log_norm)


def _svd_sweep(ts: list[np.ndarray], d_max, weight_tol):
    """One left-to-right truncating sweep; ts must be right-canonical (center 0).

    Mutates ts in place; returns the list of per-bond discarded weights.
    """
    weights = []
    for i in range(len(ts) - 1):
        left, right, spec = split_truncate(ts[i], (0, 1), d_max, weight_tol)
        ts[i] = left
        carry = spec.values[:, None] * right
        ts[i + 1] = np.tensordot(carry, ts[i + 1], axes=([1], [0]))
        weights.append(spec.discarded_weight)
    return weights


def _mpo_env_left(e, bra_t, w_t, ket_t):
    """Grow a left (bra bond, mpo bond, ket bond) environment by one site."""
    t = np.tensordot(e, ket_t, axes=([2], [0]))
    t = np.tensordot(t, w_t, axes=([1, 2], [0, 2]))
    t = np.tensordot(bra_t.conj(), t, axes=([0, 1], [0, 2]))
    return t.transpose(0, 2, 1)


def _mpo_env_right(e, bra_t, w_t, ket_t):
    """Grow a right (bra bond, mpo bond, ket bond) environment by one site."""
    t = np.tensordot(ket_t, e, axes=([2], [2]))
    t = np.tensordot(w_t, t, axes=([3, 2], [3, 1]))
    return np.tensordot(bra_t.conj(), t, axes=([1, 2], [1, 3]))


def _ovl_left(e, bra_t, ket_t):
    """Grow a left overlap environment (bra bond, ket bond) by one site."""
    tmp = np.tensordot(e, ket_t, axes=([1], [0]))
    return np.tensordot(bra_t.conj(), tmp, axes=([0, 1], [0, 1]))


def _ovl_right(e, bra_t, ket_t):
    """Grow a right overlap environment (bra bond, ket bond) by one site."""
    tmp = np.tensordot(ket_t, e, axes=([2], [1]))
    return np.tensordot(bra_t.conj(), tmp, axes=([1, 2], [1, 2]))


def compress(s: MPS, d_max: int | None = None, weight_tol: float = 0.0):
    """Truncate bonds; returns (state, total discarded weight).

    One SVD truncation sweep over a right-canonical form, then up to
    COMPRESS_REFINE_MAX_SWEEPS single-site variational sweeps fitting the
    truncated state back to the original, stopped when the squared-overlap
    gain drops below COMPRESS_REFINE_GAIN.  The result is canonical with
    the center at the last site and a unit-norm tensor part.
    """
    orig = canonicalize(s, 0)
    raw = float(np.linalg.norm(orig.tensors[0]))
    if raw == 0.0:
        out = orig.copy()
        out.center = 0
        return out, 0.0
    ts = [t.copy() for t in orig.tensors]
    ts[0] = ts[0] / raw
    weights = _svd_sweep(ts, d_max, weight_tol)
    total_weight = float(np.sum(weights))
    if total_weight > 0.0 and len(ts) > 1:
        ts = _refine_fit(ts, orig.tensors, raw)
    n = len(ts)
    cn = float(np.linalg.norm(ts[n - 1]))
    ts[n - 1] = ts[n - 1] / cn
    out = MPS(ts, center=n - 1, log_norm=orig.log_norm + np.log(raw) + np.log(cn))
    return out, total_weight


def _refine_fit(ts, orig_ts, orig_raw):
    """Variational single-site sweeps maximizing overlap with orig_ts.

    ts enters left-canonical with center at the last site and leaves in the
    same gauge.  orig_raw is the norm of orig_ts, which is divided out so
    the fitted fidelity is against the unit-norm target.
    """
    N = len(ts)
    target = [t.copy() for t in orig_ts]
    target[0] = target[0] / orig_raw
    left = [None] * N
    left[0] = np.ones((1, 1), dtype=complex)
    for i in range(N - 1):
        left[i + 1] = _ovl_left(left[i], ts[i], target[i])
    fid_prev = -np.inf
    for _ in range(COMPRESS_REFINE_MAX_SWEEPS):
        # right-to-left: replace each site by its overlap environment and
        # leave it right-isometric
        right = [None] * (N + 1)
        right[N] = np.ones((1, 1), dtype=complex)
        for i in range(N - 1, 0, -1):
            g = np.tensordot(left[i], target[i], axes=([1], [0]))
            g = np.tensordot(g, right[i + 1], axes=([2], [1]))
            dl, d, dr = g.shape
            q, _ = np.linalg.qr(g.reshape(dl, d * dr).conj().T)
            ts[i] = q.conj().T.reshape(q.shape[1], d, dr)
            right[i] = _ovl_right(right[i + 1], ts[i], target[i])
        # left-to-right: same, leaving sites left-isometric; the final site
        # keeps the raw environment, whose norm squared is the fidelity
        lenv = np.ones((1, 1), dtype=complex)
        fid = 0.0
        for i in range(N):
            g = np.tensordot(lenv, target[i], axes=([1], [0]))
            g = np.tensordot(g, right[i + 1], axes=([2], [1]))
            if i < N - 1:
                dl, d, dr = g.shape
                q, _ = np.linalg.qr(g.reshape(dl * d, dr))
                ts[i] = q.reshape(dl, d, q.shape[1])
                lenv = _ovl_left(lenv, ts[i], target[i])
                left[i + 1] = lenv
            else:
                ts[i] = g
                fid = float(np.linalg.norm(g)) ** 2
        if fid - fid_prev < COMPRESS_REFINE_GAIN:
            break
        fid_prev = fid
    return ts


def add(terms, d_max: int | None = None, weight_tol: float = 0.0) -> MPS:
    """Linear combination sum_k c_k |s_k> by bond-wise direct sum.

    ``terms`` is a sequence of (coefficient, MPS) pairs.  Coefficients and
    log-norm offsets are folded into the first-site blocks.  If d_max or
    weight_tol is set the result is compressed.
    """
    terms = [(complex(c), s) for c, s in terms if c != 0.0]
    if not terms:
        raise ValueError("empty linear combination")
    N = terms[0][1].N
    if any(s.N != N for _, s in terms):
        raise ValueError("length mismatch")
    base = max(np.log(abs(c)) + s.log_norm for c, s in terms)
    factors = [(c / abs(c)) * np.exp(np.log(abs(c)) + s.log_norm - base)
               for c, s in terms]
    if N == 1:
        t = sum(f * s.tensors[0] for f, (_, s) in zip(factors, terms))
        return MPS([t], center=0, log_norm=base)
    d = terms[0][1].tensors[0].shape[1]
    tensors = []
    for i in range(N):
        blocks = [s.tensors[i] for _, s in terms]
        if i == 0:
            row = [f * b for f, b in zip(factors, blocks)]
            tensors.append(np.concatenate(row, axis=2))
        elif i == N - 1:
            tensors.append(np.concatenate(blocks, axis=0))
        else:
            dl = sum(b.shape[0] for b in blocks)
            dr = sum(b.shape[2] for b in blocks)
            t = np.zeros((dl, d, dr), dtype=complex)
            ol = orr = 0
            for b in blocks:
                t[ol : ol + b.shape[0], :, orr : orr + b.shape[2]] = b
                ol += b.shape[0]
                orr += b.shape[2]
            tensors.append(t)
    out = MPS(tensors, center=None, log_norm=base)
    if d_max is not None or weight_tol > 0.0:
        out, _ = compress(out, d_max, weight_tol)
    return out


def apply_mpo(w, s: MPS, d_max: int | None = None, weight_tol: float = 0.0):
    """Apply an MPO to the state, then compress.  Returns (state, weight)."""
    if w.N != s.N:
        raise ValueError("length mismatch")
    tensors = []
    for wt, st in zip(w.tensors, s.tensors):
        t = np.einsum("aijb,ljr->alibr", wt, st)
        wl, dl, d, wr, dr = t.shape
        tensors.append(t.reshape(wl * dl, d, wr * dr))
    out = MPS(tensors, center=None, log_norm=s.log_norm)
    return compress(out, d_max, weight_tol)


def _sandwich(s: MPS, w) -> complex:
    """Raw <tensors|W|tensors> without log-norm factors."""
    e = np.ones((1, 1, 1), dtype=complex)  # (bra, mpo, ket)
    for t, wt in zip(s.tensors, w.tensors):
        e = np.tensordot(e, t, axes=([2], [0]))            # (b, m, s, kr)
        e = np.tensordot(e, wt, axes=([1, 2], [0, 2]))     # (b, kr, s', wr)
        e = np.tensordot(t.conj(), e, axes=([0, 1], [0, 2]))  # (br, kr, wr)
        e = e.transpose(0, 2, 1)
    return complex(e[0, 0, 0])


def _sandwich2(s: MPS, w) -> complex:
    """Raw <tensors|W W|tensors> without log-norm factors."""
    e = np.ones((1, 1, 1, 1), dtype=complex)  # (bra, w_top, w_bot, ket)
    for t, wt in zip(s.tensors, w.tensors):
        e = np.tensordot(e, t, axes=([3], [0]))             # (b, u, v, s, kr)
        e = np.tensordot(e, wt, axes=([2, 3], [0, 2]))      # (b, u, kr, s', vr)
        e = np.tensordot(e, wt, axes=([1, 3], [0, 2]))      # (b, kr, vr, s'', ur)
        e = np.tensordot(t.conj(), e, axes=([0, 1], [0, 3]))  # (br, kr, vr, ur)
        e = e.transpose(0, 3, 2, 1)
    return complex(e[0, 0, 0, 0])


def mpo_matrix_element(a: MPS, w, b: MPS) -> complex:
    """Full matrix element <a|W|b> between two states, log norms included."""
    if not (a.N == b.N == w.N):
        raise ValueError("length mismatch")
    e = np.ones((1, 1, 1), dtype=complex)  # (bra, mpo, ket)
    for bt, wt, kt in zip(a.tensors, w.tensors, b.tensors):
        e = np.tensordot(e, kt, axes=([2], [0]))
        e = np.tensordot(e, wt, axes=([1, 2], [0, 2]))
        e = np.tensordot(bt.conj(), e, axes=([0, 1], [0, 2]))
        e = e.transpose(0, 2, 1)
    return complex(e[0, 0, 0]) * np.exp(a.log_norm + b.log_norm)


def expectation(s: MPS, w) -> float:
    """Normalized real expectation value <s|W|s> / <s|s>."""
    n2 = _raw_norm(s) ** 2
    if n2 == 0.0:
        raise ValueError("zero state")
    return float(_sandwich(s, w).real) / n2


def expectation2(s: MPS, w) -> float:
    """Normalized <s|W W|s> / <s|s>, contracted exactly (no truncation)."""
    n2 = _raw_norm(s) ** 2
    if n2 == 0.0:
        raise ValueError("zero state")
    return float(_sandwich2(s, w).real) / n2


def local_expectation(s: MPS, op: np.ndarray, site: int) -> float:
    """Normalized expectation of a single-site operator."""
    c = canonicalize(s, site)
    t = c.tensors[site]
    v = np.tensordot(np.asarray(op, dtype=complex), t, axes=([1], [1]))
    v = v.transpose(1, 0, 2)
    val = np.vdot(t, v) / np.vdot(t, t)
    return float(val.real)


def schmidt(s: MPS, cut: int) -> SchmidtSpectrum:
    """Schmidt spectrum across the bond between sites cut-1 and cut.

    The returned values are normalized to the state's unit ray, so their
    squares sum to 1 regardless of the state's norm.
    """
    if not 1 <= cut <= s.N - 1:
        raise ValueError("cut must be in 1..N-1")
    c = canonicalize(s, cut - 1)
    t = c.tensors[cut - 1]
    dl, d, dr = t.shape
    svals = np.linalg.svd(t.reshape(dl * d, dr), compute_uv=False)
    total = np.linalg.norm(svals)
    if total == 0.0:
        raise ValueError("zero state has no Schmidt spectrum")
    return SchmidtSpectrum(svals / total)


def entropy(s: MPS, cut: int) -> float:
    """Bipartite entanglement entropy in bits across the given cut."""
    return schmidt(s, cut).entropy()


def window_density_matrix(s: MPS, first: int, length: int) -> np.ndarray:
    """Dense reduced density matrix of sites [first, first+length)."""
    N = s.N
    if length < 1 or first < 0 or first + length > N:
        raise ValueError("window out of range")
    if length > 10:
        raise ValueError("window length capped at 10 (dense 2^L entries)")
    c = canonicalize(s, first)
    nrm = np.linalg.norm(c.tensors[first])
    m = c.tensors[first] / nrm
    for i in range(first + 1, first + length):
        m = np.tensordot(m, c.tensors[i], axes=([m.ndim - 1], [0]))
    # m: (a, s_first, ..., s_last, b) -> reorder physical axes so the
    # leftmost window site is the least significant bit
    perm = [0] + list(range(length, 0, -1)) + [length + 1]
    m = np.transpose(m, perm)
    dim = 2**length
    a_dim, b_dim = m.shape[0], m.shape[-1]
    x = m.reshape(a_dim, dim, b_dim).transpose(1, 0, 2).reshape(dim, a_dim * b_dim)
    rho = x @ x.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return rho


def rdm(s: MPS, first: int, length: int) -> DensityMatrix:
    """Reduced density matrix of a window as a DensityMatrix record."""
    rho = window_density_matrix(s, first, length)
    return DensityMatrix(dim=rho.shape[0], entries=rho,
                         window=(first, first + length))


def block_entropy(s: MPS, first: int, length: int) -> float:
    """Von Neumann entropy (bits) of a contiguous window of sites."""
    rho = window_density_matrix(s, first, length)
    p = np.linalg.eigvalsh(rho)
    p = p[p > 1e-18]
    return float(-np.sum(p * np.log2(p)))


# ---------------------------------------------------------------------------
# Serialization: magic MPS1, little-endian, complex128 C-order tensors
# ---------------------------------------------------------------------------

_MAGIC = b"MPS1"


def to_bytes(s: MPS) -> bytes:
    """Serialize; the log-norm factor is folded into the center tensor."""
    ts = [t for t in s.tensors]
    if s.log_norm != 0.0:
        at = s.center if s.center is not None else 0
        ts = [t.copy() for t in ts]
        ts[at] = ts[at] * np.exp(s.log_norm)
    d = ts[0].shape[1]
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<II", len(ts), d))
    dims = [ts[0].shape[0]] + [t.shape[2] for t in ts]
    buf.write(struct.pack(f"<{len(dims)}I", *dims))
    for t in ts:
        buf.write(np.ascontiguousarray(t, dtype="<c16").tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> MPS:
    """Inverse of to_bytes; the result has log_norm 0 and unknown center."""
    if data[:4] != _MAGIC:
        raise ValueError("not an MPS1 payload")
    n, d = struct.unpack_from("<II", data, 4)
    dims = struct.unpack_from(f"<{n + 1}I", data, 12)
    offset = 12 + 4 * (n + 1)
    tensors = []
    for i in range(n):
        shape = (dims[i], d, dims[i + 1])
        count = dims[i] * d * dims[i + 1]
        t = np.frombuffer(data, dtype="<c16", count=count, offset=offset)
        offset += count * 16
        tensors.append(t.reshape(shape).astype(complex, copy=True))
    if offset != len(data):
        raise ValueError("trailing bytes in MPS1 payload")
    return MPS(tensors, center=None, log_norm=0.0)


def save(s: MPS, path) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(s))


def load(path) -> MPS:
    with open(path, "rb") as f:
        return from_bytes(f.read())
