"""Spin-chain Hamiltonians as MPOs plus traceless two-site local terms.

Two built-in nearest-neighbor models on open chains of qubits:

* Ising with transverse and longitudinal fields,
  ``H = J sum_n sz.sz + g sum_n sx + h sum_n sz``  (MPO bond dimension 3)
* XYZ in a z field,
  ``H = sum_n (Jx sx.sx + Jy sy.sy + Jz sz.sz) + h sum_n sz``  (bond dim 5)

Every model also carries a decomposition ``H = sum_n h_n`` into two-site
terms h_n acting on sites (n, n+1), with an optional trailing single-site
term on the last site, normalized so tr(h_n) = 0 and the partial trace of
h_n over its first site vanishes.  Interior single-site fields are split
half/half onto the two adjacent bond terms; edge fields attach fully to the
single bond available.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg

from .tensor import split_truncate

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SY = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
ID2 = np.eye(2, dtype=complex)

DMRG_BOND_DEFAULT = 32
DMRG_MAX_SWEEPS = 12
DMRG_ENERGY_TOL = 1e-8


@dataclass
class MPO:
    """Matrix product operator: per-site tensors (left, phys-out, phys-in, right)."""

    tensors: list[np.ndarray]

    @property
    def N(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [self.tensors[0].shape[0]] + [w.shape[3] for w in self.tensors]

    @classmethod
    def identity(cls, N: int) -> "MPO":
        return cls([ID2.reshape(1, 2, 2, 1).copy() for _ in range(N)])

    @classmethod
    def from_site_operator(cls, ops: list[np.ndarray]) -> "MPO":
        """Product operator ``ops[0] x ops[1] x ...`` as a bond-1 MPO."""
        return cls([np.asarray(op, dtype=complex).reshape(1, 2, 2, 1) for op in ops])

    def scaled(self, c: complex) -> "MPO":
        out = [w.copy() for w in self.tensors]
        out[0] = out[0] * c
        return MPO(out)

    def compose(self, other: "MPO") -> "MPO":
        """MPO product: (self @ other) acting as self(other(state))."""
        if self.N != other.N:
            raise ValueError("MPO length mismatch")
        out = []
        for a, b in zip(self.tensors, other.tensors):
            c = np.einsum("aijb,cjkd->acikbd", a, b)
            wl = a.shape[0] * b.shape[0]
            wr = a.shape[3] * b.shape[3]
            out.append(c.reshape(wl, 2, 2, wr))
        return MPO(out)

    def compressed(self, weight_tol: float = 0.0, d_max: int | None = None) -> "MPO":
        """Rank-reduce the MPO bonds by SVD sweeps (exact up to weight_tol)."""
        ts = [w.copy() for w in self.tensors]
        n = len(ts)
        # left-to-right QR-like pass via SVD (no truncation), then a
        # right-to-left truncating pass
        for i in range(n - 1):
            left, right, spec = split_truncate(ts[i], (0, 1, 2), None, 0.0)
            ts[i] = left
            carry = right * spec.values[:, None]
            ts[i + 1] = np.einsum("ab,bijc->aijc", carry, ts[i + 1])
        for i in range(n - 1, 0, -1):
            left, right, spec = split_truncate(ts[i], (0,), d_max, weight_tol)
            ts[i] = right
            carry = left * spec.values[None, :]
            ts[i - 1] = np.einsum("aijb,bc->aijc", ts[i - 1], carry)
        return MPO(ts)

    def to_matrix(self) -> np.ndarray:
        """Dense matrix (site 0 = least significant bit).  N <= 10 only."""
        if self.N > 10:
            raise ValueError("to_matrix capped at N=10 (4^N dense entries)")
        # row/col indices ordered site N-1 ... site 0 (site 0 least significant)
        acc = np.ones((1, 1, 1), dtype=complex)  # (out, in, bond)
        for w in self.tensors:
            # each later site becomes the more significant index
            acc = np.einsum("pqa,aijb->ipjqb", acc, w)
            po, pi = acc.shape[1], acc.shape[3]
            acc = acc.reshape(2 * po, 2 * pi, acc.shape[4])
        return acc[:, :, 0]


@dataclass
class Model:
    """A spin chain: its MPO, traceless local terms, and coupling metadata."""

    name: str
    N: int
    params: dict[str, float]
    mpo: MPO
    local_terms: list[np.ndarray]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def h_norm_max(self) -> float:
        """Largest operator norm among the local terms."""
        return max(_opnorm(t) for t in self.local_terms)

    @property
    def h_min(self) -> float:
        """Smallest operator norm among the two-site terms (bulk bound input).

        The trailing single-site term is excluded: it is identically zero for
        the built models and would degenerate the bound.
        """
        return min(_opnorm(t) for t in self.local_terms[: self.N - 1])

    def two_site_term(self, n: int) -> np.ndarray:
        """h_n acting on sites (n, n+1), 0-based, n in [0, N-2]."""
        return self.local_terms[n]


def _opnorm(t: np.ndarray) -> float:
    return float(np.linalg.norm(t, 2))


def _two_site(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """kron with site n as the most significant index of the 4-dim basis."""
    return np.kron(a, b)


def tracelessize(raw_terms: list[np.ndarray]) -> list[np.ndarray]:
    """Normalize a two-site decomposition so each term is doubly traceless.

    Input: terms[0..N-2] are 4x4 operators on sites (n, n+1); an optional
    final 2x2 entry acts on the last site.  Any nonvanishing partial trace of
    h_n over its first site is folded into h_{n+1}, preserving the sum.
    Output terms satisfy tr(h_n) = 0 and tr_first(h_n) = 0.
    """
    terms = [np.array(t, dtype=complex, copy=True) for t in raw_terms]
    if terms and terms[-1].shape == (4, 4):
        terms.append(np.zeros((2, 2), dtype=complex))
    n_two = len(terms) - 1
    for n in range(n_two):
        h = terms[n].reshape(2, 2, 2, 2)  # (s_n', s_{n+1}', s_n, s_{n+1})
        r = np.einsum("ibid->bd", h)  # partial trace over first site
        if np.max(np.abs(r)) > 0.0:
            terms[n] = terms[n] - 0.5 * _two_site(ID2, r)
            if n + 1 < n_two:
                terms[n + 1] = terms[n + 1] + 0.5 * _two_site(r, ID2)
            else:
                terms[n + 1] = terms[n + 1] + 0.5 * r
    tail_trace = abs(np.trace(terms[-1]))
    if tail_trace > 1e-10 * max(1.0, max(_opnorm(t) for t in terms)):
        raise ValueError(
            "input terms carry a nonzero total trace (identity component "
            f"{np.trace(terms[-1]) / 2:.3g}); shift the Hamiltonian first"
        )
    return terms


def _chain_mpo(N: int, bond_ops: list[tuple[np.ndarray, np.ndarray]],
               site_op: np.ndarray) -> MPO:
    """Lower-triangular MPO for sum_n sum_k L_k[n] R_k[n+1] + sum_n site_op[n]."""
    nk = len(bond_ops)
    w = nk + 2
    mid = np.zeros((w, 2, 2, w), dtype=complex)
    mid[0, :, :, 0] = ID2
    mid[w - 1, :, :, w - 1] = ID2
    mid[w - 1, :, :, 0] = site_op
    for k, (left_op, right_op) in enumerate(bond_ops):
        mid[w - 1, :, :, 1 + k] = left_op
        mid[1 + k, :, :, 0] = right_op
    first = mid[w - 1 : w, :, :, :].copy()
    last = mid[:, :, :, 0:1].copy()
    tensors = [first] + [mid.copy() for _ in range(N - 2)] + [last]
    return MPO(tensors)


def build_ising(N: int, J: float, g: float, h: float) -> Model:
    """Ising chain with transverse field g and longitudinal field h."""
    if N < 2:
        raise ValueError("N must be >= 2")
    field_op = g * SX + h * SZ
    mpo = _chain_mpo(N, [(J * SZ, SZ)], field_op)
    raw = _split_field_terms(N, lambda n: J * _two_site(SZ, SZ), field_op)
    return Model(
        name="ising",
        N=N,
        params={"J": J, "g": g, "h": h},
        mpo=mpo,
        local_terms=tracelessize(raw),
    )


def build_xyz(N: int, Jx: float, Jy: float, Jz: float, h: float) -> Model:
    """XYZ chain in a longitudinal field."""
    if N < 2:
        raise ValueError("N must be >= 2")
    field_op = h * SZ
    mpo = _chain_mpo(
        N, [(Jx * SX, SX), (Jy * SY, SY), (Jz * SZ, SZ)], field_op
    )
    bond = Jx * _two_site(SX, SX) + Jy * _two_site(SY, SY) + Jz * _two_site(SZ, SZ)
    raw = _split_field_terms(N, lambda n: bond, field_op)
    return Model(
        name="xyz",
        N=N,
        params={"Jx": Jx, "Jy": Jy, "Jz": Jz, "h": h},
        mpo=mpo,
        local_terms=tracelessize(raw),
    )


def _split_field_terms(N, bond_term, field_op) -> list[np.ndarray]:
    """Bond terms with single-site fields split half/half (edges attach fully)."""
    terms = []
    for n in range(N - 1):
        wl = 1.0 if n == 0 else 0.5
        wr = 1.0 if n == N - 2 else 0.5
        t = bond_term(n).astype(complex)
        t = t + wl * _two_site(field_op, ID2) + wr * _two_site(ID2, field_op)
        terms.append(t)
    return terms


def to_dense(model: Model) -> np.ndarray:
    """Dense Hamiltonian from the local terms (site 0 = least significant bit).

    Capped at N = 12.  Returns a real array when all terms are real.
    """
    N = model.N
    if N > 12:
        raise ValueError("dense assembly capped at N=12")
    dim = 2**N
    is_real = all(np.max(np.abs(t.imag)) < 1e-15 for t in model.local_terms)
    H = np.zeros((dim, dim), dtype=float if is_real else complex)
    for n in range(N - 1):
        t = model.local_terms[n]
        t = t.real if is_real else t
        # embed on sites (n, n+1): site n is bit n
        low = np.eye(2**n) if n else np.array([[1.0]])
        high = np.eye(2 ** (N - n - 2)) if N - n - 2 else np.array([[1.0]])
        # bit convention: kron(high, op_pair_reversed, low)
        t4 = t.reshape(2, 2, 2, 2).transpose(1, 0, 3, 2).reshape(4, 4)
        H += np.kron(high, np.kron(t4, low))
    tail = model.local_terms[-1]
    if np.max(np.abs(tail)) > 0.0:
        t = tail.real if is_real else tail
        H += np.kron(t, np.eye(2 ** (N - 1)))
    return H


# ---------------------------------------------------------------------------
# Spectral edges by two-site DMRG, and the rescaled filter operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EdgeResult:
    """Estimated extreme eigenvalues of H, with convergence flags."""

    e_min: float
    e_max: float
    converged_min: bool = True
    converged_max: bool = True

    def __iter__(self):
        return iter((self.e_min, self.e_max))

    @property
    def converged(self) -> bool:
        return self.converged_min and self.converged_max


def spectrum_edges(
    model: Model,
    d_dmrg: int = DMRG_BOND_DEFAULT,
    max_sweeps: int = DMRG_MAX_SWEEPS,
    tol: float = DMRG_ENERGY_TOL,
) -> EdgeResult:
    """Estimate (E_min, E_max) by two-site DMRG on H and on -H.

    Results are cached on the model.  Non-convergence within max_sweeps is
    flagged on the result, and the last estimate is still returned.
    """
    key = ("edges", d_dmrg, max_sweeps, tol)
    if key in model._cache:
        return model._cache[key]
    e_min, ok_min = _dmrg_ground_energy(model.mpo, d_dmrg, max_sweeps, tol)
    e_max_neg, ok_max = _dmrg_ground_energy(
        model.mpo.scaled(-1.0), d_dmrg, max_sweeps, tol
    )
    result = EdgeResult(e_min, -e_max_neg, ok_min, ok_max)
    model._cache[key] = result
    return result


def _dmrg_ground_energy(mpo: MPO, d_max: int, max_sweeps: int, tol: float):
    """Minimal eigenvalue of the MPO by two-site sweeps.  Returns (E, converged)."""
    N = mpo.N
    rng = np.random.default_rng(7)
    tensors = [
        _orthonormal_columns(rng.standard_normal((1 * 2, 1)) * 0.5
                             + 1j * rng.standard_normal((1 * 2, 1)) * 0.5).reshape(1, 2, 1)
        for _ in range(N)
    ]
    # right environments: R[i] belongs to bonds right of site i
    right_envs = [None] * (N + 1)
    right_envs[N] = np.ones((1, 1, 1), dtype=complex)
    for i in range(N - 1, 1, -1):
        right_envs[i] = _env_absorb_right(right_envs[i + 1], tensors[i], mpo.tensors[i])
    left_envs = [None] * N
    left_envs[0] = np.ones((1, 1, 1), dtype=complex)

    energy = np.inf
    converged = False
    for _ in range(max_sweeps):
        prev = energy
        # left-to-right
        for i in range(N - 1):
            energy = _dmrg_update(tensors, mpo, left_envs, right_envs, i, d_max,
                                  move_right=True)
        for i in range(N - 2, -1, -1):
            energy = _dmrg_update(tensors, mpo, left_envs, right_envs, i, d_max,
                                  move_right=False)
        if np.isfinite(prev) and abs(prev - energy) <= tol * max(1.0, abs(energy)):
            converged = True
            break
    return float(energy), converged


def _orthonormal_columns(m: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(m)
    return q


def _env_absorb_left(env, a, w):
    # env: (bra, mpo, ket); a: (Dl, d, Dr); w: (wl, s', s, wr)
    tmp = np.tensordot(env, a, axes=([2], [0]))          # (b, m, s, kr)
    tmp = np.tensordot(tmp, w, axes=([1, 2], [0, 2]))    # (b, kr, s', wr)
    return np.tensordot(a.conj(), tmp, axes=([0, 1], [0, 2])).transpose(0, 2, 1)


def _env_absorb_right(env, a, w):
    # env: (bra, mpo, ket) right of a site; returns the env one site left
    tmp = np.tensordot(a, env, axes=([2], [2]))          # (ket_l, s, bra_r, m)
    tmp = np.tensordot(w, tmp, axes=([2, 3], [1, 3]))    # (wl, s', ket_l, bra_r)
    return np.tensordot(a.conj(), tmp, axes=([1, 2], [1, 3]))  # (bra, wl, ket)


def _dmrg_update(tensors, mpo, left_envs, right_envs, i, d_max, move_right):
    """Optimize the two-site block (i, i+1); returns the local energy."""
    N = len(tensors)
    L = left_envs[i]
    R = right_envs[i + 2]
    a, b = tensors[i], tensors[i + 1]
    w1, w2 = mpo.tensors[i], mpo.tensors[i + 1]
    Dl, _, _ = a.shape
    _, _, Dr = b.shape
    dim = Dl * 2 * 2 * Dr

    def heff(x):
        t = x.reshape(Dl, 2, 2, Dr)
        tmp = np.tensordot(L, t, axes=([2], [0]))            # (bl, m, s1, s2, kr)
        tmp = np.tensordot(tmp, w1, axes=([1, 2], [0, 2]))   # (bl, s2, kr, s1', m')
        tmp = np.tensordot(tmp, w2, axes=([4, 1], [0, 2]))   # (bl, kr, s1', s2', m'')
        tmp = np.tensordot(tmp, R, axes=([1, 4], [2, 1]))    # (bl, s1', s2', br)
        return tmp.reshape(dim)

    v0 = np.tensordot(a, b, axes=([2], [0])).reshape(dim)
    nrm = np.linalg.norm(v0)
    if nrm > 0:
        v0 = v0 / nrm
    if dim <= 8:
        mat = np.empty((dim, dim), dtype=complex)
        eye = np.eye(dim)
        for k in range(dim):
            mat[:, k] = heff(eye[:, k])
        evals, evecs = np.linalg.eigh(0.5 * (mat + mat.conj().T))
        energy, vec = float(evals[0]), evecs[:, 0]
    else:
        op = scipy.sparse.linalg.LinearOperator((dim, dim), matvec=heff,
                                                dtype=complex)
        try:
            evals, evecs = scipy.sparse.linalg.eigsh(op, k=1, which="SA", v0=v0)
            energy, vec = float(evals[0]), evecs[:, 0]
        except scipy.sparse.linalg.ArpackError:
            energy = float(np.real(np.vdot(v0, heff(v0))))
            vec = v0
    block = vec.reshape(Dl, 2, 2, Dr)
    left, right, spec = split_truncate(block, (0, 1), d_max, 0.0)
    if move_right:
        tensors[i] = left
        tensors[i + 1] = np.tensordot(np.diag(spec.values), right, axes=([1], [0]))
        left_envs[i + 1] = _env_absorb_left(left_envs[i], tensors[i], mpo.tensors[i])
    else:
        tensors[i + 1] = right
        tensors[i] = np.tensordot(left, np.diag(spec.values), axes=([2], [0]))
        right_envs[i + 1] = _env_absorb_right(right_envs[i + 2], tensors[i + 1],
                                              mpo.tensors[i + 1])
    return energy


@dataclass(frozen=True)
class RescaledOperator:
    """H~ = alpha (H - E0) / N as an MPO, with the rescaling metadata."""

    mpo: MPO
    alpha: float
    e_min: float
    e_max: float
    e0: float
    n_sites: int


def resolve_alpha(model: Model, e0: float, alpha: float | None = None,
                  d_dmrg: int = DMRG_BOND_DEFAULT) -> tuple[float, EdgeResult]:
    """The rescaling factor: 0.9 N / max|E_edge - E0|, capped at 1."""
    edges = spectrum_edges(model, d_dmrg)
    if alpha is None:
        spread = max(abs(edges.e_min - e0), abs(edges.e_max - e0))
        alpha = min(1.0, 0.9 * model.N / spread)
    if not (edges.e_min <= e0 <= edges.e_max):
        warnings.warn(
            f"target energy E0={e0} lies outside the estimated spectrum "
            f"[{edges.e_min:.6g}, {edges.e_max:.6g}]; the filter targets an "
            "empty spectral region",
            stacklevel=2,
        )
    return float(alpha), edges


def shifted(mpo: MPO, delta: float) -> MPO:
    """MPO of W + delta * I, spreading the shift evenly over the sites."""
    tensors = [w.copy() for w in mpo.tensors]
    per_site = delta / len(tensors)
    for i, w in enumerate(tensors):
        start_row = 0 if i == 0 else w.shape[0] - 1
        w[start_row, :, :, 0] += per_site * ID2
    return MPO(tensors)


def rescaled(model: Model, e0: float, alpha: float | None = None,
             d_dmrg: int = DMRG_BOND_DEFAULT) -> RescaledOperator:
    """Build H~ = alpha (H - E0) / N with spectrum inside (-1, 1).

    alpha defaults to the 0.9-rule against the DMRG spectral edges; pass a
    value to override.
    """
    alpha, edges = resolve_alpha(model, e0, alpha, d_dmrg)
    N = model.N
    tensors = shifted(model.mpo, -e0).tensors
    tensors[0] = tensors[0] * (alpha / N)
    return RescaledOperator(
        mpo=MPO(tensors),
        alpha=alpha,
        e_min=edges.e_min,
        e_max=edges.e_max,
        e0=e0,
        n_sites=N,
    )
