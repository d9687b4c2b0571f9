"""Dense tensor primitives: pairwise contraction and truncated Schmidt splits.

Tensors are plain ``numpy.ndarray`` objects (complex double, row-major).  The
two operations here are the hot path of everything above them: ``contract``
wraps a transpose-to-matrix multiply and ``split_truncate`` wraps an SVD with
a fixed, deterministic truncation policy (noise floor, weight budget, hard
cap, degeneracy widening).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

# Singular values below this times the largest one are numerical noise and are
# always discarded.
SV_NOISE_FLOOR = 1e-14

# Neighboring singular values closer than this (relative to the largest) are
# treated as degenerate at a truncation boundary: the whole multiplet is kept,
# up to the hard cap, so the cut is basis-stable.
SV_DEGENERACY_RTOL = 1e-12


@dataclass(frozen=True)
class SchmidtSpectrum:
    """Descending singular values of a bipartition plus the discarded weight.

    ``values`` are the raw (unnormalized) kept singular values; the state's
    squared norm across the cut is ``sum(values**2) / (1 - discarded_weight)``.
    ``discarded_weight`` is relative: (sum of squared discarded values) /
    (total sum of squares).
    """

    values: np.ndarray
    discarded_weight: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def rank(self) -> int:
        return len(self.values)

    def normalized(self) -> np.ndarray:
        """Schmidt coefficients rescaled so their squares sum to one."""
        total = float(np.sum(self.values**2))
        if total <= 0.0:
            raise ValueError("cannot normalize an identically zero spectrum")
        return self.values / np.sqrt(total)

    def entropy(self) -> float:
        """Von Neumann entanglement entropy in bits."""
        p = self.normalized() ** 2
        p = p[p > 0.0]
        return float(-np.sum(p * np.log2(p)))


def contract(a: np.ndarray, b: np.ndarray, pairs) -> np.ndarray:
    """Contract tensors ``a`` and ``b`` over the given index pairs.

    Parameters
    ----------
    a, b : ndarray
        Input tensors (not modified).
    pairs : sequence of (int, int)
        Pairs ``(i, j)`` meaning axis ``i`` of ``a`` is summed against axis
        ``j`` of ``b``.  May be empty (outer product).

    Returns
    -------
    ndarray with a's unpaired indices (in order) followed by b's.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    pairs = list(pairs)
    axes_a = [p[0] for p in pairs]
    axes_b = [p[1] for p in pairs]
    for i, j in pairs:
        if a.shape[i] != b.shape[j]:
            raise ValueError(
                f"contract: axis {i} of a (dim {a.shape[i]}) does not match "
                f"axis {j} of b (dim {b.shape[j]})"
            )
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def _svd(mat: np.ndarray):
    """SVD with the divide-and-conquer driver and a robust fallback."""
    try:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


def truncation_rank(s: np.ndarray, d_max: int | None, weight_tol: float) -> int:
    """Number of singular values kept under the standard truncation policy.

    Policy, applied to descending ``s``: drop the noise floor
    (s < SV_NOISE_FLOOR * s[0]); among the rest keep the shortest prefix whose
    discarded relative weight is <= weight_tol; widen the cut to keep a
    degenerate multiplet together; finally clamp to d_max.  At least one value
    is always kept.
    """
    n = len(s)
    if n == 0:
        return 0
    if s[0] <= 0.0:
        return 1
    above_floor = int(np.searchsorted(-s, -SV_NOISE_FLOOR * s[0], side="right"))
    above_floor = max(above_floor, 1)
    cum = np.cumsum(s**2)
    total = float(cum[-1])
    # smallest r with tail weight <= weight_tol * total (tails[-1] is exactly 0)
    tails = total - cum
    r = int(np.searchsorted(-tails, -weight_tol * total, side="left")) + 1
    r = min(max(r, 1), above_floor)
    # widen across degenerate values at the boundary
    limit = above_floor if d_max is None else min(above_floor, d_max)
    while r < limit and s[r - 1] - s[r] <= SV_DEGENERACY_RTOL * s[0]:
        r += 1
    if d_max is not None:
        r = min(r, d_max)
    return r


def split_truncate(
    t: np.ndarray,
    left_indices,
    d_max: int | None = None,
    weight_tol: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, SchmidtSpectrum]:
    """Split ``t`` across a bipartition of its indices, truncating the rank.

    Parameters
    ----------
    t : ndarray
    left_indices : sequence of int
        Proper nonempty subset of t's axes grouped to the left of the split.
    d_max : int or None
        Hard cap on the kept rank (None = no cap).
    weight_tol : float
        Relative discarded-weight budget (0 = keep everything above the
        noise floor).

    Returns
    -------
    (left, right, spectrum)
        ``left`` has shape (left dims..., r) and is an isometry over its
        grouped left indices; ``right`` has shape (r, right dims...) and is a
        co-isometry.  ``t ~= contract(left * spectrum.values, right)`` up to
        the discarded weight.
    """
    t = np.asarray(t)
    left_indices = sorted(left_indices)
    all_axes = list(range(t.ndim))
    if not left_indices or len(left_indices) >= t.ndim:
        raise ValueError("left_indices must be a proper nonempty subset of axes")
    if any(i not in all_axes for i in left_indices):
        raise ValueError(f"axis out of range for shape {t.shape}")
    right_indices = [i for i in all_axes if i not in left_indices]
    left_shape = tuple(t.shape[i] for i in left_indices)
    right_shape = tuple(t.shape[i] for i in right_indices)
    mat = t.transpose(left_indices + right_indices).reshape(
        int(np.prod(left_shape)), int(np.prod(right_shape))
    )
    u, s, vh = _svd(mat)
    r = truncation_rank(s, d_max, weight_tol)
    total = float(np.sum(s**2))
    kept = float(np.sum(s[:r] ** 2))
    discarded = 0.0 if total == 0.0 else max(0.0, 1.0 - kept / total)
    spectrum = SchmidtSpectrum(values=s[:r].copy(), discarded_weight=discarded)
    left = np.ascontiguousarray(u[:, :r]).reshape(left_shape + (r,))
    right = np.ascontiguousarray(vh[:r, :]).reshape((r,) + right_shape)
    return left, right, spectrum
