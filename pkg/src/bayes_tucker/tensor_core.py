"""Dense multilinear algebra for Tucker models.

Tensors are plain ``numpy.ndarray`` objects indexed ``t[i_1, ..., i_N]``.
Whenever a tensor is flattened we use column-major (Fortran) order, so the
first index varies fastest. With that convention the reversed-order
Kronecker product ``U^(N) kron ... kron U^(1)`` maps ``vec(G)`` to
``vec(X)`` without any permutation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "NumericalFailure",
    "ObservationSet",
    "SymEig",
    "TuckerModel",
    "fold",
    "kron_all",
    "kron_apply",
    "multi_ttm",
    "reconstruct",
    "symm_eig",
    "ttm",
    "unfold",
    "unvec",
    "vec",
]


class NumericalFailure(ArithmeticError):
    """A solver hit a state that no further iteration can repair."""


def _check_mode(ndim: int, n: int) -> None:
    if not 0 <= n < ndim:
        raise ValueError(f"mode {n} out of range for a {ndim}-way tensor")


def vec(t: np.ndarray) -> np.ndarray:
    """Column-major vectorization (first index fastest)."""
    return np.asarray(t).ravel(order="F")


def unvec(v: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    v = np.asarray(v)
    if v.size != int(np.prod(shape)):
        raise ValueError(f"vector of length {v.size} cannot be folded to {shape}")
    return v.reshape(shape, order="F")


def unfold(t: np.ndarray, n: int) -> np.ndarray:
    """Mode-n unfolding, shape ``(I_n, prod_{k != n} I_k)``.

    Columns are ordered with the remaining modes in increasing order, lowest
    mode fastest, which pairs with the reversed Kronecker product of the
    other factors.
    """
    t = np.asarray(t)
    _check_mode(t.ndim, n)
    return np.moveaxis(t, n, 0).reshape(t.shape[n], -1, order="F")


def fold(m: np.ndarray, n: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), n)
    m = np.asarray(m)
    rest = shape[:n] + shape[n + 1:]
    if m.ndim != 2 or m.shape[0] != shape[n] or m.shape[1] != int(np.prod(rest)):
        raise ValueError(f"matrix of shape {m.shape} does not unfold {shape} at mode {n}")
    return np.moveaxis(m.reshape((shape[n],) + rest, order="F"), 0, n)


def ttm(t: np.ndarray, m: np.ndarray, n: int) -> np.ndarray:
    """Mode-n product ``t x_n m``; ``m`` has shape ``(J, I_n)``."""
    t = np.asarray(t)
    m = np.asarray(m)
    _check_mode(t.ndim, n)
    if m.ndim != 2 or m.shape[1] != t.shape[n]:
        raise ValueError(
            f"matrix of shape {m.shape} cannot multiply mode {n} of size {t.shape[n]}"
        )
    # tensordot puts the new axis last; move it back into place.
    return np.moveaxis(np.tensordot(t, m, axes=(n, 1)), -1, n)


def multi_ttm(
    t: np.ndarray,
    matrices: Sequence[np.ndarray | None],
    skip: int | None = None,
    transpose: bool = False,
) -> np.ndarray:
    """Apply ``t x_1 M1 x_2 M2 ...``, optionally skipping one mode.

    ``None`` entries are treated as identities. With ``transpose=True`` the
    transposed matrices are applied.
    """
    out = np.asarray(t)
    for n, m in enumerate(matrices):
        if n == skip or m is None:
            continue
        out = ttm(out, m.T if transpose else m, n)
    return out


def kron_all(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Materialized reversed-order Kronecker product ``M_N kron ... kron M_1``.

    Only meant for tests and tiny problems.
    """
    out = np.ones((1, 1))
    for m in matrices:
        out = np.kron(np.atleast_2d(m), out)
    return out


def kron_apply(matrices: Sequence[np.ndarray], v: np.ndarray) -> np.ndarray:
    """Compute ``(M_N kron ... kron M_1) v`` by sequential mode products."""
    mats = [np.atleast_2d(np.asarray(m)) for m in matrices]
    cols = tuple(m.shape[1] for m in mats)
    v = np.asarray(v)
    if v.size != int(np.prod(cols)):
        raise ValueError(f"vector of length {v.size} does not match Kronecker width {np.prod(cols)}")
    return vec(multi_ttm(unvec(v, cols), mats))


@dataclass(frozen=True)
class TuckerModel:
    """Core tensor plus one factor matrix per mode."""

    core: np.ndarray
    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        core = np.asarray(self.core, dtype=float)
        factors = tuple(np.atleast_2d(np.asarray(f, dtype=float)) for f in self.factors)
        if core.ndim != len(factors):
            raise ValueError(f"core has {core.ndim} modes but {len(factors)} factors were given")
        for n, f in enumerate(factors):
            if f.shape[1] != core.shape[n]:
                raise ValueError(
                    f"factor {n} has {f.shape[1]} columns, core mode {n} has size {core.shape[n]}"
                )
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "factors", factors)

    @property
    def rank(self) -> tuple[int, ...]:
        return tuple(self.core.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)


def reconstruct(model: TuckerModel) -> np.ndarray:
    """``G x_1 U1 x_2 U2 ... x_N UN`` without forming the Kronecker product."""
    return multi_ttm(model.core, model.factors)


@dataclass(frozen=True)
class ObservationSet:
    """Observed cells of a tensor, stored as a boolean mask.

    ``indices`` lists the observed N-tuples sorted colexicographically
    (first index fastest), matching the flat layout.
    """

    shape: tuple[int, ...]
    mask: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != shape:
            raise ValueError(f"mask shape {mask.shape} differs from {shape}")
        if any(s < 1 for s in shape):
            raise ValueError(f"dimensions must be positive, got {shape}")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def full(cls, shape: Sequence[int]) -> "ObservationSet":
        return cls(tuple(shape), np.ones(tuple(shape), dtype=bool))

    @classmethod
    def from_indices(cls, shape: Sequence[int], indices) -> "ObservationSet":
        shape = tuple(int(s) for s in shape)
        mask = np.zeros(shape, dtype=bool)
        idx = np.asarray(indices, dtype=int).reshape(-1, len(shape))
        if idx.size:
            if (idx < 0).any() or (idx >= np.array(shape)).any():
                raise ValueError("observation index outside tensor shape")
            mask[tuple(idx.T)] = True
        return cls(shape, mask)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def indices(self) -> np.ndarray:
        flat = np.flatnonzero(vec(self.mask))
        return np.stack(np.unravel_index(flat, self.shape, order="F"), axis=1)

    @property
    def is_full(self) -> bool:
        return bool(self.mask.all())


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _round_robin(d: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint (p, q) pair schedules covering every pair once per sweep."""
    m = d + (d % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            a, b = players[k], players[m - 1 - k]
            if a < d and b < d:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=int), np.array(qs, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def symm_eig(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> SymEig:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once; pairs are grouped into
    disjoint rounds so a whole round is applied as one vectorized rotation.
    Iteration stops when the off-diagonal Frobenius norm drops below
    ``tol * ||a||_F``. Eigenvalues are returned in ascending order.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    d = a.shape[0]
    if d == 0:
        raise ValueError("empty matrix")
    scale = np.linalg.norm(a)
    if not np.isfinite(scale):
        raise ValueError("matrix has non-finite entries")
    if np.abs(a - a.T).max() > 1e-10 * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(d)
    if d == 1 or scale == 0.0:
        return SymEig(np.diag(a).copy(), v)

    rounds = _round_robin(d)
    target = tol * scale
    off = _off_norm(a)
    sweeps = 0
    while off > target:
        if sweeps >= max_sweeps:
            raise np.linalg.LinAlgError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps"
            )
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(1.0 + theta * theta))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        sweeps += 1
        off = _off_norm(a)

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return SymEig(w[order], v[:, order])
