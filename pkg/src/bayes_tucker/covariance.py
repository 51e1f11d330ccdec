"""Core-tensor covariance representations and Kronecker-sum kernels.

The posterior covariance of ``vec(G)`` comes in three flavours:

* :class:`FactoredCovariance` -- ``(kron B) diag(d) (kron B)^T``, the form
  produced by the Kronecker eigen-solve for fully observed tensors;
* :class:`DenseCovariance` -- an explicit ``P x P`` matrix;
* :class:`DiagonalCovariance` -- a diagonal stand-in used when the core is
  solved iteratively and never materialized.

All three expose the handful of contractions the solvers need, so the
update equations never branch on the representation.

Per-row second moments are passed as a list ``S`` with ``S[n]`` of shape
``(I_n, R_n, R_n)``, holding ``E[u_i u_i^T]`` for every row ``i`` of mode n.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor_core import kron_all, multi_ttm, unfold, unvec, vec

# Upper bound on the number of floats materialized at once by chunked kernels.
_CHUNK_FLOATS = 2**23


def _multi_index_select(n: int, keep: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Flat (column-major) positions of core entries whose mode-n index is kept."""
    idx = np.arange(int(np.prod(shape))).reshape(shape, order="F")
    return vec(np.take(idx, keep, axis=n))


class FactoredCovariance:
    """``(B_N kron ... kron B_1) diag(vec(scale)) (...)^T``.

    ``bases[n]`` has shape ``(R_n, K_n)``; after pruning it may have fewer
    rows than columns, which still represents the exact marginal.
    """

    def __init__(self, bases: Sequence[np.ndarray], scale: np.ndarray):
        self.bases = [np.asarray(b, dtype=float) for b in bases]
        self.scale = np.asarray(scale, dtype=float)
        if self.scale.shape != tuple(b.shape[1] for b in self.bases):
            raise ValueError("scale tensor does not match basis column counts")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.bases)

    def apply(self, v: np.ndarray) -> np.ndarray:
        t = unvec(v, self.shape)
        t = multi_ttm(t, self.bases, transpose=True) * self.scale
        return vec(multi_ttm(t, self.bases))

    def dense(self) -> np.ndarray:
        b = kron_all(self.bases)
        return (b * vec(self.scale)) @ b.T

    def diag(self) -> np.ndarray:
        return multi_ttm(self.scale, [b * b for b in self.bases])

    def logdet(self) -> float:
        if any(b.shape[0] != b.shape[1] for b in self.bases):
            sign, val = np.linalg.slogdet(self.dense())
            return float(val)
        p = self.scale.size
        total = float(np.sum(np.log(self.scale)))
        for b in self.bases:
            _, ld = np.linalg.slogdet(b)
            total += 2.0 * (p // b.shape[1]) * ld
        return total

    def cell_trace(self, second_moments: Sequence[np.ndarray]) -> np.ndarray:
        # w[n][i, j] = (B_n^T S_i B_n)_{jj}
        w = [np.einsum("rj,irs,sj->ij", b, s, b) for b, s in zip(self.bases, second_moments)]
        return multi_ttm(self.scale, w)

    def kron_gram(self, n: int, grams: Sequence[np.ndarray]) -> np.ndarray:
        """Covariance part of E[G_(n) (kron_{k != n} S_k) G_(n)^T]."""
        w = [None if k == n else np.einsum("rj,rs,sj->j", b, grams[k], b)[None, :]
             for k, b in enumerate(self.bases)]
        e = multi_ttm(self.scale, w, skip=n).reshape(-1)
        bn = self.bases[n]
        return (bn * e) @ bn.T

    def unfold_gram(self, n: int, phi: np.ndarray) -> np.ndarray:
        others = [b for k, b in enumerate(self.bases) if k != n]
        c = kron_all(others)
        w = np.einsum("pj,ipq,qj->ij", c, phi, c)
        e = w @ unfold(self.scale, n).T
        bn = self.bases[n]
        return np.einsum("aj,ij,bj->iab", bn, e, bn)

    def select(self, n: int, keep: np.ndarray) -> "FactoredCovariance":
        bases = list(self.bases)
        bases[n] = bases[n][keep]
        return FactoredCovariance(bases, self.scale)


class DenseCovariance:
    """Explicit covariance matrix of ``vec(G)`` for a core of ``shape``."""

    def __init__(self, matrix: np.ndarray, shape: Sequence[int]):
        self.matrix = np.asarray(matrix, dtype=float)
        self.shape = tuple(int(s) for s in shape)
        p = int(np.prod(self.shape))
        if self.matrix.shape != (p, p):
            raise ValueError(f"covariance of shape {self.matrix.shape} does not match core {self.shape}")

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def dense(self) -> np.ndarray:
        return self.matrix

    def diag(self) -> np.ndarray:
        return unvec(np.diag(self.matrix).copy(), self.shape)

    def logdet(self) -> float:
        sign, val = np.linalg.slogdet(self.matrix)
        if sign <= 0:
            raise np.linalg.LinAlgError("core covariance is not positive definite")
        return float(val)

    def _as_tensor(self) -> np.ndarray:
        return self.matrix.reshape(self.shape + self.shape, order="F")

    def cell_trace(self, second_moments: Sequence[np.ndarray]) -> np.ndarray:
        nmodes = len(self.shape)
        t = self._as_tensor()
        for n, s in enumerate(second_moments):
            t = np.tensordot(t, s, axes=([0, nmodes - n], [1, 2]))
        return t

    def unfold_gram(self, n: int, phi: np.ndarray) -> np.ndarray:
        nmodes = len(self.shape)
        t = np.moveaxis(self._as_tensor(), [n, nmodes + n], [0, 1])
        rn = self.shape[n]
        p = int(np.prod(self.shape)) // rn
        t = t.reshape(rn, rn, p, p, order="F")
        return np.einsum("abcd,icd->iab", t, phi, optimize=True)

    def kron_gram(self, n: int, grams: Sequence[np.ndarray]) -> np.ndarray:
        phi = kron_all([g for k, g in enumerate(grams) if k != n])
        return self.unfold_gram(n, phi[None])[0]

    def select(self, n: int, keep: np.ndarray) -> "DenseCovariance":
        pos = _multi_index_select(n, keep, self.shape)
        shape = list(self.shape)
        shape[n] = len(keep)
        return DenseCovariance(self.matrix[np.ix_(pos, pos)], shape)


class DiagonalCovariance:
    """Diagonal covariance, stored as a core-shaped tensor of variances."""

    def __init__(self, variances: np.ndarray):
        self.variances = np.asarray(variances, dtype=float)
        self.shape = self.variances.shape

    def apply(self, v: np.ndarray) -> np.ndarray:
        return vec(self.variances) * v

    def dense(self) -> np.ndarray:
        return np.diag(vec(self.variances))

    def diag(self) -> np.ndarray:
        return self.variances

    def logdet(self) -> float:
        return float(np.sum(np.log(self.variances)))

    def cell_trace(self, second_moments: Sequence[np.ndarray]) -> np.ndarray:
        return multi_ttm(self.variances, [np.einsum("irr->ir", s) for s in second_moments])

    def kron_gram(self, n: int, grams: Sequence[np.ndarray]) -> np.ndarray:
        w = [None if k == n else np.diag(g)[None, :] for k, g in enumerate(grams)]
        return np.diag(multi_ttm(self.variances, w, skip=n).reshape(-1))

    def unfold_gram(self, n: int, phi: np.ndarray) -> np.ndarray:
        e = np.einsum("ipp->ip", phi) @ unfold(self.variances, n).T
        out = np.zeros(e.shape + (e.shape[1],))
        idx = np.arange(e.shape[1])
        out[:, idx, idx] = e
        return out

    def select(self, n: int, keep: np.ndarray) -> "DiagonalCovariance":
        return DiagonalCovariance(np.take(self.variances, keep, axis=n))


def masked_kron_sum(
    mask: np.ndarray, second_moments: Sequence[np.ndarray], skip: int | None = None
) -> np.ndarray:
    """Sum of ``kron_n S[n][i_n]`` over the cells where ``mask`` is set.

    With ``skip=None`` returns the ``P x P`` matrix. With ``skip=n`` mode n is
    left out of the product and the sum is split by the mode-n index,
    returning an array ``(I_n, P_{-n}, P_{-n})``.
    """
    t = np.asarray(mask, dtype=float)
    nmodes = t.ndim
    remaining = list(range(nmodes))
    processed = []
    for k in range(nmodes):
        if k == skip:
            continue
        pos = remaining.index(k)
        t = np.tensordot(t, second_moments[k], axes=([pos], [0]))
        remaining.pop(pos)
        processed.append(k)
    lead = len(remaining)
    m = len(processed)
    p_axes = [lead + 2 * j for j in range(m)]
    q_axes = [lead + 2 * j + 1 for j in range(m)]
    t = t.transpose(list(range(lead)) + p_axes + q_axes)
    sizes = [second_moments[k].shape[1] for k in processed]
    p = int(np.prod(sizes))
    if skip is None:
        return t.reshape(p, p, order="F")
    return t.reshape(t.shape[0], p, p, order="F")


def row_second_moments(means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """``E[u_i u_i^T]`` for each row; ``covs`` is shared ``(R, R)`` or per-row."""
    outer = np.einsum("ir,is->irs", means, means)
    return outer + (covs if covs.ndim == 3 else covs[None])


def _cov_sqrt(covs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(covs)
        return v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


def cell_mean_moments(
    core_mean: np.ndarray, factor_means: Sequence[np.ndarray], factor_covs: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell mean and factor-uncertainty variance with the core held at its mean.

    Returns ``(mu, v)`` where ``mu_i = (kron u_i)^T g`` and
    ``v_i = g^T (kron E[u_i u_i^T] - kron u_i u_i^T) g``. Each ``E[u_i u_i^T]``
    is written as ``F_i F_i^T`` with ``F_i = [u_i, chol(Psi_i)]`` so the
    quadratic form becomes a sum of squares, which keeps ``v`` nonnegative.
    The first mode is processed in chunks to bound memory.
    """
    nmodes = core_mean.ndim
    feats = []
    for m, c in zip(factor_means, factor_covs):
        cov = c if c.ndim == 3 else np.broadcast_to(c, (m.shape[0],) + c.shape)
        feats.append(np.concatenate([m[:, :, None], _cov_sqrt(cov)], axis=2))
    shape = tuple(m.shape[0] for m in factor_means)
    mu = np.empty(shape)
    var = np.empty(shape)
    per_row = int(np.prod(shape[1:])) * int(np.prod([f.shape[2] for f in feats]))
    chunk = max(1, _CHUNK_FLOATS // max(per_row, 1))
    for start in range(0, shape[0], chunk):
        stop = min(shape[0], start + chunk)
        t = core_mean
        for n, f in enumerate(feats):
            fn = f[start:stop] if n == 0 else f
            # consume r_n (always axis 0), append (i_n, c_n)
            t = np.tensordot(t, fn, axes=([0], [1]))
        # axes now (i_0, c_0, i_1, c_1, ...)
        t = t.transpose([2 * n for n in range(nmodes)] + [2 * n + 1 for n in range(nmodes)])
        flat = t.reshape(t.shape[:nmodes] + (-1,))
        first = flat[..., 0]
        mu[start:stop] = first
        var[start:stop] = np.sum(flat[..., 1:] ** 2, axis=-1)
    return mu, var


def masked_kron_apply(
    mask: np.ndarray, second_moments: Sequence[np.ndarray], v: np.ndarray
) -> np.ndarray:
    """``sum over masked cells of (kron_n S[n][i_n]) vec(v)``, returned as a core tensor.

    All modes but the last are contracted into ``v`` first; the mask is then
    applied in one pass and the last mode folded in, so the largest
    intermediate has ``R_N * prod_{n<N} I_n R_n`` entries and the
    ``P x P`` matrix is never formed.
    """
    nmodes = v.ndim
    t = v
    for n in range(nmodes - 1):
        # t axes: (r_n, ..., r_{N-1}, [i_k, s_k] for k < n); consume r_n
        t = np.tensordot(t, second_moments[n], axes=([0], [1]))
    # axes: (r_last, i_0, s_0, ..., i_{N-2}, s_{N-2})
    m = np.asarray(mask, dtype=float)
    lead = [1 + 2 * k for k in range(nmodes - 1)]
    w = np.tensordot(t, m, axes=(lead, list(range(nmodes - 1))))
    # w axes: (r_last, s_0, ..., s_{N-2}, i_last)
    last = second_moments[nmodes - 1]
    return np.tensordot(w, last, axes=([0, nmodes], [1, 0]))
