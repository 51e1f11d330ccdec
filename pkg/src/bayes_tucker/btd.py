"""Variational Bayesian Tucker decomposition of a fully observed tensor.

Each column of every factor matrix shares a precision ``lambda`` with the
matching core slice, and the core carries an extra global precision
``beta``. Columns whose precision diverges are pruned, which is how the
multilinear rank is inferred. The precisions follow either a Gamma
(Student-t marginal) or an inverse-Gamma with a Gamma hyperprior on its
scale (Laplace marginal); in the latter case the posterior is GIG.

The core posterior covariance is never materialized for full data: it is a
Kronecker-structured inverse, kept in factored form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lapack

from .config import FitConfig
from .covariance import DiagonalCovariance, FactoredCovariance
from .distributions import GammaParams, GIGParams, gig_moments
from .tensor_core import (
    NumericalFailure,
    TuckerModel,
    multi_ttm,
    reconstruct,
    symm_eig,
    unfold,
    unvec,
    vec,
)

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PosteriorState:
    """Variational posterior of a Tucker model.

    ``factor_covs[n]`` has shape ``(R_n, R_n)`` when shared by all rows
    (full data) or ``(I_n, R_n, R_n)`` with one covariance per row.
    ``lambda_inv`` holds the E[1/lambda] estimate fed to the gamma update
    (Laplace prior only).
    """

    core_mean: np.ndarray
    core_cov: object
    factor_means: list
    factor_covs: list
    lambda_mean: list
    lambda_post: list
    beta: GammaParams
    tau: GammaParams
    prior: str = "student_t"
    gamma: Optional[GammaParams] = None
    lambda_inv: list = field(default_factory=list)

    @property
    def rank(self) -> tuple[int, ...]:
        return tuple(int(r) for r in self.core_mean.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.factor_means)

    def model(self) -> TuckerModel:
        return TuckerModel(self.core_mean.copy(), tuple(u.copy() for u in self.factor_means))


@dataclass
class FitReport:
    lower_bound_trace: list
    inferred_rank: tuple
    estimated_snr_db: float
    iterations: int
    converged: bool
    rank_trace: list = field(default_factory=list)


# ---------------------------------------------------------------- expectations


def factor_grams(state: PosteriorState) -> list[np.ndarray]:
    """``E[U_n^T U_n]`` for every mode."""
    out = []
    for u, c in zip(state.factor_means, state.factor_covs):
        extra = u.shape[0] * c if c.ndim == 2 else c.sum(axis=0)
        out.append(u.T @ u + extra)
    return out


def column_energy(mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """``E[u_r^T u_r]`` for every column r."""
    diag = mean.shape[0] * np.diag(cov) if cov.ndim == 2 else np.einsum("irr->r", cov)
    return np.sum(mean * mean, axis=0) + diag


def core_second_moment(state: PosteriorState, exact: bool = True) -> np.ndarray:
    """Elementwise ``E[g^2]``; the covariance part is dropped when not exact."""
    g2 = state.core_mean**2
    return g2 + state.core_cov.diag() if exact else g2


def _weighted_core_power(eg2: np.ndarray, lambda_mean: Sequence[np.ndarray], skip=None):
    return multi_ttm(eg2, [lam[None, :] for lam in lambda_mean], skip=skip)


def lambda_mean_log(state: PosteriorState) -> list[np.ndarray]:
    out = []
    for post, mean in zip(state.lambda_post, state.lambda_mean):
        if post is None:
            out.append(np.log(mean))
        elif isinstance(post, GammaParams):
            out.append(np.broadcast_to(post.mean_log, mean.shape).astype(float))
        else:
            out.append(np.asarray(post.mean_log(), dtype=float))
    return out


def _cholesky(m: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.einsum("...ii->...", m)[..., None, None]
        try:
            return np.linalg.cholesky(m + jitter * np.eye(m.shape[-1]))
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("precision matrix is not positive definite") from exc


def spd_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of a (batch of) symmetric positive definite matrices.

    A failed Cholesky is retried once with ``1e-12 * trace`` on the diagonal.
    """
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    chol = _cholesky(m)
    if m.ndim == 2:
        inv, info = lapack.dpotri(chol, lower=1)
        if info != 0:
            raise NumericalFailure("Cholesky inverse failed")
        inv = np.tril(inv)
        return inv + np.tril(inv, -1).T
    inv_chol = np.linalg.inv(chol)
    out = np.swapaxes(inv_chol, -1, -2) @ inv_chol
    return 0.5 * (out + np.swapaxes(out, -1, -2))


# ---------------------------------------------------------------- core


def kron_eig_solve(
    lambdas: Sequence[np.ndarray], sigmas: Sequence[np.ndarray], c1: float, c2: float
) -> FactoredCovariance:
    """Factored inverse of ``c1 kron_n diag(lambda_n) + c2 kron_n sigma_n``.

    With ``lambda_n^(-1/2) sigma_n lambda_n^(-1/2) = V_n D_n V_n^T`` the bases are
    ``B_n = lambda_n^(-1/2) V_n`` and the inverse is
    ``(kron B) diag(1 / (c1 + c2 kron D)) (kron B)^T``.
    """
    if not (c1 > 0 and c2 >= 0):
        raise ValueError("need c1 > 0 and c2 >= 0")
    bases, spectra = [], []
    for lam, sig in zip(lambdas, sigmas):
        lam = np.asarray(lam, dtype=float)
        sig = np.asarray(sig, dtype=float)
        if sig.shape != (lam.size, lam.size):
            raise ValueError(f"matrix of shape {sig.shape} does not match {lam.size} precisions")
        if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise ValueError("precisions must be positive and finite")
        root = 1.0 / np.sqrt(lam)
        eig = symm_eig(root[:, None] * sig * root[None, :])
        w = eig.eigenvalues
        if w[0] < -1e-10 * max(np.trace(sig), 0.0) * root.max() ** 2 - 1e-300:
            raise ValueError("matrix is not positive semidefinite")
        spectra.append(np.clip(w, 0.0, None))
        bases.append(root[:, None] * eig.eigenvectors)
    combined = np.ones(())
    for w in spectra:
        combined = np.multiply.outer(combined, w)
    return FactoredCovariance(bases, 1.0 / (c1 + c2 * combined))


def update_core(state: PosteriorState, y: np.ndarray, config: FitConfig) -> PosteriorState:
    e_tau = float(state.tau.mean)
    cov = kron_eig_solve(state.lambda_mean, factor_grams(state), float(state.beta.mean), e_tau)
    rhs = multi_ttm(y, state.factor_means, transpose=True)
    state.core_mean = e_tau * unvec(cov.apply(vec(rhs)), state.rank)
    state.core_cov = cov
    return state


# ---------------------------------------------------------------- factors


def update_factors(state: PosteriorState, y: np.ndarray, n: int, config: FitConfig) -> PosteriorState:
    e_tau = float(state.tau.mean)
    grams = factor_grams(state)
    g = state.core_mean
    g_n = unfold(g, n)
    inner = unfold(multi_ttm(g, grams, skip=n), n) @ g_n.T
    if config.exact_expectations:
        inner = inner + state.core_cov.kron_gram(n, grams)
    psi = spd_inverse(np.diag(state.lambda_mean[n]) + e_tau * inner)
    proj = unfold(multi_ttm(y, state.factor_means, skip=n, transpose=True), n)
    state.factor_means[n] = e_tau * (proj @ g_n.T) @ psi
    state.factor_covs[n] = psi
    return state


# ---------------------------------------------------------------- precisions


def update_beta(state: PosteriorState, config: FitConfig) -> PosteriorState:
    eg2 = core_second_moment(state, config.exact_expectations)
    power = float(np.sum(_weighted_core_power(eg2, state.lambda_mean)))
    size = state.core_mean.size
    state.beta = GammaParams(config.a0_beta + 0.5 * size, config.b0_beta + 0.5 * power)
    return state


def update_lambda(state: PosteriorState, n: int, config: FitConfig) -> PosteriorState:
    eg2 = core_second_moment(state, config.exact_expectations)
    slice_power = _weighted_core_power(eg2, state.lambda_mean, skip=n).reshape(-1)
    energy = column_energy(state.factor_means[n], state.factor_covs[n])
    rows = state.factor_means[n].shape[0]
    count = rows + state.core_mean.size // state.rank[n]
    e_beta = float(state.beta.mean)
    if state.prior == "student_t":
        post = GammaParams(
            config.a0_lambda + 0.5 * count,
            config.b0_lambda + 0.5 * energy + 0.5 * e_beta * slice_power,
        )
        state.lambda_post[n] = post
        state.lambda_mean[n] = np.asarray(post.mean, dtype=float)
    else:
        e_gamma = float(state.gamma.mean)
        post = GIGParams(0.5 * count - 1.0, e_beta * slice_power + energy,
                         np.full(energy.shape, e_gamma))
        mean_x, mean_inv, mode_inv = gig_moments(post)
        state.lambda_post[n] = post
        state.lambda_mean[n] = np.atleast_1d(mean_x)
        state.lambda_inv[n] = np.atleast_1d(mode_inv if config.laplace_moments == "mode" else mean_inv)
    return state


def update_gamma(state: PosteriorState, config: FitConfig) -> PosteriorState:
    if state.prior != "laplace":
        raise ValueError("gamma is only part of the Laplace prior")
    total = float(sum(np.sum(v) for v in state.lambda_inv))
    state.gamma = GammaParams(
        config.a0_gamma + float(sum(state.rank)), config.b0_gamma + 0.5 * total
    )
    return state


# ---------------------------------------------------------------- noise


def expected_residual(state: PosteriorState, y: np.ndarray, exact: bool = True) -> float:
    """``E||vec(Y) - (kron U) vec(G)||^2`` under the posterior.

    Split into the squared residual of the posterior-mean reconstruction, the
    extra power from factor uncertainty, and the core-covariance trace.
    """
    grams = factor_grams(state)
    g = state.core_mean
    x_hat = multi_ttm(g, state.factor_means)
    fit = float(np.sum((y - x_hat) ** 2))
    spread = float(np.sum(g * multi_ttm(g, grams))) - float(np.sum(x_hat * x_hat))
    total = fit + max(spread, 0.0)
    if exact:
        total += float(np.sum(state.core_cov.cell_trace([s[None] for s in grams])))
    return total


def update_tau(state: PosteriorState, y: np.ndarray, config: FitConfig) -> PosteriorState:
    resid = expected_residual(state, y, config.exact_expectations)
    b = config.b0_tau + 0.5 * resid
    if not b > 0 or not np.isfinite(b):
        raise NumericalFailure(f"noise rate became {b}")
    state.tau = GammaParams(config.a0_tau + 0.5 * y.size, b)
    return state


# ---------------------------------------------------------------- bound


def _gig_inv_mean(post: GIGParams) -> np.ndarray:
    return np.atleast_1d(gig_moments(post)[1])


def model_bound_terms(state: PosteriorState, config: FitConfig) -> float:
    """Everything in the lower bound except the likelihood term."""
    total = 0.0
    log_lam = lambda_mean_log(state)
    size = state.core_mean.size

    for u, c, lam, llam in zip(state.factor_means, state.factor_covs, state.lambda_mean, log_lam):
        rows, r = u.shape
        total += 0.5 * rows * np.sum(llam) - 0.5 * rows * r * _LOG_2PI
        total -= 0.5 * np.sum(lam * column_energy(u, c))
        if c.ndim == 2:
            _, ld = np.linalg.slogdet(c)
            total += rows * 0.5 * (r * (1.0 + _LOG_2PI) + ld)
        else:
            _, ld = np.linalg.slogdet(c)
            total += np.sum(0.5 * (r * (1.0 + _LOG_2PI) + ld))

    # core prior and entropy
    e_beta, log_beta = float(state.beta.mean), float(state.beta.mean_log)
    eg2 = core_second_moment(state, True)
    total += 0.5 * size * log_beta - 0.5 * size * _LOG_2PI
    total += sum(0.5 * (size // lam.size) * np.sum(llam) for lam, llam in zip(state.lambda_mean, log_lam))
    total -= 0.5 * e_beta * float(np.sum(_weighted_core_power(eg2, state.lambda_mean)))
    total += 0.5 * (size * (1.0 + _LOG_2PI) + state.core_cov.logdet())

    # column precisions
    if state.prior == "student_t":
        prior = GammaParams(config.a0_lambda, config.b0_lambda)
        for post, lam, llam in zip(state.lambda_post, state.lambda_mean, log_lam):
            total += np.sum(prior.expected_log_pdf(lam, llam)) + np.sum(post.entropy())
    else:
        e_gamma, log_gamma = float(state.gamma.mean), float(state.gamma.mean_log)
        for post, llam in zip(state.lambda_post, log_lam):
            inv = _gig_inv_mean(post)
            total += np.sum(log_gamma - math.log(2.0) - 2.0 * llam - 0.5 * e_gamma * inv)
            total += np.sum(post.entropy())
        gp = GammaParams(config.a0_gamma, config.b0_gamma)
        total += float(gp.expected_log_pdf(e_gamma, log_gamma)) + float(state.gamma.entropy())

    bp = GammaParams(config.a0_beta, config.b0_beta)
    total += float(bp.expected_log_pdf(e_beta, log_beta)) + float(state.beta.entropy())
    tp = GammaParams(config.a0_tau, config.b0_tau)
    total += float(tp.expected_log_pdf(state.tau.mean, state.tau.mean_log)) + float(state.tau.entropy())
    return float(total)


def likelihood_term(count: int, tau: GammaParams, resid: float) -> float:
    return 0.5 * count * (float(tau.mean_log) - _LOG_2PI) - 0.5 * float(tau.mean) * resid


def lower_bound(state: PosteriorState, y: np.ndarray, config: FitConfig) -> float:
    lik = likelihood_term(y.size, state.tau, expected_residual(state, y, True))
    value = lik + model_bound_terms(state, config)
    if not np.isfinite(value):
        raise NumericalFailure("lower bound is not finite")
    return value


# ---------------------------------------------------------------- pruning


def _take(x, keep, axis=0):
    arr = np.asarray(x)
    return arr if arr.ndim == 0 else np.take(arr, keep, axis=axis)


def _prune_lambda(post, keep):
    if post is None:
        return None
    if isinstance(post, GammaParams):
        return GammaParams(_take(post.a, keep), _take(post.b, keep))
    return GIGParams(post.h, _take(post.a, keep), _take(post.b, keep))


def prune(state: PosteriorState, config: FitConfig) -> PosteriorState:
    """Drop columns whose factor and core-slice power are negligible.

    Factor power is the largest squared entry of the posterior-mean column,
    slice power the squared norm of the posterior-mean core slice; both are
    taken relative to the largest of the same mode. A mode always keeps at
    least one column.
    """
    tol = config.prune_tol
    for n in range(state.core_mean.ndim):
        u = state.factor_means[n]
        u_pow = np.max(u * u, axis=0)
        g_pow = np.sum(unfold(state.core_mean, n) ** 2, axis=1)
        dead = (u_pow <= tol * u_pow.max()) & (g_pow <= tol * g_pow.max())
        if not dead.any():
            continue
        if dead.all():
            dead[int(np.argmax(u_pow + g_pow))] = False
        keep = np.flatnonzero(~dead)
        log.debug("mode %d: pruning %d of %d columns", n, dead.sum(), dead.size)
        state.factor_means[n] = u[:, keep]
        c = state.factor_covs[n]
        state.factor_covs[n] = c[np.ix_(keep, keep)] if c.ndim == 2 else c[:, keep][:, :, keep]
        state.lambda_mean[n] = state.lambda_mean[n][keep]
        if state.lambda_inv:
            state.lambda_inv[n] = np.asarray(state.lambda_inv[n])[keep]
        state.lambda_post[n] = _prune_lambda(state.lambda_post[n], keep)
        state.core_mean = np.take(state.core_mean, keep, axis=n)
        state.core_cov = state.core_cov.select(n, keep)
    return state


# ---------------------------------------------------------------- driver


def init_factors(y_filled: np.ndarray, rank: Sequence[int], config: FitConfig) -> list[np.ndarray]:
    if config.init_factors == "standard_normal":
        rng = np.random.default_rng(config.seed)
        return [rng.standard_normal((i, r)) for i, r in zip(y_filled.shape, rank)]
    out = []
    for n, r in enumerate(rank):
        left = np.linalg.svd(unfold(y_filled, n), full_matrices=False)[0]
        out.append(np.ascontiguousarray(left[:, :r]))
    return out


def initial_state(
    y_filled: np.ndarray, rank: Sequence[int], config: FitConfig, variance: float, per_row: bool = False
) -> PosteriorState:
    """Starting posterior: SVD (or random) factors, unit precisions, tau = 1/variance."""
    factors = init_factors(y_filled, rank, config)
    covs = [np.zeros((u.shape[0], r, r)) if per_row else np.zeros((r, r))
            for u, r in zip(factors, rank)]
    tau_rate = variance if variance > 0 and np.isfinite(variance) else 1.0
    laplace = config.prior == "laplace"
    return PosteriorState(
        core_mean=np.zeros(tuple(rank)),
        core_cov=DiagonalCovariance(np.zeros(tuple(rank))),
        factor_means=factors,
        factor_covs=covs,
        lambda_mean=[np.ones(r) for r in rank],
        lambda_post=[None] * len(rank),
        beta=GammaParams(1.0, 1.0),
        tau=GammaParams(1.0, tau_rate),
        prior=config.prior,
        gamma=GammaParams(1.0, 1.0) if laplace else None,
        lambda_inv=[np.ones(r) for r in rank] if laplace else [],
    )


def update_precisions(state: PosteriorState, config: FitConfig) -> None:
    update_beta(state, config)
    for n in range(state.core_mean.ndim):
        update_lambda(state, n, config)
    if state.prior == "laplace":
        update_gamma(state, config)


def snr_db(x_hat: np.ndarray, e_tau: float) -> float:
    power = float(np.mean(np.asarray(x_hat) ** 2)) * float(e_tau)
    return 10.0 * math.log10(power) if power > 0 else -math.inf


def _relative_change(trace: list) -> float:
    prev, cur = trace[-2], trace[-1]
    return abs(cur - prev) / max(abs(prev), 1e-300)


def run_iterations(state, cycle, bound, config: FitConfig):
    """Shared fixed-point loop: update, record the bound, prune, test convergence."""
    trace, ranks = [], []
    streak = 0
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        cycle(state)
        trace.append(bound(state))
        ranks.append(state.rank)
        prune(state, config)
        if len(trace) > 1 and _relative_change(trace) < config.tol:
            streak += 1
            if streak >= 2:
                converged = True
                break
        else:
            streak = 0
    return trace, ranks, it, converged


def fit_btd(y: np.ndarray, config: FitConfig = FitConfig()):
    """Fit the Bayesian Tucker model to a fully observed tensor.

    Returns
    -------
    model : TuckerModel
        Posterior means of core and factors at the inferred rank.
    state : PosteriorState
    report : FitReport
    """
    y = np.asarray(y, dtype=float)
    if y.ndim < 1 or not np.all(np.isfinite(y)):
        raise ValueError("input tensor must be finite with at least one mode")
    rank = config.start_rank(y.shape)
    state = initial_state(y, rank, config, float(np.var(y)))

    def cycle(s):
        update_core(s, y, config)
        for n in range(y.ndim):
            update_factors(s, y, n, config)
        update_precisions(s, config)
        update_tau(s, y, config)

    trace, ranks, iters, converged = run_iterations(
        state, cycle, lambda s: lower_bound(s, y, config), config
    )
    model = state.model()
    report = FitReport(
        lower_bound_trace=trace,
        inferred_rank=state.rank,
        estimated_snr_db=snr_db(reconstruct(model), float(state.tau.mean)),
        iterations=iters,
        converged=converged,
        rank_trace=ranks,
    )
    return model, state, report
