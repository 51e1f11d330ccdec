"""Variational Bayesian Tucker completion from a subset of observed cells.

The model matches :mod:`bayes_tucker.btd` but the likelihood only covers
observed cells, so factor rows get their own posterior covariances and the
core precision loses its Kronecker structure. The core is solved either
densely (small cores) or by conjugate gradients with a diagonal covariance
stand-in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .btd import (
    FitReport,
    PosteriorState,
    initial_state,
    likelihood_term,
    model_bound_terms,
    run_iterations,
    snr_db,
    spd_inverse,
    update_precisions,
)
from .config import FitConfig
from .distributions import GammaParams
from .covariance import (
    DenseCovariance,
    DiagonalCovariance,
    cell_mean_moments,
    masked_kron_apply,
    masked_kron_sum,
    row_second_moments,
)
from .tensor_core import (
    NumericalFailure,
    ObservationSet,
    TuckerModel,
    multi_ttm,
    unfold,
    unvec,
    vec,
)


@dataclass(frozen=True)
class PredictiveResult:
    """Per-cell predictive mean and variance (noise plus model uncertainty)."""

    mean: np.ndarray
    variance: np.ndarray


def row_moments(state: PosteriorState) -> list[np.ndarray]:
    return [row_second_moments(u, c) for u, c in zip(state.factor_means, state.factor_covs)]


def _masked_data(y: np.ndarray, obs: ObservationSet) -> np.ndarray:
    return np.where(obs.mask, y, 0.0)


def _prior_precision(state: PosteriorState) -> np.ndarray:
    """``E[beta] kron_n E[lambda_n]`` as a core-shaped tensor."""
    out = np.ones(())
    for lam in state.lambda_mean:
        out = np.multiply.outer(out, lam)
    return float(state.beta.mean) * out


def build_phi(state: PosteriorState, obs: ObservationSet, n: int) -> np.ndarray:
    """Per-row sums of ``kron_{k != n} E[u_k u_k^T]`` over observed cells, ``(I_n, P_-n, P_-n)``."""
    return masked_kron_sum(obs.mask, row_moments(state), skip=n)


# ---------------------------------------------------------------- core


def update_core_closed(state: PosteriorState, y: np.ndarray, obs: ObservationSet,
                       config: FitConfig) -> PosteriorState:
    size = state.core_mean.size
    if size > config.closed_form_cap:
        raise ValueError(f"core has {size} entries, above the dense cap {config.closed_form_cap}")
    e_tau = float(state.tau.mean)
    prec = e_tau * masked_kron_sum(obs.mask, row_moments(state))
    prec[np.diag_indices(size)] += vec(_prior_precision(state))
    cov = spd_inverse(prec)
    rhs = vec(multi_ttm(_masked_data(y, obs), state.factor_means, transpose=True))
    state.core_mean = e_tau * unvec(cov @ rhs, state.rank)
    state.core_cov = DenseCovariance(cov, state.rank)
    return state


class CoreObjective:
    """Negative log posterior of the core (up to a constant), ``0.5 g'Hg - b'g``."""

    def __init__(self, state: PosteriorState, y: np.ndarray, obs: ObservationSet):
        self.shape = state.rank
        self.mask = obs.mask
        self.moments = row_moments(state)
        self.e_tau = float(state.tau.mean)
        self.prior = _prior_precision(state)
        self.rhs = self.e_tau * multi_ttm(_masked_data(y, obs), state.factor_means, transpose=True)

    def hess_apply(self, g: np.ndarray) -> np.ndarray:
        return self.prior * g + self.e_tau * masked_kron_apply(self.mask, self.moments, g)

    def value(self, g: np.ndarray) -> float:
        return float(0.5 * np.sum(g * self.hess_apply(g)) - np.sum(self.rhs * g))

    def gradient(self, g: np.ndarray) -> np.ndarray:
        return self.hess_apply(g) - self.rhs

    def hess_diag(self) -> np.ndarray:
        diags = [np.einsum("irr->ri", s) for s in self.moments]
        return self.prior + self.e_tau * multi_ttm(self.mask.astype(float), diags)


def conjugate_gradient(objective: CoreObjective, start: np.ndarray, max_iters: int, tol: float):
    """Polak-Ribiere CG with periodic restarts and an Armijo-checked step.

    The first trial step is the exact minimizer along the search direction;
    it is halved until the sufficient-decrease test passes. A non-descent
    direction falls back to steepest descent.
    """
    g = start.copy()
    hg = objective.hess_apply(g)
    grad = hg - objective.rhs
    g0 = math.sqrt(float(np.sum(grad * grad)))
    if g0 == 0.0:
        return g, 0
    d = -grad
    restart = g.size
    value = float(0.5 * np.sum(g * hg) - np.sum(objective.rhs * g))
    it = 0
    for it in range(1, max_iters + 1):
        slope = float(np.sum(grad * d))
        if slope >= 0:
            d = -grad
            slope = float(np.sum(grad * d))
        hd = objective.hess_apply(d)
        curv = float(np.sum(d * hd))
        if curv <= 0:
            raise NumericalFailure("core objective lost positive curvature")
        step = -slope / curv
        while True:
            trial = value + step * slope + 0.5 * step * step * curv
            if trial <= value + 1e-4 * step * slope or step < 1e-20:
                break
            step *= 0.5
        g = g + step * d
        hg = hg + step * hd
        value = trial
        new_grad = hg - objective.rhs
        norm = math.sqrt(float(np.sum(new_grad * new_grad)))
        if norm <= tol * g0:
            grad = new_grad
            break
        if it % restart == 0:
            d = -new_grad
        else:
            pr = float(np.sum(new_grad * (new_grad - grad))) / float(np.sum(grad * grad))
            d = -new_grad + max(pr, 0.0) * d
        grad = new_grad
    return g, it


def update_core_cg(state: PosteriorState, y: np.ndarray, obs: ObservationSet,
                   config: FitConfig) -> PosteriorState:
    obj = CoreObjective(state, y, obs)
    start = state.core_mean if state.core_mean.shape == obj.shape else np.zeros(obj.shape)
    state.core_mean, _ = conjugate_gradient(obj, start, config.cg_iters, config.cg_tol)
    state.core_cov = DiagonalCovariance(1.0 / obj.hess_diag())
    return state


def use_closed_form(state: PosteriorState, config: FitConfig) -> bool:
    if config.core_solver == "auto":
        return state.core_mean.size <= config.closed_form_cap
    return config.core_solver == "closed"


# ---------------------------------------------------------------- factors


def update_factor_rows(state: PosteriorState, y: np.ndarray, obs: ObservationSet, n: int,
                       config: FitConfig) -> PosteriorState:
    e_tau = float(state.tau.mean)
    phi = build_phi(state, obs, n)
    g_n = unfold(state.core_mean, n)
    inner = np.einsum("ap,ipq,bq->iab", g_n, phi, g_n, optimize=True)
    if config.exact_expectations:
        inner = inner + state.core_cov.unfold_gram(n, phi)
    prec = e_tau * inner
    idx = np.arange(g_n.shape[0])
    prec[:, idx, idx] += state.lambda_mean[n]
    psi = spd_inverse(prec)
    proj = unfold(multi_ttm(_masked_data(y, obs), state.factor_means, skip=n, transpose=True), n)
    state.factor_means[n] = e_tau * np.einsum("iab,ib->ia", psi, proj @ g_n.T)
    state.factor_covs[n] = psi
    return state


# ---------------------------------------------------------------- noise / prediction


def _cell_moments(state: PosteriorState, exact: bool):
    mean, spread = cell_mean_moments(state.core_mean, state.factor_means, state.factor_covs)
    if exact:
        spread = spread + state.core_cov.cell_trace(row_moments(state))
    return mean, spread


def expected_residual_obs(state: PosteriorState, y: np.ndarray, obs: ObservationSet,
                          exact: bool = True) -> float:
    """Expected squared residual summed over observed cells.

    Same split as the full-data version: squared residual of the mean
    reconstruction, extra power from factor uncertainty, core-covariance
    trace. The observed-cell sums go through masked Kronecker applies.
    """
    m = obs.mask
    g = state.core_mean
    moments = row_moments(state)
    x_hat = multi_ttm(g, state.factor_means)
    fit = float(np.sum((y[m] - x_hat[m]) ** 2))
    spread = float(np.sum(g * masked_kron_apply(m, moments, g))) - float(np.sum(x_hat[m] ** 2))
    total = fit + max(spread, 0.0)
    if exact:
        total += float(np.sum(state.core_cov.cell_trace(moments)[m]))
    return total


def update_tau_obs(state: PosteriorState, y: np.ndarray, obs: ObservationSet,
                   config: FitConfig) -> PosteriorState:
    resid = expected_residual_obs(state, y, obs, config.exact_expectations) if obs.count else 0.0
    b = config.b0_tau + 0.5 * resid
    if not b > 0 or not np.isfinite(b):
        raise NumericalFailure(f"noise rate became {b}")
    state.tau = GammaParams(config.a0_tau + 0.5 * obs.count, b)
    return state


def predict(state: PosteriorState, exact: bool = True) -> PredictiveResult:
    """Predictive mean and variance for every cell of the tensor."""
    mean, spread = _cell_moments(state, exact)
    scale = max(1e-12, 1e-12 * float(np.max(np.abs(mean), initial=0.0)) ** 2)
    if np.min(spread, initial=0.0) < -scale:
        raise NumericalFailure("negative predictive variance; second moments are inconsistent")
    spread = np.clip(spread, 0.0, None)
    return PredictiveResult(mean, 1.0 / float(state.tau.mean) + spread)


def lower_bound_obs(state: PosteriorState, y: np.ndarray, obs: ObservationSet,
                    config: FitConfig) -> float:
    resid = expected_residual_obs(state, y, obs, True)
    value = likelihood_term(obs.count, state.tau, resid) + model_bound_terms(state, config)
    if not np.isfinite(value):
        raise NumericalFailure("lower bound is not finite")
    return value


# ---------------------------------------------------------------- driver


def fit_btc(y: np.ndarray, obs: ObservationSet, config: FitConfig = FitConfig()):
    """Fit the Bayesian Tucker model to the observed cells of ``y``.

    Entries of ``y`` outside ``obs`` are ignored (they may be ``nan``).

    Returns
    -------
    model : TuckerModel
    state : PosteriorState
    predictive : PredictiveResult
    report : FitReport
    """
    y = np.asarray(y, dtype=float)
    if tuple(y.shape) != obs.shape:
        raise ValueError(f"tensor shape {y.shape} differs from observation shape {obs.shape}")
    if obs.count < 1:
        raise ValueError("need at least one observed entry")
    observed = y[obs.mask]
    if not np.all(np.isfinite(observed)):
        raise ValueError("observed entries must be finite")
    y = _masked_data(y, obs)
    rank = config.start_rank(y.shape)
    state = initial_state(y, rank, config, float(np.var(observed)), per_row=True)

    def cycle(s):
        if use_closed_form(s, config):
            update_core_closed(s, y, obs, config)
        else:
            update_core_cg(s, y, obs, config)
        for n in range(y.ndim):
            update_factor_rows(s, y, obs, n, config)
        update_precisions(s, config)
        update_tau_obs(s, y, obs, config)

    trace, ranks, iters, converged = run_iterations(
        state, cycle, lambda s: lower_bound_obs(s, y, obs, config), config
    )
    pred = predict(state, config.exact_expectations)
    model: TuckerModel = state.model()
    report = FitReport(
        lower_bound_trace=trace,
        inferred_rank=state.rank,
        estimated_snr_db=snr_db(pred.mean, float(state.tau.mean)),
        iterations=iters,
        converged=converged,
        rank_trace=ranks,
    )
    return model, state, pred, report
