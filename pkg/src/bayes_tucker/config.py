"""Fit configuration shared by the decomposition and completion solvers."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional, Sequence

PRIORS = ("student_t", "laplace")
INITS = ("mode_n_svd", "standard_normal")


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters and iteration controls.

    Parameters
    ----------
    prior : {"student_t", "laplace"}
        Sparsity prior on the column precisions.
    a0_tau, b0_tau, a0_beta, b0_beta, a0_lambda, b0_lambda, a0_gamma, b0_gamma : float
        Shape and rate of the top-level Gamma priors.
    init_rank : sequence of int, optional
        Per-mode starting rank. ``None`` starts each mode at full size.
    init_factors : {"mode_n_svd", "standard_normal"}
        Initial factor means.
    max_iters : int
        Upper bound on update cycles.
    tol : float
        Relative lower-bound change counted as converged (twice in a row).
    prune_tol : float
        A column is removed once both its factor magnitude and core-slice
        power fall below ``prune_tol`` times the largest in its mode.
    exact_expectations : bool
        Keep the core covariance in every second-moment term. When off the
        core is treated as a point mass inside the factor, beta, lambda and
        tau updates.
    laplace_moments : {"mode", "exact"}
        Estimator of E[1/lambda] under the Laplace prior: the posterior mode
        of 1/lambda, or the Bessel-ratio expectation.
    core_solver : {"auto", "closed", "cg"}
        Completion core update. ``auto`` uses the dense solve while the core
        has at most ``closed_form_cap`` entries.
    seed : int
        Seed for random initialization.
    """

    prior: str = "student_t"
    a0_tau: float = 1e-9
    b0_tau: float = 1e-9
    a0_beta: float = 1e-9
    b0_beta: float = 1e-9
    a0_lambda: float = 1e-9
    b0_lambda: float = 1e-9
    a0_gamma: float = 1e-9
    b0_gamma: float = 1e-9
    init_rank: Optional[Sequence[int]] = None
    init_factors: str = "mode_n_svd"
    max_iters: int = 500
    tol: float = 1e-6
    prune_tol: float = 1e-10
    exact_expectations: bool = True
    laplace_moments: str = "mode"
    core_solver: str = "auto"
    closed_form_cap: int = 4096
    cg_iters: int = 100
    cg_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.prior not in PRIORS:
            raise ValueError(f"prior must be one of {PRIORS}, got {self.prior!r}")
        if self.init_factors not in INITS:
            raise ValueError(f"init_factors must be one of {INITS}, got {self.init_factors!r}")
        if self.laplace_moments not in ("mode", "exact"):
            raise ValueError("laplace_moments must be 'mode' or 'exact'")
        if self.core_solver not in ("auto", "closed", "cg"):
            raise ValueError("core_solver must be 'auto', 'closed' or 'cg'")
        for f in fields(self):
            if f.name.startswith(("a0_", "b0_")) and not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")
        if self.max_iters < 1 or self.cg_iters < 1:
            raise ValueError("iteration caps must be at least 1")
        if not (self.tol >= 0 and self.prune_tol >= 0 and self.cg_tol >= 0):
            raise ValueError("tolerances must be nonnegative")
        if self.init_rank is not None:
            rank = tuple(int(r) for r in self.init_rank)
            if any(r < 1 for r in rank):
                raise ValueError("init_rank entries must be positive")
            object.__setattr__(self, "init_rank", rank)

    def start_rank(self, shape: Sequence[int]) -> tuple[int, ...]:
        if self.init_rank is None:
            return tuple(int(s) for s in shape)
        if len(self.init_rank) != len(shape):
            raise ValueError(f"init_rank {self.init_rank} does not match a {len(shape)}-way tensor")
        if any(r > s for r, s in zip(self.init_rank, shape)):
            raise ValueError(f"init_rank {self.init_rank} exceeds tensor shape {tuple(shape)}")
        return self.init_rank
