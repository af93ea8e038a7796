"""Sparse Newton solver with backtracking line search, and direct saddle solves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DivergenceError, LinearSolveError, SingularSystemError

__all__ = ["NewtonConfig", "SolveReport", "newton_solve", "solve_saddle"]


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-12
    max_iters: int = 30
    ls_backtrack: float = 0.5
    ls_min_step: float = 2.0 ** -10
    load_steps: int = 1

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    load_step: int = 1
    final_norm: float = np.nan

    def merge(self, other: "SolveReport"):
        self.iterations += other.iterations
        self.residual_history.extend(other.residual_history)
        self.converged = other.converged
        self.load_step = other.load_step
        self.final_norm = other.final_norm


def _factorize(A):
    A = sp.csc_matrix(A)
    try:
        return spla.splu(A)
    except RuntimeError as ex:
        raise LinearSolveError(f"sparse factorization failed: {ex}") from ex


def newton_solve(system, config: NewtonConfig = NewtonConfig(), u0=None, load_step: int = 1):
    """Newton iteration on ``system.residual(u)`` with tangent ``system.tangent(u)``.

    Stops when the residual max-norm drops below ``abs_tol`` or below
    ``rel_tol`` times the initial norm.  Residual growth over five
    consecutive accepted steps raises DivergenceError.
    """
    u = np.array(u0 if u0 is not None else system.initial_state(), dtype=float)
    report = SolveReport(load_step=load_step)
    r = np.asarray(system.residual(u))
    norm0 = max(np.linalg.norm(r, np.inf), 1e-300)
    report.residual_history.append(float(norm0))
    growth_streak = 0
    for it in range(1, config.max_iters + 1):
        norm = np.linalg.norm(r, np.inf)
        if norm <= config.abs_tol or norm <= config.rel_tol * norm0:
            report.converged = True
            report.final_norm = float(norm)
            return u, report
        lu = _factorize(system.tangent(u))
        du = lu.solve(-r)
        if not np.all(np.isfinite(du)):
            raise LinearSolveError("non-finite Newton increment (singular tangent)")
        t = 1.0
        while True:
            u_trial = u + t * du
            r_trial = np.asarray(system.residual(u_trial))
            if np.all(np.isfinite(r_trial)) and (
                np.linalg.norm(r_trial, np.inf) < norm or t <= config.ls_min_step
            ):
                break
            t *= config.ls_backtrack
            if t < config.ls_min_step:
                t = config.ls_min_step
        u, r = u_trial, r_trial
        new_norm = float(np.linalg.norm(r, np.inf))
        report.iterations = it
        report.residual_history.append(new_norm)
        growth_streak = growth_streak + 1 if new_norm > norm else 0
        if growth_streak >= 5:
            report.final_norm = new_norm
            raise DivergenceError(
                f"residual grew over {growth_streak} consecutive steps", report=report
            )
    norm = float(np.linalg.norm(r, np.inf))
    report.final_norm = norm
    if norm <= config.abs_tol or norm <= config.rel_tol * norm0:
        report.converged = True
        return u, report
    raise DivergenceError(
        f"no convergence in {config.max_iters} iterations (residual {norm:.3e})",
        report=report,
    )


def solve_saddle(K, f, C=None, g=None, check_conditioning=True, cond_limit=1e13):
    """Direct factorization of the KKT system [[K, C^T], [C, 0]].

    Returns (u, lmbda, info); ``info['near_singular']`` flags a failed or
    ill-conditioned factorization, which typically signals an unstable or
    over-constrained multiplier space.

    Raises
    ------
    SingularSystemError
        If the factorization fails outright.
    """
    K = sp.csc_matrix(K)
    n = K.shape[0]
    if C is None or C.shape[0] == 0:
        A = K
        rhs = np.asarray(f, dtype=float)
        m = 0
    else:
        C = sp.csc_matrix(C)
        m = C.shape[0]
        if g is None:
            g = np.zeros(m)
        A = sp.bmat([[K, C.T], [C, None]], format="csc")
        rhs = np.concatenate([f, g])
    info = {"near_singular": False, "cond_estimate": None, "n_primal": n, "n_multiplier": m}
    with np.errstate(all="ignore"):
        try:
            lu = spla.splu(A)
            sol = lu.solve(rhs)
        except RuntimeError as ex:
            raise SingularSystemError(f"saddle factorization failed: {ex}") from ex
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("saddle solve produced non-finite values")
    if check_conditioning:
        try:
            inv_norm = spla.onenormest(
                spla.LinearOperator(A.shape, matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans="T"))
            )
            cond = inv_norm * spla.norm(A, 1)
            info["cond_estimate"] = float(cond)
            info["near_singular"] = bool(cond > cond_limit)
        except Exception:
            info["near_singular"] = True
    u = sol[:n]
    lmbda = sol[n : n + m]
    return u, lmbda, info
