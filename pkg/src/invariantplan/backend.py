"""Conic-solver boundary.

Synthesis and fusion express their programs as cvxpy problems built from
variables, linear equalities, PSD blocks, and linear + logdet objective
terms.  This module owns the mapping onto a concrete conic solver, the
tolerance/iteration knobs, and the translation of solver statuses into
toolkit errors.  Any solver that handles semidefinite plus exponential
cones can be plugged in via the ``INVARIANT_PLAN_SOLVER`` environment
variable or the ``solver`` argument.
"""

from __future__ import annotations

import os

import cvxpy as cp
import numpy as np

from .errors import SolverTimeout, SynthesisInfeasible

_DEFAULT_ORDER = ("CLARABEL", "SCS")


def _pick_solver(name=None):
    name = name or os.environ.get("INVARIANT_PLAN_SOLVER")
    installed = cp.installed_solvers()
    if name:
        name = name.upper()
        if name not in installed:
            raise SolverTimeout(f"solver {name} is not installed")
        return name
    for cand in _DEFAULT_ORDER:
        if cand in installed:
            return cand
    raise SolverTimeout("no semidefinite-capable solver installed")


class SdpBackend:
    """Solves cvxpy-expressed conic programs with configured tolerances."""

    def __init__(self, solver: str | None = None, tol: float | None = None,
                 max_iters: int | None = None, fallback: bool = True):
        self.solver = _pick_solver(solver)
        env_tol = os.environ.get("INVARIANT_PLAN_SOLVER_TOL")
        self.tol = tol if tol is not None else (float(env_tol) if env_tol else 1e-8)
        self.max_iters = max_iters
        self.fallback = fallback

    def _options(self):
        if self.solver == "CLARABEL":
            opts = {"tol_gap_abs": self.tol, "tol_gap_rel": self.tol,
                    "tol_feas": self.tol}
            if self.max_iters:
                opts["max_iter"] = self.max_iters
        elif self.solver == "SCS":
            opts = {"eps": max(self.tol, 1e-9)}
            if self.max_iters:
                opts["max_iters"] = self.max_iters
        else:
            opts = {}
        return opts

    def solve(self, problem: cp.Problem) -> str:
        """Solve in place; returns the final status.

        Falls back once to the next installed solver when the primary one
        errors out numerically.  Raises SolverTimeout when every attempt
        fails.  Infeasibility is returned as a status so callers can attach
        domain context.
        """
        attempts = [self.solver]
        if self.fallback:
            attempts += [s for s in _DEFAULT_ORDER
                         if s != self.solver and s in cp.installed_solvers()]
        last_exc = None
        for solver in attempts:
            try:
                saved, self.solver = self.solver, solver
                try:
                    problem.solve(solver=solver, **self._options())
                finally:
                    self.solver = saved
                return problem.status
            except cp.error.SolverError as exc:
                last_exc = exc
        raise SolverTimeout(f"all solvers failed: {last_exc}") from last_exc

    # -- fusion program ----------------------------------------------------

    def solve_fusion(self, E1, E2):
        """Multipliers and fused inverse shape for the two-ellipsoid fusion LMI.

        maximize   logdet(rho1 X1 + rho2 X2)
        subject to [[1 - sum rho + sum rho p^T X p,  (sum rho X p)^T],
                    [sum rho X p,                    sum rho X      ]] >= 0,
                   rho >= 0,
        with X_i the inverse member shapes.  Unbounded or failed programs
        return (None, None): no certificate.
        """
        X1 = np.linalg.inv(E1.P)
        X2 = np.linalg.inv(E2.P)
        p1, p2 = E1.center, E2.center
        rho = cp.Variable(2, nonneg=True)
        Xo = rho[0] * X1 + rho[1] * X2
        b = rho[0] * (X1 @ p1) + rho[1] * (X2 @ p2)
        c = 1.0 - cp.sum(rho) + rho[0] * float(p1 @ X1 @ p1) + rho[1] * float(p2 @ X2 @ p2)
        M = cp.bmat([
            [cp.reshape(c, (1, 1), order="C"), cp.reshape(b, (1, 2), order="C")],
            [cp.reshape(b, (2, 1), order="C"), Xo],
        ])
        prob = cp.Problem(cp.Maximize(cp.log_det(Xo)),
                          [(M + M.T) * 0.5 >> 0])
        try:
            status = self.solve(prob)
        except SolverTimeout:
            return None, None
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or rho.value is None:
            return None, None
        r = np.maximum(np.asarray(rho.value, dtype=float), 0.0)
        return r, r[0] * X1 + r[1] * X2
