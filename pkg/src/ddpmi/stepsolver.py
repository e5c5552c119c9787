"""Constrained linear least-squares step computation.

Solves::

    min_x ||J x - d||^2   s.t.  A x <= b,  lo <= x <= hi

with a primal active-set method started from ``x = 0`` (feasible by the
:class:`ConstraintSet` invariant). A tiny Tikhonov term ``mu ||x||^2`` makes the
minimizer unique when ``J`` is rank deficient, which selects the minimum-norm
tie. Equality-constrained subproblems are solved in the null space of the
working set through an SVD, so the normal equations are never formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from ddpmi.core import ActuationDelta, DimensionError, InputError

#: Tie-breaking regularization weight.
MU = 1e-10
#: Feasibility tolerance for returned steps.
TAU_FEAS = 1e-9
#: KKT certificate tolerance, relative to the gradient scale ``max(1, ||J^T d||)``.
KKT_TOL = 1e-6
#: Default per-step bound when a scenario gives none.
DEFAULT_STEP_BOUND = 0.5


class SolverError(RuntimeError):
    """The active-set iteration failed to produce a KKT-certified step.

    ``best`` holds the last feasible iterate.
    """

    def __init__(self, message: str, best: np.ndarray):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Linear inequalities ``A x <= b`` and box bounds on the increment.

    Bounds may be infinite. ``x = 0`` must be feasible.
    """

    delta_min: np.ndarray
    delta_max: np.ndarray
    A: np.ndarray = None
    b: np.ndarray = None

    def __post_init__(self):
        lo = np.array(self.delta_min, dtype=float).ravel()
        hi = np.array(self.delta_max, dtype=float).ravel()
        if lo.size == 0 or lo.size != hi.size:
            raise DimensionError(f"delta_min/delta_max lengths {lo.size}/{hi.size} differ or are empty")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise InputError("NaN in step bounds")
        if np.any(lo > hi):
            i = int(np.argmax(lo > hi))
            raise ValueError(f"delta_min[{i}]={lo[i]} exceeds delta_max[{i}]={hi[i]}")
        if np.any(lo > 0) or np.any(hi < 0):
            raise ValueError("zero increment must satisfy the step bounds")
        n = lo.size
        A = np.zeros((0, n)) if self.A is None else np.array(self.A, dtype=float).reshape(-1, n)
        b = np.zeros(0) if self.b is None else np.array(self.b, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise DimensionError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InputError("non-finite entries in A or b")
        if np.any(b < 0):
            raise ValueError("zero increment must satisfy A x <= b (b has negative entries)")
        for name, arr in (("delta_min", lo), ("delta_max", hi), ("A", A), ("b", b)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def box(cls, n: int, bound: float = DEFAULT_STEP_BOUND) -> "ConstraintSet":
        return cls(-bound * np.ones(n), bound * np.ones(n))

    @property
    def n(self) -> int:
        return self.delta_min.size

    @property
    def h(self) -> int:
        return self.b.size

    def with_rows(self, A, b) -> "ConstraintSet":
        """Copy with extra inequality rows appended."""
        A = np.asarray(A, dtype=float).reshape(-1, self.n)
        return ConstraintSet(self.delta_min, self.delta_max, np.vstack([self.A, A]), np.concatenate([self.b, np.ravel(b)]))

    def stacked(self) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """All finite constraints as ``G x <= g`` with identifiers."""
        n = self.n
        eye = np.eye(n)
        rows = [self.A, eye, -eye]
        rhs = [self.b, self.delta_max, -self.delta_min]
        names = [f"A{i}" for i in range(self.h)] + [f"max{i}" for i in range(n)] + [f"min{i}" for i in range(n)]
        G = np.vstack(rows)
        g = np.concatenate(rhs)
        keep = np.isfinite(g)
        return G[keep], g[keep], [nm for nm, k in zip(names, keep) if k]

    def violation(self, x) -> float:
        """Largest constraint violation at ``x`` (0 when feasible)."""
        G, g, _ = self.stacked()
        if g.size == 0:
            return 0.0
        return float(max(0.0, np.max(G @ np.asarray(x, dtype=float) - g)))


@dataclass(frozen=True, eq=False)
class StepSolution:
    delta_theta: ActuationDelta
    objective: float
    kkt_residual: float
    active_set: frozenset = field(default_factory=frozenset)
    iterations: int = 0


def _check_problem(J, target, cons: ConstraintSet) -> tuple[np.ndarray, np.ndarray]:
    J = np.asarray(getattr(J, "matrix", J), dtype=float)
    d = np.asarray(getattr(target, "values", target), dtype=float).ravel()
    if J.ndim != 2:
        raise DimensionError(f"J must be 2-D, got shape {J.shape}")
    N, n = J.shape
    if d.size != N:
        raise DimensionError(f"target length {d.size} does not match J rows {N}")
    if cons.n != n:
        raise DimensionError(f"constraints are for n={cons.n}, J has {n} columns")
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(d))):
        raise InputError("non-finite Jacobian or target")
    return J, d


def _regularized_lsq(M: np.ndarray, r: np.ndarray, mu: float) -> np.ndarray:
    """argmin ||M y - r||^2 + mu ||y||^2 via SVD, zeroing numerically null directions."""
    if M.size == 0:
        return np.zeros(M.shape[1])
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    keep = S > S[0] * 1e-12 if S.size and S[0] > 0 else np.zeros(S.size, dtype=bool)
    coef = np.zeros_like(S)
    coef[keep] = S[keep] / (S[keep] ** 2 + mu)
    return Vt.T @ (coef * (U.T @ r))


def _eqp(J: np.ndarray, d: np.ndarray, Gw: np.ndarray, gw: np.ndarray, mu: float) -> np.ndarray:
    """argmin ||J x - d||^2 + mu ||x||^2 subject to Gw x = gw (independent rows)."""
    n = J.shape[1]
    if Gw.shape[0] == 0:
        return _regularized_lsq(J, d, mu)
    U, S, Vt = np.linalg.svd(Gw)
    r = int(np.sum(S > S[0] * 1e-12))
    x_p = Vt[:r].T @ ((U[:, :r].T @ gw) / S[:r])
    Z = Vt[r:].T
    if Z.shape[1] == 0:
        return x_p
    # x_p lies in the row space of Gw, so ||x_p + Z y||^2 = ||x_p||^2 + ||y||^2
    y = _regularized_lsq(J @ Z, d - J @ x_p, mu)
    return x_p + Z @ y


def solve_step(J, target, cons: ConstraintSet, mu: float = MU, max_iter: int | None = None) -> StepSolution:
    """Minimize ``||J dtheta - target||^2`` over the constraint set.

    ``target`` is the desired feature change ``gamma_d - gamma``.
    """
    J, d = _check_problem(J, target, cons)
    N, n = J.shape
    G, g, names = cons.stacked()
    m = g.size
    if max_iter is None:
        max_iter = 50 + 10 * m
    scale = max(1.0, float(np.linalg.norm(J.T @ d)))
    normJ = float(np.linalg.norm(J))
    normd = float(np.linalg.norm(d))

    def grad(x):
        return J.T @ (J @ x - d) + mu * x

    x = np.zeros(n)
    W: list[int] = []
    for it in range(max_iter):
        x_eq = _eqp(J, d, G[W], g[W], mu)
        p = x_eq - x
        if np.linalg.norm(p) <= 1e-13 * (1.0 + np.linalg.norm(x)):
            if not W:
                break
            lam = np.linalg.lstsq(G[W].T, -grad(x), rcond=None)[0]
            j = int(np.argmin(lam))
            # multipliers of the mu tie-break are O(mu); rounding in grad is far smaller
            lam_tol = 1e-14 * (1.0 + normJ * (normJ * np.linalg.norm(x) + normd))
            if lam[j] >= -lam_tol:
                break
            W.pop(j)
            continue
        alpha, block = 1.0, None
        Gp = G @ p
        slack = g - G @ x
        for i in np.flatnonzero(Gp > 1e-15 * np.linalg.norm(p)):
            if i in W:
                continue
            a = max(slack[i], 0.0) / Gp[i]
            if a < alpha:
                alpha, block = a, int(i)
        x = x + alpha * p
        if block is not None:
            W.append(block)
    else:
        raise SolverError(f"active-set iteration cap {max_iter} reached", best=_clip(x, cons))

    x = _clip(x, cons)
    stationarity, feasibility, complementarity = kkt_check(J, d, cons, x)
    residual = max(stationarity, feasibility, complementarity)
    if stationarity > KKT_TOL * scale or feasibility > TAU_FEAS or complementarity > KKT_TOL * scale:
        raise SolverError(f"no KKT certificate (residuals {stationarity:.2e}, {feasibility:.2e}, {complementarity:.2e})", best=x)
    r = J @ x - d
    return StepSolution(
        delta_theta=ActuationDelta(x),
        objective=float(r @ r),
        kkt_residual=residual,
        active_set=frozenset(names[i] for i in W),
        iterations=it + 1,
    )


def _clip(x: np.ndarray, cons: ConstraintSet) -> np.ndarray:
    return np.minimum(np.maximum(x, cons.delta_min), cons.delta_max)


def kkt_check(J, target, cons: ConstraintSet, candidate, active_tol: float = TAU_FEAS) -> tuple[float, float, float]:
    """KKT residuals of ``candidate`` for ``min 1/2 ||J x - d||^2`` on ``cons``.

    Multipliers of the constraints within ``active_tol`` of equality are
    recovered by nonnegative least squares, so dual feasibility holds by
    construction. Returns (stationarity, primal feasibility, complementarity).
    """
    J, d = _check_problem(J, target, cons)
    x = np.asarray(getattr(candidate, "values", candidate), dtype=float).ravel()
    if x.size != J.shape[1]:
        raise DimensionError(f"candidate has length {x.size}, expected {J.shape[1]}")
    G, g, _ = cons.stacked()
    grad = J.T @ (J @ x - d)
    slack = g - G @ x
    feasibility = float(max(0.0, -slack.min())) if slack.size else 0.0
    active = np.flatnonzero(np.abs(slack) <= active_tol * (1.0 + np.abs(g)))
    if active.size == 0:
        return float(np.linalg.norm(grad)), feasibility, 0.0
    lam, _ = nnls(G[active].T, -grad)
    stationarity = float(np.linalg.norm(grad + G[active].T @ lam))
    complementarity = float(np.max(np.abs(lam * slack[active])))
    return stationarity, feasibility, complementarity
