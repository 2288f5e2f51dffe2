"""Convex quadratic programming by operator splitting.

Solves  min ½xᵀHx + gᵀx  over linear equalities and two-sided inequalities,
internally stacked as l ≤ Ax ≤ u.  The iteration is the standard
split-and-project scheme: a regularized KKT solve, over-relaxation, a
projection onto the constraint interval, and a dual update, with the step
weight rho raised on equality rows and adapted from the residual ratio.
Converged solutions are polished by an equality solve on the detected active
set when that lowers the KKT residuals.  Everything is deterministic: fixed
iteration order, no time-based stopping.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import splu

_SIGMA = 1e-6
_ALPHA = 1.6
_RHO_START = 0.1
_RHO_EQ_SCALE = 1e3
_H_REG = 1e-9
_DENSE_LIMIT = 400


def _as_2d(M, ncols):
    if M is None:
        return np.zeros((0, ncols))
    if sparse.issparse(M):
        return M.tocsr()
    M = np.asarray(M, dtype=float)
    return M.reshape(-1, ncols) if M.size else np.zeros((0, ncols))


@dataclass(frozen=True)
class QpProblem:
    """min ½xᵀHx + gᵀx s.t. A_eq x = b_eq, lb ≤ A_in x ≤ ub."""

    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        H = self.H
        if sparse.issparse(H):
            sym_err = abs(H - H.T).max() if H.nnz else 0.0
        else:
            H = np.asarray(H, dtype=float)
            object.__setattr__(self, "H", H)
            sym_err = float(np.max(np.abs(H - H.T))) if H.size else 0.0
        if sym_err > 1e-10:
            raise ValueError(f"H must be symmetric (asymmetry {sym_err:.2e})")
        n = H.shape[0]
        g = np.asarray(self.g, dtype=float).reshape(n)
        object.__setattr__(self, "g", g)
        A_eq = _as_2d(self.A_eq, n)
        A_in = _as_2d(self.A_in, n)
        b_eq = np.zeros(0) if self.b_eq is None else np.asarray(
            self.b_eq, dtype=float).reshape(A_eq.shape[0])
        lb = np.full(A_in.shape[0], -np.inf) if self.lb is None else np.asarray(
            self.lb, dtype=float).reshape(A_in.shape[0])
        ub = np.full(A_in.shape[0], np.inf) if self.ub is None else np.asarray(
            self.ub, dtype=float).reshape(A_in.shape[0])
        if np.any(lb > ub):
            raise ValueError("lb must not exceed ub")
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "A_in", A_in)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        # PSD precheck: Cholesky of H + eps I (dense only; sparse H comes
        # from the transcription builder which is PSD by construction).
        if not sparse.issparse(H) and n:
            try:
                np.linalg.cholesky(H + 1e-8 * np.eye(n))
            except np.linalg.LinAlgError as exc:
                raise ValueError("H must be positive semidefinite") from exc

    @property
    def n(self) -> int:
        return self.H.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    status: str                       # solved | max-iter | primal-infeasible
    primal_residual: float
    dual_residual: float
    iterations: int
    y: np.ndarray = field(repr=False, default=None)
    objective: float = np.nan


class _Kkt:
    """Factorization of [[H+σI, Aᵀ], [A, -diag(1/rho)]], dense or sparse."""

    def __init__(self, H, A, rho):
        n, m = H.shape[0], A.shape[0]
        self.n, self.m = n, m
        dense = (n + m <= _DENSE_LIMIT and not sparse.issparse(H)
                 and not sparse.issparse(A))
        if dense:
            K = np.zeros((n + m, n + m))
            K[:n, :n] = H + _SIGMA * np.eye(n)
            K[:n, n:] = A.T
            K[n:, :n] = A
            K[n + np.arange(m), n + np.arange(m)] = -1.0 / rho
            self._lu = lu_factor(K)
            self._dense = True
        else:
            Hs = sparse.csc_matrix(H) + _SIGMA * sparse.eye(n, format="csc")
            As = sparse.csc_matrix(A)
            D = sparse.diags(-1.0 / rho)
            K = sparse.bmat([[Hs, As.T], [As, D]], format="csc")
            self._lu = splu(K)
            self._dense = False

    def solve(self, rhs):
        if self._dense:
            return lu_solve(self._lu, rhs)
        return self._lu.solve(rhs)


def _stack(p: QpProblem):
    eq = p.A_eq.shape[0]
    if sparse.issparse(p.A_in) or sparse.issparse(p.A_eq):
        A = sparse.vstack([sparse.csr_matrix(p.A_eq),
                           sparse.csr_matrix(p.A_in)], format="csr")
    else:
        A = np.vstack([p.A_eq, p.A_in])
    l = np.concatenate([p.b_eq, p.lb])
    u = np.concatenate([p.b_eq, p.ub])
    return A, l, u, eq


def solve_qp(
    p: QpProblem,
    tol_abs: float = 1e-6,
    tol_rel: float = 1e-6,
    max_iter: int = 4000,
    warm_start: QpSolution | tuple[np.ndarray, np.ndarray] | None = None,
) -> QpSolution:
    """Solve the QP; see module docstring for the algorithm."""
    n = p.n
    A, l, u, n_eq = _stack(p)
    m = A.shape[0]
    if sparse.issparse(p.H):
        H = sparse.csc_matrix(p.H) + _H_REG * sparse.eye(n, format="csc")
    else:
        H = p.H + _H_REG * np.eye(n)
    if m == 0:
        x = _solve_unconstrained(H, p.g)
        return QpSolution(x=x, status="solved", primal_residual=0.0,
                          dual_residual=0.0, iterations=0, y=np.zeros(0),
                          objective=_objective(p, x))

    rho = np.full(m, _RHO_START)
    rho[:n_eq] *= _RHO_EQ_SCALE
    if warm_start is not None:
        x0, y0 = ((warm_start.x, warm_start.y)
                  if isinstance(warm_start, QpSolution) else warm_start)
        x = np.array(x0, dtype=float)
        y = np.array(y0, dtype=float)
    else:
        x = np.zeros(n)
        y = np.zeros(m)
    z = np.clip(A @ x, l, u)

    kkt = _Kkt(H, A, rho)
    best = None
    status = "max-iter"
    iters = max_iter
    r_prim = r_dual = np.inf
    for k in range(1, max_iter + 1):
        rhs = np.concatenate([_SIGMA * x - p.g, z - y / rho])
        sol = kkt.solve(rhs)
        x_t = sol[:n]
        z_t = z + (sol[n:] - y) / rho
        x = _ALPHA * x_t + (1.0 - _ALPHA) * x
        z_r = _ALPHA * z_t + (1.0 - _ALPHA) * z
        z_new = np.clip(z_r + y / rho, l, u)
        dy = rho * (z_r - z_new)
        y = y + dy
        z = z_new

        if k % 5 == 0 or k == max_iter:
            Ax = A @ x
            Hx = H @ x
            Aty = A.T @ y
            r_prim = float(np.max(np.abs(Ax - z))) if m else 0.0
            r_dual = float(np.max(np.abs(Hx + p.g + Aty)))
            eps_prim = tol_abs + tol_rel * max(
                np.max(np.abs(Ax)), np.max(np.abs(z)), 1e-12)
            eps_dual = tol_abs + tol_rel * max(
                np.max(np.abs(Hx)), np.max(np.abs(Aty)),
                np.max(np.abs(p.g)), 1e-12)
            if best is None or max(r_prim / eps_prim, r_dual / eps_dual) < best[0]:
                best = (max(r_prim / eps_prim, r_dual / eps_dual),
                        x.copy(), y.copy(), r_prim, r_dual)
            if r_prim <= eps_prim and r_dual <= eps_dual:
                status, iters = "solved", k
                break
            if _primal_infeasible(A, l, u, dy, tol_abs):
                return QpSolution(x=x, status="primal-infeasible",
                                  primal_residual=r_prim, dual_residual=r_dual,
                                  iterations=k, y=y,
                                  objective=_objective(p, x))
            if k % 25 == 0:
                scale = np.sqrt((r_prim / eps_prim) / max(r_dual / eps_dual,
                                                          1e-12))
                scale = float(np.clip(scale, 1e-3, 1e3))
                if scale > 5.0 or scale < 0.2:
                    rho = np.clip(rho * scale, 1e-6, 1e6)
                    kkt = _Kkt(H, A, rho)

    if status == "max-iter" and best is not None:
        _, x, y, r_prim, r_dual = best
    x, y, r_prim, r_dual = _polish(p, H, A, l, u, n_eq, x, y,
                                   r_prim, r_dual)
    return QpSolution(x=x, status=status, primal_residual=r_prim,
                      dual_residual=r_dual, iterations=iters, y=y,
                      objective=_objective(p, x))


def _objective(p: QpProblem, x: np.ndarray) -> float:
    return float(0.5 * x @ (p.H @ x) + p.g @ x)


def _solve_unconstrained(H, g):
    if sparse.issparse(H):
        return splu(H).solve(-g)
    return np.linalg.solve(H, -g)


def _primal_infeasible(A, l, u, dy, tol) -> bool:
    # Certificate: a dual direction d with Aᵀd = 0 and support function
    # uᵀ[d]₊ + lᵀ[d]₋ < 0 proves the constraint set empty.  Both checks are
    # deliberately strict: a false certificate on a feasible problem is far
    # worse than a few extra iterations on an infeasible one.
    nrm = float(np.max(np.abs(dy))) if dy.size else 0.0
    if nrm <= tol:
        return False
    d = dy / nrm
    if float(np.max(np.abs(A.T @ d))) > 1e-6:
        return False
    pos, neg = np.maximum(d, 0.0), np.minimum(d, 0.0)
    if np.any((pos > 1e-12) & ~np.isfinite(u)) or np.any(
            (neg < -1e-12) & ~np.isfinite(l)):
        return False
    support = float(pos @ np.where(np.isfinite(u), u, 0.0)
                    + neg @ np.where(np.isfinite(l), l, 0.0))
    return support < -1e-4


def _polish(p, H, A, l, u, n_eq, x, y, r_prim, r_dual):
    """Equality solve on the active set; kept only if residuals improve."""
    act = np.zeros(A.shape[0], dtype=bool)
    act[:n_eq] = True
    act |= (y > 1e-9) & np.isfinite(u)
    act |= (y < -1e-9) & np.isfinite(l)
    if not np.any(act):
        return x, y, r_prim, r_dual
    Aa = A[np.flatnonzero(act)] if sparse.issparse(A) else A[act]
    b = np.where(y[act] > 0, u[act], l[act])
    b[:n_eq] = l[:n_eq]
    n, ma = H.shape[0], Aa.shape[0]
    try:
        if sparse.issparse(H) or sparse.issparse(Aa) or n + ma > _DENSE_LIMIT:
            K = sparse.bmat([
                [sparse.csc_matrix(H), sparse.csc_matrix(Aa).T],
                [sparse.csc_matrix(Aa),
                 -1e-12 * sparse.eye(ma, format="csc")]], format="csc")
            sol = splu(K).solve(np.concatenate([-p.g, b]))
        else:
            K = np.zeros((n + ma, n + ma))
            K[:n, :n] = H
            K[:n, n:] = Aa.T
            K[n:, :n] = Aa
            K[n + np.arange(ma), n + np.arange(ma)] = -1e-12
            sol = lu_solve(lu_factor(K), np.concatenate([-p.g, b]))
    except (np.linalg.LinAlgError, RuntimeError):
        return x, y, r_prim, r_dual
    x_p = sol[:n]
    y_p = np.zeros_like(y)
    y_p[act] = sol[n:]
    Ax = A @ x_p
    if np.any(Ax < l - 1e-8) or np.any(Ax > u + 1e-8):
        return x, y, r_prim, r_dual
    rp = float(np.max(np.abs(Ax - np.clip(Ax, l, u))))
    rd = float(np.max(np.abs(H @ x_p + p.g + A.T @ y_p)))
    if max(rp, rd) <= max(r_prim, r_dual):
        return x_p, y_p, rp, rd
    return x, y, r_prim, r_dual
