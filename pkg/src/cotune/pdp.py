"""Exact trajectory sensitivities by differentiating the discrete PMP conditions.

Given a solved trajectory and its costates, the derivative of the optimal
trajectory with respect to the parameter is the stationary solution of a
time-varying LQR whose data are the Hamiltonian's derivatives along the
trajectory.  That LQR is never formed as an optimisation problem: its
solution is produced directly by a backward Riccati-type sweep followed by a
forward pass.

Every inverse in the recursions is applied as a pivoted linear solve.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .ocp import Costates, OcProblem, Trajectory
from .solver import SolveResult, SolverError, SolverOptions, solve_oc


class SingularHessianError(np.linalg.LinAlgError):
    """H^uu_t (or I + P_{t+1} R_t) is singular, so the recursion cannot proceed."""

    def __init__(self, msg, t):
        super().__init__(msg)
        self.t = t


@dataclass(frozen=True, eq=False)
class PdpCoefficients:
    F: np.ndarray       # (T, n, n)  df/dx
    G: np.ndarray       # (T, n, m)  df/du
    E: np.ndarray       # (T, n, r)  df/dth
    Hxx: np.ndarray     # (T, n, n)
    Hxu: np.ndarray     # (T, n, m)
    Huu: np.ndarray     # (T, m, m)
    Hxth: np.ndarray    # (T, n, r)
    Huth: np.ndarray    # (T, m, r)
    HxxT: np.ndarray    # (n, n)  terminal
    HxthT: np.ndarray   # (n, r)  terminal

    @property
    def Hux(self) -> np.ndarray:
        return np.swapaxes(self.Hxu, 1, 2)

    @property
    def T(self) -> int:
        return self.F.shape[0]


@dataclass(frozen=True, eq=False)
class RiccatiPass:
    P: np.ndarray   # (T+1, n, n), P[T] = terminal Hxx
    W: np.ndarray   # (T+1, n, r), W[T] = terminal Hxth
    A: np.ndarray   # (T, n, n)
    R: np.ndarray   # (T, n, n)
    M: np.ndarray   # (T, n, r)
    Q: np.ndarray   # (T, n, n)
    N: np.ndarray   # (T, n, r)


@dataclass(frozen=True, eq=False)
class TrajectorySensitivity:
    X: np.ndarray   # (T+1, n, r), X[0] = 0
    U: np.ndarray   # (T, m, r)

    def stacked(self) -> np.ndarray:
        """d(xi)/d(theta) as an (a, r) matrix, rows ordered like trajectory_pack."""
        r = self.X.shape[2]
        return np.concatenate([self.X.reshape(-1, r), self.U.reshape(-1, r)])


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def assemble_coefficients(p: OcProblem, theta, traj: Trajectory, costates: Costates) -> PdpCoefficients:
    if not p.has_second_derivatives:
        raise ValueError("problem lacks second derivatives; see with_fd_second_derivatives")
    th = np.asarray(theta, dtype=float).reshape(-1)
    xs, us, lam = traj.states, traj.controls, costates.lambdas
    T = p.dims.T
    if len(costates) != T or xs.shape[0] != T + 1:
        raise ValueError("trajectory/costates do not match the horizon")
    cols = {k: [] for k in ("F", "G", "E", "Hxx", "Hxu", "Huu", "Hxth", "Huth")}
    for t in range(T):
        x, u, lt = xs[t], us[t], lam[t]  # lam[t] is lambda_{t+1}
        cols["F"].append(p.f_x(x, u, th))
        cols["G"].append(p.f_u(x, u, th))
        cols["E"].append(p.f_th(x, u, th))
        cols["Hxx"].append(p.c_xx(t, x, u, th) + p.f_xx(x, u, th, lt))
        cols["Hxu"].append(p.c_xu(t, x, u, th) + p.f_xu(x, u, th, lt))
        cols["Huu"].append(p.c_uu(t, x, u, th) + p.f_uu(x, u, th, lt))
        cols["Hxth"].append(p.c_xth(t, x, u, th) + p.f_xth(x, u, th, lt))
        cols["Huth"].append(p.c_uth(t, x, u, th) + p.f_uth(x, u, th, lt))
    arr = {k: np.array(v, dtype=float) for k, v in cols.items()}
    arr["Hxx"] = _sym(arr["Hxx"])
    arr["Huu"] = _sym(arr["Huu"])
    return PdpCoefficients(
        **arr,
        HxxT=_sym(np.asarray(p.h_xx(xs[T], th), dtype=float)),
        HxthT=np.asarray(p.h_xth(xs[T], th), dtype=float),
    )


def _solve(a, b, what, t):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    except ValueError as exc:
        raise SingularHessianError(f"non-finite {what} at t={t}", t) from exc
    if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * max(1.0, np.abs(a).max()) * a.shape[0]):
        raise SingularHessianError(f"{what} is singular at t={t}", t)
    return scipy.linalg.lu_solve((lu, piv), b)


def _solve_huu(Huu, b, t):
    try:
        return _solve(Huu, b, "H^uu", t)
    except SingularHessianError as exc:
        raise SingularHessianError(
            f"{exc}; H^uu is invertible whenever the second-order sufficient "
            "optimality condition holds at the solved trajectory", t) from None


def backward_recursion(c: PdpCoefficients) -> RiccatiPass:
    """Backward sweep for P_t, W_t from t = T-1 down to 0."""
    T, n = c.F.shape[0], c.F.shape[1]
    r = c.E.shape[2]
    P = np.empty((T + 1, n, n))
    W = np.empty((T + 1, n, r))
    A = np.empty((T, n, n))
    R = np.empty((T, n, n))
    M = np.empty((T, n, r))
    Q = np.empty((T, n, n))
    N = np.empty((T, n, r))
    P[T], W[T] = c.HxxT, c.HxthT
    I = np.eye(n)
    for t in range(T - 1, -1, -1):
        Hux = c.Hxu[t].T
        # Huu^{-1} [Hux, G', Huth] in one solve
        sol = _solve_huu(c.Huu[t], np.hstack([Hux, c.G[t].T, c.Huth[t]]), t)
        iHux, iGt, iHuth = sol[:, :n], sol[:, n:2 * n], sol[:, 2 * n:]
        A[t] = c.F[t] - c.G[t] @ iHux
        R[t] = c.G[t] @ iGt
        M[t] = c.E[t] - c.G[t] @ iHuth
        Q[t] = c.Hxx[t] - c.Hxu[t] @ iHux
        N[t] = c.Hxth[t] - c.Hxu[t] @ iHuth
        # (I + P R)^{-1} [P A, W + P M]
        rhs = np.hstack([P[t + 1] @ A[t], W[t + 1] + P[t + 1] @ M[t]])
        z = _solve(I + P[t + 1] @ R[t], rhs, "I + P_{t+1} R_t", t)
        P[t] = Q[t] + A[t].T @ z[:, :n]
        W[t] = A[t].T @ z[:, n:] + N[t]
    return RiccatiPass(P=P, W=W, A=A, R=R, M=M, Q=Q, N=N)


def forward_sensitivity(c: PdpCoefficients, rp: RiccatiPass) -> TrajectorySensitivity:
    T, n, m = c.G.shape[0], c.G.shape[1], c.G.shape[2]
    r = c.E.shape[2]
    X = np.zeros((T + 1, n, r))
    U = np.empty((T, m, r))
    I = np.eye(n)
    for t in range(T):
        Pn = rp.P[t + 1]
        v = _solve(I + Pn @ rp.R[t],
                   Pn @ rp.A[t] @ X[t] + Pn @ rp.M[t] + rp.W[t + 1], "I + P_{t+1} R_t", t)
        U[t] = -_solve_huu(c.Huu[t], c.Hxu[t].T @ X[t] + c.Huth[t] + c.G[t].T @ v, t)
        X[t + 1] = c.F[t] @ X[t] + c.G[t] @ U[t] + c.E[t]
    return TrajectorySensitivity(X=X, U=U)


def sensitivity_from_solution(p: OcProblem, theta, result: SolveResult) -> TrajectorySensitivity:
    coeffs = assemble_coefficients(p, theta, result.trajectory, result.costates)
    return forward_sensitivity(coeffs, backward_recursion(coeffs))


def trajectory_gradient(p: OcProblem, theta, opts: SolverOptions | None = None,
                        warm_start=None) -> tuple[SolveResult, TrajectorySensitivity]:
    """Solve at ``theta`` and differentiate the optimal trajectory with respect to it."""
    result = solve_oc(p, theta, warm_start=warm_start, opts=opts)
    if not result.converged:
        raise SolverError(
            f"inner solve did not converge (residual {result.stationarity:.3e} after "
            f"{result.iterations} iterations); sensitivity undefined")
    return result, sensitivity_from_solution(p, theta, result)


def min_huu_eigenvalues(c: PdpCoefficients) -> np.ndarray:
    """Smallest eigenvalue of each H^uu_t; diagnostic for second-order sufficiency."""
    return np.array([np.linalg.eigvalsh(h)[0] for h in c.Huu])
