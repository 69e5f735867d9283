"""Inner optimal-control solver and discrete-time PMP costates.

The solver is an iLQR-style backward/forward sweep whose backward pass uses
the Hessian of the Hamiltonian (running-cost Hessian plus the dynamics
curvature contracted with the current costates).  That makes each sweep a
Newton step on the reduced, controls-only objective, so convergence near a
strict local minimum is quadratic.  Levenberg regularisation on the control
block and a backtracking line search keep early iterations well behaved.
Convergence is declared on the PMP stationarity residual, not on cost
decrease.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ocp import Costates, OcProblem, Trajectory

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 200
    stationarity_tol: float = 1e-8
    regularization_init: float = 1e-6
    regularization_growth: float = 10.0
    line_search_shrink: float = 0.5
    regularization_max: float = 1e10
    armijo: float = 1e-4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        for name in ("stationarity_tol", "regularization_init", "regularization_growth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.line_search_shrink < 1:
            raise ValueError("line_search_shrink must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class SolveResult:
    trajectory: Trajectory
    costates: Costates
    objective: float
    stationarity: float
    iterations: int
    converged: bool
    objective_history: tuple = field(default=(), repr=False)


def _theta(p: OcProblem, theta) -> np.ndarray:
    th = np.asarray(theta, dtype=float).reshape(-1)
    if th.shape != (p.dims.r,):
        raise ValueError(f"theta has length {th.size}, expected r={p.dims.r}")
    return th


def rollout(p: OcProblem, theta, controls) -> np.ndarray:
    """Forward-simulate the dynamics from x0; raises SolverError on non-finite states."""
    th = _theta(p, theta)
    us = np.asarray(controls, dtype=float)
    xs = np.empty((p.dims.T + 1, p.dims.n))
    xs[0] = p.x0
    for t in range(p.dims.T):
        xs[t + 1] = p.f(xs[t], us[t], th)
        if not np.all(np.isfinite(xs[t + 1])):
            raise SolverError(f"non-finite state produced by dynamics at t={t}")
    return xs


def objective(p: OcProblem, theta, states, controls) -> float:
    th = _theta(p, theta)
    J = 0.0
    for t in range(p.dims.T):
        ct = float(p.c(t, states[t], controls[t], th))
        if not np.isfinite(ct):
            raise SolverError(f"non-finite running cost at t={t}")
        J += ct
    hT = float(p.h(states[-1], th))
    if not np.isfinite(hT):
        raise SolverError(f"non-finite terminal cost at t={p.dims.T}")
    return J + hT


def compute_costates(p: OcProblem, theta, traj: Trajectory) -> Costates:
    """lam_T = dh/dx_T, then lam_t = dc_t/dx_t + f_x' lam_{t+1} down to t = 1."""
    th = _theta(p, theta)
    T, n = p.dims.T, p.dims.n
    xs, us = traj.states, traj.controls
    if xs.shape != (T + 1, n) or us.shape != (T, p.dims.m):
        raise ValueError("trajectory shape does not match problem dims")
    lam = np.empty((T, n))
    lam[T - 1] = p.h_x(xs[T], th)
    for t in range(T - 1, 0, -1):
        lam[t - 1] = p.c_x(t, xs[t], us[t], th) + p.f_x(xs[t], us[t], th).T @ lam[t]
    lam.setflags(write=False)
    return Costates(lam)


def control_gradients(p: OcProblem, theta, traj: Trajectory, costates: Costates) -> np.ndarray:
    """dH_t/du_t for t = 0..T-1, shape (T, m); equal to dJ/du_t under the rollout."""
    th = _theta(p, theta)
    xs, us, lam = traj.states, traj.controls, costates.lambdas
    return np.array([p.c_u(t, xs[t], us[t], th) + p.f_u(xs[t], us[t], th).T @ lam[t]
                     for t in range(p.dims.T)])


def stationarity_residual(p: OcProblem, theta, traj: Trajectory, costates: Costates) -> float:
    return float(np.max(np.abs(control_gradients(p, theta, traj, costates))))


def _backward_pass(p, th, xs, us, lam, mu):
    """Riccati sweep on the local quadratic model; returns (k, K, expected decrease) or None."""
    T, n, m = p.dims.T, p.dims.n, p.dims.m
    ks = np.empty((T, m))
    Ks = np.empty((T, m, n))
    Vx = np.asarray(p.h_x(xs[T], th), dtype=float)
    Vxx = np.asarray(p.h_xx(xs[T], th), dtype=float)
    dV = 0.0
    for t in range(T - 1, -1, -1):
        x, u, lt = xs[t], us[t], lam[t]
        A = p.f_x(x, u, th)
        B = p.f_u(x, u, th)
        Qx = p.c_x(t, x, u, th) + A.T @ Vx
        Qu = p.c_u(t, x, u, th) + B.T @ Vx
        Qxx = p.c_xx(t, x, u, th) + p.f_xx(x, u, th, lt) + A.T @ Vxx @ A
        Qux = (p.c_xu(t, x, u, th) + p.f_xu(x, u, th, lt)).T + B.T @ Vxx @ A
        Quu = p.c_uu(t, x, u, th) + p.f_uu(x, u, th, lt) + B.T @ Vxx @ B
        Quu = 0.5 * (Quu + Quu.T) + mu * np.eye(m)
        try:
            L = np.linalg.cholesky(Quu)
        except np.linalg.LinAlgError:
            return None
        kK = -np.linalg.solve(L.T, np.linalg.solve(L, np.column_stack([Qu, Qux])))
        k, K = kK[:, 0], kK[:, 1:]
        ks[t], Ks[t] = k, K
        dV += float(Qu @ k)
        Vx = Qx + K.T @ Quu @ k + K.T @ Qu + Qux.T @ k
        Vxx = Qxx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
        Vxx = 0.5 * (Vxx + Vxx.T)
    return ks, Ks, dV


def _forward(p, th, xs, us, ks, Ks, alpha):
    T = p.dims.T
    xn = np.empty_like(xs)
    un = np.empty_like(us)
    xn[0] = xs[0]
    for t in range(T):
        un[t] = us[t] + alpha * ks[t] + Ks[t] @ (xn[t] - xs[t])
        xn[t + 1] = p.f(xn[t], un[t], th)
        if not np.all(np.isfinite(xn[t + 1])):
            return None
    return xn, un


def _below_roundoff(expected, J, Jn):
    # The predicted decrease is too small to resolve in floating point; J can
    # only move by rounding noise, so the stationarity residual decides instead.
    scale = 1e-12 * (1 + abs(J))
    return -expected <= scale and abs(Jn - J) <= scale


def _residual(p, th, xs, us):
    traj = Trajectory(xs, us)
    return stationarity_residual(p, th, traj, compute_costates(p, th, traj))


def solve_oc(p: OcProblem, theta, warm_start=None, opts: SolverOptions | None = None) -> SolveResult:
    """Minimise the horizon cost for fixed ``theta``.

    Returns a result with ``converged=False`` instead of raising when the
    iteration budget runs out or no descent step can be found.  Non-finite
    values in the initial rollout raise SolverError naming the time step.
    """
    opts = opts or SolverOptions()
    if not p.has_second_derivatives:
        raise ValueError("problem lacks second derivatives; see with_fd_second_derivatives")
    th = _theta(p, theta)
    T, m = p.dims.T, p.dims.m
    if warm_start is None:
        us = np.zeros((T, m))
    else:
        us = np.array(warm_start, dtype=float).reshape(T, m)
    xs = rollout(p, th, us)
    J = objective(p, th, xs, us)
    history = [J]
    mu = opts.regularization_init
    iterations = 0
    converged = False

    while True:
        traj = Trajectory(xs, us)
        lam = compute_costates(p, th, traj)
        res = stationarity_residual(p, th, traj, lam)
        if res <= opts.stationarity_tol:
            converged = True
            break
        if iterations >= opts.max_iterations:
            break
        iterations += 1

        accepted = False
        while not accepted and mu <= opts.regularization_max:
            bp = _backward_pass(p, th, xs, us, lam.lambdas, mu)
            if bp is None:
                mu *= opts.regularization_growth
                continue
            ks, Ks, dV = bp
            alpha = 1.0
            while alpha > 1e-10:
                fw = _forward(p, th, xs, us, ks, Ks, alpha)
                if fw is not None:
                    Jn = objective(p, th, *fw)
                    expected = alpha * (1 - alpha / 2) * dV  # negative
                    if Jn <= J + opts.armijo * expected or (
                            _below_roundoff(expected, J, Jn)
                            and _residual(p, th, *fw) < res):
                        xs, us = fw
                        J = Jn
                        accepted = True
                        break
                alpha *= opts.line_search_shrink
            if not accepted:
                mu *= opts.regularization_growth
        if not accepted:
            log.debug("no descent step found at iteration %d (residual %.3e)", iterations, res)
            break
        history.append(J)
        mu = max(opts.regularization_init, mu / opts.regularization_growth)

    return SolveResult(
        trajectory=traj, costates=lam, objective=J, stationarity=res,
        iterations=iterations, converged=converged, objective_history=tuple(history))
