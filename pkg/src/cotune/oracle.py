"""Brute-force references used to check the sensitivity and gradient code paths."""
from __future__ import annotations

from dataclasses import replace
from typing import NamedTuple, Sequence

import numpy as np

from .consensus import StepSchedule, step_size
from .engine import Agent, chain_rule_gradient
from .ocp import OcProblem, Trajectory, trajectory_pack
from .pdp import TrajectorySensitivity, trajectory_gradient
from .solver import SolverError, SolverOptions, solve_oc

# Tiny damping so the last Newton step is not biased by the Levenberg shift.
TIGHT = SolverOptions(stationarity_tol=1e-10, max_iterations=500, regularization_init=1e-12)


def _tight(opts: SolverOptions | None) -> SolverOptions:
    if opts is None:
        return TIGHT
    return replace(opts, stationarity_tol=min(opts.stationarity_tol, TIGHT.stationarity_tol),
                   regularization_init=min(opts.regularization_init, TIGHT.regularization_init))


def _default_steps(theta, h):
    theta = np.asarray(theta, dtype=float)
    return h * (1.0 + np.abs(theta))


def fd_trajectory_sensitivity(p: OcProblem, theta, h: float = 1e-5,
                              opts: SolverOptions | None = None) -> TrajectorySensitivity:
    """Central differences of the solved trajectory, one parameter column at a time."""
    opts = _tight(opts)
    theta = np.asarray(theta, dtype=float)
    base = solve_oc(p, theta, opts=opts)
    if not base.converged:
        raise SolverError(f"base solve did not converge (residual {base.stationarity:.3e})")
    n, m, r, T = p.dims.n, p.dims.m, p.dims.r, p.dims.T
    X = np.zeros((T + 1, n, r))
    U = np.zeros((T, m, r))
    steps = _default_steps(theta, h)
    for j in range(r):
        e = np.zeros(r)
        e[j] = steps[j]
        sols = []
        for sign in (1, -1):
            res = solve_oc(p, theta + sign * e, warm_start=base.trajectory.controls, opts=opts)
            if not res.converged:
                raise SolverError(f"perturbed solve for parameter column {j} did not converge")
            sols.append(res.trajectory)
        X[:, :, j] = (sols[0].states - sols[1].states) / (2 * steps[j])
        U[:, :, j] = (sols[0].controls - sols[1].controls) / (2 * steps[j])
    return TrajectorySensitivity(X=X, U=U)


def _loss_at(a: Agent, theta, opts, warm):
    res = solve_oc(a.problem, theta, warm_start=warm, opts=opts)
    if not res.converged:
        raise SolverError(f"solve at theta={theta} did not converge")
    xi = trajectory_pack(res.trajectory.states, res.trajectory.controls)
    return float(a.loss.value(xi, theta))


def fd_loss_gradient(a: Agent, h: float = 1e-5, theta=None,
                     opts: SolverOptions | None = None) -> np.ndarray:
    """Central differences of theta -> L(xi(theta), theta)."""
    opts = _tight(opts)
    theta = np.asarray(a.theta if theta is None else theta, dtype=float)
    base = solve_oc(a.problem, theta, opts=opts)
    warm = base.trajectory.controls
    steps = _default_steps(theta, h)
    g = np.zeros(theta.size)
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = steps[j]
        g[j] = (_loss_at(a, theta + e, opts, warm) - _loss_at(a, theta - e, opts, warm)) / (2 * steps[j])
    return g


class CentralizedResult(NamedTuple):
    theta: np.ndarray
    grad_norm: float


def centralized_reference(agents: Sequence[Agent], theta0, steps: StepSchedule, rounds: int,
                          opts: SolverOptions | None = None) -> CentralizedResult:
    """Plain gradient descent on the team-average loss with one shared parameter."""
    theta = np.array(theta0, dtype=float)
    warm = [None] * len(agents)
    grad = np.zeros_like(theta)

    def avg_grad(th):
        gs = []
        for i, a in enumerate(agents):
            res, sens = trajectory_gradient(a.problem, th, opts=opts, warm_start=warm[i])
            warm[i] = res.trajectory.controls
            xi = trajectory_pack(res.trajectory.states, res.trajectory.controls)
            gs.append(chain_rule_gradient(a.loss, xi, th, sens))
        return np.mean(gs, axis=0)

    for k in range(rounds):
        grad = avg_grad(theta)
        theta = theta - step_size(steps, k) * grad
    grad = avg_grad(theta)
    return CentralizedResult(theta, float(np.linalg.norm(grad)))


# ---------------------------------------------------------------------------
# LQR closed form via the full KKT system

def lqr_closed_form(p: OcProblem, theta) -> tuple[Trajectory, TrajectorySensitivity]:
    """Optimal trajectory and exact d(trajectory)/d(theta) for a problem built by ``lqr_problem``.

    Solves the equality-constrained QP over (x_1..x_T, u_0..u_{T-1}) directly
    through its KKT matrix.  The solution is affine in theta, so the
    sensitivity is the KKT solve against the theta-derivative of the right side.
    """
    d = p.meta["lqr"]
    A, B, Q, R, Qf, S, Sf, E = d.A, d.B, d.Q, d.R, d.Qf, d.S, d.Sf, d.E
    n, m = B.shape
    r = S.shape[1]
    T = d.T
    theta = np.asarray(theta, dtype=float)
    nx, nu = T * n, T * m
    nz = nx + nu

    def xi(t):  # column slice of x_t, t >= 1
        return slice((t - 1) * n, t * n)

    def ui(t):
        return slice(nx + t * m, nx + (t + 1) * m)

    H = np.zeros((nz, nz))
    # linear cost term g(theta) = g0 + G1 theta
    g0 = np.zeros(nz)
    G1 = np.zeros((nz, r))
    for t in range(1, T):
        H[xi(t), xi(t)] += Q
        G1[xi(t)] += -Q @ S
    H[xi(T), xi(T)] += Qf
    G1[xi(T)] += -Qf @ Sf
    for t in range(T):
        H[ui(t), ui(t)] += R
    # the t=0 state term is constant (x0 fixed) and does not enter the QP

    # constraints x_{t+1} - A x_t - B u_t = E theta  (+ A x0 at t=0)
    C = np.zeros((nx, nz))
    d0 = np.zeros(nx)
    D1 = np.zeros((nx, r))
    for t in range(T):
        rows = slice(t * n, (t + 1) * n)
        C[rows, xi(t + 1)] = np.eye(n)
        C[rows, ui(t)] = -B
        if t > 0:
            C[rows, xi(t)] = -A
        else:
            d0[rows] = A @ d.x0
        D1[rows] = E

    K = np.block([[H, C.T], [C, np.zeros((nx, nx))]])
    rhs0 = np.concatenate([-g0, d0])
    rhs1 = np.concatenate([-G1, D1])
    sol = np.linalg.solve(K, rhs0 + rhs1 @ theta)
    dsol = np.linalg.solve(K, rhs1)

    states = np.vstack([d.x0, sol[:nx].reshape(T, n)])
    controls = sol[nx:nz].reshape(T, m)
    X = np.zeros((T + 1, n, r))
    X[1:] = dsol[:nx].reshape(T, n, r)
    U = dsol[nx:nz].reshape(T, m, r)
    return Trajectory(states, controls), TrajectorySensitivity(X=X, U=U)


def max_rel_error(a, b, floor: float = 1e-6) -> float:
    """max |a - b| / max(|b|, floor) over entries."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor), initial=0.0))


def sensitivity_agrees(a: TrajectorySensitivity, b: TrajectorySensitivity,
                       rtol: float = 1e-4, atol: float = 1e-6) -> bool:
    """Entrywise |a - b| <= rtol * |b| or |a - b| <= atol."""
    sa, sb = a.stacked(), b.stacked()
    err = np.abs(sa - sb)
    return bool(np.all((err <= rtol * np.abs(sb)) | (err <= atol)))
