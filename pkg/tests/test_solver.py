import numpy as np
import pytest

from cotune.ocp import Trajectory, fd_jacobian
from cotune.problems import (LqrData, RendezvousConfig, lqr_problem, random_smooth_problem,
                             random_theta, rendezvous_problem, scalar_lqr_example)
from cotune.solver import (SolverError, SolverOptions, compute_costates, control_gradients,
                           objective, rollout, solve_oc, stationarity_residual)


def quad_problem(T=1, Qf=1.0, R=1.0, x0=0.0):
    one = np.ones((1, 1))
    z = np.zeros((1, 1))
    return lqr_problem(LqrData(A=one, B=one, Q=z, R=R * one, Qf=Qf * one, S=z, Sf=one, E=z,
                               x0=np.array([x0]), T=T))


def test_scalar_closed_form(scalar_problem):
    res = solve_oc(scalar_problem, [1.0])
    assert res.converged
    assert res.trajectory.controls[0, 0] == pytest.approx(0.5, abs=1e-10)
    assert res.trajectory.states[1, 0] == pytest.approx(0.5, abs=1e-10)
    assert res.objective == pytest.approx(0.25, abs=1e-12)


def test_zero_terminal_cost_gives_zero_control():
    p = quad_problem(T=6, Qf=0.0, x0=1.5)
    res = solve_oc(p, [0.7], warm_start=np.ones((6, 1)))
    assert res.converged
    np.testing.assert_allclose(res.trajectory.controls, 0.0, atol=1e-10)
    np.testing.assert_allclose(res.trajectory.states, 1.5, atol=1e-10)


def test_rendezvous_beats_zero_control():
    cfg = RendezvousConfig(seed=5)
    p, _ = rendezvous_problem(cfg, 2)
    th = cfg.x0[2, :2] + np.array([1.5, -1.0])
    res = solve_oc(p, th)
    zeros = np.zeros((p.dims.T, 2))
    assert res.converged
    assert res.objective < objective(p, th, rollout(p, th, zeros), zeros)


def test_costates_terminal_gradient():
    p = quad_problem(T=1, x0=3.0)   # h = (x - th)^2 / 2
    traj = Trajectory([[3.0], [3.0]], [[0.0]])
    assert compute_costates(p, [0.0], traj)[1][0] == 3.0


def test_costates_hand_recursion():
    # f = x + u, c = 0, h = x^2/2, x_2 = 2: lam_2 = 2, lam_1 = 0 + 1 * 2
    p = quad_problem(T=2, R=0.0)
    traj = Trajectory([[0.0], [1.0], [2.0]], [[1.0], [1.0]])
    lam = compute_costates(p, [0.0], traj)
    assert lam[2][0] == 2.0 and lam[1][0] == 2.0
    assert len(lam) == 2


def test_costates_zero_when_terminal_cost_ignores_state():
    p = quad_problem(T=3, Qf=0.0)
    traj = Trajectory(rollout(p, [0.0], np.ones((3, 1))), np.ones((3, 1)))
    assert compute_costates(p, [0.0], traj)[3][0] == 0.0


def test_residual_at_closed_form_optimum(scalar_problem):
    traj = Trajectory([[0.0], [0.5]], [[0.5]])
    lam = compute_costates(scalar_problem, [1.0], traj)
    assert stationarity_residual(scalar_problem, [1.0], traj, lam) <= 1e-10


def test_residual_of_perturbed_control():
    p = quad_problem(T=4, Qf=0.0)   # c = u^2/2, h = 0, so dH/du = u - 0
    us = np.zeros((4, 1))
    us[2] += 1.0
    traj = Trajectory(rollout(p, [0.0], us), us)
    assert stationarity_residual(p, [0.0], traj, compute_costates(p, [0.0], traj)) == pytest.approx(1.0)


def test_residual_zero_without_costs():
    p = quad_problem(T=1, Qf=0.0, R=0.0)
    traj = Trajectory([[0.0], [4.0]], [[4.0]])
    assert stationarity_residual(p, [0.0], traj, compute_costates(p, [0.0], traj)) == 0.0


@pytest.mark.parametrize("seed", range(8))
def test_solver_invariants(seed):
    p = random_smooth_problem(seed)
    th = random_theta(p, seed)
    res = solve_oc(p, th)
    assert res.converged and res.stationarity <= 1e-8
    # dynamic feasibility, bit for bit
    assert np.array_equal(rollout(p, th, res.trajectory.controls), res.trajectory.states)
    # objective agrees with a fresh evaluation
    assert res.objective == objective(p, th, res.trajectory.states, res.trajectory.controls)
    # descent; steps taken at roundoff level may move J by rounding noise only
    h = np.array(res.objective_history)
    assert np.all(np.diff(h) <= 1e-12 * (1 + np.abs(h[:-1])))
    # warm-start consistency
    again = solve_oc(p, th, warm_start=res.trajectory.controls)
    assert again.iterations <= 2
    assert again.objective == pytest.approx(res.objective, abs=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_costate_gradient_matches_fd_of_objective(seed):
    p = random_smooth_problem(seed + 20)
    th = random_theta(p, seed)
    us = 0.3 * np.random.default_rng(seed).standard_normal((p.dims.T, p.dims.m))
    traj = Trajectory(rollout(p, th, us), us)
    g = control_gradients(p, th, traj, compute_costates(p, th, traj))
    J = lambda flat: objective(p, th, rollout(p, th, flat.reshape(us.shape)), flat.reshape(us.shape))
    fd = fd_jacobian(J, us.reshape(-1)).reshape(us.shape)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_nonconvergence_is_reported_not_raised():
    p = random_smooth_problem(7)
    res = solve_oc(p, random_theta(p, 7), opts=SolverOptions(max_iterations=1))
    assert not res.converged
    assert res.stationarity > 1e-8


def test_non_finite_rollout_names_step():
    p = quad_problem(T=3).replace(f=lambda x, u, th: x + u if u[0] < 5 else np.array([np.inf]))
    with pytest.raises(SolverError, match="t=1"):
        rollout(p, [0.0], [[0.0], [9.0], [0.0]])


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(line_search_shrink=1.0)
    with pytest.raises(ValueError):
        SolverOptions(stationarity_tol=0)


def test_theta_length_checked(scalar_problem):
    with pytest.raises(ValueError):
        solve_oc(scalar_problem, [1.0, 2.0])
