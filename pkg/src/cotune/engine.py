"""Cooperative tuning loop.

Each round every agent solves its own optimal-control problem at its current
parameter, turns the trajectory sensitivity into a loss gradient by the chain
rule, and then all agents mix parameters with their neighbours and take a
gradient step.  Rounds are synchronous: the mixing step waits for every
agent's gradient.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .consensus import GraphSchedule, StepSchedule, consensus_step, metropolis_weights, step_size
from .ocp import OcProblem, trajectory_pack
from .pdp import TrajectorySensitivity, trajectory_gradient
from .solver import SolveResult, SolverError, SolverOptions, solve_oc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Loss:
    """Tuning loss L(xi, theta) on the packed trajectory, with its partial derivatives."""
    value: Callable
    grad_xi: Callable
    grad_theta: Callable


@dataclass(eq=False)
class Agent:
    problem: OcProblem
    loss: Loss
    theta: np.ndarray
    last: SolveResult | None = field(default=None, repr=False)

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float).reshape(-1)
        if self.theta.shape != (self.problem.dims.r,):
            raise ValueError(f"theta has length {self.theta.size}, expected {self.problem.dims.r}")

    def warm_start(self):
        return None if self.last is None else self.last.trajectory.controls


class TuningAborted(RuntimeError):
    """An agent failed mid-run; ``trace`` holds every round completed before ``round``."""

    def __init__(self, round_index: int, trace: "TuningTrace", cause: Exception):
        super().__init__(f"tuning aborted in round {round_index}: {cause}")
        self.round = round_index
        self.trace = trace
        self.cause = cause


def chain_rule_gradient(loss: Loss, xi, theta, sens: TrajectorySensitivity) -> np.ndarray:
    dxi = np.asarray(loss.grad_xi(xi, theta), dtype=float)
    if dxi.shape != (sens.stacked().shape[0],):
        raise ValueError(f"loss grad_xi has shape {dxi.shape}, expected ({sens.stacked().shape[0]},)")
    return dxi @ sens.stacked() + np.asarray(loss.grad_theta(xi, theta), dtype=float)


def local_loss_gradient(a: Agent, opts: SolverOptions | None = None) -> np.ndarray:
    """dL/dtheta at the agent's current parameter; caches the solve on the agent."""
    _, grad, _ = _evaluate(a, a.theta, opts)
    return grad


def _evaluate(a: Agent, theta, opts):
    result, sens = trajectory_gradient(a.problem, theta, opts=opts, warm_start=a.warm_start())
    a.last = result
    xi = trajectory_pack(result.trajectory.states, result.trajectory.controls)
    loss = float(a.loss.value(xi, theta))
    return loss, chain_rule_gradient(a.loss, xi, theta, sens), result


def agent_loss(a: Agent, theta, opts: SolverOptions | None = None, warm_start=None) -> float:
    """L(xi(theta), theta) with xi freshly solved; does not touch the agent's cache."""
    res = solve_oc(a.problem, theta, warm_start=warm_start, opts=opts)
    if not res.converged:
        raise SolverError(f"inner solve did not converge (residual {res.stationarity:.3e})")
    xi = trajectory_pack(res.trajectory.states, res.trajectory.controls)
    return float(a.loss.value(xi, np.asarray(theta, dtype=float)))


def global_loss(agents: Sequence[Agent], thetas, opts: SolverOptions | None = None) -> float:
    return float(np.mean([agent_loss(a, th, opts, a.warm_start()) for a, th in zip(agents, thetas)]))


def disagreement(thetas) -> float:
    """sum_i sum_j ||theta_i - theta_j||^2 (each unordered pair counted twice)."""
    th = np.asarray(thetas, dtype=float)
    if th.ndim == 1:
        th = th[:, None]
    diff = th[:, None, :] - th[None, :, :]
    return float(np.sum(diff * diff))


@dataclass
class RoundRecord:
    round: int
    thetas: np.ndarray          # (N, r) parameters used in this round
    global_avg_loss: float
    relative_loss: float
    disagreement: float
    grad_norms: np.ndarray      # (N,)
    solver_iters: np.ndarray    # (N,)
    converged: np.ndarray       # (N,) bool


@dataclass
class TuningTrace:
    records: list = field(default_factory=list)
    final_thetas: np.ndarray | None = None
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def thetas(self) -> np.ndarray:
        """(rounds, N, r)"""
        return np.array([r.thetas for r in self.records])


@dataclass(frozen=True)
class StopCriteria:
    disagreement: float
    grad_norm: float


def tune(agents: Sequence[Agent], schedule: GraphSchedule, steps: StepSchedule, rounds: int,
         stop: StopCriteria | None = None, solver_opts: SolverOptions | None = None,
         workers: int = 1, callback: Callable | None = None) -> TuningTrace:
    """Run synchronous consensus rounds, recording one trace row per round.

    Agent parameters are updated in place.  On an unrecoverable agent error a
    TuningAborted carrying the partial trace is raised.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    N = len(agents)
    if schedule.N != N:
        raise ValueError(f"schedule has {schedule.N} nodes but there are {N} agents")
    trace = TuningTrace()
    loss0 = None
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for k in range(rounds):
            thetas = np.array([a.theta for a in agents])
            try:
                if pool is None:
                    evals = [_evaluate(a, a.theta, solver_opts) for a in agents]
                else:
                    evals = list(pool.map(lambda a: _evaluate(a, a.theta, solver_opts), agents))
            except Exception as exc:
                trace.final_thetas = thetas
                raise TuningAborted(k, trace, exc) from exc
            losses = np.array([e[0] for e in evals])
            grads = np.array([e[1] for e in evals])
            gl = float(np.mean(losses))
            if loss0 is None:
                loss0 = gl
            rec = RoundRecord(
                round=k, thetas=thetas, global_avg_loss=gl,
                relative_loss=gl / loss0 if loss0 != 0 else float("nan"),
                disagreement=disagreement(thetas),
                grad_norms=np.linalg.norm(grads, axis=1),
                solver_iters=np.array([e[2].iterations for e in evals]),
                converged=np.array([e[2].converged for e in evals]),
            )
            trace.records.append(rec)
            if callback is not None:
                callback(rec)

            W = metropolis_weights(schedule.graph(k))
            new = consensus_step(thetas, W, grads, step_size(steps, k))
            for a, th in zip(agents, new):
                a.theta = th
            if stop is not None and rec.disagreement <= stop.disagreement \
                    and rec.grad_norms.max() <= stop.grad_norm:
                trace.stopped_early = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    trace.final_thetas = np.array([a.theta for a in agents])
    return trace
