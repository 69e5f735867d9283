"""Experiment configuration: a YAML tree validated into typed sections."""
from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .consensus import Digraph, GraphSchedule, StepSchedule
from .engine import Agent, StopCriteria
from .ocp import Dims
from .problems import (RendezvousConfig, convex_lqr_agents, corrupt_derivatives, lqr_test_problem,
                       periodic_rendezvous_schedule, rendezvous_agents)
from .solver import SolverOptions


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RendezvousWeights(_Strict):
    track: float = Field(2.0, gt=0)
    ctrl: float = Field(1.0, gt=0)
    term: float = Field(5.0, gt=0)
    loss: float = Field(100.0, gt=0)


class RendezvousSection(_Strict):
    type: Literal["rendezvous"]
    T: int = Field(60, ge=1)
    dt: float = Field(0.1, gt=0)
    weights: RendezvousWeights = RendezvousWeights()
    corrupt_derivatives: bool = False


class LqrSection(_Strict):
    type: Literal["lqr"]
    n: int = Field(2, ge=1)
    m: int = Field(1, ge=1)
    r: int = Field(2, ge=1)
    T: int = Field(5, ge=1)
    coupling: Literal["target", "full", "none"] = "target"
    spread: float = Field(0.5, ge=0)
    rho: float = Field(1.0, gt=0)
    corrupt_derivatives: bool = False


class AgentsSection(_Strict):
    count: int = Field(5, ge=1)
    seed: int = 0
    initial_states: Union[Literal["random"], List[List[float]]] = "random"
    initial_parameters: Union[Literal["random"], List[List[float]]] = "random"


class GraphSection(_Strict):
    # "canonical" or a list of rounds, each a list of undirected [i, j] pairs (0-based)
    rounds: Union[Literal["canonical", "complete"], List[List[List[int]]]] = "canonical"
    period: Optional[int] = None
    offset: int = Field(0, ge=0)


class StepsSection(_Strict):
    kind: Literal["constant", "harmonic", "power"] = "constant"
    eta0: float = Field(0.1, gt=0)
    p: float = 0.75


class StopSection(_Strict):
    disagreement: float = Field(gt=0)
    grad_norm: float = Field(gt=0)


class SolverSection(_Strict):
    stationarity_tol: float = Field(1e-8, gt=0)
    max_iterations: int = Field(200, ge=1)


class EngineSection(_Strict):
    rounds: int = Field(30, ge=1)
    stop: Optional[StopSection] = None
    solver: SolverSection = SolverSection()
    workers: int = Field(1, ge=1)


class CheckSection(_Strict):
    rtol: float = Field(1e-4, gt=0)
    atol: float = Field(1e-6, gt=0)
    fd_step: float = Field(1e-5, gt=0)
    thetas: int = Field(1, ge=1)


class ExperimentConfig(_Strict):
    problem: Union[RendezvousSection, LqrSection] = Field(discriminator="type")
    agents: AgentsSection = AgentsSection()
    graph: GraphSection = GraphSection()
    weights: Literal["metropolis"] = "metropolis"
    steps: StepsSection = StepsSection()
    engine: EngineSection = EngineSection()
    check: CheckSection = CheckSection()

    @field_validator("steps")
    @classmethod
    def _steps_ok(cls, v):
        StepSchedule(v.kind, v.eta0, v.p)  # raises on a bad power exponent
        return v

    @model_validator(mode="after")
    def _graph_matches(self):
        g = self.graph
        if isinstance(g.rounds, list):
            if not g.rounds:
                raise ValueError("graph.rounds must list at least one round")
            if g.period is not None and g.period != len(g.rounds):
                raise ValueError(f"graph.period={g.period} but {len(g.rounds)} rounds listed")
            for k, rnd in enumerate(g.rounds):
                for e in rnd:
                    if len(e) != 2 or not all(0 <= v < self.agents.count for v in e):
                        raise ValueError(f"graph round {k}: bad edge {e}")
        if self.problem.type == "rendezvous" and self.agents.count < 2:
            raise ValueError("rendezvous needs at least 2 agents")
        return self

    # -- builders ---------------------------------------------------------

    def schedule(self) -> GraphSchedule:
        N = self.agents.count
        if self.graph.rounds == "canonical":
            s = periodic_rendezvous_schedule(N)
            return GraphSchedule(s.graphs, self.graph.offset)
        if self.graph.rounds == "complete":
            return GraphSchedule((Digraph.complete(N),), self.graph.offset)
        return GraphSchedule(tuple(Digraph.undirected(N, rnd) for rnd in self.graph.rounds),
                             self.graph.offset)

    def step_schedule(self) -> StepSchedule:
        return StepSchedule(self.steps.kind, self.steps.eta0, self.steps.p)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(stationarity_tol=self.engine.solver.stationarity_tol,
                             max_iterations=self.engine.solver.max_iterations)

    def stop_criteria(self) -> StopCriteria | None:
        s = self.engine.stop
        return None if s is None else StopCriteria(s.disagreement, s.grad_norm)

    def rendezvous_config(self) -> RendezvousConfig:
        pr, ag = self.problem, self.agents

        def arr(v):
            return None if v == "random" else np.asarray(v, dtype=float)
        try:
            return RendezvousConfig(
                N=ag.count, T=pr.T, dt=pr.dt, x0=arr(ag.initial_states),
                theta0=arr(ag.initial_parameters), w_track=pr.weights.track,
                w_ctrl=pr.weights.ctrl, w_term=pr.weights.term, w_loss=pr.weights.loss,
                seed=ag.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build_agents(self) -> list[Agent]:
        pr = self.problem
        if pr.type == "rendezvous":
            agents = rendezvous_agents(self.rendezvous_config())
        else:
            agents = convex_lqr_agents(self.agents.count, Dims(pr.n, pr.m, pr.r, pr.T),
                                       seed=self.agents.seed, spread=pr.spread, rho=pr.rho)
            if pr.coupling != "target":
                for i, a in enumerate(agents):
                    a.problem = lqr_test_problem(a.problem.dims, pr.coupling,
                                                 seed=self.agents.seed * 1000 + i)
            if self.agents.initial_parameters != "random":
                th = np.asarray(self.agents.initial_parameters, dtype=float)
                if th.shape != (len(agents), pr.r):
                    raise ConfigError(f"initial_parameters must have shape ({len(agents)}, {pr.r})")
                for a, t in zip(agents, th):
                    a.theta = t.copy()
        if pr.corrupt_derivatives:
            for a in agents:
                a.problem = corrupt_derivatives(a.problem)
        return agents


def load_config(path, seed: int | None = None, rounds: int | None = None) -> ExperimentConfig:
    """Read and validate a YAML config; CLI overrides are applied before validation."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if seed is not None:
        raw.setdefault("agents", {})["seed"] = seed
    if rounds is not None:
        raw.setdefault("engine", {})["rounds"] = rounds
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
