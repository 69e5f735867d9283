"""Built-in problems: unicycle rendezvous, an LQR family, and random smooth test problems."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .consensus import Digraph, GraphSchedule
from .engine import Agent, Loss
from .ocp import Dims, OcProblem


# ---------------------------------------------------------------------------
# unicycle rendezvous

def unicycle_dynamics(x, u) -> np.ndarray:
    """Continuous-time unicycle: (v cos psi, v sin psi, omega)."""
    return np.array([u[0] * np.cos(x[2]), u[0] * np.sin(x[2]), u[1]])


def discretized_dynamics(x, u, dt: float) -> np.ndarray:
    return np.asarray(x, dtype=float) + dt * unicycle_dynamics(x, u)


@dataclass
class RendezvousConfig:
    N: int = 5
    T: int = 60
    dt: float = 0.1
    x0: np.ndarray | None = None        # (N, 3); random when None
    theta0: np.ndarray | None = None    # (N, 2); random when None
    w_track: float = 2.0
    w_ctrl: float = 1.0
    w_term: float = 5.0
    w_loss: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("rendezvous needs N >= 2")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for w in ("w_track", "w_ctrl", "w_term", "w_loss"):
            if not getattr(self, w) > 0:
                raise ValueError(f"{w} must be positive")
        rng = np.random.default_rng(self.seed)
        # draw both blocks unconditionally so overriding one leaves the other unchanged
        rand_x0 = np.column_stack([rng.uniform(-2, 2, (self.N, 2)),
                                   rng.uniform(-np.pi, np.pi, self.N)])
        rand_th = rng.uniform(-2, 2, (self.N, 2))
        self.x0 = rand_x0 if self.x0 is None else np.asarray(self.x0, dtype=float).reshape(self.N, 3)
        self.theta0 = rand_th if self.theta0 is None else \
            np.asarray(self.theta0, dtype=float).reshape(self.N, 2)


def _rendezvous_ocp(x0, T, dt, w_track, w_ctrl, w_term, name="rendezvous") -> OcProblem:
    P = np.array([[1.0, 0, 0], [0, 1.0, 0]])  # position projection
    I2 = np.eye(2)

    def f(x, u, th):
        return discretized_dynamics(x, u, dt)

    def f_x(x, u, th):
        J = np.eye(3)
        J[0, 2] = -dt * u[0] * np.sin(x[2])
        J[1, 2] = dt * u[0] * np.cos(x[2])
        return J

    def f_u(x, u, th):
        return dt * np.array([[np.cos(x[2]), 0.0], [np.sin(x[2]), 0.0], [0.0, 1.0]])

    def f_th(x, u, th):
        return np.zeros((3, 2))

    def f_xx(x, u, th, lam):
        out = np.zeros((3, 3))
        out[2, 2] = -dt * u[0] * (lam[0] * np.cos(x[2]) + lam[1] * np.sin(x[2]))
        return out

    def f_xu(x, u, th, lam):
        out = np.zeros((3, 2))
        out[2, 0] = dt * (-lam[0] * np.sin(x[2]) + lam[1] * np.cos(x[2]))
        return out

    def zeros(a, b):
        return lambda *args: np.zeros((a, b))

    def c(t, x, u, th):
        e = x[:2] - th
        return w_track * e @ e + w_ctrl * u @ u

    def c_x(t, x, u, th):
        return P.T @ (2 * w_track * (x[:2] - th))

    def c_u(t, x, u, th):
        return 2 * w_ctrl * u

    def c_th(t, x, u, th):
        return -2 * w_track * (x[:2] - th)

    def h(x, th):
        e = x[:2] - th
        return w_term * e @ e

    def h_x(x, th):
        return P.T @ (2 * w_term * (x[:2] - th))

    def h_th(x, th):
        return -2 * w_term * (x[:2] - th)

    return OcProblem(
        dims=Dims(n=3, m=2, r=2, T=T), x0=x0,
        f=f, f_x=f_x, f_u=f_u, f_th=f_th,
        c=c, c_x=c_x, c_u=c_u, c_th=c_th,
        h=h, h_x=h_x, h_th=h_th,
        f_xx=f_xx, f_xu=f_xu, f_uu=zeros(2, 2), f_xth=zeros(3, 2), f_uth=zeros(2, 2),
        c_xx=lambda t, x, u, th: 2 * w_track * P.T @ P,
        c_xu=zeros(3, 2),
        c_uu=lambda t, x, u, th: 2 * w_ctrl * I2,
        c_xth=lambda t, x, u, th: -2 * w_track * P.T,
        c_uth=zeros(2, 2),
        h_xx=lambda x, th: 2 * w_term * P.T @ P,
        h_xth=lambda x, th: -2 * w_term * P.T,
        name=name,
    )


def terminal_position_loss(dims: Dims, weight: float) -> Loss:
    """L = weight * ||p(x_T) - theta||^2, reading x_T out of the packed trajectory."""
    lo = dims.T * dims.n

    def value(xi, th):
        e = xi[lo:lo + 2] - th
        return weight * e @ e

    def grad_xi(xi, th):
        g = np.zeros(dims.a)
        g[lo:lo + 2] = 2 * weight * (xi[lo:lo + 2] - th)
        return g

    def grad_theta(xi, th):
        return -2 * weight * (xi[lo:lo + 2] - th)

    return Loss(value, grad_xi, grad_theta)


def rendezvous_problem(config: RendezvousConfig, i: int) -> tuple[OcProblem, Loss]:
    if not 0 <= i < config.N:
        raise IndexError(f"agent index {i} outside 0..{config.N - 1}")
    p = _rendezvous_ocp(config.x0[i], config.T, config.dt, config.w_track, config.w_ctrl,
                        config.w_term, name=f"rendezvous[{i}]")
    return p, terminal_position_loss(p.dims, config.w_loss)


def rendezvous_agents(config: RendezvousConfig) -> list[Agent]:
    agents = []
    for i in range(config.N):
        p, loss = rendezvous_problem(config, i)
        agents.append(Agent(p, loss, config.theta0[i]))
    return agents


def periodic_rendezvous_schedule(N: int = 5) -> GraphSchedule:
    """Three sparse undirected graphs, round-robin over ring edges; their union is the ring.

    A stand-in for a periodic time-varying topology: no single round is
    connected, every three consecutive rounds are.
    """
    ring = [(i, (i + 1) % N) for i in range(N)]
    groups = [[e for k, e in enumerate(ring) if k % 3 == g] for g in range(3)]
    return GraphSchedule(tuple(Digraph.undirected(N, grp) for grp in groups))


# ---------------------------------------------------------------------------
# LQR family: linear dynamics, quadratic costs, theta shifting the cost targets

@dataclass(frozen=True, eq=False)
class LqrData:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    S: np.ndarray    # running state target = S @ theta
    Sf: np.ndarray   # terminal state target = Sf @ theta
    E: np.ndarray    # dynamics offset E @ theta
    x0: np.ndarray
    T: int


def lqr_problem(data: LqrData, name: str = "lqr") -> OcProblem:
    A, B, Q, R, Qf, S, Sf, E = (data.A, data.B, data.Q, data.R, data.Qf, data.S, data.Sf, data.E)
    n, m = B.shape
    r = S.shape[1]

    def zeros(a, b):
        return lambda *args: np.zeros((a, b))

    return OcProblem(
        dims=Dims(n=n, m=m, r=r, T=data.T), x0=data.x0,
        f=lambda x, u, th: A @ x + B @ u + E @ th,
        f_x=lambda x, u, th: A,
        f_u=lambda x, u, th: B,
        f_th=lambda x, u, th: E,
        c=lambda t, x, u, th: 0.5 * (x - S @ th) @ Q @ (x - S @ th) + 0.5 * u @ R @ u,
        c_x=lambda t, x, u, th: Q @ (x - S @ th),
        c_u=lambda t, x, u, th: R @ u,
        c_th=lambda t, x, u, th: -S.T @ Q @ (x - S @ th),
        h=lambda x, th: 0.5 * (x - Sf @ th) @ Qf @ (x - Sf @ th),
        h_x=lambda x, th: Qf @ (x - Sf @ th),
        h_th=lambda x, th: -Sf.T @ Qf @ (x - Sf @ th),
        f_xx=zeros(n, n), f_xu=zeros(n, m), f_uu=zeros(m, m), f_xth=zeros(n, r), f_uth=zeros(m, r),
        c_xx=lambda t, x, u, th: Q,
        c_xu=zeros(n, m),
        c_uu=lambda t, x, u, th: R,
        c_xth=lambda t, x, u, th: -Q @ S,
        c_uth=zeros(m, r),
        h_xx=lambda x, th: Qf,
        h_xth=lambda x, th: -Qf @ Sf,
        name=name,
        meta={"lqr": data},
    )


def scalar_lqr_example(x0: float = 0.0, T: int = 1) -> OcProblem:
    """x' = x + u, running cost u^2/2, terminal cost (x_T - theta)^2/2."""
    one = np.ones((1, 1))
    return lqr_problem(LqrData(A=one, B=one, Q=np.zeros((1, 1)), R=one, Qf=one,
                               S=np.zeros((1, 1)), Sf=one, E=np.zeros((1, 1)),
                               x0=np.array([x0]), T=T), name="scalar")


def _spd(rng, k, floor):
    M = rng.standard_normal((k, k))
    return M @ M.T / k + floor * np.eye(k)


def lqr_test_problem(dims: Dims, coupling: str = "target", seed: int = 0) -> OcProblem:
    """Random LQR instance.  ``coupling``: 'target' (theta moves cost targets),
    'full' (targets plus a dynamics offset) or 'none' (theta-free)."""
    if coupling not in ("target", "full", "none"):
        raise ValueError(f"unknown coupling {coupling!r}")
    rng = np.random.default_rng(seed)
    n, m, r = dims.n, dims.m, dims.r
    A = np.eye(n) + 0.3 * rng.standard_normal((n, n)) / np.sqrt(n)
    B = rng.standard_normal((n, m))
    Q = _spd(rng, n, 0.5)
    R = _spd(rng, m, 0.5)
    Qf = _spd(rng, n, 1.0)
    S = rng.standard_normal((n, r))
    Sf = rng.standard_normal((n, r))
    E = 0.2 * rng.standard_normal((n, r))
    x0 = rng.standard_normal(n)
    if coupling == "none":
        S, Sf, E = np.zeros((n, r)), np.zeros((n, r)), np.zeros((n, r))
    elif coupling == "target":
        E = np.zeros((n, r))
    return lqr_problem(LqrData(A, B, Q, R, Qf, S, Sf, E, x0, dims.T), name=f"lqr-{coupling}")


def quadratic_terminal_loss(dims: Dims, C, target, rho: float, anchor) -> Loss:
    """L = 1/2 ||C x_T - target||^2 + rho/2 ||theta - anchor||^2 (convex through LQR agents)."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    target = np.asarray(target, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    lo = dims.T * dims.n

    def value(xi, th):
        e = C @ xi[lo:lo + dims.n] - target
        d = th - anchor
        return 0.5 * e @ e + 0.5 * rho * d @ d

    def grad_xi(xi, th):
        g = np.zeros(dims.a)
        g[lo:lo + dims.n] = C.T @ (C @ xi[lo:lo + dims.n] - target)
        return g

    def grad_theta(xi, th):
        return rho * (th - anchor)

    return Loss(value, grad_xi, grad_theta)


def convex_lqr_agents(N: int = 4, dims: Dims = Dims(2, 1, 2, 5), seed: int = 0,
                      spread: float = 0.5, rho: float = 1.0) -> list[Agent]:
    """Agents with LQR inner problems and quadratic losses, so each L_i(xi_i(theta)) is convex."""
    rng = np.random.default_rng(seed)
    agents = []
    for i in range(N):
        p = lqr_test_problem(dims, "target", seed=seed * 1000 + i)
        C = np.eye(dims.n)[: min(dims.n, dims.r)]
        loss = quadratic_terminal_loss(dims, C, spread * rng.standard_normal(C.shape[0]), rho,
                                       spread * rng.standard_normal(dims.r))
        agents.append(Agent(p, loss, rng.uniform(-2, 2, dims.r)))
    return agents


# ---------------------------------------------------------------------------
# random smooth nonlinear problems for oracle comparisons

def random_dims(rng) -> Dims:
    return Dims(n=int(rng.integers(1, 5)), m=int(rng.integers(1, 3)),
                r=int(rng.integers(1, 4)), T=int(rng.integers(1, 21)))


def random_smooth_problem(seed: int, dims: Dims | None = None) -> OcProblem:
    """Mildly nonlinear problem with theta in dynamics, running and terminal costs.

    x' = A x + B u + a sin(x) + E th + b tanh(C u + D th) + g (K th) * x
    c_t = w_t [ 1/2 |x - S th|_Q^2 + 1/2 |u - V th|_R^2 + e x' Gm u + k sum cos(x) ]
    h = 1/2 |x - Sf th|_Qf^2
    """
    rng = np.random.default_rng(seed)
    d = dims or random_dims(rng)
    n, m, r, T = d.n, d.m, d.r, d.T
    A = np.eye(n) * 0.9 + 0.2 * rng.standard_normal((n, n)) / np.sqrt(n)
    B = rng.standard_normal((n, m))
    E = 0.3 * rng.standard_normal((n, r))
    C = rng.standard_normal((n, m))
    D = rng.standard_normal((n, r))
    K = rng.standard_normal((n, r))
    Q = _spd(rng, n, 0.5)
    R = _spd(rng, m, 1.0)
    Qf = _spd(rng, n, 1.0)
    S = rng.standard_normal((n, r))
    V = 0.5 * rng.standard_normal((m, r))
    Sf = rng.standard_normal((n, r))
    Gm = rng.standard_normal((n, m))
    a, b, g, e, k = 0.1, 0.2, 0.05, 0.1, 0.05
    x0 = rng.standard_normal(n)

    def w(t):
        return 1.0 + 0.5 * t / T

    def z(u, th):
        return C @ u + D @ th

    def f(x, u, th):
        return A @ x + B @ u + a * np.sin(x) + E @ th + b * np.tanh(z(u, th)) + g * (K @ th) * x

    def f_x(x, u, th):
        return A + np.diag(a * np.cos(x) + g * (K @ th))

    def f_u(x, u, th):
        return B + b * (1 - np.tanh(z(u, th)) ** 2)[:, None] * C

    def f_th(x, u, th):
        return E + b * (1 - np.tanh(z(u, th)) ** 2)[:, None] * D + g * x[:, None] * K

    def tanh2(u, th, lam):
        tz = np.tanh(z(u, th))
        return b * lam * (-2 * tz * (1 - tz ** 2))

    def f_xx(x, u, th, lam):
        return np.diag(-a * lam * np.sin(x))

    def f_xu(x, u, th, lam):
        return np.zeros((n, m))

    def f_uu(x, u, th, lam):
        return C.T @ (tanh2(u, th, lam)[:, None] * C)

    def f_xth(x, u, th, lam):
        return g * lam[:, None] * K

    def f_uth(x, u, th, lam):
        return C.T @ (tanh2(u, th, lam)[:, None] * D)

    def c(t, x, u, th):
        ex, eu = x - S @ th, u - V @ th
        return w(t) * (0.5 * ex @ Q @ ex + 0.5 * eu @ R @ eu + e * x @ Gm @ u + k * np.sum(np.cos(x)))

    def c_x(t, x, u, th):
        return w(t) * (Q @ (x - S @ th) + e * Gm @ u - k * np.sin(x))

    def c_u(t, x, u, th):
        return w(t) * (R @ (u - V @ th) + e * Gm.T @ x)

    def c_th(t, x, u, th):
        return w(t) * (-S.T @ Q @ (x - S @ th) - V.T @ R @ (u - V @ th))

    def h(x, th):
        ef = x - Sf @ th
        return 0.5 * ef @ Qf @ ef

    return OcProblem(
        dims=d, x0=x0,
        f=f, f_x=f_x, f_u=f_u, f_th=f_th,
        c=c, c_x=c_x, c_u=c_u, c_th=c_th,
        h=h, h_x=lambda x, th: Qf @ (x - Sf @ th), h_th=lambda x, th: -Sf.T @ Qf @ (x - Sf @ th),
        f_xx=f_xx, f_xu=f_xu, f_uu=f_uu, f_xth=f_xth, f_uth=f_uth,
        c_xx=lambda t, x, u, th: w(t) * (Q - k * np.diag(np.cos(x))),
        c_xu=lambda t, x, u, th: w(t) * e * Gm,
        c_uu=lambda t, x, u, th: w(t) * R,
        c_xth=lambda t, x, u, th: -w(t) * Q @ S,
        c_uth=lambda t, x, u, th: -w(t) * R @ V,
        h_xx=lambda x, th: Qf,
        h_xth=lambda x, th: -Qf @ Sf,
        name=f"smooth-{seed}",
    )


def random_theta(p: OcProblem, seed: int) -> np.ndarray:
    return np.random.default_rng(seed + 7919).standard_normal(p.dims.r)


def corrupt_derivatives(p: OcProblem, factor: float = 2.0) -> OcProblem:
    """Scale the mixed state/parameter running-cost Hessian; used to show checks fail."""
    c_xth = p.c_xth
    return p.replace(c_xth=lambda t, x, u, th: factor * np.asarray(c_xth(t, x, u, th)),
                     name=p.name + "-corrupt")
