"""Parameterized finite-horizon optimal-control problems.

A problem is a bundle of plain callables.  Derivative naming follows the
usual iLQR convention: ``f_x`` is the Jacobian of the dynamics with respect
to the state, ``c_uu`` the control Hessian of the running cost, ``h_xth`` the
mixed state/parameter Hessian of the terminal cost, and so on.  Second
derivatives of the dynamics are only ever needed contracted against a costate
vector ``lam`` and are supplied in that form, e.g. ``f_xu(x, u, th, lam)``
returns ``sum_k lam[k] * d2 f_k / dx du`` with shape (n, m).

All of ``f``, ``c`` and ``h`` are assumed twice continuously differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class Dims:
    n: int  # state
    m: int  # control
    r: int  # parameter
    T: int  # horizon (steps)

    def __post_init__(self):
        for name in ("n", "m", "r", "T"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"Dims.{name} must be a positive integer, got {v!r}")

    @property
    def a(self) -> int:
        """Length of the stacked trajectory vector."""
        return (self.T + 1) * self.n + self.T * self.m


@dataclass(frozen=True, eq=False)
class OcProblem:
    dims: Dims
    x0: Array
    # dynamics x' = f(x, u, th)
    f: Callable
    f_x: Callable
    f_u: Callable
    f_th: Callable
    # running cost c(t, x, u, th)
    c: Callable
    c_x: Callable
    c_u: Callable
    c_th: Callable
    # terminal cost h(x, th)
    h: Callable
    h_x: Callable
    h_th: Callable
    # second derivatives; None means "not supplied"
    f_xx: Callable | None = None
    f_xu: Callable | None = None
    f_uu: Callable | None = None
    f_xth: Callable | None = None
    f_uth: Callable | None = None
    c_xx: Callable | None = None
    c_xu: Callable | None = None
    c_uu: Callable | None = None
    c_xth: Callable | None = None
    c_uth: Callable | None = None
    h_xx: Callable | None = None
    h_xth: Callable | None = None
    name: str = "problem"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        if x0.shape != (self.dims.n,):
            raise ValueError(f"x0 has length {x0.size}, expected n={self.dims.n}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

    @property
    def has_second_derivatives(self) -> bool:
        return all(getattr(self, k) is not None for k in SECOND_ORDER)

    def replace(self, **changes) -> "OcProblem":
        return replace(self, **changes)


SECOND_ORDER = ("f_xx", "f_xu", "f_uu", "f_xth", "f_uth",
                "c_xx", "c_xu", "c_uu", "c_xth", "c_uth", "h_xx", "h_xth")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Optimal states x_0..x_T (shape (T+1, n)) and controls u_0..u_{T-1} (shape (T, m))."""
    states: Array
    controls: Array

    def __post_init__(self):
        xs = np.array(self.states, dtype=float)
        us = np.array(self.controls, dtype=float)
        if xs.ndim != 2 or us.ndim != 2:
            raise ValueError("states and controls must be 2-d arrays")
        if xs.shape[0] != us.shape[0] + 1:
            raise ValueError(
                f"need len(states) == len(controls) + 1, got {xs.shape[0]} and {us.shape[0]}")
        xs.setflags(write=False)
        us.setflags(write=False)
        object.__setattr__(self, "states", xs)
        object.__setattr__(self, "controls", us)

    @property
    def T(self) -> int:
        return self.controls.shape[0]


@dataclass(frozen=True, eq=False)
class Costates:
    """Multipliers lam_1..lam_T, stored as an array of shape (T, n); row t-1 holds lam_t."""
    lambdas: Array

    def __getitem__(self, t: int) -> Array:
        if not 1 <= t <= self.lambdas.shape[0]:
            raise IndexError(f"costate index {t} outside 1..{self.lambdas.shape[0]}")
        return self.lambdas[t - 1]

    def __len__(self):
        return self.lambdas.shape[0]


def trajectory_pack(states, controls) -> Array:
    """Stack states then controls, each in time order, into one flat vector."""
    xs = np.asarray(states, dtype=float)
    us = np.asarray(controls, dtype=float)
    if xs.ndim != 2 or us.ndim != 2 or xs.shape[0] != us.shape[0] + 1:
        raise ValueError(f"inconsistent shapes {xs.shape} / {us.shape}")
    return np.concatenate([xs.reshape(-1), us.reshape(-1)])


def trajectory_unpack(flat, dims: Dims) -> Trajectory:
    flat = np.asarray(flat, dtype=float).reshape(-1)
    if flat.size != dims.a:
        raise ValueError(f"flat trajectory has length {flat.size}, expected {dims.a}")
    k = (dims.T + 1) * dims.n
    return Trajectory(flat[:k].reshape(dims.T + 1, dims.n),
                      flat[k:].reshape(dims.T, dims.m))


# ---------------------------------------------------------------------------
# finite differences

def fd_step(v) -> Array:
    """Central-difference step: cube root of machine epsilon, scaled by magnitude."""
    return np.cbrt(np.finfo(float).eps) * (1.0 + np.abs(np.asarray(v, dtype=float)))


def fd_jacobian(fun, v) -> Array:
    """Central-difference Jacobian of ``fun`` at ``v``; output shape fun(v).shape + (len(v),)."""
    v = np.asarray(v, dtype=float)
    steps = fd_step(v)
    cols = []
    for j in range(v.size):
        e = np.zeros_like(v)
        e[j] = steps[j]
        cols.append((np.asarray(fun(v + e), dtype=float) - np.asarray(fun(v - e), dtype=float))
                    / (2 * steps[j]))
    return np.stack(cols, axis=-1)


def with_fd_second_derivatives(p: OcProblem, overwrite: bool = False) -> OcProblem:
    """Fill in missing second derivatives by differencing the supplied first derivatives.

    Off the default path: analytic second derivatives are preferred because
    the sensitivity computation is only as exact as its Hessians.
    """
    def dyn_contracted(first, wrt):
        # d/d(wrt) of first(x,u,th)' lam  -> shape (dim of first's column space, dim wrt)
        def fn(x, u, th, lam):
            args = {"x": x, "u": u, "th": th}

            def g(v):
                a = dict(args, **{wrt: v})
                return np.asarray(first(a["x"], a["u"], a["th"])).T @ lam
            return fd_jacobian(g, args[wrt])
        return fn

    def cost_second(first, wrt):
        def fn(t, x, u, th):
            args = {"x": x, "u": u, "th": th}

            def g(v):
                a = dict(args, **{wrt: v})
                return first(t, a["x"], a["u"], a["th"])
            return fd_jacobian(g, args[wrt])
        return fn

    def term_second(first, wrt):
        def fn(x, th):
            if wrt == "x":
                return fd_jacobian(lambda v: first(v, th), x)
            return fd_jacobian(lambda v: first(x, v), th)
        return fn

    synth = {
        "f_xx": dyn_contracted(p.f_x, "x"),
        "f_xu": dyn_contracted(p.f_x, "u"),
        "f_uu": dyn_contracted(p.f_u, "u"),
        "f_xth": dyn_contracted(p.f_x, "th"),
        "f_uth": dyn_contracted(p.f_u, "th"),
        "c_xx": cost_second(p.c_x, "x"),
        "c_xu": cost_second(p.c_x, "u"),
        "c_uu": cost_second(p.c_u, "u"),
        "c_xth": cost_second(p.c_x, "th"),
        "c_uth": cost_second(p.c_u, "th"),
        "h_xx": term_second(p.h_x, "x"),
        "h_xth": term_second(p.h_x, "th"),
    }
    changes = {k: v for k, v in synth.items() if overwrite or getattr(p, k) is None}
    return p.replace(**changes)


# ---------------------------------------------------------------------------
# derivative validation

class DerivativeCheck(NamedTuple):
    name: str
    max_rel_error: float


@dataclass
class ValidationReport:
    tol: float
    checks: list[DerivativeCheck]

    @property
    def max_errors(self) -> dict[str, float]:
        return {c.name: c.max_rel_error for c in self.checks}

    @property
    def worst(self) -> DerivativeCheck:
        return max(self.checks, key=lambda c: c.max_rel_error)

    @property
    def passed(self) -> bool:
        return all(c.max_rel_error <= self.tol for c in self.checks)

    def __str__(self):
        lines = [f"{c.name:8s} {c.max_rel_error:.3e}" for c in self.checks]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})")
        return "\n".join(lines)


def _rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def _call_checked(name, fn, shape, *args):
    out = np.asarray(fn(*args), dtype=float)
    if out.shape != shape:
        # scalars may come back as shape (1,) or (1, 1)
        if shape == () and out.size == 1:
            return out.reshape(())
        raise ValueError(f"{name} returned shape {out.shape}, expected {shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} returned non-finite values")
    return out


def validate_problem(p: OcProblem, tol: float = 1e-5, seed: int = 0,
                     n_points: int = 5, scale: float = 1.0) -> ValidationReport:
    """Compare every supplied derivative with central differences at random points.

    First derivatives are checked against differences of the value functions,
    second derivatives against differences of the (analytic) first
    derivatives.  Raises ValueError naming the function on a shape mismatch.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, m, r, T = p.dims.n, p.dims.m, p.dims.r, p.dims.T
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def record(name, a, b):
        worst[name] = max(worst.get(name, 0.0), _rel_err(a, b))

    for _ in range(n_points):
        x = scale * rng.standard_normal(n)
        u = scale * rng.standard_normal(m)
        th = scale * rng.standard_normal(r)
        lam = rng.standard_normal(n)
        t = int(rng.integers(0, T))

        _call_checked("f", p.f, (n,), x, u, th)
        record("f_x", _call_checked("f_x", p.f_x, (n, n), x, u, th),
               fd_jacobian(lambda v: p.f(v, u, th), x))
        record("f_u", _call_checked("f_u", p.f_u, (n, m), x, u, th),
               fd_jacobian(lambda v: p.f(x, v, th), u))
        record("f_th", _call_checked("f_th", p.f_th, (n, r), x, u, th),
               fd_jacobian(lambda v: p.f(x, u, v), th))

        _call_checked("c", p.c, (), t, x, u, th)
        record("c_x", _call_checked("c_x", p.c_x, (n,), t, x, u, th),
               fd_jacobian(lambda v: p.c(t, v, u, th), x))
        record("c_u", _call_checked("c_u", p.c_u, (m,), t, x, u, th),
               fd_jacobian(lambda v: p.c(t, x, v, th), u))
        record("c_th", _call_checked("c_th", p.c_th, (r,), t, x, u, th),
               fd_jacobian(lambda v: p.c(t, x, u, v), th))

        _call_checked("h", p.h, (), x, th)
        record("h_x", _call_checked("h_x", p.h_x, (n,), x, th),
               fd_jacobian(lambda v: p.h(v, th), x))
        record("h_th", _call_checked("h_th", p.h_th, (r,), x, th),
               fd_jacobian(lambda v: p.h(x, v), th))

        second = [
            ("f_xx", (n, n), (x, u, th, lam), lambda v: p.f_x(v, u, th).T @ lam, x),
            ("f_xu", (n, m), (x, u, th, lam), lambda v: p.f_x(x, v, th).T @ lam, u),
            ("f_uu", (m, m), (x, u, th, lam), lambda v: p.f_u(x, v, th).T @ lam, u),
            ("f_xth", (n, r), (x, u, th, lam), lambda v: p.f_x(x, u, v).T @ lam, th),
            ("f_uth", (m, r), (x, u, th, lam), lambda v: p.f_u(x, u, v).T @ lam, th),
            ("c_xx", (n, n), (t, x, u, th), lambda v: p.c_x(t, v, u, th), x),
            ("c_xu", (n, m), (t, x, u, th), lambda v: p.c_x(t, x, v, th), u),
            ("c_uu", (m, m), (t, x, u, th), lambda v: p.c_u(t, x, v, th), u),
            ("c_xth", (n, r), (t, x, u, th), lambda v: p.c_x(t, x, u, v), th),
            ("c_uth", (m, r), (t, x, u, th), lambda v: p.c_u(t, x, u, v), th),
            ("h_xx", (n, n), (x, th), lambda v: p.h_x(v, th), x),
            ("h_xth", (n, r), (x, th), lambda v: p.h_x(x, v), th),
        ]
        for name, shape, args, first, at in second:
            fn = getattr(p, name)
            if fn is None:
                continue
            record(name, _call_checked(name, fn, shape, *args), fd_jacobian(first, at))

    return ValidationReport(tol=tol, checks=[DerivativeCheck(k, v) for k, v in worst.items()])
