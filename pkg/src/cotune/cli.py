"""Command-line batch runner: ``cotune tune | check-grad | solve``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .engine import TuningAborted, chain_rule_gradient, tune
from .ocp import trajectory_pack
from .oracle import fd_loss_gradient, fd_trajectory_sensitivity, max_rel_error, sensitivity_agrees
from .output import write_charts, write_trace_csv, write_trajectory_csv
from .pdp import trajectory_gradient
from .solver import SolverError, solve_oc

log = logging.getLogger("cotune")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _say(args, msg):
    if not args.quiet:
        print(msg)


def cmd_tune(args) -> int:
    cfg = load_config(args.config, seed=args.seed, rounds=args.rounds)
    agents = cfg.build_agents()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def on_round(rec):
        if rec.round == 0:
            for i, a in enumerate(agents):
                write_trajectory_csv(a.last.trajectory, out / f"trajectory_first_agent{i}.csv")
        _say(args, f"round {rec.round:4d}  loss {rec.global_avg_loss:.6g}  "
                   f"rel {rec.relative_loss:.4f}  disagreement {rec.disagreement:.4e}")

    status = EXIT_OK
    try:
        trace = tune(agents, cfg.schedule(), cfg.step_schedule(), cfg.engine.rounds,
                     stop=cfg.stop_criteria(), solver_opts=cfg.solver_options(),
                     workers=cfg.engine.workers, callback=on_round)
    except TuningAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        trace = exc.trace
        status = EXIT_RUNTIME
    write_trace_csv(trace, out / "trace.csv")
    if trace.records:
        write_charts(trace, out)
        if status == EXIT_OK:
            for i, a in enumerate(agents):
                write_trajectory_csv(a.last.trajectory, out / f"trajectory_last_agent{i}.csv")
    _say(args, f"wrote {out / 'trace.csv'} ({len(trace)} rounds)")
    return status


def cmd_check_grad(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    agents = cfg.build_agents()
    chk = cfg.check
    opts = cfg.solver_options()
    rng = np.random.default_rng(cfg.agents.seed)
    ok = True
    worst_sens = worst_grad = 0.0
    for i, a in enumerate(agents):
        thetas = [a.theta] + [a.theta + 0.5 * rng.standard_normal(a.theta.size)
                              for _ in range(chk.thetas - 1)]
        for th in thetas:
            try:
                res, sens = trajectory_gradient(a.problem, th, opts=opts)
                fd = fd_trajectory_sensitivity(a.problem, th, h=chk.fd_step, opts=opts)
                xi = trajectory_pack(res.trajectory.states, res.trajectory.controls)
                g = chain_rule_gradient(a.loss, xi, th, sens)
                g_fd = fd_loss_gradient(a, h=chk.fd_step, theta=th, opts=opts)
            except (SolverError, np.linalg.LinAlgError) as exc:
                print(f"agent {i}: {exc}")
                ok = False
                continue
            e_sens = max_rel_error(sens.stacked(), fd.stacked(), floor=chk.atol)
            e_grad = max_rel_error(g, g_fd, floor=chk.atol)
            pass_sens = sensitivity_agrees(sens, fd, chk.rtol, chk.atol)
            pass_grad = e_grad <= chk.rtol
            ok &= pass_sens and pass_grad
            worst_sens, worst_grad = max(worst_sens, e_sens), max(worst_grad, e_grad)
            if not args.quiet:
                print(f"agent {i}: sensitivity max rel err {e_sens:.3e} "
                      f"[{'ok' if pass_sens else 'FAIL'}]  loss gradient max rel err {e_grad:.3e} "
                      f"[{'ok' if pass_grad else 'FAIL'}]  |dxi/dth|max {np.abs(sens.stacked()).max():.3e}")
    print(f"max sensitivity error {worst_sens:.3e}, max gradient error {worst_grad:.3e}: "
          f"{'PASS' if ok else 'FAIL'} (rtol {chk.rtol:g}, atol {chk.atol:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_solve(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    agents = cfg.build_agents()
    if not 0 <= args.agent < len(agents):
        raise ConfigError(f"agent index {args.agent} outside 0..{len(agents) - 1}")
    a = agents[args.agent]
    opts = cfg.solver_options()
    try:
        res = solve_oc(a.problem, a.theta, opts=opts)
        again = solve_oc(a.problem, a.theta, warm_start=res.trajectory.controls, opts=opts)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(res.trajectory, out / f"trajectory_agent{args.agent}.csv")
    print(f"J = {res.objective!r}")
    print(f"stationarity = {res.stationarity:.3e}")
    print(f"iterations = {res.iterations}")
    print(f"converged = {res.converged}")
    print(f"warm_restart_iterations = {again.iterations}")
    return EXIT_OK if res.converged else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cotune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override agents.seed")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("tune", help="run the cooperative tuning loop")
    common(p)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--rounds", type=int, default=None, help="override engine.rounds")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("check-grad", help="compare analytic sensitivities with finite differences")
    common(p)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("solve", help="solve one agent's optimal-control problem")
    common(p)
    p.add_argument("--agent", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_solve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
