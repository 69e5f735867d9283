"""CSV traces and minimal SVG line charts."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .engine import TuningTrace
from .ocp import Trajectory


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_header(N: int, r: int) -> list[str]:
    cols = ["round", "global_avg_loss", "relative_loss", "disagreement"]
    for i in range(N):
        cols += [f"theta_{i}_{j + 1}" for j in range(r)]
        cols += [f"grad_norm_{i}", f"solver_iters_{i}", f"converged_{i}"]
    return cols


def write_trace_csv(trace: TuningTrace, path) -> None:
    if not trace.records:
        N = r = 0
    else:
        N, r = trace.records[0].thetas.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(N, r))
        for rec in trace.records:
            row = [rec.round, rec.global_avg_loss, rec.relative_loss, rec.disagreement]
            for i in range(N):
                row += list(rec.thetas[i])
                row += [rec.grad_norms[i], rec.solver_iters[i], bool(rec.converged[i])]
            w.writerow([_fmt(v) for v in row])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    T, n = traj.states.shape[0] - 1, traj.states.shape[1]
    m = traj.controls.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{j + 1}" for j in range(n)] + [f"u_{j + 1}" for j in range(m)])
        for t in range(T + 1):
            us = [_fmt(v) for v in traj.controls[t]] if t < T else [""] * m
            w.writerow([str(t)] + [_fmt(v) for v in traj.states[t]] + us)


def _nice_ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-12 * step:
        if v >= lo - 1e-12 * step:
            ticks.append(v)
        v += step
    return ticks


def svg_line_chart(xs, ys, title: str, xlabel: str, ylabel: str, log_y: bool = False,
                   width: int = 640, height: int = 400) -> str:
    """Single-series line chart with axes and ticks, as an SVG document string."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    ok = np.isfinite(ys) & ((ys > 0) if log_y else True)
    xs, ys = xs[ok], ys[ok]
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    ty = np.log10(ys) if log_y else ys
    x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
    y0, y1 = (ty.min(), ty.max()) if ty.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    if log_y:
        y0, y1 = math.floor(y0), math.ceil(y1)

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for xt in _nice_ticks(x0, x1):
        out.append(f'<line x1="{px(xt):.2f}" y1="{mt + ph}" x2="{px(xt):.2f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(xt):.2f}" y="{mt + ph + 18}" text-anchor="middle" font-size="11">{xt:g}</text>')
    yticks = range(int(y0), int(y1) + 1) if log_y else _nice_ticks(y0, y1)
    for yt in yticks:
        label = f"1e{int(yt)}" if log_y else f"{yt:g}"
        out.append(f'<line x1="{ml - 5}" y1="{py(yt):.2f}" x2="{ml}" y2="{py(yt):.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{py(yt) + 4:.2f}" text-anchor="end" font-size="11">{label}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{escape(ylabel)}</text>')
    if xs.size:
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ty))
        out.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.8" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_charts(trace: TuningTrace, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    k = trace.column("round")
    paths = [out_dir / "relative_loss.svg", out_dir / "disagreement.svg"]
    paths[0].write_text(svg_line_chart(k, trace.column("relative_loss"), "Relative loss",
                                       "iteration", "loss / initial loss"))
    paths[1].write_text(svg_line_chart(k, trace.column("disagreement"), "Parameter disagreement",
                                       "iteration", "sum_ij |theta_i - theta_j|^2", log_y=True))
    return paths
