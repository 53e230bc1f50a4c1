"""Dependency-free SVG line plots of a :class:`~armformation.engine.SimLog`.

Every figure is a pure function of the log contents, so plots regenerated
from ``log.csv`` are byte-identical to the ones written after a run.
"""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .engine import SimLog

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22")
PANEL_W, PANEL_H = 640, 300
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 140, 30, 45


def _f(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    span = hi - lo
    raw = span / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def _limits(arrays, equal_pad=0.05):
    vals = np.concatenate([np.ravel(a) for a in arrays])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return -1.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-12:
        pad = max(abs(lo) * 0.1, 1e-3)
        return lo - pad, hi + pad
    pad = (hi - lo) * equal_pad
    return lo - pad, hi + pad


class Panel:
    """One set of axes inside a figure, offset by ``(x0, y0)``."""

    def __init__(self, x0, y0, title, xlabel, ylabel, xlim, ylim):
        self.x0, self.y0 = x0, y0
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.xlim, self.ylim = xlim, ylim
        self.w = PANEL_W - MARGIN_L - MARGIN_R
        self.h = PANEL_H - MARGIN_T - MARGIN_B
        self.items: list[str] = []
        self.legend: list[tuple[str, str]] = []

    def px(self, x):
        return self.x0 + MARGIN_L + (np.asarray(x) - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * self.w

    def py(self, y):
        return self.y0 + MARGIN_T + self.h - (np.asarray(y) - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * self.h

    def line(self, xs, ys, color, label=None, dash=None):
        ok = np.isfinite(xs) & np.isfinite(ys)
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(self.px(xs[ok]), self.py(ys[ok])))
        style = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2"{style} '
                          f'points="{pts}"/>')
        if label:
            self.legend.append((label, color))

    def marker(self, x, y, color, kind):
        cx, cy = float(self.px(x)), float(self.py(y))
        if kind == "x":
            d = 4
            self.items.append(f'<path stroke="{color}" stroke-width="1.5" d="M{_f(cx - d)},{_f(cy - d)} '
                              f'L{_f(cx + d)},{_f(cy + d)} M{_f(cx - d)},{_f(cy + d)} L{_f(cx + d)},{_f(cy - d)}"/>')
        else:
            self.items.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="4" fill="none" '
                              f'stroke="{color}" stroke-width="1.5"/>')

    def render(self) -> str:
        left, top = self.x0 + MARGIN_L, self.y0 + MARGIN_T
        out = [f'<rect x="{_f(left)}" y="{_f(top)}" width="{self.w}" height="{self.h}" '
               f'fill="white" stroke="black"/>']
        for t in _ticks(*self.xlim):
            x = float(self.px(t))
            out.append(f'<line x1="{_f(x)}" y1="{_f(top + self.h)}" x2="{_f(x)}" y2="{_f(top + self.h + 4)}" stroke="black"/>')
            out.append(f'<text x="{_f(x)}" y="{_f(top + self.h + 16)}" text-anchor="middle">{t:.4g}</text>')
        for t in _ticks(*self.ylim):
            y = float(self.py(t))
            out.append(f'<line x1="{_f(left - 4)}" y1="{_f(y)}" x2="{_f(left)}" y2="{_f(y)}" stroke="black"/>')
            out.append(f'<text x="{_f(left - 6)}" y="{_f(y + 4)}" text-anchor="end">{t:.4g}</text>')
        out.append(f'<text x="{_f(left + self.w / 2)}" y="{_f(top - 10)}" text-anchor="middle" '
                   f'font-weight="bold">{escape(self.title)}</text>')
        out.append(f'<text x="{_f(left + self.w / 2)}" y="{_f(top + self.h + 36)}" '
                   f'text-anchor="middle">{escape(self.xlabel)}</text>')
        ly = top + self.h / 2
        out.append(f'<text x="{_f(self.x0 + 16)}" y="{_f(ly)}" text-anchor="middle" '
                   f'transform="rotate(-90 {_f(self.x0 + 16)} {_f(ly)})">{escape(self.ylabel)}</text>')
        out.append(f'<g clip-path="url(#clip{int(self.x0)}_{int(self.y0)})">')
        out.extend(self.items)
        out.append("</g>")
        for k, (label, color) in enumerate(self.legend):
            y = top + 10 + 16 * k
            x = left + self.w + 10
            out.append(f'<line x1="{_f(x)}" y1="{_f(y)}" x2="{_f(x + 20)}" y2="{_f(y)}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{_f(x + 26)}" y="{_f(y + 4)}">{escape(label)}</text>')
        return "\n".join(out)

    def clip(self) -> str:
        return (f'<clipPath id="clip{int(self.x0)}_{int(self.y0)}"><rect x="{_f(self.x0 + MARGIN_L)}" '
                f'y="{_f(self.y0 + MARGIN_T)}" width="{self.w}" height="{self.h}"/></clipPath>')


def _figure(panels: list[Panel], rows: int, cols: int = 1) -> str:
    w, h = PANEL_W * cols, PANEL_H * rows
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">')
    defs = "<defs>" + "".join(p.clip() for p in panels) + "</defs>"
    body = "\n".join(p.render() for p in panels)
    return f'{head}\n<rect width="{w}" height="{h}" fill="white"/>\n{defs}\n{body}\n</svg>\n'


def _color(i):
    return PALETTE[i % len(PALETTE)]


def trajectories_svg(log: SimLog) -> str:
    """End-effector paths in the plane, start marked x, end marked o."""
    x, y = log.x[:, :, 0], log.x[:, :, 1]
    xlim, ylim = _limits([x]), _limits([y])
    # equal aspect: widen the narrower range
    w = PANEL_W - MARGIN_L - MARGIN_R
    h = PANEL_H - MARGIN_T - MARGIN_B
    sx, sy = (xlim[1] - xlim[0]) / w, (ylim[1] - ylim[0]) / h
    if sx > sy:
        c, half = sum(ylim) / 2, sx * h / 2
        ylim = (c - half, c + half)
    else:
        c, half = sum(xlim) / 2, sy * w / 2
        xlim = (c - half, c + half)
    p = Panel(0, 0, "End-effector trajectories", "x [m]", "y [m]", xlim, ylim)
    for i in range(log.n_agents):
        p.line(x[:, i], y[:, i], _color(i), f"agent {i + 1}")
        p.marker(x[0, i], y[0, i], _color(i), "x")
        p.marker(x[-1, i], y[-1, i], _color(i), "o")
    return _figure([p], 1)


def edge_errors_svg(log: SimLog) -> str:
    t = log.t
    xlim = (float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0)
    if log.e.ndim == 2:
        p = Panel(0, 0, "Edge errors", "t [s]", "e_k [m^2]", xlim, _limits([log.e]))
        for k in range(log.n_edges):
            p.line(t, log.e[:, k], _color(k), f"edge {k + 1}")
        return _figure([p], 1)
    panels = []
    for c, name in enumerate(("x", "y")):
        p = Panel(0, PANEL_H * c, f"Edge errors ({name} component)", "t [s]", f"e_k,{name} [m]",
                  xlim, _limits([log.e[:, :, c]]))
        for k in range(log.n_edges):
            p.line(t, log.e[:, k, c], _color(k), f"edge {k + 1}")
        panels.append(p)
    return _figure(panels, 2)


def _velocity(t, x):
    if len(t) < 2:
        return np.zeros_like(x)
    return np.gradient(x, t, axis=0)


def effector_states_svg(log: SimLog) -> str:
    """End-effector positions and (finite-difference) velocities."""
    t = log.t
    xlim = (float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0)
    v = _velocity(t, log.x)
    panels = []
    specs = [("End-effector x", "x [m]", log.x[:, :, 0]), ("End-effector y", "y [m]", log.x[:, :, 1]),
             ("End-effector velocity x", "vx [m/s]", v[:, :, 0]),
             ("End-effector velocity y", "vy [m/s]", v[:, :, 1])]
    for r, (title, ylabel, data) in enumerate(specs):
        p = Panel(0, PANEL_H * r, title, "t [s]", ylabel, xlim, _limits([data]))
        for i in range(log.n_agents):
            p.line(t, data[:, i], _color(i), f"agent {i + 1}")
        panels.append(p)
    return _figure(panels, len(panels))


def joint_states_svg(log: SimLog) -> str:
    t = log.t
    xlim = (float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0)
    panels = []
    for r, (title, ylabel, data) in enumerate([("Joint positions", "q [rad]", log.q),
                                               ("Joint velocities", "xi [rad/s]", log.xi)]):
        p = Panel(0, PANEL_H * r, title, "t [s]", ylabel, xlim, _limits([data]))
        for i in range(log.n_agents):
            for j in range(2):
                p.line(t, data[:, i, j], _color(i), f"agent {i + 1}, joint {j + 1}",
                       dash=None if j == 0 else "4 3")
        panels.append(p)
    return _figure(panels, 2)


FIGURES = {
    "trajectories.svg": trajectories_svg,
    "edge_errors.svg": edge_errors_svg,
    "effector_states.svg": effector_states_svg,
    "joint_states.svg": joint_states_svg,
}


def write_plots(log: SimLog, out_dir) -> list:
    out = []
    for name, fn in FIGURES.items():
        path = Path(out_dir) / name
        path.write_text(fn(log))
        out.append(path)
    return out
