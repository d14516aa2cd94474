"""Hand-written SVG figures.

Every figure here is a function of logged data only: trajectory CSVs, the
plain-text obstacle map, and point clouds. Coordinates are printed with a
fixed number of decimals, so the same data always yields the same bytes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sim import CSV_HEADER

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")
FLOAT_COLUMNS = CSV_HEADER.split(",")[:-1]


# --- data --------------------------------------------------------------------

@dataclass
class LogData:
    columns: dict[str, np.ndarray]
    mode: list[str]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return len(self.mode)


def parse_log_csv(text: str) -> LogData:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or ",".join(header) != CSV_HEADER:
        raise ValueError("not a trajectory log: unexpected CSV header")
    rows = list(reader)
    cols = {name: np.array([float(r[k]) for r in rows], dtype=float) for k, name in enumerate(FLOAT_COLUMNS)}
    return LogData(cols, [r[-1] for r in rows])


def read_log_csv(path) -> LogData:
    return parse_log_csv(Path(path).read_text(encoding="utf-8"))


def read_xy(path) -> np.ndarray:
    """Points from a whitespace-separated text file (first two columns)."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if len(parts) >= 2:
            rows.append((float(parts[0]), float(parts[1])))
    return np.array(rows, dtype=float).reshape(-1, 2)


# --- drawing -----------------------------------------------------------------

def _f(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not hi > lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    k = 0
    while first + k * step <= hi + 1e-9 * step:
        ticks.append(round(first + k * step, 10))
        k += 1
    return ticks


def _tick_label(v: float) -> str:
    s = f"{v:.3g}"
    return "0" if s in ("-0", "0") else s


@dataclass
class Panel:
    """One set of axes placed at (x, y) with size (w, h) in SVG units."""

    x: float
    y: float
    w: float
    h: float
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    equal: bool = False
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None
    _data: list[np.ndarray] = field(default_factory=list)
    legend: list[tuple[str, str]] = field(default_factory=list)

    def include(self, xs, ys) -> None:
        pts = np.column_stack([np.asarray(xs, float), np.asarray(ys, float)]).reshape(-1, 2)
        pts = pts[np.all(np.isfinite(pts), axis=1)]
        if pts.size:
            self._data.append(pts)

    def _limits(self):
        if self._data:
            pts = np.vstack(self._data)
            x0, y0 = pts.min(axis=0)
            x1, y1 = pts.max(axis=0)
        else:
            x0 = y0 = 0.0
            x1 = y1 = 1.0
        if self.xlim:
            x0, x1 = self.xlim
        if self.ylim:
            y0, y1 = self.ylim
        if x1 - x0 < 1e-9:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 - y0 < 1e-9:
            y0, y1 = y0 - 0.5, y1 + 0.5
        px, py = 0.05 * (x1 - x0), 0.05 * (y1 - y0)
        x0, x1, y0, y1 = x0 - px, x1 + px, y0 - py, y1 + py
        if self.equal:
            sx, sy = self.w / (x1 - x0), self.h / (y1 - y0)
            s = min(sx, sy)
            cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
            x0, x1 = cx - self.w / s / 2, cx + self.w / s / 2
            y0, y1 = cy - self.h / s / 2, cy + self.h / s / 2
        return x0, x1, y0, y1

    def render(self, series, index: int = 0) -> str:
        x0, x1, y0, y1 = self._limits()

        def tx(v):
            return self.x + (v - x0) / (x1 - x0) * self.w

        def ty(v):
            return self.y + self.h - (v - y0) / (y1 - y0) * self.h

        out = [f'<rect x="{_f(self.x)}" y="{_f(self.y)}" width="{_f(self.w)}" height="{_f(self.h)}" '
               'fill="white" stroke="#444" stroke-width="1"/>']
        for t in _nice_ticks(x0, x1):
            X = tx(t)
            out.append(f'<line x1="{_f(X)}" y1="{_f(self.y)}" x2="{_f(X)}" y2="{_f(self.y + self.h)}" stroke="#eee"/>')
            out.append(f'<text x="{_f(X)}" y="{_f(self.y + self.h + 14)}" font-size="10" '
                       f'text-anchor="middle">{_tick_label(t)}</text>')
        for t in _nice_ticks(y0, y1):
            Y = ty(t)
            out.append(f'<line x1="{_f(self.x)}" y1="{_f(Y)}" x2="{_f(self.x + self.w)}" y2="{_f(Y)}" stroke="#eee"/>')
            out.append(f'<text x="{_f(self.x - 4)}" y="{_f(Y + 3)}" font-size="10" '
                       f'text-anchor="end">{_tick_label(t)}</text>')
        if self.title:
            out.append(f'<text x="{_f(self.x + self.w / 2)}" y="{_f(self.y - 8)}" font-size="13" '
                       f'text-anchor="middle">{_esc(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{_f(self.x + self.w / 2)}" y="{_f(self.y + self.h + 30)}" font-size="11" '
                       f'text-anchor="middle">{_esc(self.xlabel)}</text>')
        if self.ylabel:
            cx, cy = self.x - 38, self.y + self.h / 2
            out.append(f'<text x="{_f(cx)}" y="{_f(cy)}" font-size="11" text-anchor="middle" '
                       f'transform="rotate(-90 {_f(cx)} {_f(cy)})">{_esc(self.ylabel)}</text>')
        clip = f"clip{index}"
        out.append(f'<clipPath id="{clip}"><rect x="{_f(self.x)}" y="{_f(self.y)}" '
                   f'width="{_f(self.w)}" height="{_f(self.h)}"/></clipPath>')
        out.append(f'<g clip-path="url(#{clip})">')
        for kind, xs, ys, style in series:
            if kind == "line":
                pts = " ".join(f"{_f(tx(a))},{_f(ty(b))}" for a, b in zip(xs, ys)
                               if math.isfinite(a) and math.isfinite(b))
                if pts:
                    out.append(f'<polyline points="{pts}" fill="none" {style}/>')
            elif kind == "dots":
                for a, b in zip(xs, ys):
                    out.append(f'<circle cx="{_f(tx(a))}" cy="{_f(ty(b))}" r="1.2" {style}/>')
            elif kind == "rect":
                (ax, ay), (bx, by) = xs, ys
                out.append(f'<rect x="{_f(tx(ax))}" y="{_f(ty(by))}" width="{_f(tx(bx) - tx(ax))}" '
                           f'height="{_f(ty(ay) - ty(by))}" {style}/>')
            elif kind == "hline":
                out.append(f'<line x1="{_f(self.x)}" y1="{_f(ty(ys))}" x2="{_f(self.x + self.w)}" '
                           f'y2="{_f(ty(ys))}" {style}/>')
        out.append("</g>")
        for k, (label, color) in enumerate(self.legend):
            ly = self.y + 14 + 14 * k
            lx = self.x + self.w - 110
            out.append(f'<line x1="{_f(lx)}" y1="{_f(ly - 4)}" x2="{_f(lx + 18)}" y2="{_f(ly - 4)}" '
                       f'stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{_f(lx + 22)}" y="{_f(ly)}" font-size="10">{_esc(label)}</text>')
        return "\n".join(out)


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class Figure:
    def __init__(self, width: float, height: float, title: str = ""):
        self.width = width
        self.height = height
        self.title = title
        self.panels: list[tuple[Panel, list]] = []

    def panel(self, panel: Panel) -> list:
        series: list = []
        self.panels.append((panel, series))
        return series

    def to_svg(self) -> str:
        parts = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.width)}" height="{_f(self.height)}" '
            f'viewBox="0 0 {_f(self.width)} {_f(self.height)}" font-family="sans-serif">',
            f'<rect width="{_f(self.width)}" height="{_f(self.height)}" fill="white"/>',
        ]
        if self.title:
            parts.append(f'<text x="{_f(self.width / 2)}" y="18" font-size="15" text-anchor="middle">'
                         f'{_esc(self.title)}</text>')
        for k, (panel, series) in enumerate(self.panels):
            parts.append(panel.render(series, k))
        parts.append("</svg>")
        return "\n".join(parts) + "\n"


def _line(color: str, width: float = 1.5, dash: str | None = None) -> str:
    s = f'stroke="{color}" stroke-width="{width}"'
    return s + (f' stroke-dasharray="{dash}"' if dash else "")


# --- figures -----------------------------------------------------------------

def trajectory_svg(log: LogData, map_points: np.ndarray | None = None, title: str = "Trajectory") -> str:
    """True and estimated paths over the obstacle map; AVOID stretches of the
    estimated path are drawn in a second color."""
    fig = Figure(560, 560, title)
    p = Panel(70, 40, 460, 460, xlabel="x [m]", ylabel="y [m]", equal=True)
    s = fig.panel(p)
    if map_points is not None and len(map_points):
        p.include(map_points[:, 0], map_points[:, 1])
        s.append(("dots", map_points[:, 0], map_points[:, 1], 'fill="#555"'))
    p.include(log["x_true"], log["y_true"])
    p.include(log["x_est"], log["y_est"])
    s.append(("line", log["x_true"], log["y_true"], _line(COLORS[0], 2.0)))
    s.append(("line", log["x_est"], log["y_est"], _line(COLORS[2], 1.2, "4 3")))
    avoid = np.array([m == "AVOID" for m in log.mode])
    if avoid.any():
        xs = np.where(avoid, log["x_est"], np.nan)
        ys = np.where(avoid, log["y_est"], np.nan)
        # break the polyline at GOAL_SEEK samples by drawing each run separately
        start = None
        for k in range(len(avoid) + 1):
            on = k < len(avoid) and avoid[k]
            if on and start is None:
                start = k
            elif not on and start is not None:
                s.append(("line", xs[start:k], ys[start:k], _line(COLORS[1], 2.5)))
                start = None
    p.legend = [("true", COLORS[0]), ("estimated", COLORS[2])] + ([("AVOID", COLORS[1])] if avoid.any() else [])
    return fig.to_svg()


def velocity_svg(log: LogData, title: str = "Velocity commands") -> str:
    fig = Figure(620, 480, title)
    top = Panel(80, 40, 510, 170, ylabel="v [m/s]")
    bot = Panel(80, 260, 510, 170, xlabel="t [s]", ylabel="omega [rad/s]")
    for panel, name in ((top, "v"), (bot, "omega")):
        s = fig.panel(panel)
        panel.include(log["t"], log[name])
        panel.include(log["t"][:1], [0.0])
        s.append(("hline", None, 0.0, _line("#999", 1.0)))
        s.append(("line", log["t"], log[name], _line(COLORS[0])))
    return fig.to_svg()


def lyapunov_svg(log: LogData, title: str = "Lyapunov function") -> str:
    fig = Figure(620, 320, title)
    p = Panel(80, 40, 510, 220, xlabel="t [s]", ylabel="V")
    s = fig.panel(p)
    p.include(log["t"], log["V"])
    p.include(log["t"][:1], [0.0])
    s.append(("line", log["t"], log["V"], _line(COLORS[0])))
    return fig.to_svg()


def map_svg(cloud: np.ndarray, band: tuple[float, float], map_points: np.ndarray,
            title: str = "3D scan to 2D map") -> str:
    """Three panels: side view of the cloud with the band marked, top view of
    the points inside the band, and the reduced map."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    fig = Figure(1180, 420, title)
    a = Panel(70, 50, 320, 300, title="(a) cloud, side view", xlabel="range [m]", ylabel="z [m]")
    b = Panel(460, 50, 300, 300, title="(b) in-band points", xlabel="x [m]", ylabel="y [m]", equal=True)
    c = Panel(840, 50, 300, 300, title="(c) 2D map", xlabel="x [m]", ylabel="y [m]", equal=True)
    sa, sb, sc = fig.panel(a), fig.panel(b), fig.panel(c)
    lo, hi = band
    rng = np.hypot(cloud[:, 0], cloud[:, 1]) if len(cloud) else np.zeros(0)
    inside = (cloud[:, 2] > lo) & (cloud[:, 2] < hi) if len(cloud) else np.zeros(0, bool)
    a.include(rng, cloud[:, 2])
    a.include([0.0], [lo])
    a.include([0.0], [hi])
    sa.append(("dots", rng[~inside], cloud[~inside, 2], 'fill="#bbb"'))
    sa.append(("dots", rng[inside], cloud[inside, 2], f'fill="{COLORS[1]}"'))
    sa.append(("hline", None, lo, _line(COLORS[1], 1.0, "5 3")))
    sa.append(("hline", None, hi, _line(COLORS[1], 1.0, "5 3")))
    for panel in (b, c):
        panel.include(cloud[:, 0], cloud[:, 1])
        panel.include([0.0], [0.0])
    sb.append(("dots", cloud[~inside, 0], cloud[~inside, 1], 'fill="#ddd"'))
    sb.append(("dots", cloud[inside, 0], cloud[inside, 1], f'fill="{COLORS[1]}"'))
    if len(map_points):
        sc.append(("dots", map_points[:, 0], map_points[:, 1], 'fill="#222"'))
    return fig.to_svg()


def compare_svg(logs: dict[str, LogData], title: str = "Estimated trajectories") -> str:
    """Overlay of the true path (from the first log) and each estimator's
    estimated path."""
    fig = Figure(560, 560, title)
    p = Panel(70, 40, 460, 460, xlabel="x [m]", ylabel="y [m]", equal=True)
    s = fig.panel(p)
    labels = list(logs)
    first = logs[labels[0]]
    p.include(first["x_true"], first["y_true"])
    s.append(("line", first["x_true"], first["y_true"], _line("#000", 2.0)))
    p.legend = [("true", "#000")]
    for k, label in enumerate(labels):
        log = logs[label]
        color = COLORS[(k + 1) % len(COLORS)]
        p.include(log["x_est"], log["y_est"])
        s.append(("line", log["x_est"], log["y_est"], _line(color, 1.5, "5 3")))
        p.legend.append((label, color))
    return fig.to_svg()
