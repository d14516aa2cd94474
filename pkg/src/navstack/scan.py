"""Tilting 2D laser: 3D scan synthesis and reduction to a 2D obstacle map.

A horizontal-plane scanner mounted on a pitching base produces one frame per
tilt step. Points whose height falls inside a band (by default the band
between the height of low obstacles, which the ultrasonic ring handles, and
the robot's own height) are merged into a single 2D obstacle map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .geometry import Point2, Point3, Pose

DEFAULT_BAND = (0.8, 1.2)


@dataclass(frozen=True)
class TiltMount:
    """Scanner height and tilt.

    ``tilt_range`` holds elevation angles of the sweep (negative points the
    scan plane at the floor). ``tilt_alpha`` is a downward tilt magnitude,
    used to find where the beam meets the floor; it defaults to the lowest
    sweep elevation.
    """

    height_h: float = 0.40
    tilt_range: tuple[float, float] = (math.radians(-5.0), math.radians(30.0))
    tilt_alpha: float | None = None

    def __post_init__(self):
        if not self.height_h > 0:
            raise ValueError(f"height_h must be positive, got {self.height_h!r}")
        lo, hi = self.tilt_range
        if not (-math.pi / 2 < lo <= hi < math.pi / 2):
            raise ValueError(f"invalid tilt_range {self.tilt_range!r}")
        if self.tilt_alpha is None:
            object.__setattr__(self, "tilt_alpha", -lo)


@dataclass(frozen=True)
class ScanConfig:
    max_range: float = 8.0
    fov: float = math.radians(100.0)
    angular_resolution: float = math.radians(1.0)
    n_frames: int = 81

    def __post_init__(self):
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if not self.angular_resolution > 0 or not self.fov > 0:
            raise ValueError("fov and angular_resolution must be positive")
        ratio = self.fov / self.angular_resolution
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"fov/resolution = {ratio} is not an integer beam count")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")

    @property
    def n_beams(self) -> int:
        return int(round(self.fov / self.angular_resolution))

    def beam_angles(self) -> np.ndarray:
        return -self.fov / 2.0 + np.arange(self.n_beams) * self.angular_resolution


@dataclass(frozen=True)
class Box:
    xmin: float
    ymin: float
    zmin: float
    xmax: float
    ymax: float
    zmax: float
    name: str = ""
    in_map: bool = True

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax and self.zmin < self.zmax):
            raise ValueError(f"degenerate box {self!r}")

    def row(self) -> list[float]:
        return [self.xmin, self.ymin, self.zmin, self.xmax, self.ymax, self.zmax]

    def footprint_distance(self, x: float, y: float) -> float:
        dx = max(self.xmin - x, 0.0, x - self.xmax)
        dy = max(self.ymin - y, 0.0, y - self.ymax)
        return math.hypot(dx, dy)


@dataclass(frozen=True)
class Cylinder:
    cx: float
    cy: float
    radius: float
    zmin: float
    zmax: float
    name: str = ""
    in_map: bool = True

    def __post_init__(self):
        if not (self.radius > 0 and self.zmin < self.zmax):
            raise ValueError(f"degenerate cylinder {self!r}")

    def row(self) -> list[float]:
        return [self.cx, self.cy, self.radius, self.zmin, self.zmax]

    def footprint_distance(self, x: float, y: float) -> float:
        return max(math.hypot(x - self.cx, y - self.cy) - self.radius, 0.0)


@dataclass(frozen=True)
class World:
    obstacles: tuple = ()

    def arrays(self, mapped_only: bool = False):
        """(boxes, cylinders) arrays in kernel row layout."""
        obs = [o for o in self.obstacles if o.in_map or not mapped_only]
        boxes = np.array([o.row() for o in obs if isinstance(o, Box)], dtype=float).reshape(-1, 6)
        cyls = np.array([o.row() for o in obs if isinstance(o, Cylinder)], dtype=float).reshape(-1, 5)
        return boxes, cyls

    def mapped(self) -> "World":
        return World(tuple(o for o in self.obstacles if o.in_map))

    def clearance(self, x: float, y: float, max_height: float) -> tuple[float, str]:
        """Distance from (x, y) to the nearest obstacle footprint that
        intersects heights [0, max_height], and that obstacle's name."""
        best, name = math.inf, ""
        for o in self.obstacles:
            if o.zmin >= max_height or o.zmax <= 0.0:
                continue
            d = o.footprint_distance(x, y)
            if d < best:
                best, name = d, o.name
        return best, name


@dataclass(frozen=True)
class ScanFrame:
    """One sweep at a fixed tilt. Points carry their own height because a
    tilted planar sweep does not sit at a single z."""

    points: tuple[Point3, ...]
    tilt: float | None = None

    @property
    def frame_height_z(self) -> float:
        """Median hit height, NaN for an empty frame."""
        if not self.points:
            return math.nan
        return float(np.median([p.z for p in self.points]))


@dataclass(frozen=True)
class OccupancyGrid:
    """Occupied cells on a regular grid. Cell ``(ix, iy)`` covers
    ``[ix*c, (ix+1)*c) x [iy*c, (iy+1)*c)``; ``occupied[iy - iy0, ix - ix0]``."""

    cell_size: float
    ix0: int
    iy0: int
    occupied: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupied.shape

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return cell_index(x, y, self.cell_size)

    def is_occupied(self, ix: int, iy: int) -> bool:
        r, c = iy - self.iy0, ix - self.ix0
        if 0 <= r < self.occupied.shape[0] and 0 <= c < self.occupied.shape[1]:
            return bool(self.occupied[r, c])
        return False

    def occupied_cells(self) -> set[tuple[int, int]]:
        rows, cols = np.nonzero(self.occupied)
        return {(int(c) + self.ix0, int(r) + self.iy0) for r, c in zip(rows, cols)}


@dataclass(frozen=True)
class ObstacleMap:
    points: tuple[Point2, ...] = ()
    raster: OccupancyGrid | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.raster is not None:
            for p in self.points:
                if not self.raster.is_occupied(*self.raster.cell_of(p.x, p.y)):
                    raise ValueError(f"map point {p} falls in a free raster cell")

    def as_array(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=float).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.points)


def ground_intersection_distance(mount: TiltMount) -> float:
    """Horizontal distance at which a beam tilted down by ``tilt_alpha``
    meets the floor: ``h / tan(alpha)``."""
    if not mount.tilt_alpha > 0:
        raise ValueError("beam tilted at or above horizontal never meets the floor")
    return mount.height_h / math.tan(mount.tilt_alpha)


def tilt_steps(mount: TiltMount, config: ScanConfig) -> np.ndarray:
    lo, hi = mount.tilt_range
    if config.n_frames == 1:
        return np.array([lo])
    return np.linspace(lo, hi, config.n_frames)


def beam_directions(tilt: float, beam_angles: np.ndarray, heading: float) -> np.ndarray:
    """Unit directions of the beams of a scan plane pitched by ``tilt``
    (elevation, positive up) and yawed to ``heading``."""
    cb, sb = np.cos(beam_angles), np.sin(beam_angles)
    ce, se = math.cos(tilt), math.sin(tilt)
    fx, fy, fz = cb * ce, sb, cb * se
    ch, sh = math.cos(heading), math.sin(heading)
    return np.column_stack([ch * fx - sh * fy, sh * fx + ch * fy, fz])


def simulate_tilt_scan(
    world: World,
    mount: TiltMount = TiltMount(),
    config: ScanConfig = ScanConfig(),
    sensor_pose: Pose = Pose(0.0, 0.0, 0.0),
) -> list[ScanFrame]:
    """Ray-cast one frame per tilt step against the world's primitives."""
    boxes, cyls = world.arrays()
    angles = config.beam_angles()
    n = angles.size
    origin = np.array([[sensor_pose.x, sensor_pose.y, mount.height_h]])
    origins = np.repeat(origin, n, axis=0)
    frames = []
    for tilt in tilt_steps(mount, config):
        dirs = beam_directions(float(tilt), angles, sensor_pose.theta)
        pts, ranges = kernels.cast_rays(origins, dirs, boxes, cyls, config.max_range)
        hit = np.isfinite(ranges)
        frames.append(ScanFrame(tuple(Point3(*p) for p in pts[hit].tolist()), float(tilt)))
    return frames


def slice_reduce(frames: Iterable[ScanFrame], band: Sequence[float] = DEFAULT_BAND) -> ObstacleMap:
    """Union of the (x, y) of every point with ``z_min < z < z_max``.

    Output points are deduplicated and sorted so the map does not depend on
    frame order.
    """
    z_min, z_max = band
    if not z_min < z_max:
        raise ValueError(f"empty band ({z_min}, {z_max})")
    selected = {(p.x, p.y) for f in frames for p in f.points if z_min < p.z < z_max}
    return ObstacleMap(tuple(Point2(x, y) for x, y in sorted(selected)))


def cell_index(x: float, y: float, cell_size: float) -> tuple[int, int]:
    return math.floor(x / cell_size), math.floor(y / cell_size)


def rasterize(obstacle_map: ObstacleMap, cell_size: float) -> OccupancyGrid:
    """Mark the cell containing each point (floor convention: a point on a
    cell boundary belongs to the cell above/right of it)."""
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    if not obstacle_map.points:
        return OccupancyGrid(cell_size, 0, 0, np.zeros((0, 0), dtype=bool))
    cells = [cell_index(p.x, p.y, cell_size) for p in obstacle_map.points]
    ixs = [c[0] for c in cells]
    iys = [c[1] for c in cells]
    ix0, iy0 = min(ixs), min(iys)
    grid = np.zeros((max(iys) - iy0 + 1, max(ixs) - ix0 + 1), dtype=bool)
    for ix, iy in cells:
        grid[iy - iy0, ix - ix0] = True
    return OccupancyGrid(cell_size, ix0, iy0, grid)


def with_raster(obstacle_map: ObstacleMap, cell_size: float) -> ObstacleMap:
    return ObstacleMap(obstacle_map.points, rasterize(obstacle_map, cell_size))


# --- text formats -----------------------------------------------------------

def write_point_cloud(path, frames: Sequence[ScanFrame]) -> None:
    """One ``x y z`` line per point, frames separated by a blank line. A
    ``# tilt <rad>`` comment heads each frame when the tilt is known, which
    also keeps empty frames representable."""
    blocks = []
    for f in frames:
        lines = []
        if f.tilt is not None:
            lines.append(f"# tilt {f.tilt!r}")
        lines.extend(f"{p.x!r} {p.y!r} {p.z!r}" for p in f.points)
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n".join(blocks) + ("\n" if blocks else ""), encoding="utf-8")


def read_point_cloud(path) -> list[ScanFrame]:
    frames: list[ScanFrame] = []
    points: list[Point3] = []
    tilt = None
    started = False

    def flush():
        nonlocal points, tilt, started
        if started:
            frames.append(ScanFrame(tuple(points), tilt))
        points, tilt, started = [], None, False

    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            flush()
            continue
        started = True
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "tilt":
                tilt = float(parts[1])
            continue
        fields = line.split()
        if len(fields) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'x y z', got {raw!r}")
        try:
            points.append(Point3(*(float(v) for v in fields)))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    flush()
    return frames


def write_obstacle_map(path, obstacle_map: ObstacleMap) -> None:
    text = "".join(f"{p.x!r} {p.y!r}\n" for p in obstacle_map.points)
    Path(path).write_text(text, encoding="utf-8")


def read_obstacle_map(path) -> ObstacleMap:
    pts = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'x y', got {raw!r}")
        pts.append(Point2(float(fields[0]), float(fields[1])))
    return ObstacleMap(tuple(pts))


def write_pgm(path, grid: OccupancyGrid) -> None:
    """Plain (P2) graymap; occupied cells black, top row is the largest y."""
    rows, cols = grid.occupied.shape
    lines = ["P2", f"# cell_size {grid.cell_size!r} origin_cell {grid.ix0} {grid.iy0}",
             f"{cols} {rows}", "255"]
    for r in range(rows - 1, -1, -1):
        lines.append(" ".join("0" if v else "255" for v in grid.occupied[r]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- synthetic scenes -------------------------------------------------------

def table_scene(
    center: tuple[float, float] = (2.0, 0.0),
    width: float = 1.2,
    depth: float = 0.8,
    height: float = 1.0,
    top_thickness: float = 0.04,
    leg_size: float = 0.06,
) -> World:
    """Table with its long edge facing the -x side; ``width`` runs along y."""
    cx, cy = center
    x0, x1 = cx - depth / 2, cx + depth / 2
    y0, y1 = cy - width / 2, cy + width / 2
    top = Box(x0, y0, height - top_thickness, x1, y1, height, name="tabletop")
    legs = []
    for lx in (x0, x1 - leg_size):
        for ly in (y0, y1 - leg_size):
            legs.append(Box(lx, ly, 0.0, lx + leg_size, ly + leg_size, height - top_thickness,
                            name=f"leg{len(legs)}"))
    return World((top, *legs))


def gate_scene(
    center: tuple[float, float] = (0.0, 3.0),
    span: float = 1.2,
    height: float = 1.0,
    bar_thickness: float = 0.15,
    post_size: float = 0.08,
    depth: float = 0.1,
    posts: tuple[str, ...] = ("left", "right"),
) -> World:
    """Gate crossing the +y direction: a crossbar whose underside is lower
    than the robot, carried by posts at either end. With a single post the
    gate is a boom barrier and the other end of the bar is free."""
    cx, cy = center
    x0, x1 = cx - span / 2, cx + span / 2
    y0, y1 = cy - depth / 2, cy + depth / 2
    unknown = set(posts) - {"left", "right"}
    if unknown:
        raise ValueError(f"unknown post position(s) {sorted(unknown)}")
    bar_x0 = x0 - post_size if "left" in posts else x0
    bar_x1 = x1 + post_size if "right" in posts else x1
    parts = [Box(bar_x0, y0, height - bar_thickness, bar_x1, y1, height, name="gate")]
    if "left" in posts:
        parts.append(Box(x0 - post_size, y0, 0.0, x0, y1, height - bar_thickness, name="gate"))
    if "right" in posts:
        parts.append(Box(x1, y0, 0.0, x1 + post_size, y1, height - bar_thickness, name="gate"))
    return World(tuple(parts))
