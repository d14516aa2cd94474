"""Scenario files: JSON documents describing one closed-loop experiment.

Units are SI. Any angular quantity may be written either in radians under its
plain key (``theta``) or in degrees under the same key with a ``_deg`` suffix
(``theta_deg``), never both. :func:`scenario_to_dict` always writes radians so
a dumped scenario reloads bit for bit.

Validation runs in two passes: a JSON Schema check of the document structure
(:data:`SCHEMA`), then construction of the typed objects, whose own checks
catch cross-field constraints. Every failure is reported with the dotted
field path and the line it sits on.
"""
from __future__ import annotations

import bisect
import json
import math
import re
from dataclasses import fields, replace
from json.decoder import scanstring
from pathlib import Path

from jsonschema import Draft202012Validator

from .control import LyapunovGains, PotentialFieldParams, VelocityLimits
from .ekf import Channel, Landmark
from .geometry import Point2, Pose
from .odometry import RobotGeometry
from .scan import Box, Cylinder, ScanConfig, TiltMount, World, gate_scene, table_scene
from .sim import (
    EstimatorKind,
    EstimatorSpec,
    GoalTolerance,
    MapLaser,
    MappingSpec,
    NoiseSpec,
    RangeSensor,
    Scenario,
    SensorSuite,
    UltrasonicRing,
)


class ScenarioError(ValueError):
    """Invalid scenario document. ``path`` is the dotted field path."""

    def __init__(self, message: str, path: str = "", line: int | None = None, source: str = "<scenario>"):
        self.path = path
        self.line = line
        self.source = source
        self.detail = message
        where = source if line is None else f"{source}:{line}"
        super().__init__(f"{where}: {path}: {message}" if path else f"{where}: {message}")


# --- schema ------------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT_POS = {"type": "integer", "minimum": 1}
_XY = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_XYZ = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}


def _obj(props: dict, required=(), angles=()) -> dict:
    props = dict(props)
    for name in angles:
        props[name + "_deg"] = props[name]
    schema = {"type": "object", "properties": props, "additionalProperties": False}
    if required:
        schema["required"] = list(required)
    return schema


_POSE = _obj({"x": _NUM, "y": _NUM, "theta": _NUM}, required=("x", "y"), angles=("theta",))

_OBSTACLE = {
    "type": "object",
    "required": ["type"],
    "properties": {"type": {"enum": ["box", "cylinder", "gate", "table"]}},
    "allOf": [
        {
            "if": {"properties": {"type": {"const": "box"}}},
            "then": _obj(
                {"type": {}, "min": _XYZ, "max": _XYZ, "name": {"type": "string"}, "in_map": {"type": "boolean"}},
                required=("min", "max"),
            ),
        },
        {
            "if": {"properties": {"type": {"const": "cylinder"}}},
            "then": _obj(
                {"type": {}, "center": _XY, "radius": _POS, "z": _XY, "name": {"type": "string"},
                 "in_map": {"type": "boolean"}},
                required=("center", "radius", "z"),
            ),
        },
        {
            "if": {"properties": {"type": {"const": "gate"}}},
            "then": _obj(
                {"type": {}, "center": _XY, "span": _POS, "height": _POS, "bar_thickness": _POS,
                 "post_size": _POS, "depth": _POS,
                 "posts": {"type": "array", "items": {"enum": ["left", "right"]}, "uniqueItems": True}},
                required=("center",),
            ),
        },
        {
            "if": {"properties": {"type": {"const": "table"}}},
            "then": _obj(
                {"type": {}, "center": _XY, "width": _POS, "depth": _POS, "height": _POS,
                 "top_thickness": _POS, "leg_size": _POS},
                required=("center",),
            ),
        },
    ],
}

_RANGE_SENSOR = _obj({"max_range": _POS, "fov": _POS}, angles=("fov",))

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "navstack scenario",
    "type": "object",
    "additionalProperties": False,
    "required": ["start", "goals"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "start": _POSE,
        "goals": {"type": "array", "items": _POSE, "minItems": 1},
        "dt": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.1},
        "t_max": _POS,
        "seed": {"type": "integer", "minimum": 0},
        "world": _obj({"obstacles": {"type": "array", "items": _OBSTACLE}}),
        "landmarks": {
            "type": "array",
            "items": _obj({"id": {"type": "string"}, "x": _NUM, "y": _NUM}, required=("id", "x", "y")),
        },
        "robot": _obj({"wheel_radius": _POS, "wheelbase": _POS, "body_radius": _POS,
                       "body_height": _POS, "max_wheel_speed": _POS}),
        "gains": _obj({"k_v": _POS, "k_alpha": _POS, "h_weight": _POS}),
        "potential_field": _obj(
            {"k_att": _POS, "k_rep": _POS, "d0": _POS, "sector_half_angle": _POS, "d_min": _POS,
             "hysteresis": _NONNEG, "angular_hysteresis": _NONNEG, "exit_dwell": _NONNEG},
            angles=("sector_half_angle", "angular_hysteresis"),
        ),
        "limits": _obj({"v_max": _POS, "omega_max": _POS}),
        "noise": _obj(
            {"wheel_delta": _NONNEG, "compass_sigma": _NONNEG, "lrf_range_sigma": _NONNEG,
             "lrf_bearing_sigma": _NONNEG, "camera_bearing_sigma": _NONNEG, "ultrasonic_sigma": _NONNEG},
            angles=("compass_sigma", "lrf_bearing_sigma", "camera_bearing_sigma"),
        ),
        "sensors": _obj({
            "lrf": _RANGE_SENSOR,
            "camera": _RANGE_SENSOR,
            "ultrasonic": {"oneOf": [
                {"type": "null"},
                _obj({"bearings": {"type": "array", "items": _NUM, "minItems": 1}, "max_range": _POS,
                      "height": _NONNEG, "beam_width": _NONNEG, "rays_per_sensor": _INT_POS},
                     angles=("bearings", "beam_width")),
            ]},
            "map_laser": _obj({"max_range": _POS, "fov": _POS, "n_bins": _INT_POS}, angles=("fov",)),
        }),
        "estimator": _obj(
            {"kind": {"enum": [k.value for k in EstimatorKind]},
             "channels": {"type": "array", "uniqueItems": True, "items": {"enum": [
                 c.value for c in (Channel.COMPASS, Channel.LRF_RANGE, Channel.LRF_BEARING, Channel.CAMERA_BEARING)
             ]}},
             "initial_sigma_xy": _POS, "initial_sigma_theta": _POS, "joseph": {"type": "boolean"},
             "gate": {"oneOf": [{"type": "null"}, _POS]},
             "model_sigma": _NONNEG},
            angles=("initial_sigma_theta",),
        ),
        "mapping": {"oneOf": [
            {"type": "null"},
            _obj({
                "scan_pose": _POSE,
                "mount": _obj({"height_h": _POS, "tilt_range": _XY, "tilt_alpha": _NUM},
                              angles=("tilt_range", "tilt_alpha")),
                "config": _obj({"max_range": _POS, "fov": _POS, "angular_resolution": _POS, "n_frames": _INT_POS},
                               angles=("fov", "angular_resolution")),
                "band": _XY,
            }),
        ]},
        "tolerance": _obj({"rho": _POS, "alpha": _POS, "phi": _POS, "waypoint_radius": _POS},
                          angles=("alpha", "phi")),
    },
}


# --- line index --------------------------------------------------------------

_WS = re.compile(r"[ \t\n\r]*")
_NUMBER = re.compile(r"-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][-+]?\d+)?")


def line_index(text: str) -> dict[tuple, int]:
    """Map each JSON path (tuple of keys/indices) to the 1-based line where
    its key (or, for array items and the root, its value) starts. ``text``
    must already be valid JSON."""
    breaks = [m.start() for m in re.finditer("\n", text)]
    lines: dict[tuple, int] = {}

    def line(pos: int) -> int:
        return bisect.bisect_right(breaks, pos - 1) + 1

    def skip(i: int) -> int:
        return _WS.match(text, i).end()

    def value(i: int, path: tuple) -> int:
        i = skip(i)
        lines.setdefault(path, line(i))
        c = text[i]
        if c == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                i = skip(i)
                key_pos = i
                key, i = scanstring(text, i + 1)
                lines[path + (key,)] = line(key_pos)
                i = skip(i) + 1  # ':'
                i = skip(value(i, path + (key,)))
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        if c == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = skip(value(i, path + (k,)))
                k += 1
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        if c == '"':
            return scanstring(text, i + 1)[1]
        for literal in ("true", "false", "null"):
            if text.startswith(literal, i):
                return i + len(literal)
        return _NUMBER.match(text, i).end()

    value(0, ())
    return lines


def _dotted(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (("." if out else "") + str(p))
    return out


# --- document -> Scenario ----------------------------------------------------

class _Reader:
    def __init__(self, lines: dict[tuple, int], source: str):
        self.lines = lines
        self.source = source

    def error(self, path: tuple, message: str) -> ScenarioError:
        probe = tuple(path)
        while probe and probe not in self.lines:
            probe = probe[:-1]
        return ScenarioError(message, _dotted(path), self.lines.get(probe), self.source)

    def angle(self, obj: dict, key: str, path: tuple, default=None):
        """Read ``key`` (radians) or ``key_deg`` (degrees); lists are converted elementwise."""
        deg_key = key + "_deg"
        if key in obj and deg_key in obj:
            raise self.error(path + (deg_key,), f"give either '{key}' or '{deg_key}', not both")
        if deg_key in obj:
            v = obj[deg_key]
            return tuple(math.radians(a) for a in v) if isinstance(v, list) else math.radians(v)
        if key in obj:
            v = obj[key]
            return tuple(float(a) for a in v) if isinstance(v, list) else float(v)
        return default

    def build(self, cls, obj: dict | None, path: tuple, angles=(), base=None):
        """Construct dataclass ``cls`` from ``obj``; absent keys take the
        class defaults, or the values of ``base`` when given."""
        kwargs = {}
        for f in fields(cls):
            if f.name in angles:
                v = self.angle(obj or {}, f.name, path)
            else:
                v = (obj or {}).get(f.name)
                if isinstance(v, list):
                    v = tuple(v)
                elif isinstance(v, int) and not isinstance(v, bool) and f.type == "float":
                    v = float(v)
            if v is not None:
                kwargs[f.name] = v
        try:
            return replace(base, **kwargs) if base is not None else cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise self.error(path, str(exc)) from None


def _pose(r: _Reader, obj: dict, path: tuple) -> Pose:
    theta = r.angle(obj, "theta", path, 0.0)
    try:
        return Pose(float(obj["x"]), float(obj["y"]), theta)
    except ValueError as exc:
        raise r.error(path, str(exc)) from None


def _obstacles(r: _Reader, items: list, path: tuple) -> tuple:
    out = []
    for k, o in enumerate(items):
        p = path + (k,)
        kind = o["type"]
        try:
            if kind == "box":
                out.append(Box(*map(float, o["min"]), *map(float, o["max"]),
                               name=o.get("name", ""), in_map=o.get("in_map", True)))
            elif kind == "cylinder":
                cx, cy = map(float, o["center"])
                z0, z1 = map(float, o["z"])
                out.append(Cylinder(cx, cy, float(o["radius"]), z0, z1,
                                    name=o.get("name", ""), in_map=o.get("in_map", True)))
            else:
                kwargs = {k2: (tuple(v) if isinstance(v, list) else v) for k2, v in o.items() if k2 != "type"}
                kwargs["center"] = tuple(map(float, kwargs["center"]))
                scene = gate_scene if kind == "gate" else table_scene
                out.extend(scene(**kwargs).obstacles)
        except ValueError as exc:
            raise r.error(p, str(exc)) from None
    return tuple(out)


def scenario_from_dict(doc: dict, lines: dict | None = None, source: str = "<scenario>") -> Scenario:
    """Validate ``doc`` against :data:`SCHEMA` and build the :class:`Scenario`."""
    r = _Reader(lines or {}, source)
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: (len(e.absolute_path), e.path))
    if errors:
        err = _most_specific(errors)
        path = tuple(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                raise r.error(path + (extra[0],), "unknown field")
        raise r.error(path, err.message)

    start = _pose(r, doc["start"], ("start",))
    goals = tuple(_pose(r, g, ("goals", k)) for k, g in enumerate(doc["goals"]))
    world = World(_obstacles(r, doc.get("world", {}).get("obstacles", []), ("world", "obstacles")))
    landmarks = []
    seen = set()
    for k, lm in enumerate(doc.get("landmarks", [])):
        if lm["id"] in seen:
            raise r.error(("landmarks", k, "id"), f"duplicate landmark id {lm['id']!r}")
        seen.add(lm["id"])
        landmarks.append(Landmark(lm["id"], Point2(float(lm["x"]), float(lm["y"]))))

    sensors_doc = doc.get("sensors", {})
    sp = ("sensors",)
    default_sensors = SensorSuite()
    ultrasonic = default_sensors.ultrasonic
    if "ultrasonic" in sensors_doc:
        u = sensors_doc["ultrasonic"]
        ultrasonic = None if u is None else r.build(UltrasonicRing, u, sp + ("ultrasonic",),
                                                    angles=("bearings", "beam_width"))
    sensors = SensorSuite(
        lrf=r.build(RangeSensor, sensors_doc.get("lrf"), sp + ("lrf",), angles=("fov",), base=default_sensors.lrf),
        camera=r.build(RangeSensor, sensors_doc.get("camera"), sp + ("camera",), angles=("fov",),
                       base=default_sensors.camera),
        ultrasonic=ultrasonic,
        map_laser=r.build(MapLaser, sensors_doc.get("map_laser"), sp + ("map_laser",), angles=("fov",)),
    )

    est_doc = dict(doc.get("estimator", {}))
    if "kind" in est_doc:
        est_doc["kind"] = EstimatorKind(est_doc["kind"])
    if "channels" in est_doc:
        est_doc["channels"] = [Channel(c) for c in est_doc["channels"]]
    gate = est_doc.pop("gate", None)
    estimator = r.build(EstimatorSpec, est_doc, ("estimator",), angles=("initial_sigma_theta",))
    if gate is not None:
        estimator = replace(estimator, gate=float(gate))

    mapping = None
    if doc.get("mapping") is not None:
        m = doc["mapping"]
        mp = ("mapping",)
        mount = r.build(TiltMount, m.get("mount"), mp + ("mount",), angles=("tilt_range", "tilt_alpha"))
        try:
            mapping = MappingSpec(
                scan_pose=_pose(r, m["scan_pose"], mp + ("scan_pose",)) if "scan_pose" in m else MappingSpec().scan_pose,
                mount=mount,
                config=r.build(ScanConfig, m.get("config"), mp + ("config",), angles=("fov", "angular_resolution")),
                band=tuple(map(float, m.get("band", MappingSpec().band))),
            )
        except ValueError as exc:
            raise r.error(mp, str(exc)) from None
        if not mapping.band[0] < mapping.band[1]:
            raise r.error(mp + ("band",), "band must satisfy z_min < z_max")

    kwargs = dict(
        start=start,
        goals=goals,
        name=doc.get("name", "scenario"),
        world=world,
        landmarks=tuple(landmarks),
        geometry=r.build(RobotGeometry, doc.get("robot"), ("robot",)),
        gains=r.build(LyapunovGains, doc.get("gains"), ("gains",)),
        pf_params=r.build(PotentialFieldParams, doc.get("potential_field"), ("potential_field",),
                          angles=("sector_half_angle", "angular_hysteresis")),
        limits=r.build(VelocityLimits, doc.get("limits"), ("limits",)),
        noise=r.build(NoiseSpec, doc.get("noise"), ("noise",),
                      angles=("compass_sigma", "lrf_bearing_sigma", "camera_bearing_sigma")),
        sensors=sensors,
        estimator=estimator,
        mapping=mapping,
        tolerance=r.build(GoalTolerance, doc.get("tolerance"), ("tolerance",), angles=("alpha", "phi")),
    )
    for key in ("dt", "t_max"):
        if key in doc:
            kwargs[key] = float(doc[key])
    if "seed" in doc:
        kwargs["seed"] = int(doc["seed"])
    try:
        return Scenario(**kwargs)
    except ValueError as exc:
        raise r.error((), str(exc)) from None


def _most_specific(errors):
    """Prefer the deepest error; for oneOf/anyOf failures descend into the
    branch that got furthest."""
    err = max(errors, key=lambda e: len(e.absolute_path))
    while err.context:
        err = max(err.context, key=lambda e: (len(e.absolute_path), e.validator != "type"))
    return err


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg} (column {exc.colno})", "", exc.lineno, source) from None
    return scenario_from_dict(doc, line_index(text), source)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read file: {exc.strerror}", "", None, str(path)) from None
    return parse_scenario(text, str(path))


# --- Scenario -> document ----------------------------------------------------

def _pose_dict(p: Pose) -> dict:
    return {"x": p.x, "y": p.y, "theta": p.theta}


def _plain(obj, skip=()) -> dict:
    out = {}
    for f in fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _obstacle_dict(o) -> dict:
    if isinstance(o, Box):
        return {"type": "box", "min": [o.xmin, o.ymin, o.zmin], "max": [o.xmax, o.ymax, o.zmax],
                "name": o.name, "in_map": o.in_map}
    return {"type": "cylinder", "center": [o.cx, o.cy], "radius": o.radius, "z": [o.zmin, o.zmax],
            "name": o.name, "in_map": o.in_map}


def scenario_to_dict(s: Scenario) -> dict:
    """Fully resolved document (radians, composite obstacles expanded)."""
    est = _plain(s.estimator)
    est["kind"] = s.estimator.kind.value
    est["channels"] = [c.value for c in s.estimator.channels]
    doc = {
        "name": s.name,
        "start": _pose_dict(s.start),
        "goals": [_pose_dict(g) for g in s.goals],
        "dt": s.dt,
        "t_max": s.t_max,
        "seed": s.seed,
        "world": {"obstacles": [_obstacle_dict(o) for o in s.world.obstacles]},
        "landmarks": [{"id": lm.id, "x": lm.position.x, "y": lm.position.y} for lm in s.landmarks],
        "robot": _plain(s.geometry),
        "gains": _plain(s.gains),
        "potential_field": _plain(s.pf_params),
        "limits": _plain(s.limits),
        "noise": _plain(s.noise),
        "sensors": {
            "lrf": _plain(s.sensors.lrf),
            "camera": _plain(s.sensors.camera),
            "ultrasonic": None if s.sensors.ultrasonic is None else _plain(s.sensors.ultrasonic),
            "map_laser": _plain(s.sensors.map_laser),
        },
        "estimator": est,
        "mapping": None,
        "tolerance": _plain(s.tolerance),
    }
    if s.mapping is not None:
        doc["mapping"] = {
            "scan_pose": _pose_dict(s.mapping.scan_pose),
            "mount": _plain(s.mapping.mount),
            "config": _plain(s.mapping.config),
            "band": list(s.mapping.band),
        }
    return doc


def dumps_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def dump_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(s), encoding="utf-8")
