"""Static intersection model.

Lane geometry with arc-length parameterization, vectorized lane
polylines, stop lines, the junction polygon, routes, and the cyclic
signal plan. Everything here is immutable after load and safe for
shared concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

RED = "Red"
YELLOW = "Yellow"
GREEN = "Green"
SIGNAL_STATES = (RED, YELLOW, GREEN)

APPROACHES = ("EB", "WB", "NB", "SB")
MOVEMENTS = ("L", "T", "R")


class MapError(ValueError):
    """Map file parse or invariant failure."""


# ---------------------------------------------------------------------------
# centerline geometry


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise MapError(f"expected a list of 2D points, got shape {arr.shape}")
    return arr


def _cumulative_lengths(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate(([0.0], np.cumsum(seg)))


@dataclass(frozen=True)
class LaneSpec:
    """One directed lane with its centerline and successor links."""

    id: str
    centerline: np.ndarray
    width: float
    approach: str
    movements: frozenset
    successors: dict  # movement letter -> successor lane id
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = _as_points(self.centerline)
        object.__setattr__(self, "centerline", pts)
        object.__setattr__(self, "movements", frozenset(self.movements))
        if len(pts) < 2:
            raise MapError(f"lane '{self.id}': centerline needs at least 2 points")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg == 0.0):
            raise MapError(f"lane '{self.id}': consecutive centerline points coincide")
        if self.width <= 0:
            raise MapError(f"lane '{self.id}': width must be positive")
        if self.approach not in APPROACHES:
            raise MapError(f"lane '{self.id}': unknown approach '{self.approach}'")
        for m in self.movements:
            if m not in MOVEMENTS:
                raise MapError(f"lane '{self.id}': unknown movement '{m}'")
        object.__setattr__(self, "_cum", _cumulative_lengths(pts))

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def point_at(self, s: float) -> np.ndarray:
        """Point on the centerline at arc length s (clamped to the lane)."""
        cum = self._cum
        s = min(max(s, 0.0), cum[-1])
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(cum) - 2)
        t = (s - cum[i]) / (cum[i + 1] - cum[i])
        return (1 - t) * self.centerline[i] + t * self.centerline[i + 1]

    def tangent_at(self, s: float) -> np.ndarray:
        """Unit direction of travel at arc length s."""
        cum = self._cum
        s = min(max(s, 0.0), cum[-1])
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(cum) - 2)
        d = self.centerline[i + 1] - self.centerline[i]
        return d / np.linalg.norm(d)

    def project(self, p) -> tuple[float, float]:
        """Project p onto the centerline: (arc length s, signed lateral d).

        d is positive to the left of the travel direction; endpoints clamp.
        """
        p = np.asarray(p, dtype=np.float64)
        pts = self.centerline
        a = pts[:-1]
        b = pts[1:]
        ab = b - a
        seg_len2 = (ab * ab).sum(axis=1)
        t = np.clip(((p - a) * ab).sum(axis=1) / seg_len2, 0.0, 1.0)
        proj = a + t[:, None] * ab
        dist2 = ((p - proj) ** 2).sum(axis=1)
        i = int(np.argmin(dist2))
        s = float(self._cum[i] + t[i] * np.sqrt(seg_len2[i]))
        tangent = ab[i] / np.sqrt(seg_len2[i])
        normal = np.array([-tangent[1], tangent[0]])
        d = float(np.dot(p - proj[i], normal))
        return s, d


@dataclass(frozen=True)
class PolyVec:
    """One direction vector of a lane polyline."""

    start: tuple
    length: float
    dir_sin: float
    dir_cos: float

    def __post_init__(self):
        if self.length <= 0:
            raise MapError("polyline vector length must be positive")
        norm = self.dir_sin**2 + self.dir_cos**2
        if abs(norm - 1.0) >= 1e-9:
            raise MapError(f"polyline vector direction not unit-norm: {norm}")

    @property
    def end(self) -> np.ndarray:
        return np.array(self.start) + self.length * np.array([self.dir_cos, self.dir_sin])


@dataclass(frozen=True)
class Polyline:
    """A fixed-size group of connected direction vectors tiling a lane."""

    id: str
    lane_id: str
    vecs: tuple
    order_index: int

    def __post_init__(self):
        object.__setattr__(self, "vecs", tuple(self.vecs))
        if not self.vecs:
            raise MapError(f"polyline '{self.id}' has no vectors")
        for k in range(len(self.vecs) - 1):
            gap = np.linalg.norm(self.vecs[k].end - np.array(self.vecs[k + 1].start))
            if gap >= 1e-6:
                raise MapError(f"polyline '{self.id}': vectors {k} and {k + 1} disconnected ({gap:.2e} m)")

    @property
    def span(self) -> float:
        return sum(v.length for v in self.vecs)


@dataclass(frozen=True)
class StopLine:
    lane_id: str
    p0: tuple
    p1: tuple

    def __post_init__(self):
        if np.allclose(self.p0, self.p1):
            raise MapError(f"stop line on '{self.lane_id}' is degenerate")

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.p0) + np.asarray(self.p1))


@dataclass(frozen=True)
class SignalPlan:
    """Cyclic fixed-time plan: ordered phases of (duration, lane -> state)."""

    phases: tuple  # ((duration_s, {lane_id: state}), ...)

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple((float(d), dict(s)) for d, s in self.phases))
        if not self.phases:
            raise MapError("signal plan has no phases")
        keys = set(self.phases[0][1])
        for d, states in self.phases:
            if d <= 0:
                raise MapError("signal phase durations must be positive")
            if set(states) != keys:
                raise MapError("every signalized lane must appear in every phase")
            for lane_id, st in states.items():
                if st not in SIGNAL_STATES:
                    raise MapError(f"lane '{lane_id}': unknown signal state '{st}'")

    @property
    def cycle_length(self) -> float:
        return float(sum(d for d, _ in self.phases))

    @property
    def lane_ids(self):
        return set(self.phases[0][1])


@dataclass(frozen=True)
class Route:
    id: str
    lane_ids: tuple
    movement: str

    def __post_init__(self):
        object.__setattr__(self, "lane_ids", tuple(self.lane_ids))
        if self.movement not in MOVEMENTS:
            raise MapError(f"route '{self.id}': unknown movement '{self.movement}'")
        if not self.lane_ids:
            raise MapError(f"route '{self.id}' has no lanes")


def signal_state_at(plan: SignalPlan, lane_id: str, t: float) -> str:
    """Signal state for a lane at time t; phase intervals are [start, end)."""
    if lane_id not in plan.phases[0][1]:
        raise MapError(f"lane '{lane_id}' is not in the signal plan")
    tc = t % plan.cycle_length
    start = 0.0
    for duration, states in plan.phases:
        if start <= tc < start + duration:
            return states[lane_id]
        start += duration
    return plan.phases[-1][1][lane_id]  # float-mod edge: tc == cycle_length


class MapSpec:
    """The full static scene; immutable after construction."""

    def __init__(self, lanes, stop_lines, intersection_polygon, routes, signal):
        self.lanes: dict[str, LaneSpec] = {lane.id: lane for lane in lanes}
        if len(self.lanes) != len(lanes):
            raise MapError("duplicate lane ids")
        self.stop_lines: tuple[StopLine, ...] = tuple(stop_lines)
        self.intersection_polygon = _as_points(intersection_polygon)
        self.routes: dict[str, Route] = {r.id: r for r in routes}
        if len(self.routes) != len(routes):
            raise MapError("duplicate route ids")
        self.signal: SignalPlan = signal
        self._stop_line_by_lane = {}
        self._polyline_cache: dict[str, tuple] = {}
        self._validate()
        self._route_offsets = {
            rid: np.concatenate(([0.0], np.cumsum([self.lanes[lid].length for lid in r.lane_ids])))
            for rid, r in self.routes.items()
        }

    def _validate(self):
        for lane in self.lanes.values():
            for m, succ in lane.successors.items():
                if succ not in self.lanes:
                    raise MapError(f"lane '{lane.id}': successor '{succ}' does not exist")
                if m not in lane.movements:
                    raise MapError(f"lane '{lane.id}': successor keyed by movement '{m}' it does not permit")
        if len(self.intersection_polygon) < 3:
            raise MapError("intersection polygon needs at least 3 vertices")
        if not _polygon_is_simple(self.intersection_polygon):
            raise MapError("intersection polygon is self-intersecting")
        for sl in self.stop_lines:
            if sl.lane_id not in self.lanes:
                raise MapError(f"stop line references unknown lane '{sl.lane_id}'")
            lane = self.lanes[sl.lane_id]
            end = lane.centerline[-1]
            mid = sl.midpoint
            if np.linalg.norm(mid - end) > lane.width:
                raise MapError(f"stop line on '{sl.lane_id}' is not at the lane end")
            if sl.lane_id in self._stop_line_by_lane:
                raise MapError(f"lane '{sl.lane_id}' has more than one stop line")
            self._stop_line_by_lane[sl.lane_id] = sl
        for lane_id in self.signal.lane_ids:
            if lane_id not in self.lanes:
                raise MapError(f"signal plan references unknown lane '{lane_id}'")
            if lane_id not in self._stop_line_by_lane:
                raise MapError(f"signalized lane '{lane_id}' has no stop line")
        for route in self.routes.values():
            for lid in route.lane_ids:
                if lid not in self.lanes:
                    raise MapError(f"route '{route.id}' references unknown lane '{lid}'")
            for a, b in zip(route.lane_ids, route.lane_ids[1:]):
                if b not in self.lanes[a].successors.values():
                    raise MapError(f"route '{route.id}': lane '{b}' is not a successor of '{a}'")
                gap = np.linalg.norm(self.lanes[a].centerline[-1] - self.lanes[b].centerline[0])
                if gap > 1.0:
                    raise MapError(f"route '{route.id}': {gap:.2f} m geometric gap between '{a}' and '{b}'")

    # -- lookups ------------------------------------------------------------

    def lane(self, lane_id: str) -> LaneSpec:
        if lane_id not in self.lanes:
            raise MapError(f"unknown lane '{lane_id}'")
        return self.lanes[lane_id]

    def route(self, route_id: str) -> Route:
        if route_id not in self.routes:
            raise MapError(f"unknown route '{route_id}'")
        return self.routes[route_id]

    def stop_line_for(self, lane_id: str):
        return self._stop_line_by_lane.get(lane_id)

    def route_length(self, route_id: str) -> float:
        return float(self._route_offsets[self.route(route_id).id][-1])

    def route_lane_offset(self, route_id: str, lane_id: str) -> float:
        """Arc-length station of the start of lane_id along the route."""
        route = self.route(route_id)
        if lane_id not in route.lane_ids:
            raise MapError(f"lane '{lane_id}' is not on route '{route_id}'")
        return float(self._route_offsets[route_id][route.lane_ids.index(lane_id)])

    def locate_on_route(self, route_id: str, s_route: float):
        """Map a route station to (lane_id, s within lane); clamps at route end."""
        route = self.route(route_id)
        offsets = self._route_offsets[route_id]
        s_route = min(max(s_route, 0.0), offsets[-1])
        i = min(int(np.searchsorted(offsets, s_route, side="right")) - 1, len(route.lane_ids) - 1)
        return route.lane_ids[i], float(s_route - offsets[i])

    def route_point_at(self, route_id: str, s_route: float) -> np.ndarray:
        lane_id, s = self.locate_on_route(route_id, s_route)
        return self.lanes[lane_id].point_at(s)

    def route_tangent_at(self, route_id: str, s_route: float) -> np.ndarray:
        lane_id, s = self.locate_on_route(route_id, s_route)
        return self.lanes[lane_id].tangent_at(s)

    def bounding_box(self):
        pts = np.concatenate([lane.centerline for lane in self.lanes.values()])
        return pts.min(axis=0), pts.max(axis=0)

    def lane_polylines(self, lane_id: str, seg_len: float = 4.0, vecs_per_poly: int = 3):
        key = (lane_id, seg_len, vecs_per_poly)
        if key not in self._polyline_cache:
            self._polyline_cache[key] = tuple(build_polylines(self.lane(lane_id), seg_len, vecs_per_poly))
        return self._polyline_cache[key]


def _segments_properly_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def _polygon_is_simple(poly: np.ndarray) -> bool:
    n = len(poly)
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # adjacent edges share a vertex
            if _segments_properly_intersect(*edges[i], *edges[j]):
                return False
    return True


def point_in_intersection(map_spec: MapSpec, p) -> bool:
    """Even-odd point-in-polygon test; boundary points count as inside."""
    p = np.asarray(p, dtype=np.float64)
    poly = map_spec.intersection_polygon
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        ab = b - a
        t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        if np.linalg.norm(p - (a + t * ab)) < 1e-9:
            return True
    inside = False
    x, y = p
    for i in range(n):
        (x1, y1), (x2, y2) = poly[i], poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def project_to_lane(map_spec: MapSpec, lane_id: str, p) -> tuple[float, float]:
    return map_spec.lane(lane_id).project(p)


# ---------------------------------------------------------------------------
# vectorized polylines


def build_polylines(lane: LaneSpec, seg_len: float = 4.0, vecs_per_poly: int = 3):
    """Tile a lane centerline into polylines of connected direction vectors.

    Vectors are chords between arc-length stations seg_len apart, so
    their directions follow the local tangent. A lane whose length is
    not a multiple of seg_len * vecs_per_poly ends with a final polyline
    whose vectors evenly split the remainder.
    """
    total = lane.length
    if total < seg_len:
        raise MapError(f"lane '{lane.id}' ({total:.2f} m) is shorter than one {seg_len} m segment")
    span = seg_len * vecs_per_poly
    n_full = int(total // span)
    remainder = total - n_full * span
    if remainder < 1e-6:
        remainder = 0.0

    polylines = []
    for k in range(n_full):
        base = k * span
        stations = [base + j * seg_len for j in range(vecs_per_poly + 1)]
        polylines.append(_polyline_from_stations(lane, stations, k))
    if remainder > 0.0:
        base = n_full * span
        step = remainder / vecs_per_poly
        stations = [base + j * step for j in range(vecs_per_poly + 1)]
        polylines.append(_polyline_from_stations(lane, stations, n_full))
    return polylines


def _polyline_from_stations(lane: LaneSpec, stations, order_index):
    vecs = []
    for s0, s1 in zip(stations, stations[1:]):
        a = lane.point_at(s0)
        b = lane.point_at(s1)
        chord = b - a
        length = float(np.linalg.norm(chord))
        direction = chord / length
        vecs.append(PolyVec(start=tuple(a), length=length, dir_sin=float(direction[1]), dir_cos=float(direction[0])))
    return Polyline(id=f"{lane.id}.{order_index}", lane_id=lane.id, vecs=vecs, order_index=order_index)


def next_polylines_on_route(map_spec: MapSpec, route_id: str, vehicle_s: float, vehicle_lane: str, k: int = 2):
    """The next k polylines ahead of the vehicle along its route.

    Includes the polyline the vehicle is currently inside; crosses lane
    boundaries; returns fewer than k near the route end. vehicle_s is
    measured along vehicle_lane.
    """
    route = map_spec.route(route_id)
    if vehicle_lane not in route.lane_ids:
        raise MapError(f"lane '{vehicle_lane}' is not on route '{route_id}'")
    station = map_spec.route_lane_offset(route_id, vehicle_lane) + vehicle_s
    out = []
    offset = 0.0
    for lane_id in route.lane_ids:
        poly_start = offset
        for poly in map_spec.lane_polylines(lane_id):
            poly_end = poly_start + poly.span
            if poly_end > station + 1e-9:
                out.append(poly)
                if len(out) == k:
                    return out
            poly_start = poly_end
        offset += map_spec.lanes[lane_id].length
    return out


# ---------------------------------------------------------------------------
# map file format (JSON)


def map_from_dict(doc: dict) -> MapSpec:
    try:
        lanes = [
            LaneSpec(
                id=l["id"],
                centerline=l["centerline"],
                width=float(l["width"]),
                approach=l["approach"],
                movements=frozenset(l["movements"]),
                successors=dict(l.get("successors", {})),
            )
            for l in doc["lanes"]
        ]
        stop_lines = [StopLine(lane_id=s["lane_id"], p0=tuple(s["p0"]), p1=tuple(s["p1"])) for s in doc["stop_lines"]]
        routes = [Route(id=r["id"], lane_ids=tuple(r["lanes"]), movement=r["movement"]) for r in doc["routes"]]
        signal = SignalPlan(phases=[(p["duration"], p["state"]) for p in doc["signal"]["phases"]])
        polygon = doc["intersection_polygon"]
    except (KeyError, TypeError) as exc:
        raise MapError(f"malformed map document: {exc}") from exc
    return MapSpec(lanes, stop_lines, polygon, routes, signal)


def map_to_dict(map_spec: MapSpec) -> dict:
    return {
        "lanes": [
            {
                "id": lane.id,
                "centerline": [[float(x), float(y)] for x, y in lane.centerline],
                "width": lane.width,
                "approach": lane.approach,
                "movements": sorted(lane.movements, key=MOVEMENTS.index),
                "successors": dict(lane.successors),
            }
            for lane in map_spec.lanes.values()
        ],
        "stop_lines": [
            {"lane_id": sl.lane_id, "p0": [float(v) for v in sl.p0], "p1": [float(v) for v in sl.p1]}
            for sl in map_spec.stop_lines
        ],
        "intersection_polygon": [[float(x), float(y)] for x, y in map_spec.intersection_polygon],
        "routes": [
            {"id": r.id, "lanes": list(r.lane_ids), "movement": r.movement} for r in map_spec.routes.values()
        ],
        "signal": {"phases": [{"duration": d, "state": dict(s)} for d, s in map_spec.signal.phases]},
    }


def load_map(path) -> MapSpec:
    """Load and validate a map file (see map_to_dict for the schema)."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise MapError(f"{path}: not valid JSON ({exc})") from exc
    return map_from_dict(doc)


def save_map(path, map_spec: MapSpec):
    with open(path, "w") as f:
        json.dump(map_to_dict(map_spec), f, indent=2, sort_keys=True)
        f.write("\n")
