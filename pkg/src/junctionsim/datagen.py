"""Ground-truth trajectory generator.

A Krauss car-following micro-simulator over the scene's routes with
signal compliance: red (and non-committable yellow) lights act as a
stationary virtual leader at the stop line. Produces the trajectory and
signal logs that training, rollout warm-up and metrics all consume.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .scene import GREEN, RED, YELLOW, MapSpec, signal_state_at

DT = 0.1  # simulation tick, seconds


@dataclass(frozen=True)
class KraussParams:
    v_max: float = 15.0  # m/s
    a_max: float = 2.6  # m/s^2
    b_decel: float = 4.5  # comfortable deceleration, m/s^2; also the per-tick braking cap
    tau: float = 1.0  # reaction time, s
    min_gap: float = 2.5  # standstill bumper gap, m
    sigma: float = 0.2  # driver imperfection in [0, 1]
    vehicle_length: float = 5.0  # m
    spawn_speed: float = 10.0  # entry speed ceiling, m/s
    stop_margin: float = 2.0  # stop this far before the stop line, m
    a_lat_max: float = 2.5  # lateral comfort bound setting curve speed limits, m/s^2

    def __post_init__(self):
        for name in ("v_max", "a_max", "b_decel", "tau", "min_gap", "vehicle_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError("sigma must be in [0, 1]")


@dataclass(frozen=True)
class VehicleState:
    frame: int
    pos: tuple  # (x, y) m
    vel: tuple  # (vx, vy) m/s
    acc: tuple  # (ax, ay) m/s^2
    lane_id: str
    route_id: str
    s: float  # arc length along lane_id, m

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.vel))


@dataclass
class Track:
    vehicle_id: str
    route_id: str
    states: list
    entry_frame: int
    exit_frame: int | None = None

    def __post_init__(self):
        if not self.states:
            raise ValueError(f"track {self.vehicle_id}: no states")
        frames = [st.frame for st in self.states]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise ValueError(f"track {self.vehicle_id}: frames not consecutive")

    def state_at(self, frame: int):
        i = frame - self.entry_frame
        if 0 <= i < len(self.states):
            return self.states[i]
        return None

    @property
    def last_frame(self) -> int:
        return self.states[-1].frame


@dataclass(frozen=True)
class SpawnSchedule:
    arrivals: tuple  # ((frame, route_id, vehicle_id), ...)
    mean_period_s: float
    route_weights: dict
    seed: int

    def __post_init__(self):
        frames = [a[0] for a in self.arrivals]
        if frames != sorted(frames):
            raise ValueError("spawn frames must be nondecreasing")
        ids = [a[2] for a in self.arrivals]
        if len(ids) != len(set(ids)):
            raise ValueError("vehicle ids must be unique")


def make_schedule(route_weights: dict, mean_period_s: float, duration_s: float, seed: int) -> SpawnSchedule:
    """One arrival per mean-period window, uniformly jittered inside it.

    Stratified arrivals keep the vehicle count within one of
    duration / mean_period by construction, unlike a Poisson stream.
    """
    rng = np.random.default_rng(seed)
    routes = sorted(route_weights)
    weights = np.array([route_weights[r] for r in routes], dtype=float)
    weights /= weights.sum()
    n = int(duration_s / mean_period_s)
    arrivals = []
    for i in range(n):
        t = (i + rng.uniform()) * mean_period_s
        route = routes[int(rng.choice(len(routes), p=weights))]
        arrivals.append((int(t / DT), route, f"v{i:05d}"))
    return SpawnSchedule(tuple(arrivals), mean_period_s, dict(route_weights), seed)


# ---------------------------------------------------------------------------
# car-following core


def krauss_safe_speed(v_leader: float, gap: float, v_follower: float, params: KraussParams) -> float:
    """Safe speed toward a leader: v_l + (g - v_l*tau) / ((v_l + v_f)/(2b) + tau)."""
    denom = (v_leader + v_follower) / (2.0 * params.b_decel) + params.tau
    return v_leader + (gap - v_leader * params.tau) / denom


def signal_as_virtual_leader(state: VehicleState, map_spec: MapSpec, t: float, params: KraussParams = KraussParams()):
    """A stationary leader at the stop line when the signal requires stopping.

    Red always stops an approaching vehicle; yellow stops it only when
    the comfortable stopping distance v^2/(2b) still fits before the
    line. A vehicle already past the stop line is committed and ignores
    the signal. Returns (v_leader=0.0, gap) or None.
    """
    if state.lane_id not in map_spec.signal.lane_ids:
        return None
    stop_line = map_spec.stop_line_for(state.lane_id)
    if stop_line is None:
        return None
    stop_s = map_spec.lanes[state.lane_id].length
    dist = stop_s - state.s
    if dist < 0.0:
        return None  # committed to clear
    color = signal_state_at(map_spec.signal, state.lane_id, t)
    if color == GREEN:
        return None
    if color == YELLOW:
        stopping_dist = state.speed**2 / (2.0 * params.b_decel)
        if stopping_dist > dist:
            return None  # cannot stop in time: proceed through
    return 0.0, max(dist - params.stop_margin, 0.0)


class _SimVehicle:
    __slots__ = ("vehicle_id", "route_id", "lane_ids", "s_route", "speed", "vel", "states", "entry_frame")

    def __init__(self, vehicle_id, route_id, lane_ids, entry_frame, speed):
        self.vehicle_id = vehicle_id
        self.route_id = route_id
        self.lane_ids = lane_ids
        self.s_route = 0.0
        self.speed = speed
        self.vel = np.zeros(2)
        self.states = []
        self.entry_frame = entry_frame


def _min_curvature_radius(centerline: np.ndarray) -> float:
    """Minimum circumradius over consecutive point triples; inf for straights."""
    best = np.inf
    pts = centerline
    for i in range(1, len(pts) - 1):
        a, b, c = pts[i - 1], pts[i], pts[i + 1]
        area2 = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area2 < 1e-12:
            continue
        r = (np.linalg.norm(b - a) * np.linalg.norm(c - b) * np.linalg.norm(c - a)) / (2.0 * area2)
        best = min(best, r)
    return best


class World:
    """Mutable simulation state: active vehicles plus finished tracks."""

    def __init__(self, map_spec: MapSpec, schedule: SpawnSchedule, params: KraussParams, seed: int):
        self.map = map_spec
        self.schedule = schedule
        self.params = params
        self.rng = np.random.default_rng(seed)
        self.frame = 0
        self.vehicles: list[_SimVehicle] = []  # spawn order
        self.finished: list[Track] = []
        self._pending = list(schedule.arrivals)  # sorted by frame
        self._pending_idx = 0
        self._deferred: list[tuple] = []
        self._route_offsets = {
            rid: {lid: map_spec.route_lane_offset(rid, lid) for lid in map_spec.routes[rid].lane_ids}
            for rid in map_spec.routes
        }
        self._lane_limit = {
            lid: min(params.v_max, float(np.sqrt(params.a_lat_max * _min_curvature_radius(lane.centerline))))
            for lid, lane in map_spec.lanes.items()
        }

    def lane_occupancy(self):
        """lane_id -> sorted list of (s_in_lane, vehicle)."""
        occ: dict[str, list] = {}
        for v in self.vehicles:
            lane_id, s = self.map.locate_on_route(v.route_id, v.s_route)
            occ.setdefault(lane_id, []).append((s, v))
        for entries in occ.values():
            entries.sort(key=lambda e: e[0])
        return occ

    def _leader_of(self, vehicle, occupancy):
        """Nearest vehicle ahead along the remaining route; (gap, speed) or None."""
        route = self.map.routes[vehicle.route_id]
        offsets = self._route_offsets[vehicle.route_id]
        lane_id, s = self.map.locate_on_route(vehicle.route_id, vehicle.s_route)
        start_idx = route.lane_ids.index(lane_id)
        best = None
        for lid in route.lane_ids[start_idx:]:
            for s_other, other in occupancy.get(lid, ()):  # sorted by s
                if other is vehicle:
                    continue
                station = offsets[lid] + s_other
                if station > vehicle.s_route:
                    best = (station - vehicle.s_route, other.speed)
                    break
            if best is not None:
                break
        return best

    def _snapshot_state(self, vehicle, acc):
        lane_id, s = self.map.locate_on_route(vehicle.route_id, vehicle.s_route)
        pos = self.map.route_point_at(vehicle.route_id, vehicle.s_route)
        return VehicleState(
            frame=self.frame,
            pos=(float(pos[0]), float(pos[1])),
            vel=(float(vehicle.vel[0]), float(vehicle.vel[1])),
            acc=(float(acc[0]), float(acc[1])),
            lane_id=lane_id,
            route_id=vehicle.route_id,
            s=s,
        )

    def _desired_speed(self, vehicle, occupancy, t, spawning=False):
        """Binding of all speed constraints from the frame snapshot, pre-noise.

        Constraints: acceleration bound, global and per-lane (curve)
        speed limits, braking targets for slower lanes ahead, the Krauss
        safe speed toward the route leader, and the signal's virtual
        leader. The result is floored at v - b*dt so braking never
        exceeds the comfortable rate. When spawning, the acceleration
        bound and braking floor are skipped: the vehicle simply enters
        at the highest speed the constraints allow.
        """
        p = self.params
        m = self.map
        v_f = vehicle.speed
        lane_id, s = m.locate_on_route(vehicle.route_id, vehicle.s_route)
        start = p.spawn_speed if spawning else v_f + p.a_max * DT
        desired = min(start, p.v_max, self._lane_limit[lane_id])

        # slow lanes ahead: brake toward their entry at comfortable rate
        route = m.routes[vehicle.route_id]
        offsets = self._route_offsets[vehicle.route_id]
        lookahead = v_f * v_f / (2.0 * p.b_decel) + 2.0 * p.v_max
        for lid in route.lane_ids[route.lane_ids.index(lane_id) + 1 :]:
            dist = offsets[lid] - vehicle.s_route
            if dist > lookahead:
                break
            limit = self._lane_limit[lid]
            if limit < desired:
                desired = min(desired, float(np.sqrt(limit * limit + 2.0 * p.b_decel * max(dist, 0.0))))

        leader = self._leader_of(vehicle, occupancy)
        if leader is not None:
            gap, v_lead = leader
            eff_gap = max(gap - p.vehicle_length - p.min_gap, 0.0)
            desired = min(desired, krauss_safe_speed(v_lead, eff_gap, v_f, p))
        state = VehicleState(self.frame, (0, 0), tuple(vehicle.vel), (0, 0), lane_id, vehicle.route_id, s)
        virtual = signal_as_virtual_leader(state, m, t, p)
        if virtual is not None:
            desired = min(desired, krauss_safe_speed(virtual[0], virtual[1], v_f, p))
        if spawning:
            return max(0.0, desired)
        # comfortable-braking cap; overshoot is absorbed by stop_margin
        return max(0.0, max(desired, v_f - p.b_decel * DT))


def step_world(world: World, dt: float = DT):
    """Advance one frame: spawn, update all speeds from the frame snapshot, move.

    Speeds follow max(0, min(v + a_max dt, v_max, v_safe) - sigma*U*a_max*dt)
    with v_safe the binding of the vehicle leader and the signal's
    virtual leader. Vehicles exit when their route ends.
    """
    p = world.params
    m = world.map

    # spawn due arrivals; defer when the entry area is occupied
    due = list(world._deferred)
    world._deferred = []
    while world._pending_idx < len(world._pending) and world._pending[world._pending_idx][0] <= world.frame:
        due.append(world._pending[world._pending_idx])
        world._pending_idx += 1
    occupancy = world.lane_occupancy()
    for frame, route_id, vehicle_id in due:
        first_lane = m.routes[route_id].lane_ids[0]
        blocked = any(s < p.vehicle_length + p.min_gap for s, _ in occupancy.get(first_lane, ()))
        if blocked:
            world._deferred.append((world.frame + 1, route_id, vehicle_id))
            continue
        v = _SimVehicle(vehicle_id, route_id, m.routes[route_id].lane_ids, world.frame, 0.0)
        world.vehicles.append(v)
        v.speed = world._desired_speed(v, world.lane_occupancy(), world.frame * dt, spawning=True)
        v.vel = v.speed * m.route_tangent_at(route_id, 0.0)
        v.states.append(world._snapshot_state(v, np.zeros(2)))
        occupancy = world.lane_occupancy()

    # decide all new speeds from the frame-t snapshot
    occupancy = world.lane_occupancy()
    t = world.frame * dt
    new_speeds = []
    for v in world.vehicles:
        v_safe = np.inf
        leader = world._leader_of(v, occupancy)
        if leader is not None:
            gap, v_lead = leader
            eff_gap = max(gap - p.vehicle_length - p.min_gap, 0.0)
            v_safe = min(v_safe, krauss_safe_speed(v_lead, eff_gap, v.speed, p))
        lane_id, s = m.locate_on_route(v.route_id, v.s_route)
        state = VehicleState(world.frame, (0, 0), tuple(v.vel), (0, 0), lane_id, v.route_id, s)
        virtual = signal_as_virtual_leader(state, m, t, p)
        if virtual is not None:
            v_safe = min(v_safe, krauss_safe_speed(virtual[0], virtual[1], v.speed, p))
        desired = min(v.speed + p.a_max * dt, p.v_max, v_safe)
        noise = p.sigma * world.rng.uniform() * p.a_max * dt
        new_speeds.append(max(0.0, desired - noise))

    # commit: move everyone, retire exits
    world.frame += 1
    survivors = []
    for v, speed in zip(world.vehicles, new_speeds):
        v.s_route += speed * dt
        v.speed = speed
        if v.s_route >= m.route_length(v.route_id):
            world.finished.append(
                Track(v.vehicle_id, v.route_id, v.states, v.entry_frame, exit_frame=world.frame)
            )
            continue
        prev_vel = v.vel
        v.vel = speed * m.route_tangent_at(v.route_id, v.s_route)
        acc = (v.vel - prev_vel) / dt
        v.states.append(world._snapshot_state(v, acc))
        survivors.append(v)
    world.vehicles = survivors


def generate_dataset(map_spec: MapSpec, schedule: SpawnSchedule, params: KraussParams, duration_s: float, seed: int):
    """Run the micro-simulator; returns (tracks, SignalLog), deterministic in seed."""
    world = World(map_spec, schedule, params, seed)
    n_frames = int(round(duration_s / DT))
    signal_log = SignalLog.from_plan(map_spec, n_frames + 1)  # states reach frame n_frames
    for _ in range(n_frames):
        step_world(world)
    tracks = list(world.finished)
    for v in world.vehicles:  # in-progress at horizon
        tracks.append(Track(v.vehicle_id, v.route_id, v.states, v.entry_frame, exit_frame=None))
    tracks.sort(key=lambda tr: (tr.entry_frame, tr.vehicle_id))
    return tracks, signal_log


# ---------------------------------------------------------------------------
# signal log


class SignalLog:
    """Per-frame, per-lane signal states."""

    def __init__(self, states: dict):
        self._states = states  # (frame, lane_id) -> state
        self.n_frames = 1 + max((f for f, _ in states), default=-1)

    @classmethod
    def from_plan(cls, map_spec: MapSpec, n_frames: int, dt: float = DT):
        states = {}
        for frame in range(n_frames):
            t = frame * dt
            for lane_id in sorted(map_spec.signal.lane_ids):
                states[(frame, lane_id)] = signal_state_at(map_spec.signal, lane_id, t)
        return cls(states)

    def state(self, frame: int, lane_id: str):
        return self._states.get((frame, lane_id))

    def items(self):
        return sorted(self._states.items())


# ---------------------------------------------------------------------------
# interchange files

TRAJECTORY_COLUMNS = ["frame", "vehicle_id", "route_id", "lane_id", "x", "y", "vx", "vy", "ax", "ay", "s"]


def write_trajectory_log(path, tracks):
    rows = []
    for track in tracks:
        for st in track.states:
            rows.append(
                (
                    st.frame,
                    track.vehicle_id,
                    track.route_id,
                    st.lane_id,
                    repr(st.pos[0]),
                    repr(st.pos[1]),
                    repr(st.vel[0]),
                    repr(st.vel[1]),
                    repr(st.acc[0]),
                    repr(st.acc[1]),
                    repr(st.s),
                )
            )
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAJECTORY_COLUMNS)
        writer.writerows(rows)


def read_trajectory_log(path):
    """Rebuild tracks from a trajectory log; states grouped and frame-ordered."""
    per_vehicle: dict[str, list] = {}
    route_of: dict[str, str] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            st = VehicleState(
                frame=int(row["frame"]),
                pos=(float(row["x"]), float(row["y"])),
                vel=(float(row["vx"]), float(row["vy"])),
                acc=(float(row["ax"]), float(row["ay"])),
                lane_id=row["lane_id"],
                route_id=row["route_id"],
                s=float(row["s"]),
            )
            per_vehicle.setdefault(row["vehicle_id"], []).append(st)
            route_of[row["vehicle_id"]] = row["route_id"]
    tracks = []
    for vid in sorted(per_vehicle, key=lambda v: (per_vehicle[v][0].frame, v)):
        states = sorted(per_vehicle[vid], key=lambda s: s.frame)
        tracks.append(Track(vid, route_of[vid], states, states[0].frame, exit_frame=None))
    tracks.sort(key=lambda tr: (tr.entry_frame, tr.vehicle_id))
    return tracks


def write_signal_log(path, signal_log: SignalLog):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "lane_id", "state"])
        for (frame, lane_id), state in signal_log.items():
            writer.writerow([frame, lane_id, state])


def read_signal_log(path) -> SignalLog:
    states = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            states[(int(row["frame"]), row["lane_id"])] = row["state"]
    return SignalLog(states)
