"""Bundled demo intersection.

A synthetic 4-way junction with signalized EB, WB and NB approaches;
the north-south road is one-way northbound, so there is no SB approach.
Turning connectors are cubic Bezier curves joining the stop line to the
exit lane with tangent continuity. Route demand weights follow the same
proportions as the movement clusters this map is evaluated on.
"""

from __future__ import annotations

import numpy as np

from .scene import GREEN, RED, YELLOW, LaneSpec, MapSpec, Route, SignalPlan, StopLine

LANE_WIDTH = 3.5
HALF = 14.0  # junction half-size, meters
APPROACH_LEN = 120.0
EXIT_LEN = 100.0

# per-route spawn weights; proportions follow typical demand on this layout
ROUTE_WEIGHTS = {
    "EB_L": 102,
    "EB_T_mid": 51,
    "EB_T_right": 67,
    "EB_R": 99,
    "WB_L": 127,
    "WB_T_mid": 22,
    "WB_T_right": 93,
    "WB_R": 106,
    "NB_L": 133,
    "NB_T": 111,
    "NB_R": 115,
}


def _bezier(p0, t0, p1, t1, n=25):
    """Cubic Bezier from pose (p0, tangent t0) to (p1, tangent t1)."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    t0 = np.asarray(t0, float) / np.linalg.norm(t0)
    t1 = np.asarray(t1, float) / np.linalg.norm(t1)
    d = np.linalg.norm(p1 - p0) * 0.55
    c0, c1 = p0 + d * t0, p1 - d * t1
    ts = np.linspace(0.0, 1.0, n)[:, None]
    return ((1 - ts) ** 3) * p0 + 3 * ((1 - ts) ** 2) * ts * c0 + 3 * (1 - ts) * ts**2 * c1 + ts**3 * p1


E, W, N, S = np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, -1.0])


def build_demo_map() -> MapSpec:
    lanes = []

    def lane(lane_id, pts, approach, movements, successors=None):
        lanes.append(
            LaneSpec(
                id=lane_id,
                centerline=pts,
                width=LANE_WIDTH,
                approach=approach,
                movements=frozenset(movements),
                successors=successors or {},
            )
        )

    # approach lanes (stop line at the junction edge)
    lane("EBL", [(-HALF - APPROACH_LEN, -1.75), (-HALF, -1.75)], "EB", "L", {"L": "EBL_L"})
    lane("EBT", [(-HALF - APPROACH_LEN, -5.25), (-HALF, -5.25)], "EB", "T", {"T": "EBT_T"})
    lane("EBTR", [(-HALF - APPROACH_LEN, -8.75), (-HALF, -8.75)], "EB", "TR", {"T": "EBTR_T", "R": "EBTR_R"})
    lane("WBL", [(HALF + APPROACH_LEN, 1.75), (HALF, 1.75)], "WB", "L", {"L": "WBL_L"})
    lane("WBT", [(HALF + APPROACH_LEN, 5.25), (HALF, 5.25)], "WB", "T", {"T": "WBT_T"})
    lane("WBTR", [(HALF + APPROACH_LEN, 8.75), (HALF, 8.75)], "WB", "TR", {"T": "WBTR_T", "R": "WBTR_R"})
    lane("NBL", [(1.75, -HALF - APPROACH_LEN), (1.75, -HALF)], "NB", "L", {"L": "NBL_L"})
    lane("NBTR", [(5.25, -HALF - APPROACH_LEN), (5.25, -HALF)], "NB", "TR", {"T": "NBTR_T", "R": "NBTR_R"})

    # junction connectors
    lane("EBL_L", _bezier((-HALF, -1.75), E, (1.75, HALF), N), "EB", "L", {"L": "out_N_left"})
    lane("EBT_T", [(-HALF, -5.25), (HALF, -5.25)], "EB", "T", {"T": "out_E_mid"})
    lane("EBTR_T", [(-HALF, -8.75), (HALF, -8.75)], "EB", "T", {"T": "out_E_right"})
    lane("EBTR_R", _bezier((-HALF, -8.75), E, (-5.25, -HALF), S), "EB", "R", {"R": "out_S_right"})
    lane("WBL_L", _bezier((HALF, 1.75), W, (-1.75, -HALF), S), "WB", "L", {"L": "out_S_left"})
    lane("WBT_T", [(HALF, 5.25), (-HALF, 5.25)], "WB", "T", {"T": "out_W_mid"})
    lane("WBTR_T", [(HALF, 8.75), (-HALF, 8.75)], "WB", "T", {"T": "out_W_right"})
    lane("WBTR_R", _bezier((HALF, 8.75), W, (5.25, HALF), N), "WB", "R", {"R": "out_N_right"})
    lane("NBL_L", _bezier((1.75, -HALF), N, (-HALF, 1.75), W), "NB", "L", {"L": "out_W_left"})
    lane("NBTR_T", [(5.25, -HALF), (5.25, HALF)], "NB", "T", {"T": "out_N_right"})
    lane("NBTR_R", _bezier((5.25, -HALF), N, (HALF, -8.75), E), "NB", "R", {"R": "out_E_right"})

    # exit lanes
    lane("out_E_mid", [(HALF, -5.25), (HALF + EXIT_LEN, -5.25)], "EB", "T")
    lane("out_E_right", [(HALF, -8.75), (HALF + EXIT_LEN, -8.75)], "EB", "T")
    lane("out_W_left", [(-HALF, 1.75), (-HALF - EXIT_LEN, 1.75)], "WB", "T")
    lane("out_W_mid", [(-HALF, 5.25), (-HALF - EXIT_LEN, 5.25)], "WB", "T")
    lane("out_W_right", [(-HALF, 8.75), (-HALF - EXIT_LEN, 8.75)], "WB", "T")
    lane("out_N_left", [(1.75, HALF), (1.75, HALF + EXIT_LEN)], "NB", "T")
    lane("out_N_right", [(5.25, HALF), (5.25, HALF + EXIT_LEN)], "NB", "T")
    lane("out_S_left", [(-1.75, -HALF), (-1.75, -HALF - EXIT_LEN)], "SB", "T")
    lane("out_S_right", [(-5.25, -HALF), (-5.25, -HALF - EXIT_LEN)], "SB", "T")

    approach_ids = ["EBL", "EBT", "EBTR", "WBL", "WBT", "WBTR", "NBL", "NBTR"]
    stop_lines = []
    for lane_spec in lanes:
        if lane_spec.id not in approach_ids:
            continue
        end = lane_spec.centerline[-1]
        tangent = lane_spec.tangent_at(lane_spec.length)
        normal = np.array([-tangent[1], tangent[0]])
        half_w = LANE_WIDTH / 2.0
        stop_lines.append(
            StopLine(lane_id=lane_spec.id, p0=tuple(end - half_w * normal), p1=tuple(end + half_w * normal))
        )

    routes = [
        Route("EB_L", ("EBL", "EBL_L", "out_N_left"), "L"),
        Route("EB_T_mid", ("EBT", "EBT_T", "out_E_mid"), "T"),
        Route("EB_T_right", ("EBTR", "EBTR_T", "out_E_right"), "T"),
        Route("EB_R", ("EBTR", "EBTR_R", "out_S_right"), "R"),
        Route("WB_L", ("WBL", "WBL_L", "out_S_left"), "L"),
        Route("WB_T_mid", ("WBT", "WBT_T", "out_W_mid"), "T"),
        Route("WB_T_right", ("WBTR", "WBTR_T", "out_W_right"), "T"),
        Route("WB_R", ("WBTR", "WBTR_R", "out_N_right"), "R"),
        Route("NB_L", ("NBL", "NBL_L", "out_W_left"), "L"),
        Route("NB_T", ("NBTR", "NBTR_T", "out_N_right"), "T"),
        Route("NB_R", ("NBTR", "NBTR_R", "out_E_right"), "R"),
    ]

    ew = ["EBL", "EBT", "EBTR", "WBL", "WBT", "WBTR"]
    nb = ["NBL", "NBTR"]

    def phase(duration, green=(), yellow=()):
        state = {lid: RED for lid in approach_ids}
        state.update({lid: GREEN for lid in green})
        state.update({lid: YELLOW for lid in yellow})
        return (duration, state)

    signal = SignalPlan(
        phases=[
            phase(30.0, green=ew),
            phase(3.0, yellow=ew),
            phase(2.0),
            phase(20.0, green=nb),
            phase(3.0, yellow=nb),
            phase(2.0),
        ]
    )

    polygon = [(-HALF, -HALF), (HALF, -HALF), (HALF, HALF), (-HALF, HALF)]
    return MapSpec(lanes, stop_lines, polygon, routes, signal)
