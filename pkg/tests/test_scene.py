"""Tests for lane geometry, polylines, signal timing and map loading."""

import json

import numpy as np
import pytest

from junctionsim import scene
from junctionsim.demo import build_demo_map
from junctionsim.scene import (
    GREEN,
    RED,
    YELLOW,
    LaneSpec,
    MapError,
    MapSpec,
    Route,
    SignalPlan,
    StopLine,
    build_polylines,
    load_map,
    map_to_dict,
    next_polylines_on_route,
    point_in_intersection,
    project_to_lane,
    save_map,
    signal_state_at,
)


def straight_lane(lane_id="A", a=(0, 0), b=(24, 0), movements="T", successors=None):
    return LaneSpec(
        id=lane_id, centerline=[a, b], width=3.5, approach="EB", movements=frozenset(movements), successors=successors or {}
    )


def one_lane_map():
    lane = straight_lane()
    stop = StopLine(lane_id="A", p0=(24, -1.75), p1=(24, 1.75))
    signal = SignalPlan(phases=[(30.0, {"A": GREEN}), (30.0, {"A": RED})])
    return MapSpec([lane], [stop], [(24, -5), (34, -5), (34, 5), (24, 5)], [Route("r", ("A",), "T")], signal)


class TestLaneSpec:
    def test_rejects_single_point(self):
        with pytest.raises(MapError):
            straight_lane(a=(0, 0), b=(0, 0))

    def test_rejects_nonpositive_width(self):
        with pytest.raises(MapError, match="width"):
            LaneSpec(id="A", centerline=[(0, 0), (1, 0)], width=0, approach="EB", movements=frozenset("T"), successors={})

    def test_length_and_point_at(self):
        lane = straight_lane()
        assert lane.length == 24.0
        assert np.allclose(lane.point_at(10.0), [10, 0])
        assert np.allclose(lane.point_at(-5.0), [0, 0])
        assert np.allclose(lane.point_at(99.0), [24, 0])


class TestBuildPolylines:
    def test_straight_horizontal(self):
        polys = build_polylines(straight_lane())
        assert len(polys) == 2
        starts = [v.start for v in polys[0].vecs]
        assert np.allclose(starts, [(0, 0), (4, 0), (8, 0)])
        for v in polys[0].vecs + polys[1].vecs:
            assert v.length == pytest.approx(4.0)
            assert v.dir_sin == pytest.approx(0.0)
            assert v.dir_cos == pytest.approx(1.0)

    def test_straight_vertical_single_polyline(self):
        polys = build_polylines(straight_lane(a=(0, 0), b=(0, 12)))
        assert len(polys) == 1
        for v in polys[0].vecs:
            assert v.dir_sin == pytest.approx(1.0)
            assert v.dir_cos == pytest.approx(0.0)

    def test_quarter_circle_arc_against_dense_sampling(self):
        # Oracle: an analytically sampled radius-30 arc of length 24.
        # Chords between 4 m stations must stay within 1% of 4 m and
        # within 5 degrees of the mid-chord tangent.
        radius, arc_len = 30.0, 24.0
        thetas = np.linspace(0.0, arc_len / radius, 2000)
        pts = np.stack([radius * np.sin(thetas), radius * (1 - np.cos(thetas))], axis=1)
        lane = LaneSpec(id="arc", centerline=pts, width=3.5, approach="EB", movements=frozenset("T"), successors={})
        polys = build_polylines(lane)
        assert len(polys) == 2
        station = 0.0
        for poly in polys:
            for v in poly.vecs:
                assert abs(v.length - 4.0) / 4.0 < 0.01
                mid_theta = (station + v.length / 2.0) / radius
                tangent = np.array([np.cos(mid_theta), np.sin(mid_theta)])
                cos_angle = np.clip(np.dot([v.dir_cos, v.dir_sin], tangent), -1, 1)
                assert np.degrees(np.arccos(cos_angle)) < 5.0
                station += v.length

    def test_tiling_reproduces_arc_length(self):
        radius = 12.0
        thetas = np.linspace(0, np.pi / 2, 500)
        pts = np.stack([radius * np.sin(thetas), radius * (1 - np.cos(thetas))], axis=1)
        lane = LaneSpec(id="arc", centerline=pts, width=3.5, approach="EB", movements=frozenset("T"), successors={})
        total = sum(p.span for p in build_polylines(lane))
        assert abs(total - lane.length) / lane.length < 0.01

    def test_remainder_goes_to_final_polyline(self):
        polys = build_polylines(straight_lane(b=(30, 0)))
        assert len(polys) == 3
        assert polys[-1].span == pytest.approx(6.0)
        assert len(polys[-1].vecs) == 3
        assert all(v.length == pytest.approx(2.0) for v in polys[-1].vecs)

    def test_lane_shorter_than_segment_rejected(self):
        with pytest.raises(MapError, match="shorter"):
            build_polylines(straight_lane(b=(2, 0)))

    def test_vectors_connected(self):
        polys = build_polylines(straight_lane(b=(26, 0)))
        for poly in polys:
            for k in range(len(poly.vecs) - 1):
                assert np.linalg.norm(poly.vecs[k].end - np.array(poly.vecs[k + 1].start)) < 1e-6


class TestSignalStateAt:
    def plan(self):
        return SignalPlan(phases=[(30.0, {"A": GREEN}), (30.0, {"A": RED})])

    def test_interior_of_first_phase(self):
        assert signal_state_at(self.plan(), "A", 15.0) == GREEN

    def test_half_open_boundary(self):
        assert signal_state_at(self.plan(), "A", 30.0) == RED

    def test_wraparound_against_cumulative_table(self):
        # Oracle: explicit cumulative-duration lookup table.
        plan = self.plan()

        def table_lookup(t):
            tc = t % 60.0
            boundaries = [(0.0, 30.0, GREEN), (30.0, 60.0, RED)]
            for lo, hi, state in boundaries:
                if lo <= tc < hi:
                    return state

        assert table_lookup(75.0) == GREEN
        assert signal_state_at(plan, "A", 75.0) == table_lookup(75.0)
        for t in np.linspace(0, 240, 97):
            assert signal_state_at(plan, "A", float(t)) == table_lookup(float(t))

    def test_periodicity(self):
        plan = self.plan()
        for t in [0.0, 7.3, 29.999, 30.0, 59.9]:
            assert signal_state_at(plan, "A", t) == signal_state_at(plan, "A", t + plan.cycle_length)

    def test_unknown_lane(self):
        with pytest.raises(MapError, match="B"):
            signal_state_at(self.plan(), "B", 0.0)

    def test_all_durations_positive(self):
        with pytest.raises(MapError):
            SignalPlan(phases=[(0.0, {"A": RED})])


class TestProjectToLane:
    def test_axis_aligned(self):
        m = one_lane_map()
        s, d = project_to_lane(m, "A", (10, 0.5))
        assert (s, d) == pytest.approx((10.0, 0.5))

    def test_endpoint_clamp(self):
        m = one_lane_map()
        s, d = project_to_lane(m, "A", (-5, 0))
        assert (s, d) == pytest.approx((0.0, 0.0))

    def test_sign_convention_right_is_negative(self):
        m = one_lane_map()
        s, d = project_to_lane(m, "A", (10, -1.2))
        assert (s, d) == pytest.approx((10.0, -1.2))

    def test_reembedding_straight(self):
        lane = straight_lane()
        for s in [0.0, 3.7, 12.0, 24.0]:
            p = lane.point_at(s)
            s2, d2 = lane.project(p)
            assert abs(d2) < 1e-9
            assert np.linalg.norm(lane.point_at(s2) - p) < 1e-9

    def test_reembedding_curved(self):
        radius = 30.0
        thetas = np.linspace(0, 0.8, 400)
        pts = np.stack([radius * np.sin(thetas), radius * (1 - np.cos(thetas))], axis=1)
        lane = LaneSpec(id="arc", centerline=pts, width=3.5, approach="EB", movements=frozenset("T"), successors={})
        for s in np.linspace(0, lane.length, 17):
            p = lane.point_at(float(s))
            s2, _ = lane.project(p)
            assert np.linalg.norm(lane.point_at(s2) - p) < 1e-3


class TestNextPolylinesOnRoute:
    def two_lane_map(self):
        a = straight_lane("A", (0, 0), (24, 0), successors={"T": "B"})
        b = straight_lane("B", (24, 0), (48, 0))
        stop = StopLine(lane_id="A", p0=(24, -1.75), p1=(24, 1.75))
        signal = SignalPlan(phases=[(30.0, {"A": GREEN})])
        return MapSpec([a, b], [stop], [(24, -5), (34, -5), (34, 5)], [Route("r", ("A", "B"), "T")], signal)

    def test_start_of_lane_returns_both(self):
        m = self.two_lane_map()
        polys = next_polylines_on_route(m, "r", 1.0, "A")
        assert [(p.lane_id, p.order_index) for p in polys] == [("A", 0), ("A", 1)]

    def test_crosses_lane_boundary(self):
        # Oracle: route polylines enumerate as A.0 [0,12), A.1 [12,24),
        # B.0 [24,36), B.1 [36,48); s=13 sits inside A.1.
        m = self.two_lane_map()
        polys = next_polylines_on_route(m, "r", 13.0, "A")
        assert [(p.lane_id, p.order_index) for p in polys] == [("A", 1), ("B", 0)]

    def test_truncates_at_route_end(self):
        m = self.two_lane_map()
        polys = next_polylines_on_route(m, "r", 22.0, "B")
        assert [(p.lane_id, p.order_index) for p in polys] == [("B", 1)]

    def test_strictly_increasing_route_order(self):
        m = self.two_lane_map()
        for s in np.linspace(0, 23.5, 20):
            polys = next_polylines_on_route(m, "r", float(s), "A", k=4)
            keys = [(0 if p.lane_id == "A" else 1, p.order_index) for p in polys]
            assert keys == sorted(keys)

    def test_lane_not_on_route(self):
        m = self.two_lane_map()
        with pytest.raises(MapError, match="not on route"):
            next_polylines_on_route(m, "r", 0.0, "C")


class TestPointInIntersection:
    def test_centroid_inside(self):
        m = one_lane_map()
        centroid = m.intersection_polygon.mean(axis=0)
        assert point_in_intersection(m, centroid)

    def test_far_outside(self):
        m = one_lane_map()
        assert not point_in_intersection(m, (129, 100))

    def test_vertex_counts_as_inside(self):
        m = one_lane_map()
        assert point_in_intersection(m, tuple(m.intersection_polygon[0]))


class TestMapLoading:
    def test_demo_map_structure(self, tmp_path):
        m = build_demo_map()
        approaches = {lane.approach for lid, lane in m.lanes.items() if m.stop_line_for(lid)}
        assert approaches == {"EB", "WB", "NB"}  # one-way SB: no approach
        assert len(m.routes) == 11
        path = tmp_path / "demo.json"
        save_map(path, m)
        loaded = load_map(path)
        assert set(loaded.lanes) == set(m.lanes)
        assert set(loaded.routes) == set(m.routes)
        assert loaded.signal.cycle_length == m.signal.cycle_length

    def test_unknown_route_lane_named_in_error(self, tmp_path):
        doc = map_to_dict(one_lane_map())
        doc["routes"][0]["lanes"] = ["A", "X"]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(MapError, match="X"):
            load_map(path)

    def test_minimal_one_lane_map(self):
        m = one_lane_map()
        assert len(m.stop_lines) == 1
        assert len(m.routes) == 1

    def test_parse_failure(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("{not json")
        with pytest.raises(MapError, match="JSON"):
            load_map(path)

    def test_self_intersecting_polygon_rejected(self):
        lane = straight_lane()
        stop = StopLine(lane_id="A", p0=(24, -1.75), p1=(24, 1.75))
        signal = SignalPlan(phases=[(30.0, {"A": GREEN})])
        bowtie = [(0, 0), (10, 10), (10, 0), (0, 10)]
        with pytest.raises(MapError, match="self-intersecting"):
            MapSpec([lane], [stop], bowtie, [Route("r", ("A",), "T")], signal)

    def test_disconnected_route_rejected(self):
        a = straight_lane("A", (0, 0), (24, 0))
        b = straight_lane("B", (24, 0), (48, 0))
        stop = StopLine(lane_id="A", p0=(24, -1.75), p1=(24, 1.75))
        signal = SignalPlan(phases=[(30.0, {"A": GREEN})])
        with pytest.raises(MapError, match="successor"):
            MapSpec([a, b], [stop], [(0, 0), (1, 0), (1, 1)], [Route("r", ("A", "B"), "T")], signal)

    def test_roundtrip_preserves_geometry(self, tmp_path):
        m = build_demo_map()
        path = tmp_path / "demo.json"
        save_map(path, m)
        loaded = load_map(path)
        for lid in m.lanes:
            assert np.allclose(loaded.lanes[lid].centerline, m.lanes[lid].centerline)
