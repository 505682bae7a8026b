"""Shared hand-built scenes.

``table_scene`` is the four-vehicle merge layout with hand-computed edge
distances; ``roundabout_scene`` is a seven-entity layout around a merge,
a crossing and a parallel lane.
"""

import math

import numpy as np
import pytest

from scenegnn.ingest import EntityClass, EntityState, Frame
from scenegnn.lanemap import Lane, LaneMap
from scenegnn.scenegraph import EdgeKind


def car(tid, x, y, heading=0.0, speed=5.0, cls=EntityClass.Car):
    return EntityState(tid, 0, 0, cls, float(x), float(y), float(heading), 4.5, 1.8, float(speed))


def table_map() -> LaneMap:
    # L1 runs left of L2a; L2a and the 45 degree ramp L3 both continue into L2b
    return LaneMap([
        Lane("L1", [(0.0, 3.5), (100.0, 3.5)], right_parallel="L2a"),
        Lane("L2a", [(0.0, 0.0), (50.0, 0.0)], ["L2b"], left_parallel="L1"),
        Lane("L2b", [(50.0, 0.0), (100.0, 0.0)]),
        Lane("L3", [(35.0, -15.0), (50.0, 0.0)], ["L2b"]),
    ])


def table_frame() -> Frame:
    r = 4.0 / math.sqrt(2.0)
    return Frame(0, 0, [
        car(1, 5.0, 3.5),
        car(2, 20.0, 0.0),
        car(3, 50.0 - r, -r, math.pi / 4),  # 4 m before the merge point on L3
        car(4, 90.0, 0.0),
    ])


# (src, dst) -> (kind, distance); node k is vehicle k + 1
TABLE_EDGES = {
    (0, 1): (EdgeKind.Lat, 15.0),
    (1, 0): (EdgeKind.Lat, -15.0),
    (1, 2): (EdgeKind.Int, 30.0),  # vehicle 2 to the merge point
    (2, 1): (EdgeKind.Int, 4.0),  # vehicle 3 to the merge point
    (1, 3): (EdgeKind.Lon, 70.0),
    (2, 3): (EdgeKind.Lon, 44.0),  # 4 m to the merge point plus 40 m beyond it
}


def roundabout_map() -> LaneMap:
    return LaneMap([
        Lane("M1", [(0.0, 0.0), (60.0, 0.0)], ["M2"], left_parallel="P"),
        Lane("P", [(0.0, 3.5), (60.0, 3.5)], right_parallel="M1"),
        Lane("M2", [(60.0, 0.0), (90.0, 10.0), (120.0, 10.0)]),
        Lane("E", [(30.0, -30.0), (60.0, 0.0)], ["M2"]),
        Lane("C", [(105.0, -20.0), (105.0, 40.0)]),
    ])


def roundabout_frame() -> Frame:
    r = 10.0 / math.sqrt(2.0)
    return Frame(0, 0, [
        car(10, 100.0, 10.0),  # leader on M2
        car(13, 45.0, 0.0),  # follows 10 on M1
        car(15, 25.0, 0.0),  # follows 13
        car(14, 60.0 - r, -r, math.pi / 4),  # entry ramp, merges into M2
        car(20, 105.0, -5.0, math.pi / 2),  # crossing road C
        car(21, 40.0, 3.5),  # parallel lane P
        car(30, 300.0, 300.0),  # off the map
    ])


# hand-derived: M1 -> M2 and E -> M2 chains, M1 | P parallel, E merges with M1, C crosses M2
ROUNDABOUT_EDGES = {
    (1, 0): EdgeKind.Lon, (2, 0): EdgeKind.Lon, (2, 1): EdgeKind.Lon, (3, 0): EdgeKind.Lon,
    (1, 3): EdgeKind.Int, (3, 1): EdgeKind.Int, (2, 3): EdgeKind.Int, (3, 2): EdgeKind.Int,
    (0, 4): EdgeKind.Int, (4, 0): EdgeKind.Int,
    (1, 5): EdgeKind.Lat, (5, 1): EdgeKind.Lat, (2, 5): EdgeKind.Lat, (5, 2): EdgeKind.Lat,
    (5, 0): EdgeKind.Lat, (0, 5): EdgeKind.Lat,
}


@pytest.fixture
def table_scene():
    return table_map(), table_frame()


@pytest.fixture
def roundabout_scene():
    return roundabout_map(), roundabout_frame()


def random_frame(rng: np.random.Generator, lane_map: LaneMap, n: int) -> Frame:
    """Entities dropped near random lane points with small offsets."""
    lanes = list(lane_map)
    ents = []
    for k in range(n):
        lane = lanes[rng.integers(len(lanes))]
        s = rng.uniform(0.0, lane.length)
        p = lane.point_at(s, rng.uniform(-1.0, 1.0))
        fc_dir = lane._dir[min(int(np.searchsorted(lane._cum, s, side="right") - 1), len(lane._seg) - 1)]
        ents.append(car(k + 1, p[0], p[1], fc_dir + rng.uniform(-0.2, 0.2), rng.uniform(0, 15)))
    return Frame(0, 0, ents)
