"""Lane centerlines, their topology, Frenet projection and lane-pair relations.

Map file format (JSON)::

    {"lanes": [{"id": "a", "centerline": [[x, y], ...], "successors": ["b"],
                "left_parallel": null, "right_parallel": "c", "width": 3.5}]}
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import segment_intersection, wrap_angle


class LaneMapError(ValueError):
    pass


@dataclass
class Lane:
    id: str
    centerline: np.ndarray
    successors: list[str] = field(default_factory=list)
    left_parallel: str | None = None
    right_parallel: str | None = None
    width: float = 3.5

    def __post_init__(self):
        pts = np.asarray(self.centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise LaneMapError(f"lane {self.id}: centerline needs at least 2 points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0):
            raise LaneMapError(f"lane {self.id}: consecutive centerline points coincide")
        self.centerline = pts
        self._seg = seg
        self._seg_len = seg_len
        self._cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self._dir = np.arctan2(seg[:, 1], seg[:, 0])

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def parallels(self) -> list[str]:
        return [p for p in (self.left_parallel, self.right_parallel) if p]

    def point_at(self, s: float, d: float = 0.0) -> np.ndarray:
        """World point at arc length ``s`` and lateral offset ``d`` (left positive)."""
        s = min(max(s, 0.0), self.length)
        k = int(np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._seg) - 1))
        t = (s - self._cum[k]) / self._seg_len[k]
        base = self.centerline[k] + t * self._seg[k]
        u = self._seg[k] / self._seg_len[k]
        return base + d * np.array([-u[1], u[0]])

    def to_dict(self) -> dict:
        return {"id": self.id, "centerline": self.centerline.tolist(), "successors": list(self.successors),
                "left_parallel": self.left_parallel, "right_parallel": self.right_parallel,
                "width": self.width}


@dataclass(frozen=True)
class FrenetCoord:
    lane_id: str
    s: float
    d: float
    dtheta: float
    overshoot: float = 0.0  # distance past either lane end along the end segment


class RelationKind(enum.Enum):
    SameOrSuccessor = "same_or_successor"
    ParallelAdjacent = "parallel_adjacent"
    Merging = "merging"
    Crossing = "crossing"
    Unrelated = "unrelated"


@dataclass(frozen=True)
class LaneRelation:
    kind: RelationKind
    lane_a: str
    lane_b: str
    meet_point: tuple[float, float] | None = None
    s_meet_a: float | None = None
    s_meet_b: float | None = None
    meet_lane: str | None = None  # common lane of a merge

    def swapped(self) -> "LaneRelation":
        return LaneRelation(self.kind, self.lane_b, self.lane_a, self.meet_point,
                            self.s_meet_b, self.s_meet_a, self.meet_lane)


def project(point, heading: float, lane: Lane) -> FrenetCoord:
    """Frenet coordinates of ``point`` relative to ``lane``'s centerline."""
    p = np.asarray(point, dtype=float)
    rel = p - lane.centerline[:-1]
    t = np.einsum("ij,ij->i", rel, lane._seg) / (lane._seg_len ** 2)
    tc = np.clip(t, 0.0, 1.0)
    closest = lane.centerline[:-1] + tc[:, None] * lane._seg
    dist = np.hypot(p[0] - closest[:, 0], p[1] - closest[:, 1])
    k = int(np.argmin(dist))  # first minimum = smallest s on ties
    s = float(lane._cum[k] + tc[k] * lane._seg_len[k])
    u = lane._seg[k] / lane._seg_len[k]
    cross = u[0] * rel[k, 1] - u[1] * rel[k, 0]
    overshoot = 0.0
    if (k == 0 and t[k] < 0.0) or (k == len(lane._seg) - 1 and t[k] > 1.0):
        # beyond a lane end: perpendicular offset to the end segment's line
        d = float(cross)
        overshoot = float(abs(np.dot(rel[k], u) - tc[k] * lane._seg_len[k]))
    else:
        d = float(math.copysign(dist[k], cross)) if dist[k] > 0 else 0.0
    return FrenetCoord(lane.id, s, d, wrap_angle(heading - lane._dir[k]), overshoot)


class LaneMap:
    """Immutable collection of lanes; relation geometry is precomputed at load."""

    def __init__(self, lanes: Iterable[Lane], max_hops: int = 4):
        self.lanes: dict[str, Lane] = {}
        for lane in lanes:
            if lane.id in self.lanes:
                raise LaneMapError(f"duplicate lane id: {lane.id}")
            self.lanes[lane.id] = lane
        for lane in self.lanes.values():
            refs = list(lane.successors) + lane.parallels()
            for r in refs:
                if r not in self.lanes:
                    raise LaneMapError(f"lane {lane.id} references missing lane id {r!r}")
            if lane.id in lane.successors:
                raise LaneMapError(f"lane {lane.id} is its own successor")
        self.max_hops = max_hops
        self.predecessors: dict[str, list[str]] = {k: [] for k in self.lanes}
        for lane in self.lanes.values():
            for s in lane.successors:
                self.predecessors[s].append(lane.id)
        self._downstream = {k: self._reach(k, max_hops) for k in self.lanes}
        self._crossings: dict[tuple[str, str], tuple | None] = {}
        ids = list(self.lanes)
        for a in ids:
            for b in ids:
                if a != b:
                    self._crossings[(a, b)] = _first_crossing(self.lanes[a], self.lanes[b])
        self._relations: dict[tuple[str, str], LaneRelation] = {}
        for a in ids:
            for b in ids:
                self._relations[(a, b)] = self._classify(a, b)

    def __getitem__(self, lane_id: str) -> Lane:
        return self.lanes[lane_id]

    def __len__(self) -> int:
        return len(self.lanes)

    def __iter__(self):
        return iter(self.lanes.values())

    def _reach(self, start: str, max_hops: int) -> dict[str, float]:
        """Lanes reachable from ``start`` within ``max_hops`` successor hops.

        Maps lane id -> arc length from the start of ``start`` to the start of
        that lane along the shortest chain.
        """
        out = {start: 0.0}
        queue = deque([(start, 0, 0.0)])
        while queue:
            lid, hops, off = queue.popleft()
            if hops == max_hops:
                continue
            nxt_off = off + self.lanes[lid].length
            for s in self.lanes[lid].successors:
                if s not in out or nxt_off < out[s]:
                    out[s] = nxt_off
                    queue.append((s, hops + 1, nxt_off))
        return out

    def chain_offset(self, a: str, b: str) -> float | None:
        """Arc length from the start of lane ``a`` to the start of ``b`` downstream."""
        return self._downstream[a].get(b)

    def relation(self, a: str, b: str) -> LaneRelation:
        return self._relations[(a, b)]

    def _one_hop(self, lid: str) -> set[str]:
        return {lid, *self.lanes[lid].successors, *self.predecessors[lid]}

    def _classify(self, a: str, b: str) -> LaneRelation:
        R = RelationKind
        if a == b or b in self._downstream[a] or a in self._downstream[b]:
            return LaneRelation(R.SameOrSuccessor, a, b)
        if b in self.lanes[a].parallels() or a in self.lanes[b].parallels():
            return LaneRelation(R.ParallelAdjacent, a, b)
        for x in self._one_hop(a):
            for y in self._one_hop(b):
                if (x == a or y == b) and (y in self.lanes[x].parallels() or x in self.lanes[y].parallels()):
                    return LaneRelation(R.ParallelAdjacent, a, b)
        common = set(self._downstream[a]) & set(self._downstream[b])
        if common:
            # closest common lane: smallest combined chain length, then id
            c = min(common, key=lambda k: (self._downstream[a][k] + self._downstream[b][k], k))
            p = self.lanes[c].centerline[0]
            return LaneRelation(R.Merging, a, b, (float(p[0]), float(p[1])),
                                self._downstream[a][c], self._downstream[b][c], c)
        hit = self._crossings[(a, b)]
        if hit is not None:
            point, sa, sb = hit
            return LaneRelation(R.Crossing, a, b, point, sa, sb)
        return LaneRelation(R.Unrelated, a, b)

    def to_json(self) -> str:
        return json.dumps({"lanes": [l.to_dict() for l in self.lanes.values()]}, indent=1)

    def transformed(self, angle: float, shift) -> "LaneMap":
        """Copy of the map under a rotation by ``angle`` followed by ``shift``."""
        rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        lanes = [Lane(l.id, l.centerline @ rot.T + np.asarray(shift, dtype=float), list(l.successors),
                      l.left_parallel, l.right_parallel, l.width) for l in self.lanes.values()]
        return LaneMap(lanes, self.max_hops)


def _first_crossing(a: Lane, b: Lane):
    """First geometric intersection of two centerlines by arc length along ``a``.

    Touches where the point is an endpoint of both lanes are topology joints
    (forks, merges) and are not reported as crossings.
    """
    best = None
    for i in range(len(a._seg)):
        for j in range(len(b._seg)):
            hit = segment_intersection(a.centerline[i], a.centerline[i + 1],
                                       b.centerline[j], b.centerline[j + 1])
            if hit is None:
                continue
            t, u = hit
            sa = float(a._cum[i] + t * a._seg_len[i])
            sb = float(b._cum[j] + u * b._seg_len[j])
            end_a = sa <= 1e-9 or sa >= a.length - 1e-9
            end_b = sb <= 1e-9 or sb >= b.length - 1e-9
            if end_a and end_b:
                continue
            if best is None or sa < best[1] - 1e-12:
                p = a.centerline[i] + t * a._seg[i]
                best = ((float(p[0]), float(p[1])), sa, sb)
    return best


def classify_lane_pair(a: Lane | str, b: Lane | str, lane_map: LaneMap, max_hops: int | None = None) -> LaneRelation:
    """Relation between two lanes; precedence same/successor > parallel > merging > crossing."""
    a_id = a.id if isinstance(a, Lane) else a
    b_id = b.id if isinstance(b, Lane) else b
    for lid in (a_id, b_id):
        if lid not in lane_map.lanes:
            raise LaneMapError(f"unknown lane id {lid!r}")
    if max_hops is None or max_hops == lane_map.max_hops:
        return lane_map.relation(a_id, b_id)
    return LaneMap(lane_map.lanes.values(), max_hops).relation(a_id, b_id)


def _longitudinal_position(point, lane_map: LaneMap, lane_id: str) -> float:
    """Arc length of ``point`` in ``lane_id``'s coordinates, extended one hop past either end."""
    lane = lane_map[lane_id]
    fc = project(point, 0.0, lane)
    if fc.overshoot <= 0.0:
        return fc.s
    options = []
    if fc.s >= lane.length:
        for nxt in lane.successors:
            q = project(point, 0.0, lane_map[nxt])
            options.append((abs(q.d) + q.overshoot, lane.length + q.s))
    else:
        for prv in lane_map.predecessors[lane_id]:
            q = project(point, 0.0, lane_map[prv])
            options.append((abs(q.d) + q.overshoot, q.s - lane_map[prv].length))
    options.append((abs(fc.d) + fc.overshoot, fc.s + (fc.overshoot if fc.s > 0 else -fc.overshoot)))
    return min(options)[1]


def distance_to_meet(coord: FrenetCoord, relation: LaneRelation, lane_map: LaneMap) -> float:
    """Signed arc length from ``coord`` to the relation's meet point (negative once past it)."""
    if relation.kind not in (RelationKind.Merging, RelationKind.Crossing):
        raise LaneMapError(f"relation {relation.kind.name} has no meet point")
    if coord.lane_id == relation.lane_a:
        return relation.s_meet_a - coord.s
    if coord.lane_id == relation.lane_b:
        return relation.s_meet_b - coord.s
    if relation.meet_lane is not None:
        off = lane_map.chain_offset(relation.meet_lane, coord.lane_id)
        if off is not None:
            return -(off + coord.s)
    raise LaneMapError(f"lane {coord.lane_id} is not part of the {relation.kind.name} relation")


def path_distance(frm: FrenetCoord, to: FrenetCoord, relation: LaneRelation, lane_map: LaneMap) -> float:
    """Signed distance along the road from ``frm`` to ``to``; positive when ``to`` is ahead."""
    R = RelationKind
    kind = relation.kind
    if kind is R.Unrelated:
        raise LaneMapError("path_distance is undefined for unrelated lanes")
    if kind is R.SameOrSuccessor:
        a, b = frm.lane_id, to.lane_id
        if a == b:
            return to.s - frm.s
        off = lane_map.chain_offset(a, b)
        if off is not None:
            return off + to.s - frm.s
        off = lane_map.chain_offset(b, a)
        if off is not None:
            return to.s - (off + frm.s)
        raise LaneMapError(f"no successor chain between {a} and {b}")
    if kind is R.ParallelAdjacent:
        lane = lane_map[to.lane_id]
        point = lane.point_at(to.s, to.d)
        return _longitudinal_position(point, lane_map, frm.lane_id) - frm.s
    if kind is R.Merging:
        return distance_to_meet(frm, relation, lane_map) - distance_to_meet(to, relation, lane_map)
    # crossing: only the tail's own distance to the intersection point counts
    return distance_to_meet(frm, relation, lane_map)


def load_lane_map(text: str, max_hops: int = 4) -> LaneMap:
    """Parse the lane-map JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LaneMapError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("lanes"), list):
        raise LaneMapError("lane map must be an object with a 'lanes' list")
    lanes = []
    for k, entry in enumerate(doc["lanes"]):
        try:
            lanes.append(Lane(
                id=str(entry["id"]),
                centerline=np.asarray(entry["centerline"], dtype=float),
                successors=[str(s) for s in entry.get("successors", [])],
                left_parallel=entry.get("left_parallel"),
                right_parallel=entry.get("right_parallel"),
                width=float(entry.get("width", 3.5)),
            ))
        except KeyError as exc:
            raise LaneMapError(f"lane #{k}: missing field {exc}") from exc
    return LaneMap(lanes, max_hops)
