"""Track recordings: CSV parsing, duplicate removal, speed smoothing and labels.

The CSV layout follows the INTERACTION track files::

    case_id,track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width[,motion_state]

Rows of one ``case_id`` form one :class:`Recording`, sampled at 10 Hz.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .geometry import box_corners, clip_convex, polygon_area, wrap_angle

log = logging.getLogger(__name__)

FREQUENCY_HZ = 10
STEP_MS = 100
DT = STEP_MS / 1000.0

HEADER = ["case_id", "track_id", "frame_id", "timestamp_ms", "agent_type",
          "x", "y", "vx", "vy", "psi_rad", "length", "width"]


class EntityClass(enum.Enum):
    Car = 0
    Truck = 1
    Bus = 2
    Pedestrian = 3
    Bicycle = 4
    Motorcycle = 5
    Other = 6

    @classmethod
    def parse(cls, text: str) -> "EntityClass | None":
        key = text.strip().lower()
        for member in cls:
            if member.name.lower() == key:
                return member
        return None


class MotionState(enum.Enum):
    Parked = "parked"
    Stopped = "stopped"
    Driving = "driving"


class TrackFormatError(ValueError):
    """Malformed track file; the message names the offending line."""


@dataclass(frozen=True)
class EntityState:
    track_id: int
    frame_index: int
    timestamp: int
    cls: EntityClass
    x: float
    y: float
    heading: float
    length: float
    width: float
    speed: float
    motion_state: MotionState | None = None

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"track {self.track_id}: extents must be positive")
        if self.speed < 0:
            raise ValueError(f"track {self.track_id}: negative speed")

    @property
    def box(self) -> tuple[float, float, float, float, float]:
        return (self.x, self.y, self.heading, self.length, self.width)


@dataclass
class Frame:
    frame_index: int
    timestamp: int
    entities: list[EntityState]

    def track_ids(self) -> list[int]:
        return [e.track_id for e in self.entities]

    def get(self, track_id: int) -> EntityState | None:
        for e in self.entities:
            if e.track_id == track_id:
                return e
        return None


@dataclass
class Recording:
    id: str
    frames: list[Frame]
    ego_id: int | None = None
    frequency: int = FREQUENCY_HZ
    warnings: Counter = field(default_factory=Counter)

    def tracks(self) -> dict[int, list[EntityState]]:
        """Per-track states in time order."""
        out: dict[int, list[EntityState]] = defaultdict(list)
        for fr in self.frames:
            for e in fr.entities:
                out[e.track_id].append(e)
        return dict(out)

    def map_entities(self, fn) -> "Recording":
        frames = [Frame(f.frame_index, f.timestamp, [fn(e) for e in f.entities]) for f in self.frames]
        return Recording(self.id, frames, self.ego_id, self.frequency, Counter(self.warnings))


@dataclass(frozen=True)
class ConflictGraph:
    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]  # (i, j) with i < j

    def adjacency(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {v: set() for v in self.nodes}
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def components(self) -> list[list[int]]:
        adj = self.adjacency()
        seen: set[int] = set()
        comps = []
        for v in self.nodes:
            if v in seen:
                continue
            stack, comp = [v], []
            seen.add(v)
            while stack:
                u = stack.pop()
                comp.append(u)
                for w in adj[u]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            comps.append(sorted(comp))
        return comps


@dataclass(frozen=True)
class AccelerationLabel:
    track_id: int
    frame_index: int
    value: float


# ---------------------------------------------------------------------------
# parsing / writing


def parse_tracks(text: str | io.TextIOBase, format: str = "TrackCsv") -> list[Recording]:
    """Parse a track CSV into one recording per ``case_id``."""
    if format != "TrackCsv":
        raise ValueError(f"unsupported track format: {format!r}")
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise TrackFormatError("line 1: empty file") from None
    missing = [h for h in HEADER if h not in header]
    if missing:
        raise TrackFormatError(f"line 1: header lacks columns {missing}")
    col = {h: k for k, h in enumerate(header)}
    has_motion = "motion_state" in col

    rows: dict[str, list[EntityState]] = defaultdict(list)
    warnings: dict[str, Counter] = defaultdict(Counter)
    order: list[str] = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(HEADER):
            raise TrackFormatError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
        try:
            case = row[col["case_id"]].strip()
            vx = float(row[col["vx"]])
            vy = float(row[col["vy"]])
            cls = EntityClass.parse(row[col["agent_type"]])
            if cls is None:
                cls = EntityClass.Other
                warnings[case]["unknown_class"] += 1
            motion = None
            if has_motion and col["motion_state"] < len(row) and row[col["motion_state"]].strip():
                motion = MotionState(row[col["motion_state"]].strip().lower())
            state = EntityState(
                track_id=int(row[col["track_id"]]),
                frame_index=int(row[col["frame_id"]]),
                timestamp=int(round(float(row[col["timestamp_ms"]]))),
                cls=cls,
                x=float(row[col["x"]]),
                y=float(row[col["y"]]),
                heading=wrap_angle(float(row[col["psi_rad"]])),
                length=float(row[col["length"]]),
                width=float(row[col["width"]]),
                speed=math.hypot(vx, vy),
                motion_state=motion,
            )
        except (ValueError, IndexError) as exc:
            raise TrackFormatError(f"line {line_no}: {exc}") from exc
        if case not in rows:
            order.append(case)
        rows[case].append(state)

    recordings = []
    for case in order:
        by_ts: dict[int, list[EntityState]] = defaultdict(list)
        for s in rows[case]:
            by_ts[s.timestamp].append(s)
        stamps = sorted(by_ts)
        steps = set(np.diff(stamps).tolist())
        if steps and steps != {STEP_MS}:
            raise TrackFormatError(
                f"case {case}: frame step must be a constant {STEP_MS} ms, found {sorted(steps)}")
        frames = [Frame(by_ts[t][0].frame_index, t, by_ts[t]) for t in stamps]
        rec = Recording(case, frames, warnings=warnings[case])
        if warnings[case]["unknown_class"]:
            log.warning("case %s: %d rows with unknown agent type mapped to Other",
                        case, warnings[case]["unknown_class"])
        recordings.append(rec)
    return recordings


def write_tracks(recordings: Iterable[Recording]) -> str:
    """Serialise recordings back into the track CSV layout."""
    buf = io.StringIO()
    buf.write(",".join(HEADER + ["motion_state"]) + "\n")
    for rec in recordings:
        for fr in rec.frames:
            for e in fr.entities:
                vx = e.speed * math.cos(e.heading)
                vy = e.speed * math.sin(e.heading)
                motion = e.motion_state.value if e.motion_state else ""
                buf.write(f"{rec.id},{e.track_id},{e.frame_index},{e.timestamp},"
                          f"{e.cls.name.lower()},{e.x:.9f},{e.y:.9f},{vx:.9f},{vy:.9f},"
                          f"{e.heading:.12f},{e.length:.6f},{e.width:.6f},{motion}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# duplicate removal


def rotated_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of two oriented boxes given as ``(x, y, heading, length, width)``."""
    pa = box_corners(*a)
    pb = box_corners(*b)
    area_a = a[3] * a[4]
    area_b = b[3] * b[4]
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a[3], a[4])
    rb = 0.5 * math.hypot(b[3], b[4])
    if math.hypot(a[0] - b[0], a[1] - b[1]) > ra + rb:
        return 0.0
    inter = polygon_area(clip_convex(pa, pb))
    inter = min(max(inter, 0.0), area_a, area_b)
    union = area_a + area_b - inter
    return float(inter / union) if union > 0 else 0.0


def conflict_graph(frame: Frame, threshold: float = 0.2) -> ConflictGraph:
    """Conflicts are pairs with IoU >= threshold, or sharing a track id."""
    ents = frame.entities
    edges = set()
    for i in range(len(ents)):
        for j in range(i + 1, len(ents)):
            if ents[i].track_id == ents[j].track_id or rotated_iou(ents[i].box, ents[j].box) >= threshold:
                edges.add((i, j))
    return ConflictGraph(tuple(range(len(ents))), frozenset(edges))


def max_independent_set(nodes: Sequence[int], adjacency: dict[int, set[int]],
                        key=None) -> list[int]:
    """Exact maximum independent set by branch and bound.

    Among all maximum sets the one whose sorted ``key`` tuple is
    lexicographically smallest is returned. Vertices are branched in key
    order, include-first, and only strictly larger sets replace the
    incumbent, so the first optimum found is the lexicographic minimum.
    """
    key = key or (lambda v: v)
    order = sorted(nodes, key=key)
    pos = {v: k for k, v in enumerate(order)}
    n = len(order)
    adj = [0] * n
    for v in order:
        for w in adjacency.get(v, ()):
            if w in pos:
                adj[pos[v]] |= 1 << pos[w]
    best = [0, -1]  # mask, size

    def search(cand: int, chosen: int, size: int):
        if size + cand.bit_count() <= best[1]:
            return
        if cand == 0:
            best[0], best[1] = chosen, size
            return
        low = cand & -cand
        v = low.bit_length() - 1
        search(cand & ~adj[v] & ~low, chosen | low, size + 1)
        search(cand & ~low, chosen, size)

    search((1 << n) - 1, 0, 0)
    return [order[k] for k in range(n) if best[0] >> k & 1]


def greedy_independent_set(nodes: Sequence[int], adjacency: dict[int, set[int]], key=None) -> list[int]:
    """Drop the highest-degree vertex (largest key on ties) until no conflicts remain."""
    key = key or (lambda v: v)
    alive = set(nodes)
    adj = {v: set(adjacency.get(v, ())) & alive for v in alive}
    while True:
        worst = max(alive, key=lambda v: (len(adj[v]), key(v)), default=None)
        if worst is None or not adj[worst]:
            break
        alive.discard(worst)
        for w in adj.pop(worst):
            adj[w].discard(worst)
    return sorted(alive, key=key)


def dedup_frame(frame: Frame, threshold: float = 0.2, exact_limit: int = 25,
                warnings: Counter | None = None) -> Frame:
    """Remove duplicate annotations, keeping a maximum conflict-free subset."""
    graph = conflict_graph(frame, threshold)
    if not graph.edges:
        return frame
    adj = graph.adjacency()
    ents = frame.entities

    def key(v):
        return (ents[v].track_id, v)

    kept: list[int] = []
    for comp in graph.components():
        if len(comp) == 1:
            kept.extend(comp)
        elif len(comp) > exact_limit:
            log.warning("frame %d: conflict component of %d nodes, using greedy removal",
                        frame.frame_index, len(comp))
            if warnings is not None:
                warnings["greedy_dedup"] += 1
            kept.extend(greedy_independent_set(comp, adj, key))
        else:
            kept.extend(max_independent_set(comp, adj, key))
    kept.sort()
    return Frame(frame.frame_index, frame.timestamp, [ents[k] for k in kept])


# ---------------------------------------------------------------------------
# speeds, filtering, labels


def smooth_speeds(recording: Recording, alpha: float = 0.5) -> Recording:
    """Per-track exponential moving average of speed, seeded with the first value."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    state: dict[int, float] = {}

    def smooth(e: EntityState) -> EntityState:
        prev = state.get(e.track_id)
        value = e.speed if prev is None else alpha * e.speed + (1.0 - alpha) * prev
        state[e.track_id] = value
        return replace(e, speed=value)

    return recording.map_entities(smooth)


def derive_speeds_from_positions(recording: Recording, alpha: float = 0.5) -> Recording:
    """Replace speeds by finite differences of positions, then smooth them."""
    raw: dict[tuple[int, int], float] = {}
    warnings = Counter(recording.warnings)
    for tid, states in recording.tracks().items():
        if len(states) == 1:
            log.warning("track %d has a single frame; speed set to 0", tid)
            warnings["single_frame_track"] += 1
            raw[(tid, states[0].frame_index)] = 0.0
            continue
        speeds = []
        for prev, cur in zip(states[:-1], states[1:]):
            dt = (cur.timestamp - prev.timestamp) / 1000.0
            speeds.append(math.hypot(cur.x - prev.x, cur.y - prev.y) / dt)
        speeds.insert(0, speeds[0])
        for s, v in zip(states, speeds):
            raw[(tid, s.frame_index)] = v
    rec = recording.map_entities(lambda e: replace(e, speed=raw[(e.track_id, e.frame_index)]))
    rec.warnings = warnings
    return smooth_speeds(rec, alpha)


def radius_filter(frame: Frame, ego_id: int, radius: float = 80.0) -> Frame:
    """Keep the ego and every entity whose centre lies within ``radius`` (inclusive)."""
    ego = frame.get(ego_id)
    if ego is None:
        raise KeyError(f"ego {ego_id} absent from frame {frame.frame_index}")
    kept = [e for e in frame.entities
            if e.track_id == ego_id or math.hypot(e.x - ego.x, e.y - ego.y) <= radius]
    return Frame(frame.frame_index, frame.timestamp, kept)


def compute_labels(recording: Recording, delta_frames: int = 10) -> list[AccelerationLabel]:
    """Acceleration over the next ``delta_frames`` steps from speed differences."""
    if delta_frames < 1:
        raise ValueError("delta_frames must be >= 1")
    horizon = delta_frames * DT
    labels = []
    for tid, states in recording.tracks().items():
        by_frame = {s.frame_index: s for s in states}
        for s in states:
            fut = by_frame.get(s.frame_index + delta_frames)
            if fut is not None:
                labels.append(AccelerationLabel(tid, s.frame_index, (fut.speed - s.speed) / horizon))
    labels.sort(key=lambda l: (l.frame_index, l.track_id))
    return labels


def preprocess(recording: Recording, *, iou_threshold: float = 0.2, alpha: float = 0.5,
               speeds_from_positions: bool = False, radius: float | None = 80.0) -> Recording:
    """Dedup every frame, (re)derive or smooth speeds, then apply the ego radius."""
    warnings = Counter(recording.warnings)
    frames = [dedup_frame(f, iou_threshold, warnings=warnings) for f in recording.frames]
    rec = Recording(recording.id, frames, recording.ego_id, recording.frequency, warnings)
    rec = derive_speeds_from_positions(rec, alpha) if speeds_from_positions else smooth_speeds(rec, alpha)
    if radius is not None and rec.ego_id is not None:
        rec.frames = [radius_filter(f, rec.ego_id, radius) if f.get(rec.ego_id) else f
                      for f in rec.frames]
    return rec
