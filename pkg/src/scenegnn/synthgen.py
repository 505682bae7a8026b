"""Deterministic synthetic traffic: IDM car following on small lane layouts.

Each template defines a lane map and one or more routes (lane chains).
Vehicles on a route follow the Intelligent Driver Model; on the merge
template both incoming routes share one queue ordered by distance to the
merge point. The front vehicle of each queue drives a scripted acceleration
schedule and followers react to what they saw a short, per-driver delay
ago; both make the recent history informative for prediction.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ingest import (DT, STEP_MS, EntityClass, EntityState, Frame, Recording, compute_labels,
                     smooth_speeds, write_tracks)
from .lanemap import Lane, LaneMap


class Template(enum.Enum):
    StraightFollow = "straight_follow"
    ParallelLanes = "parallel_lanes"
    Merge = "merge"
    Crossing = "crossing"


@dataclass(frozen=True)
class IdmParams:
    v0: float = 12.0
    T: float = 1.5
    a_max: float = 1.5
    b: float = 2.0
    s0: float = 2.0

    def acceleration(self, v: float, gap: float | None, dv: float, v0: float | None = None) -> float:
        """IDM acceleration; ``gap=None`` means free road."""
        v0 = self.v0 if v0 is None else v0
        free = 1.0 - (v / v0) ** 4
        if gap is None:
            return self.a_max * free
        s_star = self.s0 + v * self.T + v * dv / (2.0 * math.sqrt(self.a_max * self.b))
        return self.a_max * (free - (s_star / gap) ** 2)


@dataclass(frozen=True)
class ScenarioSpec:
    template: Template = Template.StraightFollow
    n_vehicles: int = 12
    duration_s: float = 2.7
    idm: IdmParams = IdmParams()
    noise_std: float = 0.03
    seed: int = 0
    v0_spread: float = 0.4  # per-vehicle desired speed factor in [1-spread, 1+spread]
    driver_spread: float = 0.6  # per-vehicle headway and a_max factors, same form
    reaction_s: tuple[float, float] = (0.7, 1.4)  # per-follower perception delay range, seconds
    warmup_s: float = 3.0
    max_initial_gap: float = 35.0
    # (start time s, acceleration m/s^2 or None for free driving); None = random schedule
    lead_schedule: tuple[tuple[float, float | None], ...] | None = None
    lead_segment_s: tuple[float, float] = (5.0, 10.0)
    lead_accel_range: tuple[float, float] = (-2.5, 1.5)
    lead_free_prob: float = 0.1
    smooth_alpha: float = 0.5

    def __post_init__(self):
        if self.duration_s <= 0 or self.n_vehicles < 1:
            raise ValueError("duration must be positive and n_vehicles >= 1")
        if min(asdict(self.idm).values()) <= 0:
            raise ValueError("IDM parameters must be positive")
        if self.max_initial_gap <= self.idm.s0:
            raise ValueError(f"initial gap range up to {self.max_initial_gap} m lies below s0 = {self.idm.s0} m")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["template"] = self.template.value
        return d


# vehicle classes: (class, length, width, a_max factor, T factor, probability)
_CLASSES = [
    (EntityClass.Car, 4.5, 1.8, 1.0, 1.0, 0.8),
    (EntityClass.Truck, 10.0, 2.5, 0.6, 1.3, 0.12),
    (EntityClass.Bus, 12.0, 2.5, 0.7, 1.2, 0.08),
]


@dataclass
class _Route:
    lanes: list[str]
    meet_offset: float = 0.0  # route arc length at which the shared queue coordinate is zero
    queue: int = 0


@dataclass
class _Vehicle:
    track_id: int
    route: int
    p: float
    v: float
    v0: float
    cls: EntityClass
    length: float
    width: float
    idm: IdmParams
    schedule: list[tuple[float, float | None]] = field(default_factory=list)
    delay: int = 0  # reaction time in steps


def template_map(template: Template, origin=(0.0, 0.0)) -> tuple[LaneMap, list[_Route]]:
    """Lane map and routes of a template, translated to ``origin``."""
    ox, oy = origin
    pre = template.value
    L = []

    def lane(name, pts, succ=(), left=None, right=None):
        pts = np.asarray(pts, dtype=float) + (ox, oy)
        L.append(Lane(f"{pre}/{name}", pts, [f"{pre}/{s}" for s in succ],
                      f"{pre}/{left}" if left else None, f"{pre}/{right}" if right else None))

    if template is Template.StraightFollow:
        for k in range(4):
            lane(f"s{k}", [(100.0 * k, 0.0), (100.0 * (k + 1), 0.0)], [f"s{k + 1}"] if k < 3 else [])
        routes = [_Route([f"s{k}" for k in range(4)])]
    elif template is Template.ParallelLanes:
        for k in range(3):
            nxt = k + 1 if k < 2 else None
            lane(f"r{k}", [(150.0 * k, 0.0), (150.0 * (k + 1), 0.0)], [f"r{nxt}"] if nxt else [], left=f"l{k}")
            lane(f"l{k}", [(150.0 * k, 3.5), (150.0 * (k + 1), 3.5)], [f"l{nxt}"] if nxt else [], right=f"r{k}")
        routes = [_Route(["r0", "r1", "r2"], queue=0), _Route(["l0", "l1", "l2"], queue=1)]
    elif template is Template.Merge:
        ang = math.radians(30.0)
        start = (150.0 - 120.0 * math.cos(ang), -120.0 * math.sin(ang))
        lane("m0", [(0.0, 0.0), (150.0, 0.0)], ["m1"])
        lane("ramp", [start, (150.0, 0.0)], ["m1"])
        lane("m1", [(150.0, 0.0), (450.0, 0.0)])
        routes = [_Route(["m0", "m1"], meet_offset=150.0), _Route(["ramp", "m1"], meet_offset=120.0)]
    elif template is Template.Crossing:
        lane("ew0", [(0.0, 0.0), (150.0, 0.0)], ["ew1"])
        lane("ew1", [(150.0, 0.0), (400.0, 0.0)])
        lane("ns0", [(150.0, -150.0), (150.0, -10.0)], ["ns1"])
        lane("ns1", [(150.0, -10.0), (150.0, 250.0)])
        routes = [_Route(["ew0", "ew1"], meet_offset=150.0, queue=0),
                  _Route(["ns0", "ns1"], meet_offset=150.0, queue=1)]
    else:  # pragma: no cover
        raise ValueError(template)
    for r in routes:
        r.lanes = [f"{pre}/{x}" for x in r.lanes]
    return LaneMap(L), routes


def _route_pose(lane_map: LaneMap, route: _Route, p: float):
    """World pose at route arc length ``p``; None once past the route end."""
    for lid in route.lanes:
        lane = lane_map[lid]
        if p <= lane.length:
            pt = lane.point_at(p)
            k = int(np.clip(np.searchsorted(lane._cum, p, side="right") - 1, 0, len(lane._seg) - 1))
            return lid, float(pt[0]), float(pt[1]), float(lane._dir[k])
        p -= lane.length
    return None


def _random_schedule(spec: ScenarioSpec, rng: np.random.Generator, horizon: float) -> list[tuple[float, float | None]]:
    out, t = [], 0.0
    while t < horizon:
        accel = None if rng.random() < spec.lead_free_prob else float(rng.uniform(*spec.lead_accel_range))
        out.append((t, accel))
        t += float(rng.uniform(*spec.lead_segment_s))
    return out


def _scheduled(schedule, t: float) -> float | None:
    current = None
    for start, accel in schedule:
        if start <= t + 1e-9:
            current = accel
        else:
            break
    return current


def _spawn(spec: ScenarioSpec, routes: list[_Route], rng: np.random.Generator) -> list[_Vehicle]:
    n_queues = max(r.queue for r in routes) + 1
    queues: list[list[int]] = [[] for _ in range(n_queues)]
    # vehicles are dealt round-robin to queues, and inside a queue to a random route
    for k in range(spec.n_vehicles):
        queues[k % n_queues].append(k)
    vehicles: list[_Vehicle] = []
    horizon = spec.warmup_s + spec.duration_s + 1.0
    probs = [c[-1] for c in _CLASSES]
    for q, members in enumerate(queues):
        q_routes = [i for i, r in enumerate(routes) if r.queue == q]
        placed = []
        coord, prev_len = 0.0, None
        for rank, k in enumerate(members):
            cls, length, width, a_f, t_f, _ = _CLASSES[rng.choice(len(_CLASSES), p=probs)]
            if spec.driver_spread > 0:
                t_f *= float(rng.uniform(1.0 - spec.driver_spread, 1.0 + spec.driver_spread))
                a_f *= float(rng.uniform(1.0 - spec.driver_spread, 1.0 + spec.driver_spread))
            idm = IdmParams(spec.idm.v0, spec.idm.T * t_f, spec.idm.a_max * a_f, spec.idm.b, spec.idm.s0)
            if prev_len is not None:
                gap = float(rng.uniform(min(spec.idm.s0 + 1.0, spec.max_initial_gap), spec.max_initial_gap))
                coord -= gap + 0.5 * (prev_len + length)
            route = q_routes[int(rng.integers(len(q_routes)))]
            v0 = spec.idm.v0 * float(rng.uniform(1.0 - spec.v0_spread, 1.0 + spec.v0_spread))
            v = v0 * float(rng.uniform(0.4, 1.0))
            veh = _Vehicle(k + 1, route, coord, v, v0, cls, length, width, idm)
            lo, hi = spec.reaction_s
            if hi > 0:
                veh.delay = int(round(float(rng.uniform(lo, hi)) / DT))
            if rank == 0:
                veh.schedule = (list(spec.lead_schedule) if spec.lead_schedule is not None
                                else _random_schedule(spec, rng, horizon))
            placed.append(veh)
            prev_len = length
        # shift the queue so its rearmost vehicle starts a few metres into its route
        shift = 5.0 + float(rng.uniform(0.0, 10.0)) - min(v.p + routes[v.route].meet_offset for v in placed)
        for v in placed:
            v.p += shift + routes[v.route].meet_offset
        vehicles.extend(placed)
    return vehicles


def _queue_coord(v: _Vehicle, routes: list[_Route]) -> float:
    return v.p - routes[v.route].meet_offset


def _leaders(vehicles: list[_Vehicle], routes: list[_Route]) -> dict[int, _Vehicle | None]:
    out: dict[int, _Vehicle | None] = {}
    by_queue: dict[int, list[_Vehicle]] = {}
    for v in vehicles:
        by_queue.setdefault(routes[v.route].queue, []).append(v)
    for members in by_queue.values():
        members = sorted(members, key=lambda v: -_queue_coord(v, routes))
        out[members[0].track_id] = None
        for ahead, v in zip(members[:-1], members[1:]):
            out[v.track_id] = ahead
    return out


def simulate(spec: ScenarioSpec):
    """Run the IDM simulation; returns (lane map, routes, per-step vehicle snapshots)."""
    rng = np.random.default_rng(spec.seed)
    lane_map, routes = template_map(spec.template)
    vehicles = _spawn(spec, routes, rng)
    leaders = _leaders(vehicles, routes)
    for v in vehicles:
        lead = leaders[v.track_id]
        if lead is not None:
            gap = _queue_coord(lead, routes) - _queue_coord(v, routes) - 0.5 * (lead.length + v.length)
            if gap < spec.idm.s0:
                raise ValueError(f"initial gap {gap:.2f} m below s0 for vehicle {v.track_id}")
    n_warm = int(round(spec.warmup_s / DT))
    n_rec = int(round(spec.duration_s / DT))
    snapshots = []
    # past (queue coordinate, speed) per vehicle, for delayed perception
    past: dict[int, list[tuple[float, float]]] = {v.track_id: [] for v in vehicles}
    for step in range(n_warm + n_rec):
        t = step * DT
        if step >= n_warm:
            snapshots.append([(v.track_id, v.route, v.p, v.v, v) for v in vehicles])
        for v in vehicles:
            past[v.track_id].append((_queue_coord(v, routes), v.v))
        accel = {}
        for v in vehicles:
            lead = leaders[v.track_id]
            if lead is None:
                a = _scheduled(v.schedule, t)
                if a is None:
                    a = v.idm.acceleration(v.v, None, 0.0, v.v0)
            else:
                gap = _queue_coord(lead, routes) - _queue_coord(v, routes) - 0.5 * (lead.length + v.length)
                a = v.idm.acceleration(v.v, gap, v.v - lead.v, v.v0)
                if v.delay > 0:
                    # the driver reacts to what it saw ``delay`` steps ago, unless the
                    # present situation already calls for harder than comfortable braking
                    k = max(0, len(past[v.track_id]) - 1 - v.delay)
                    (q_l, v_l), (q_f, v_f) = past[lead.track_id][k], past[v.track_id][k]
                    gap_d = max(q_l - q_f - 0.5 * (lead.length + v.length), 0.1)
                    a_d = v.idm.acceleration(v_f, gap_d, v_f - v_l, v.v0)
                    a = min(a_d, a) if a < -v.idm.b else a_d
            accel[v.track_id] = a
        for v in vehicles:
            v.v = max(0.0, v.v + accel[v.track_id] * DT)
            v.p += v.v * DT
    return lane_map, routes, snapshots


def generate(spec: ScenarioSpec, recording_id: str | None = None) -> tuple[Recording, LaneMap]:
    """Simulate one scenario into a recording (noisy, smoothed speeds) and its lane map."""
    lane_map, routes, snapshots = simulate(spec)
    rng = np.random.default_rng([spec.seed, 1])
    frames = []
    for k, snap in enumerate(snapshots):
        ents = []
        for tid, route, p, v, veh in snap:
            pose = _route_pose(lane_map, routes[route], p)
            if pose is None:
                continue
            _, x, y, heading = pose
            speed = v + (float(rng.normal(0.0, spec.noise_std)) if spec.noise_std > 0 else 0.0)
            ents.append(EntityState(tid, k, k * STEP_MS, veh.cls, x, y, heading, veh.length,
                                    veh.width, max(speed, 0.0)))
        frames.append(Frame(k, k * STEP_MS, ents))
    rec = Recording(recording_id or f"{spec.template.value}-{spec.seed}", frames)
    if spec.noise_std > 0:
        rec = smooth_speeds(rec, spec.smooth_alpha)
    return rec, lane_map


# ---------------------------------------------------------------------------
# benchmark


TEMPLATE_MIX = ((Template.StraightFollow, 40), (Template.ParallelLanes, 20),
                (Template.Merge, 20), (Template.Crossing, 40))


def benchmark_specs(seed: int = 0, mix=TEMPLATE_MIX, **overrides) -> list[tuple[str, ScenarioSpec]]:
    out = []
    k = 0
    for template, count in mix:
        for _ in range(count):
            sub_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
            out.append((f"{template.value}-{k:03d}", ScenarioSpec(template=template, seed=sub_seed, **overrides)))
            k += 1
    return out


def make_benchmark(seed: int = 0, out_dir: str | Path | None = None, mix=TEMPLATE_MIX,
                   **overrides) -> tuple[list[Recording], LaneMap, dict]:
    """Generate the benchmark; optionally write tracks.csv, map.json and manifest.json.

    All templates share one lane map (their lane ids are template-prefixed).
    """
    recordings = []
    maps: dict[Template, LaneMap] = {}
    for rid, spec in benchmark_specs(seed, mix, **overrides):
        rec, lane_map = generate(spec, rid)
        recordings.append(rec)
        maps.setdefault(spec.template, lane_map)
    lanes = [lane for m in maps.values() for lane in m]
    combined = LaneMap(lanes)
    labelled = 0
    for rec in recordings:
        labelled += len({lab.frame_index for lab in compute_labels(rec)})
    manifest = {
        "seed": seed,
        "n_recordings": len(recordings),
        "template_counts": {t.value: c for t, c in mix},
        "labelled_frames": labelled,
        "specs": {rid: spec.to_dict() for rid, spec in benchmark_specs(seed, mix, **overrides)},
    }
    tracks = write_tracks(recordings)
    manifest["tracks_sha256"] = hashlib.sha256(tracks.encode()).hexdigest()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "tracks.csv").write_text(tracks)
        (out / "map.json").write_text(combined.to_json())
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return recordings, combined, manifest


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()
