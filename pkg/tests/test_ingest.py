import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenegnn.geometry import box_corners, wrap_angle
from scenegnn.ingest import (EntityClass, EntityState, Frame, Recording, TrackFormatError, compute_labels,
                             conflict_graph, dedup_frame, derive_speeds_from_positions,
                             max_independent_set, parse_tracks, preprocess, radius_filter, rotated_iou,
                             smooth_speeds, write_tracks)

HEADER = "case_id,track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width\n"


def ent(tid, x=0.0, y=0.0, heading=0.0, speed=0.0, frame=0, length=4.0, width=2.0, cls=EntityClass.Car):
    return EntityState(tid, frame, frame * 100, cls, x, y, heading, length, width, speed)


def recording(tracks: dict[int, list[tuple]], rid="r"):
    """tracks: track_id -> list of (frame, x, y, speed)."""
    frames = {}
    for tid, rows in tracks.items():
        for f, x, y, v in rows:
            frames.setdefault(f, []).append(ent(tid, x, y, speed=v, frame=f))
    return Recording(rid, [Frame(f, f * 100, frames[f]) for f in sorted(frames)])


# ---------------------------------------------------------------------------
# parsing


def test_parse_minimal_file():
    text = HEADER + "1,7,0,0,car,0,0,1,0,0,4,2\n1,7,1,100,car,0.1,0,1,0,0,4,2\n"
    (rec,) = parse_tracks(text)
    assert rec.id == "1" and len(rec.frames) == 2
    assert [len(f.entities) for f in rec.frames] == [1, 1]


def test_parse_speed_from_components():
    (rec,) = parse_tracks(HEADER + "a,1,0,0,truck,0,0,3,4,0,4,2\n")
    e = rec.frames[0].entities[0]
    assert e.speed == 5.0 and e.cls is EntityClass.Truck


def test_parse_keeps_duplicates_for_dedup():
    text = HEADER + "a,1,0,0,car,0,0,1,0,0,4,2\na,1,0,0,car,0.1,0,1,0,0,4,2\n"
    (rec,) = parse_tracks(text)
    assert len(rec.frames[0].entities) == 2
    assert len(dedup_frame(rec.frames[0]).entities) == 1


def test_parse_errors_name_line():
    with pytest.raises(TrackFormatError, match="line 3"):
        parse_tracks(HEADER + "a,1,0,0,car,0,0,1,0,0,4,2\na,1,1,100,car,zero,0,1,0,0,4,2\n")
    with pytest.raises(TrackFormatError, match="100 ms"):
        parse_tracks(HEADER + "a,1,0,0,car,0,0,1,0,0,4,2\na,1,1,200,car,0,0,1,0,0,4,2\n")


def test_unknown_class_maps_to_other_with_counter():
    (rec,) = parse_tracks(HEADER + "a,1,0,0,tram,0,0,1,0,0,4,2\na,2,0,0,CAR,5,0,1,0,0,4,2\n")
    assert rec.frames[0].entities[0].cls is EntityClass.Other
    assert rec.frames[0].entities[1].cls is EntityClass.Car
    assert rec.warnings["unknown_class"] == 1


def test_write_parse_round_trip():
    rng = np.random.default_rng(0)
    rows = {t: [(f, rng.normal() * 10, rng.normal() * 10, abs(rng.normal()) * 5) for f in range(5)]
            for t in (1, 2, 3)}
    rec = recording(rows, "case")
    (back,) = parse_tracks(write_tracks([rec]))
    for fa, fb in zip(rec.frames, back.frames):
        for a, b in zip(fa.entities, fb.entities):
            assert a.track_id == b.track_id and a.cls == b.cls
            for k in ("x", "y", "heading", "length", "width", "speed"):
                assert abs(getattr(a, k) - getattr(b, k)) < 1e-6


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


# ---------------------------------------------------------------------------
# IoU


def test_iou_identical_and_offset():
    assert rotated_iou((0, 0, 0, 1, 1), (0, 0, 0, 1, 1)) == pytest.approx(1.0, abs=1e-12)
    assert rotated_iou((0, 0, 0, 1, 1), (0.5, 0, 0, 1, 1)) == pytest.approx(1 / 3, abs=1e-12)
    assert rotated_iou((0, 0, 0, 1, 1), (5, 0, 0, 1, 1)) == 0.0


def mc_iou(a, b, n=1_000_000, seed=0):
    """Monte-Carlo IoU: sample the joint bounding box, test membership in each box."""
    rng = np.random.default_rng(seed)
    pa, pb = box_corners(*a), box_corners(*b)
    pts = np.vstack([pa, pb])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    samples = rng.uniform(lo, hi, size=(n, 2))

    def inside(box, p):
        x, y, h, length, width = box
        c, s = math.cos(h), math.sin(h)
        dx, dy = p[:, 0] - x, p[:, 1] - y
        u, v = c * dx + s * dy, -s * dx + c * dy
        return (np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)

    ia, ib = inside(a, samples), inside(b, samples)
    return np.sum(ia & ib) / np.sum(ia | ib)


def test_iou_rotated_square_against_monte_carlo():
    a, b = (0, 0, 0, 1, 1), (0, 0, math.pi / 4, 1, 1)
    assert abs(rotated_iou(a, b) - mc_iou(a, b)) < 1e-3


boxes = st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi),
                  st.floats(0.3, 5), st.floats(0.3, 3))


@settings(max_examples=60, deadline=None)
@given(boxes, boxes, st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50))
def test_iou_symmetric_and_rigid_invariant(a, b, ang, tx, ty):
    iou = rotated_iou(a, b)
    assert 0.0 <= iou <= 1.0
    assert abs(iou - rotated_iou(b, a)) < 1e-9
    c, s = math.cos(ang), math.sin(ang)

    def move(box):
        x, y, h, length, width = box
        return (c * x - s * y + tx, s * x + c * y + ty, h + ang, length, width)

    assert abs(rotated_iou(move(a), move(b)) - iou) < 1e-9


# ---------------------------------------------------------------------------
# dedup


def brute_force_mis_size(n, edges):
    for size in range(n, -1, -1):
        for subset in itertools.combinations(range(n), size):
            chosen = set(subset)
            if not any(i in chosen and j in chosen for i, j in edges):
                return size
    return 0


def test_dedup_no_overlap_unchanged():
    fr = Frame(0, 0, [ent(1, 0), ent(2, 10), ent(3, 20)])
    assert dedup_frame(fr).entities == fr.entities


def test_dedup_pair_keeps_smaller_track_id():
    fr = Frame(0, 0, [ent(9, 0.0), ent(4, 0.2)])
    assert rotated_iou(fr.entities[0].box, fr.entities[1].box) > 0.8
    assert [e.track_id for e in dedup_frame(fr).entities] == [4]


def test_dedup_path_of_five():
    # 4 m boxes spaced 2.5 m apart: neighbours overlap (IoU 0.23), next-neighbours do not
    fr = Frame(0, 0, [ent(k + 1, 2.5 * k) for k in range(5)])
    g = conflict_graph(fr)
    assert sorted(g.edges) == [(0, 1), (1, 2), (2, 3), (3, 4)]
    kept = dedup_frame(fr)
    assert [e.track_id for e in kept.entities] == [1, 3, 5]
    assert brute_force_mis_size(5, g.edges) == 3


def test_mis_lexicographic_tie_break():
    # 4-cycle 0-1-2-3-0: optima {0, 2} and {1, 3}
    adj = {0: {1, 3}, 1: {0, 2}, 2: {1, 3}, 3: {2, 0}}
    assert max_independent_set([0, 1, 2, 3], adj) == [0, 2]
    assert max_independent_set([0, 1, 2, 3], adj, key=lambda v: -v) == [3, 1]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_mis_matches_brute_force(n, density, seed):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < density]
    adj = {v: set() for v in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    got = max_independent_set(list(range(n)), adj)
    assert all(not (i in got and j in got) for i, j in edges)
    assert len(got) == brute_force_mis_size(n, edges)
    # lexicographically smallest among the optima
    best = min(s for s in itertools.combinations(range(n), len(got))
               if not any(i in s and j in s for i, j in edges))
    assert tuple(got) == best


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000))
def test_dedup_output_conflict_free(n, seed):
    rng = np.random.default_rng(seed)
    fr = Frame(0, 0, [ent(k + 1, rng.uniform(0, 8), rng.uniform(0, 4), rng.uniform(-3, 3)) for k in range(n)])
    out = dedup_frame(fr, 0.2)
    for a, b in itertools.combinations(out.entities, 2):
        assert rotated_iou(a.box, b.box) < 0.2
    g = conflict_graph(fr)
    assert len(out.entities) == brute_force_mis_size(n, g.edges)


def test_dedup_greedy_fallback_records_warning():
    fr = Frame(0, 0, [ent(k + 1, 0.5 * k) for k in range(30)])
    warn = Counter()
    out = dedup_frame(fr, 0.2, exact_limit=25, warnings=warn)
    assert warn["greedy_dedup"] == 1
    for a, b in itertools.combinations(out.entities, 2):
        assert rotated_iou(a.box, b.box) < 0.2


# ---------------------------------------------------------------------------
# speeds, radius, labels


def speeds_of(rec, tid):
    return [s.speed for s in rec.tracks()[tid]]


def test_smooth_examples():
    rec = recording({1: [(0, 0, 0, 0.0), (1, 0, 0, 10.0), (2, 0, 0, 0.0)]})
    assert speeds_of(smooth_speeds(rec, 0.5), 1) == [0.0, 5.0, 2.5]
    assert speeds_of(smooth_speeds(rec, 1.0), 1) == [0.0, 10.0, 0.0]
    const = recording({1: [(f, 0, 0, 5.0) for f in range(6)]})
    assert speeds_of(smooth_speeds(const, 0.3), 1) == [5.0] * 6


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 40), min_size=1, max_size=30), st.floats(0.01, 1.0))
def test_smooth_within_input_range(speeds, alpha):
    rec = recording({1: [(k, 0, 0, v) for k, v in enumerate(speeds)]})
    out = speeds_of(smooth_speeds(rec, alpha), 1)
    assert min(speeds) - 1e-9 <= min(out) and max(out) <= max(speeds) + 1e-9


def test_derive_speeds():
    still = recording({1: [(f, 3.0, 4.0, 9.0) for f in range(4)]})
    assert speeds_of(derive_speeds_from_positions(still, 0.5), 1) == [0.0] * 4
    straight = recording({1: [(f, float(f), 0.0, 0.0) for f in range(5)]})
    assert speeds_of(derive_speeds_from_positions(straight, 1.0), 1) == pytest.approx([10.0] * 5)
    # zig-zag: (0,0) (3,4) (3,0) (0,0) -> raw 50, 50, 40, 30 m/s, then EMA with alpha 0.5
    zz = recording({1: [(0, 0, 0, 0), (1, 3, 4, 0), (2, 3, 0, 0), (3, 0, 0, 0)]})
    assert speeds_of(derive_speeds_from_positions(zz, 0.5), 1) == pytest.approx([50.0, 50.0, 45.0, 37.5])
    single = recording({1: [(0, 0, 0, 3.0)]})
    out = derive_speeds_from_positions(single, 0.5)
    assert speeds_of(out, 1) == [0.0] and out.warnings["single_frame_track"] == 1


def test_radius_filter():
    near = Frame(0, 0, [ent(0), ent(1, 5), ent(2, 0, 9)])
    assert radius_filter(near, 0).entities == near.entities
    edge = Frame(0, 0, [ent(0), ent(1, 80.0)])
    assert len(radius_filter(edge, 0).entities) == 2
    mixed = Frame(0, 0, [ent(0), ent(1, 10), ent(2, 0, 50), ent(3, -30, -30), ent(4, 90), ent(5, 0, -100)])
    assert [e.track_id for e in radius_filter(mixed, 0).entities] == [0, 1, 2, 3]
    with pytest.raises(KeyError):
        radius_filter(mixed, 42)


def test_labels_examples():
    const = recording({1: [(f, 0, 0, 4.0) for f in range(15)]})
    assert all(l.value == 0.0 for l in compute_labels(const))
    ramp = recording({1: [(f, 0, 0, 5.0 + 0.2 * f) for f in range(11)]})
    (lab,) = compute_labels(ramp)
    assert lab.frame_index == 0 and lab.value == pytest.approx(2.0, abs=1e-12)
    # track 2 leaves at frame 14: labels only up to frame 4
    leave = recording({1: [(f, 0, 0, 1.0) for f in range(30)], 2: [(f, 0, 5, 1.0) for f in range(15)]})
    frames2 = [l.frame_index for l in compute_labels(leave) if l.track_id == 2]
    assert frames2 == list(range(5))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 15))
def test_label_count(length, d):
    rec = recording({1: [(f, 0, 0, float(f % 3)) for f in range(length)]})
    assert len(compute_labels(rec, d)) == max(0, length - d)


def test_preprocess_chain():
    frames = []
    for f in range(3):
        frames.append(Frame(f, f * 100, [ent(1, f, 0, speed=2.0, frame=f), ent(1, f + 0.1, 0, speed=2.0, frame=f),
                                         ent(2, 200, 0, speed=1.0, frame=f)]))
    rec = Recording("p", frames, ego_id=1)
    out = preprocess(rec)
    assert all(f.track_ids() == [1] for f in out.frames)
