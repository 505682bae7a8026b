"""Scene graphs: lane assignment, typed relation edges and the COO encoding.

Nodes are traffic participants. Directed edges carry a relation type
(longitudinal, lateral, intersecting), a probability equal to the product of
both endpoints' lane-assignment probabilities, and a signed along-road
distance.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import EntityClass, EntityState, Frame
from .lanemap import (FrenetCoord, LaneMap, RelationKind, distance_to_meet, path_distance,
                      project)

N_CLASSES = len(EntityClass)
NODE_DIM = N_CLASSES + 1
EDGE_DIM = 5


class EdgeKind(enum.Enum):
    Lon = 0
    Lat = 1
    Int = 2


@dataclass(frozen=True)
class GraphParams:
    gate_d: float = 3.0
    gate_dtheta: float = math.pi / 2
    sigma_d: float = 1.0
    sigma_theta: float = 0.35
    overshoot_tol: float = 1e-6
    distance_cap: float = 80.0
    min_probability: float = 1e-3
    speed_scale: float = 10.0
    distance_scale: float = 80.0


@dataclass(frozen=True)
class LaneCandidate:
    lane_id: str
    frenet: FrenetCoord
    probability: float


@dataclass(frozen=True)
class LaneAssignment:
    entity: int
    candidates: tuple[LaneCandidate, ...]


@dataclass(frozen=True)
class SceneNode:
    track_id: int
    class_onehot: tuple[float, ...]
    speed: float


@dataclass(frozen=True)
class SceneEdge:
    src: int
    dst: int
    kind: EdgeKind
    probability: float
    distance: float


@dataclass
class SceneGraph:
    frame_index: int
    nodes: list[SceneNode]
    edges: list[SceneEdge]
    labels: list[float | None] | None = None
    ego_index: int | None = None


@dataclass
class CooGraph:
    node_matrix: np.ndarray  # n x 8
    edge_matrix: np.ndarray  # m x 5
    topology: np.ndarray  # 2 x m, int
    label_vector: np.ndarray  # n
    label_mask: np.ndarray  # n, bool
    track_ids: list[int] = field(default_factory=list)
    frame_index: int = 0
    ego_index: int | None = None

    @property
    def n(self) -> int:
        return self.node_matrix.shape[0]

    @property
    def m(self) -> int:
        return self.edge_matrix.shape[0]

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "track_ids": list(map(int, self.track_ids)),
            "ego_index": self.ego_index,
            "node_matrix": self.node_matrix.tolist(),
            "edge_matrix": self.edge_matrix.tolist(),
            "topology": self.topology.tolist(),
            "label_vector": [float(v) if ok else None for v, ok in zip(self.label_vector, self.label_mask)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CooGraph":
        labels = doc["label_vector"]
        mask = np.array([v is not None for v in labels], dtype=bool)
        return cls(
            node_matrix=np.asarray(doc["node_matrix"], dtype=float).reshape(-1, NODE_DIM),
            edge_matrix=np.asarray(doc["edge_matrix"], dtype=float).reshape(-1, EDGE_DIM),
            topology=np.asarray(doc["topology"], dtype=np.int64).reshape(2, -1),
            label_vector=np.array([0.0 if v is None else v for v in labels], dtype=float),
            label_mask=mask,
            track_ids=list(doc.get("track_ids", [])),
            frame_index=int(doc.get("frame_index", 0)),
            ego_index=doc.get("ego_index"),
        )


def assign_lanes(entity: EntityState, lane_map: LaneMap, params: GraphParams = GraphParams()) -> LaneAssignment:
    """Gate lanes by lateral offset and heading, weight them with Gaussian kernels."""
    gated = []
    for lane in lane_map:
        fc = project((entity.x, entity.y), entity.heading, lane)
        if fc.overshoot > params.overshoot_tol:
            continue
        if abs(fc.d) > params.gate_d or abs(fc.dtheta) > params.gate_dtheta:
            continue
        w = math.exp(-(fc.d / params.sigma_d) ** 2) * math.exp(-(fc.dtheta / params.sigma_theta) ** 2)
        gated.append((lane.id, fc, w))
    total = sum(w for _, _, w in gated)
    if total <= 0.0:
        return LaneAssignment(entity.track_id, ())
    return LaneAssignment(entity.track_id,
                          tuple(LaneCandidate(lid, fc, w / total) for lid, fc, w in gated))


def _onehot(cls: EntityClass) -> tuple[float, ...]:
    v = [0.0] * N_CLASSES
    v[cls.value] = 1.0
    return tuple(v)


def build_graph(frame: Frame, lane_map: LaneMap, params: GraphParams = GraphParams(),
                ego_id: int | None = None, labels: dict[int, float] | None = None) -> SceneGraph:
    """Scene graph of one (deduplicated) frame.

    Relations are derived per pair of lane hypotheses; for each
    ``(src, dst, kind)`` the most probable hypothesis is kept.
    """
    ents = frame.entities
    nodes = [SceneNode(e.track_id, _onehot(e.cls), e.speed) for e in ents]
    assign = [assign_lanes(e, lane_map, params) for e in ents]
    best: dict[tuple[int, int, EdgeKind], SceneEdge] = {}

    def offer(src, dst, kind, prob, dist):
        if src == dst or prob < params.min_probability or abs(dist) > params.distance_cap:
            return
        key = (src, dst, kind)
        cur = best.get(key)
        # ties keep the first hypothesis (lane order is deterministic)
        if cur is None or prob > cur.probability:
            best[key] = SceneEdge(src, dst, kind, prob, dist)

    R = RelationKind
    # canonical pair order so the result does not depend on entity order
    order = sorted(range(len(ents)), key=lambda k: (ents[k].track_id, ents[k].x, ents[k].y))
    for a, i in enumerate(order):
        for j in order[a + 1:]:
            for ci in assign[i].candidates:
                for cj in assign[j].candidates:
                    rel = lane_map.relation(ci.lane_id, cj.lane_id)
                    if rel.kind is R.Unrelated:
                        continue
                    prob = ci.probability * cj.probability
                    fi, fj = ci.frenet, cj.frenet
                    if rel.kind is R.SameOrSuccessor:
                        d = path_distance(fi, fj, rel, lane_map)
                        if d > 0:
                            offer(i, j, EdgeKind.Lon, prob, d)
                        elif d < 0:
                            offer(j, i, EdgeKind.Lon, prob, -d)
                    elif rel.kind is R.ParallelAdjacent:
                        d = path_distance(fi, fj, rel, lane_map)
                        offer(i, j, EdgeKind.Lat, prob, d)
                        offer(j, i, EdgeKind.Lat, prob, -d)
                    else:
                        # merging branches and crossings: each side keeps its own distance to the meet point
                        offer(i, j, EdgeKind.Int, prob, distance_to_meet(fi, rel, lane_map))
                        offer(j, i, EdgeKind.Int, prob, distance_to_meet(fj, rel, lane_map))
    edges = sorted(best.values(), key=lambda e: (e.src, e.dst, e.kind.value))
    ego_index = None
    if ego_id is not None:
        ego_index = next((k for k, e in enumerate(ents) if e.track_id == ego_id), None)
    node_labels = None
    if labels is not None:
        node_labels = [labels.get(e.track_id) for e in ents]
    return SceneGraph(frame.frame_index, nodes, edges, node_labels, ego_index)


def to_coo(graph: SceneGraph, params: GraphParams = GraphParams()) -> CooGraph:
    n, m = len(graph.nodes), len(graph.edges)
    nodes = np.zeros((n, NODE_DIM))
    for k, node in enumerate(graph.nodes):
        nodes[k, :N_CLASSES] = node.class_onehot
        nodes[k, N_CLASSES] = node.speed / params.speed_scale
    edges = np.zeros((m, EDGE_DIM))
    topology = np.zeros((2, m), dtype=np.int64)
    for k, e in enumerate(graph.edges):
        edges[k, e.kind.value] = 1.0
        edges[k, 3] = e.probability
        edges[k, 4] = e.distance / params.distance_scale
        topology[:, k] = (e.src, e.dst)
    labels = np.zeros(n)
    mask = np.zeros(n, dtype=bool)
    if graph.labels is not None:
        for k, v in enumerate(graph.labels):
            if v is not None:
                labels[k] = v
                mask[k] = True
    return CooGraph(nodes, edges, topology, labels, mask, [nd.track_id for nd in graph.nodes],
                    graph.frame_index, graph.ego_index)


def ablate_edges(coo: CooGraph) -> CooGraph:
    """Same topology, every edge attribute set to zero."""
    return CooGraph(coo.node_matrix, np.zeros_like(coo.edge_matrix), coo.topology.copy(),
                    coo.label_vector, coo.label_mask, list(coo.track_ids), coo.frame_index,
                    coo.ego_index)


def coo_to_json(graphs: list[CooGraph]) -> str:
    return json.dumps({"graphs": [g.to_dict() for g in graphs]})


def coo_from_json(text: str) -> list[CooGraph]:
    return [CooGraph.from_dict(d) for d in json.loads(text)["graphs"]]


def to_dot(graph: SceneGraph, name: str = "scene") -> str:
    """Graphviz rendering: nodes labelled with track id and speed."""
    lines = [f'digraph "{name}" {{', "  rankdir=LR;"]
    for k, node in enumerate(graph.nodes):
        cls = EntityClass(int(np.argmax(node.class_onehot))).name
        lines.append(f'  n{k} [label="{node.track_id}\\n{cls} {node.speed:.1f} m/s"];')
    styles = {EdgeKind.Lon: "solid", EdgeKind.Lat: "dashed", EdgeKind.Int: "dotted"}
    for e in graph.edges:
        lines.append(f'  n{e.src} -> n{e.dst} [label="{e.kind.name.lower()} '
                     f'p={e.probability:.2f} d={e.distance:.1f}", style={styles[e.kind]}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
