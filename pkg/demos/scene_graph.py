"""Four cars around a highway on-ramp, turned into a typed scene graph.

Car 1 drives on the left lane, car 2 on the main lane, car 3 on the ramp
4 m before it joins, car 4 further down the joined road. Run with
``python demos/scene_graph.py``; pipe the tail through ``dot -Tpng`` to draw it.
"""

import math

from scenegnn.ingest import EntityClass, EntityState, Frame
from scenegnn.lanemap import Lane, LaneMap
from scenegnn.scenegraph import build_graph, to_coo, to_dot

lanes = LaneMap([
    Lane("L1", [(0.0, 3.5), (100.0, 3.5)], right_parallel="L2a"),
    Lane("L2a", [(0.0, 0.0), (50.0, 0.0)], ["L2b"], left_parallel="L1"),
    Lane("L2b", [(50.0, 0.0), (100.0, 0.0)]),
    Lane("L3", [(35.0, -15.0), (50.0, 0.0)], ["L2b"]),  # 45 degree ramp
])


def car(tid, x, y, heading=0.0, speed=12.0):
    return EntityState(tid, 0, 0, EntityClass.Car, x, y, heading, 4.5, 1.8, speed)


r = 4.0 / math.sqrt(2.0)
frame = Frame(0, 0, [car(1, 5.0, 3.5), car(2, 20.0, 0.0), car(3, 50.0 - r, -r, math.pi / 4), car(4, 90.0, 0.0)])

graph = build_graph(frame, lanes)
print("edges (follower/source -> target):")
for e in graph.edges:
    src, dst = graph.nodes[e.src].track_id, graph.nodes[e.dst].track_id
    print(f"  {src} -> {dst}  {e.kind.name:3s}  d = {e.distance:6.2f} m  P = {e.probability:.3f}")

# lateral edges carry opposite signs, the two ramp edges each carry their own distance to the merge
coo = to_coo(graph)
print("\nCOO topology\n", coo.topology)
print("edge rows (one-hot lon/lat/int, probability, distance / 80)\n", coo.edge_matrix.round(3))
print()
print(to_dot(graph, "on-ramp"))
