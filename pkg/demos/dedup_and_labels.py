"""Cleaning a noisy track file: duplicate boxes out, smoothed speeds, acceleration labels.

Track 7 is a ghost copy of track 3 that a tracker emitted for a few
frames. The conflict graph links them, the maximum independent set keeps
one, and labels come from speed differences one second apart.
"""

import numpy as np

from scenegnn.ingest import compute_labels, conflict_graph, parse_tracks, preprocess, write_tracks

HEADER = "case_id,track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width\n"
rng = np.random.default_rng(0)
rows = []
for f in range(1, 31):
    t = f * 100
    v3 = 8.0 + 0.1 * f  # accelerating at 1 m/s^2
    x3 = 8.0 * f / 10 + 0.05 * (f / 10) ** 2 * 10
    for tid, x, v in ((3, x3, v3), (5, x3 + 20.0, 10.0)):
        vx = v + rng.normal(0, 0.3)  # sensor noise on speed
        rows.append(f"1,{tid},{f},{t},car,{x:.3f},0.0,{vx:.3f},0.0,0.0,4.5,1.8")
    if 10 <= f < 15:
        rows.append(f"1,7,{f},{t},car,{x3 + 0.3:.3f},0.1,{v3:.3f},0.0,0.02,4.5,1.8")

rec = parse_tracks(HEADER + "\n".join(rows) + "\n")[0]
busy = rec.frames[11]
print(f"frame {busy.frame_index}: tracks {busy.track_ids()}, conflicts {sorted(conflict_graph(busy).edges)}")

clean = preprocess(rec, radius=None)
print(f"after dedup: tracks {clean.frames[11].track_ids()}")

labels = [lab for lab in compute_labels(clean) if lab.track_id == 3]
print(f"track 3: {len(labels)} labels, mean {np.mean([l.value for l in labels]):.3f} m/s^2 (true value 1.0)")
print("\ncleaned CSV head:")
print("\n".join(write_tracks([clean]).splitlines()[:4]))
