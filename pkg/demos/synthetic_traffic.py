"""What the IDM generator produces for one merge scenario.

Prints a coarse speed trace for every vehicle, then the statistics of
the acceleration labels that training will see.
"""

import numpy as np

from scenegnn.ingest import compute_labels
from scenegnn.synthgen import ScenarioSpec, Template, generate

spec = ScenarioSpec(Template.Merge, n_vehicles=6, seed=4)
rec, lane_map = generate(spec)
print(f"{rec.id}: {len(rec.frames)} frames at {rec.frequency:g} Hz, lanes {sorted(lane_map.lanes)}")

tracks = rec.tracks()
print("\nspeed every 0.5 s (m/s)")
for tid, states in sorted(tracks.items()):
    print(f"  track {tid:2d} " + " ".join(f"{s.speed:5.2f}" for s in states[::5]))

y = np.array([lab.value for lab in compute_labels(rec)])
print(f"\n{y.size} labels: mean {y.mean():+.3f}, std {y.std():.3f}, range [{y.min():+.2f}, {y.max():+.2f}] m/s^2")
