"""A short training run on a slice of the synthetic benchmark.

Trains Single Step with and without edge attributes plus a Recurrent(5)
model for a handful of epochs, then prints a report table with the Zero
and Mean baselines. Numbers here are far from converged; the full
protocol lives behind ``scenegnn train``.
"""

import numpy as np

from scenegnn.evaluator import baseline_reports, compare, evaluate, improvement_str
from scenegnn.models import RecurrentModel, SingleStepModel
from scenegnn.synthgen import Template, make_benchmark
from scenegnn.trainer import TrainConfig, ablate_sample, build_samples, train

EPOCHS = 8
recs, lane_map, manifest = make_benchmark(0, mix=((Template.StraightFollow, 8), (Template.Merge, 4),
                                                  (Template.Crossing, 8), (Template.ParallelLanes, 4)))
print(f"{manifest['n_recordings']} recordings, {manifest['labelled_frames']} labelled frames")

cfg = TrainConfig(max_epochs=EPOCHS)
split = build_samples(recs, lane_map, None, seed=0)
rows = {}
for name, data in (("Single Step", split), ("Single Step no edge data", split.map(ablate_sample))):
    res = train(SingleStepModel(seed=0), data, cfg)
    rows[name] = evaluate(res.model, data.test, name=name)

seq = build_samples(recs, lane_map, 5, seed=0)
res = train(RecurrentModel(seed=0, max_len=5), seq, cfg)
rows["Recurrent5"] = evaluate(res.model, seq.test, name="Recurrent5")
rows.update(baseline_reports(split.test))

print(f"\n{'model':26s} {'L1':>7s} {'MSE':>7s} {'FDE3':>7s}")
for r in rows.values():
    print(f"{r.model:26s} {r.l1:7.3f} {r.mse:7.3f} {r.fde3:7.3f}")
single = rows["Single Step"]
for ref in ("Baseline Zero", "Single Step no edge data"):
    print(f"Single Step vs {ref}: {improvement_str(compare(single, rows[ref])['l1'])}")
print(f"Recurrent5 vs Single Step: {improvement_str(compare(rows['Recurrent5'], single)['l1'])}")
print("test label std", np.std([v for s in split.test for v in s.final.label_vector[s.final.label_mask]]).round(3))
