import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenegnn import diffcore as dc
from scenegnn.gradcheck import SMALL_CONFIG, random_graph
from scenegnn.ingest import EntityClass, EntityState, Frame, Recording
from scenegnn.lanemap import Lane, LaneMap
from scenegnn.models import ModelOutput, RecurrentModel, SingleStepModel
from scenegnn.trainer import (DatasetSplit, LossMode, PlateauController, Sample, TrainConfig,
                              TrainingDivergence, build_samples, checkpoint_bytes, loss, mean_l1,
                              read_config_file, split_recordings, train, windows)

LANE = LaneMap([Lane("a", [(0.0, 0.0), (1000.0, 0.0)])])


def recording(rid="r0", n_frames=30, tracks=(1,), ego_id=None):
    frames = []
    for k in range(n_frames):
        ents = [EntityState(t, k, 100 * k, EntityClass.Car, 10.0 * t + 0.5 * k, 0.0, 0.0, 4.5, 1.8, 5.0 + 0.1 * k + t)
                for t in tracks]
        frames.append(Frame(k, 100 * k, ents))
    return Recording(rid, frames, ego_id)


def out_of(values):
    t = dc.constant(np.asarray(values, dtype=float).reshape(-1, 1))
    return ModelOutput(t.values[:, 0].copy(), np.ones(len(values), dtype=bool), t)


def labelled(labels, ego_index=None):
    g = random_graph(np.random.default_rng(0), n=len(labels), m=0)
    g.label_vector = np.array([0.0 if v is None else v for v in labels])
    g.label_mask = np.array([v is not None for v in labels])
    g.ego_index = ego_index
    return g


def small_split(n=12, seed=0, seq=False):
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        frames = [random_graph(rng, 3, 4, [1, 2, 3]) for _ in range(3 if seq else 1)]
        frames[-1].label_vector = 0.5 * frames[-1].node_matrix[:, -1] - 0.3
        samples.append(Sample(frames))
    k = int(0.6 * n)
    return DatasetSplit(samples[:k], samples[k:], [])


# -- samples ------------------------------------------------------------------------

def test_single_step_sample_count():
    split = build_samples([recording()], LANE, None, seed=0)
    samples = split.train + split.val + split.test
    assert len(samples) == 20
    assert all(len(s.graphs) == 1 for s in samples)


def test_recurrent_windows():
    split = build_samples([recording()], LANE, 5, seed=0)
    samples = split.train + split.val + split.test
    assert len(samples) == 20
    assert [len(s.graphs) for s in samples[:6]] == [1, 2, 3, 4, 5, 5]
    assert [s.frame_index for s in samples[:3]] == [0, 1, 2]
    assert all(s.final.label_mask.any() for s in samples)


def test_windows_are_consecutive():
    graphs = [labelled([1.0]) for _ in range(8)]
    for k, g in enumerate(graphs):
        g.frame_index = k
    out = windows(graphs, 3)
    assert [[g.frame_index for g in s.graphs] for s in out][-1] == [5, 6, 7]


def test_recordings_stay_whole():
    recs = [recording(f"r{k}") for k in range(10)]
    split = build_samples(recs, LANE, None, seed=3)
    where = {}
    for name in ("train", "val", "test"):
        for s in getattr(split, name):
            where.setdefault(s.recording_id, set()).add(name)
    assert all(len(v) == 1 for v in where.values())
    assert len(where) == 10


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.integers(0, 1000))
def test_split_is_a_seeded_partition(n, seed):
    ids = [f"rec{k}" for k in range(n)]
    a = split_recordings(ids, seed)
    assert set(a) == set(ids)
    assert a == split_recordings(list(reversed(ids)), seed)
    counts = Counter(a.values())
    assert counts["train"] == round(0.6 * n)
    assert counts["train"] + counts["val"] == round(0.8 * n)


def test_no_labels_is_an_error():
    with pytest.raises(ValueError, match="no labelled"):
        build_samples([recording(n_frames=5)], LANE, None)


# -- losses -------------------------------------------------------------------------

def test_loss_examples():
    g = labelled([0.0, 0.0])
    assert loss(out_of([1.0, 2.0]), g).values[0, 0] == 1.5
    assert loss(out_of([0.0, 0.0]), g).values[0, 0] == 0.0


def test_loss_skips_unlabelled_nodes():
    g = labelled([1.0, None, -1.0])
    assert loss(out_of([0.0, 100.0, 0.0]), g).values[0, 0] == 1.0
    assert loss(out_of([0.0, 0.0, 0.0]), labelled([None, None])) is None


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_ego_only_ignores_other_nodes(noise):
    g = labelled([0.5, 1.0, -2.0, 0.0], ego_index=1)
    base = loss(out_of([0.0, 0.25, 0.0, 0.0]), g, LossMode.EgoOnly).values[0, 0]
    pert = loss(out_of([noise[0], 0.25, noise[1], noise[2]]), g, LossMode.EgoOnly).values[0, 0]
    assert base == pert == 0.75


def test_ego_only_without_labelled_ego():
    assert loss(out_of([0.0, 0.0]), labelled([1.0, None], ego_index=1), LossMode.EgoOnly) is None
    assert loss(out_of([0.0, 0.0]), labelled([1.0, 2.0]), LossMode.EgoOnly) is None


def test_ego_only_training_counts_skips():
    split = small_split()
    for s in split.train[:4]:
        s.final.ego_index = 0
    res = train(SingleStepModel(SMALL_CONFIG), split,
                TrainConfig(max_epochs=2, loss_mode=LossMode.EgoOnly))
    assert res.skipped == 2 * (len(split.train) - 4)


# -- scheduler ------------------------------------------------------------------------

def run_script(values, **kw):
    ctl = PlateauController(1e-3, **kw)
    lrs = []
    for epoch, v in enumerate(values, start=1):
        ctl.step(v)
        lrs.append(ctl.lr)
        if ctl.stopped:
            return ctl, lrs, epoch
    return ctl, lrs, None


def test_improving_losses_never_reduce():
    ctl, lrs, stop = run_script([1.0 / k for k in range(1, 201)])
    assert stop is None and ctl.reductions == 0 and set(lrs) == {1e-3}


def test_plateau_of_36_epochs():
    ctl, lrs, stop = run_script([1.0, 0.5] + [0.5] * 36)
    assert ctl.reductions == 2
    assert stop == 2 + 25
    assert lrs[2 + 9] == pytest.approx(1e-4) and lrs[2 + 8] == 1e-3
    assert lrs[2 + 19] == pytest.approx(1e-5)


def test_improvement_threshold_and_min_lr():
    ctl, _, _ = run_script([1.0, 1.0 - 5e-7, 1.0 - 9e-7])
    assert ctl.bad_epochs == 2  # changes below 1e-6 do not count
    ctl, lrs, _ = run_script([1.0] + [1.0] * 60, stop_patience=100, min_lr=1e-5)
    assert min(lrs) == 1e-5 and ctl.reductions == 2


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(plateau_patience=0)
    with pytest.raises(ValueError):
        TrainConfig(plateau_factor=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=4)
    assert TrainConfig.from_mapping({"lr": "0.01", "max_epochs": "3", "loss_mode": "ego"}).max_epochs == 3
    with pytest.raises(KeyError):
        TrainConfig.from_mapping({"momentum": "0.9"})


def test_config_file(tmp_path):
    p = tmp_path / "train.cfg"
    p.write_text("# protocol\nlr = 0.01\nmax-epochs=4  # short\n\n")
    assert read_config_file(p) == {"lr": "0.01", "max_epochs": "4"}
    p.write_text("lr 0.01\n")
    with pytest.raises(ValueError, match=":1:"):
        read_config_file(p)


# -- training ---------------------------------------------------------------------------

def test_overfit_single_sample():
    # the protocol itself (plateau decay included) on one repeated sample: one step per epoch
    g = random_graph(np.random.default_rng(11), n=4, m=6)
    g.label_vector = np.array([0.7, -0.4, 1.2, 0.1])
    s = Sample([g])
    res = train(SingleStepModel(seed=0), DatasetSplit([s], [s], []), TrainConfig(max_epochs=500))
    assert min(r.train_l1 for r in res.log) < 1e-3


def test_training_is_reproducible():
    a = train(SingleStepModel(SMALL_CONFIG, seed=1), small_split(), TrainConfig(max_epochs=3, seed=4))
    b = train(SingleStepModel(SMALL_CONFIG, seed=1), small_split(), TrainConfig(max_epochs=3, seed=4))
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    assert [r.val_l1 for r in a.log] == [r.val_l1 for r in b.log]
    c = train(SingleStepModel(SMALL_CONFIG, seed=1), small_split(), TrainConfig(max_epochs=3, seed=5))
    assert checkpoint_bytes(a) != checkpoint_bytes(c)


def test_best_val_checkpoint_and_clip_invariants():
    split = small_split(20)
    res = train(SingleStepModel(seed=2), split, TrainConfig(max_epochs=6, lr=1e-2))
    val = mean_l1(res.model, split.val)
    assert val == res.best_val
    assert all(val <= r.val_l1 for r in res.log)
    assert res.max_clipped_norm <= 1.0 + 1e-12
    assert res.log_csv().splitlines()[0] == "epoch,train_l1,val_l1,lr,seconds"
    assert len(res.log_csv().splitlines()) == len(res.log) + 1


def test_recurrent_training_runs():
    split = small_split(8, seq=True)
    res = train(RecurrentModel(SMALL_CONFIG, max_len=3), split, TrainConfig(max_epochs=2))
    assert len(res.log) == 2 and math.isfinite(res.best_val)


def test_divergence_names_the_sample():
    split = small_split(4)
    split.train[0].final.label_vector[:] = np.nan
    split.train[0].recording_id = "bad-rec"
    with pytest.raises(TrainingDivergence, match="bad-rec"):
        train(SingleStepModel(SMALL_CONFIG), split, TrainConfig(max_epochs=1))


def test_recurrent_length_one_adds_only_the_lstm_step():
    g = random_graph(np.random.default_rng(3), n=3, m=4)
    single = SingleStepModel(seed=0)
    rec = RecurrentModel(seed=0, max_len=1)
    ops_single = dc.trace(single.forward(g).tensor)
    ops_rec = dc.trace(rec.forward([g]).tensor)
    extra = Counter(ops_rec) - Counter(ops_single)
    assert not Counter(ops_single) - Counter(ops_rec)
    assert extra["lstm_cell"] == 1
    # everything else is state-table bookkeeping around that one step
    assert set(extra) <= {"lstm_cell", "lstm_h", "lstm_c", "slice_rows", "gather_rows", "set_rows"}
