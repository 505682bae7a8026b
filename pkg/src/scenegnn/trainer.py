"""Sample assembly, losses and the training loop.

Training follows a fixed protocol: Adam at batch size 1, global-norm gradient
clipping, reduce-on-plateau learning-rate decay and early stopping on the
validation L1 loss. One shared counter of non-improving epochs drives both
the decay (every ``patience`` epochs) and the stop (``early_stop_patience``).
"""

from __future__ import annotations

import enum
import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .ingest import Recording, compute_labels
from .lanemap import LaneMap
from .models import ModelOutput, RecurrentModel, SingleStepModel
from .scenegraph import CooGraph, GraphParams, ablate_edges, build_graph, to_coo

log = logging.getLogger(__name__)


class LossMode(enum.Enum):
    AllEntities = "all"
    EgoOnly = "ego"


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class Sample:
    graphs: list[CooGraph]
    recording_id: str = ""
    frame_index: int = 0

    @property
    def final(self) -> CooGraph:
        return self.graphs[-1]


@dataclass
class DatasetSplit:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    recordings: dict[str, str] = field(default_factory=dict)  # recording id -> split name

    def map(self, fn) -> "DatasetSplit":
        return DatasetSplit([fn(s) for s in self.train], [fn(s) for s in self.val],
                            [fn(s) for s in self.test], dict(self.recordings))


def recording_graphs(recording: Recording, lane_map: LaneMap, delta: int = 10,
                     params: GraphParams = GraphParams()) -> list[CooGraph]:
    """One labelled COO graph per frame of ``recording``."""
    by_frame: dict[int, dict[int, float]] = {}
    for lab in compute_labels(recording, delta):
        by_frame.setdefault(lab.frame_index, {})[lab.track_id] = lab.value
    return [to_coo(build_graph(fr, lane_map, params, recording.ego_id, by_frame.get(fr.frame_index, {})),
                   params)
            for fr in recording.frames]


def split_recordings(ids: Sequence[str], seed: int = 0,
                     fractions: tuple[float, float] = (0.6, 0.8)) -> dict[str, str]:
    """Assign whole recordings to train/val/test by a seeded hash order."""
    order = sorted(ids, key=lambda r: hashlib.sha256(f"{seed}:{r}".encode()).hexdigest())
    n = len(order)
    cut1, cut2 = int(round(fractions[0] * n)), int(round(fractions[1] * n))
    out = {}
    for k, rid in enumerate(order):
        out[rid] = "train" if k < cut1 else "val" if k < cut2 else "test"
    return out


def windows(graphs: list[CooGraph], seq_len: int | None) -> list[Sample]:
    """Samples ending at every frame with at least one label.

    ``seq_len=None`` gives single-frame samples; otherwise each sample holds
    up to ``seq_len`` consecutive frames (shorter at the recording start).
    """
    out = []
    for k, g in enumerate(graphs):
        if not g.label_mask.any():
            continue
        lo = k if seq_len is None else max(0, k - seq_len + 1)
        out.append(Sample(graphs[lo:k + 1], frame_index=g.frame_index))
    return out


def build_samples(recordings: Sequence[Recording], lane_map: LaneMap, seq_len: int | None = None,
                  delta: int = 10, seed: int = 0, params: GraphParams = GraphParams()) -> DatasetSplit:
    """Single-step (``seq_len=None``) or recurrent samples, split by recording."""
    assignment = split_recordings([r.id for r in recordings], seed)
    split = DatasetSplit([], [], [], assignment)
    total = 0
    for rec in recordings:
        samples = windows(recording_graphs(rec, lane_map, delta, params), seq_len)
        for s in samples:
            s.recording_id = rec.id
        total += len(samples)
        getattr(split, assignment[rec.id]).extend(samples)
    if total == 0:
        raise ValueError("no labelled frames in the given recordings")
    return split


def ablate_sample(sample: Sample) -> Sample:
    return Sample([ablate_edges(g) for g in sample.graphs], sample.recording_id, sample.frame_index)


# ---------------------------------------------------------------------------
# losses


def forward(model, sample: Sample) -> ModelOutput:
    if isinstance(model, RecurrentModel):
        return model.forward(sample.graphs)
    if isinstance(model, SingleStepModel):
        return model.forward(sample.final)
    return model(sample)


def target_rows(coo: CooGraph, mode: LossMode) -> np.ndarray:
    """Indices of nodes that enter the loss under ``mode``."""
    if mode is LossMode.AllEntities:
        return np.flatnonzero(coo.label_mask)
    if coo.ego_index is not None and coo.label_mask[coo.ego_index]:
        return np.array([coo.ego_index])
    return np.array([], dtype=int)


def loss(output: ModelOutput, coo: CooGraph, mode: LossMode = LossMode.AllEntities) -> dc.Tensor | None:
    """Mean absolute error over the selected nodes, or None if nothing is labelled."""
    rows = target_rows(coo, mode)
    if rows.size == 0:
        return None
    pred = dc.gather_rows(output.tensor, rows)
    target = dc.constant(coo.label_vector[rows].reshape(-1, 1))
    return dc.mean(dc.abs_(dc.sub(pred, target)))


# ---------------------------------------------------------------------------
# schedule


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 1
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    min_lr: float = 1e-6
    improvement_threshold: float = 1e-6
    max_epochs: int = 200
    early_stop_patience: int = 25
    clip_norm: float = 1.0
    loss_mode: LossMode = LossMode.AllEntities
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss_mode, str):
            self.loss_mode = LossMode(self.loss_mode)
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau factor must lie in (0, 1)")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        """Build from string-valued key=value pairs (unknown keys rejected)."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in types:
                raise KeyError(f"unknown training option: {k}")
            if k == "loss_mode":
                kwargs[k] = LossMode(v) if isinstance(v, str) else v
            elif types[k] in ("int", int):
                kwargs[k] = int(v)
            else:
                kwargs[k] = float(v)
        return cls(**kwargs)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


class PlateauController:
    """Learning-rate decay and early stopping from one validation-loss stream."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 10, stop_patience: int = 25,
                 min_lr: float = 1e-6, threshold: float = 1e-6):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.stop_patience = stop_patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = math.inf
        self.bad_epochs = 0
        self.reductions = 0
        self.stopped = False

    def step(self, val_loss: float) -> bool:
        """Record one epoch; returns True if it is a new best."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        if self.bad_epochs % self.patience == 0:
            new_lr = max(self.lr * self.factor, self.min_lr)
            if new_lr < self.lr:
                self.lr = new_lr
                self.reductions += 1
        if self.bad_epochs >= self.stop_patience:
            self.stopped = True
        return False


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochLog:
    epoch: int
    train_l1: float
    val_l1: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    model: object
    best_epoch: int
    best_val: float
    log: list[EpochLog]
    best_state: dict
    skipped: int = 0
    max_clipped_norm: float = 0.0

    def log_csv(self) -> str:
        rows = ["epoch,train_l1,val_l1,lr,seconds"]
        rows += [f"{r.epoch},{r.train_l1:.10g},{r.val_l1:.10g},{r.lr:.10g},{r.seconds:.3f}" for r in self.log]
        return "\n".join(rows) + "\n"

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        header = {**self.model.header(), **(extra or {})}
        doc_store = dc.ParamStore()
        for k, t in self.model.store:
            doc_store.add(k, t.values)
        doc_store.load_state_dict(self.best_state)
        dc.save_checkpoint(path, doc_store, epoch=self.best_epoch, rng_seed=int(header.get("train_seed", 0)),
                           header=header)


def mean_l1(model, samples: Sequence[Sample], mode: LossMode = LossMode.AllEntities) -> float:
    """Entity-weighted mean absolute error of ``model`` over ``samples``."""
    err, count = 0.0, 0
    with dc.no_grad():
        for s in samples:
            rows = target_rows(s.final, mode)
            if rows.size == 0:
                continue
            out = forward(model, s)
            err += float(np.sum(np.abs(out.values[rows] - s.final.label_vector[rows])))
            count += rows.size
    return err / count if count else math.nan


def train(model, split: DatasetSplit, config: TrainConfig = TrainConfig(), progress=None) -> TrainResult:
    """Fit ``model`` on ``split.train``; returns the best-validation state."""
    store = model.store
    ctl = PlateauController(config.lr, config.plateau_factor, config.plateau_patience,
                            config.early_stop_patience, config.min_lr, config.improvement_threshold)
    history: list[EpochLog] = []
    best_state = store.state_dict()
    best_epoch, best_val = 0, math.inf
    skipped = 0
    max_norm_after = 0.0
    train_samples = list(split.train)
    val_samples = split.val or split.train
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_samples))
        total, used = 0.0, 0
        for k in order:
            sample = train_samples[k]
            out = forward(model, sample)
            loss_t = loss(out, sample.final, config.loss_mode)
            if loss_t is None:
                skipped += 1
                continue
            value = float(loss_t.values[0, 0])
            if not math.isfinite(value):
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch} on sample {sample.recording_id}@{sample.frame_index}")
            dc.backward(loss_t)
            dc.clip_global_norm(store, config.clip_norm)
            max_norm_after = max(max_norm_after, store.grad_norm())
            dc.adam_step(store, ctl.lr)
            total += value
            used += 1
        train_l1 = total / used if used else math.nan
        val_l1 = mean_l1(model, val_samples, config.loss_mode)
        lr_used = ctl.lr
        if ctl.step(val_l1):
            best_state = store.state_dict()
            best_epoch, best_val = epoch, val_l1
        history.append(EpochLog(epoch, train_l1, val_l1, lr_used, time.perf_counter() - t0))
        if progress is not None:
            progress(history[-1])
        log.info("epoch %d train %.4f val %.4f lr %.1e", epoch, train_l1, val_l1, lr_used)
        if ctl.stopped:
            break
    store.load_state_dict(best_state)
    return TrainResult(model, best_epoch, best_val, history, best_state, skipped, max_norm_after)


def checkpoint_bytes(result: TrainResult) -> bytes:
    """Canonical bytes of the best parameters (used for reproducibility checks)."""
    parts = []
    for name in sorted(result.best_state["params"]):
        arr = np.asarray(result.best_state["params"][name]["values"], dtype=np.float64)
        parts.append(name.encode() + arr.tobytes())
    return b"".join(parts)


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["loss_mode"] = config.loss_mode.value
    return d
