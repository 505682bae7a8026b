"""Single-step edge-conditioned graph convolution and the recurrent GNN-LSTM."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor


@dataclass(frozen=True)
class SingleStepConfig:
    node_feature_dim: int = 8
    edge_feature_dim: int = 5
    hidden_dim: int = 64
    edge_mlp_hidden: int = 32
    head_hidden: int = 128
    message_steps: int = 1

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 1:
                raise ValueError(f"{k} must be >= 1, got {v}")


@dataclass
class ModelOutput:
    values: np.ndarray  # (n,) predicted acceleration
    mask: np.ndarray  # (n,) bool, which rows carry a prediction
    tensor: Tensor | None = field(default=None, repr=False)
    hidden: Tensor | None = field(default=None, repr=False)


def _linear(store: ParamStore, rng: np.random.Generator, name: str, fan_in: int, fan_out: int):
    store.add(f"{name}.w", dc.uniform_init(rng, fan_in, (fan_in, fan_out)))
    store.add(f"{name}.b", np.zeros((1, fan_out)))


def _apply_linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return dc.add(dc.matmul(x, store[f"{name}.w"]), store[f"{name}.b"])


def _mlp(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return _apply_linear(store, f"{name}.1", dc.relu(_apply_linear(store, f"{name}.0", x)))


class GraphConv:
    """Edge-conditioned message passing, without the output head.

    For every edge i -> j the edge MLP turns the edge attributes into a
    ``d_in x hidden`` matrix which multiplies the neighbour state ``h_j``;
    node i averages these messages over its outgoing edges and adds its own
    state times the root weight.
    """

    def __init__(self, config: SingleStepConfig, store: ParamStore, rng: np.random.Generator,
                 prefix: str = "gconv"):
        self.config = config
        self.store = store
        self.prefix = prefix
        c = config
        for s in range(c.message_steps):
            d_in = c.node_feature_dim if s == 0 else c.hidden_dim
            _linear(store, rng, f"{prefix}.{s}.edge.0", c.edge_feature_dim, c.edge_mlp_hidden)
            _linear(store, rng, f"{prefix}.{s}.edge.1", c.edge_mlp_hidden, d_in * c.hidden_dim)
            store.add(f"{prefix}.{s}.root", dc.uniform_init(rng, d_in, (d_in, c.hidden_dim)))

    def __call__(self, nodes: Tensor, edges: Tensor, topology: np.ndarray) -> Tensor:
        n = nodes.shape[0]
        topology = np.asarray(topology, dtype=np.intp).reshape(2, -1)
        if topology.size and (topology.min() < 0 or topology.max() >= n):
            raise IndexError(f"topology index out of range for {n} nodes")
        src, dst = topology
        h = nodes
        for s in range(self.config.message_steps):
            p = f"{self.prefix}.{s}"
            weights = _mlp(self.store, f"{p}.edge", edges)
            msgs = dc.edge_matmul(dc.gather_rows(h, dst), weights)
            agg = dc.scatter_mean(msgs, src, n)
            h = dc.add(dc.matmul(h, self.store[f"{p}.root"]), agg)
        return h


def _graph_tensors(coo) -> tuple[Tensor, Tensor, np.ndarray]:
    return dc.constant(coo.node_matrix), dc.constant(coo.edge_matrix), coo.topology


class SingleStepModel:
    kind = "single"

    def __init__(self, config: SingleStepConfig | None = None, seed: int = 0):
        self.config = config or SingleStepConfig()
        self.seed = seed
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        self.gconv = GraphConv(self.config, self.store, rng)
        _linear(self.store, rng, "head.0", self.config.hidden_dim, self.config.head_hidden)
        _linear(self.store, rng, "head.1", self.config.head_hidden, 1)

    def head(self, h: Tensor) -> Tensor:
        return _mlp(self.store, "head", h)

    def forward(self, coo) -> ModelOutput:
        h1 = self.gconv(*_graph_tensors(coo))
        out = self.head(h1)
        n = out.shape[0]
        return ModelOutput(out.values[:, 0].copy(), np.ones(n, dtype=bool), out, h1)

    __call__ = forward

    def header(self) -> dict:
        return {"model": self.kind, "config": asdict(self.config), "seed": self.seed}


def single_step_forward(model: SingleStepModel, coo) -> ModelOutput:
    return model.forward(coo)


@dataclass
class RecurrentTrace:
    """Counts of LSTM state updates per track id, filled during a forward pass."""

    updates: dict[int, int] = field(default_factory=dict)


class RecurrentModel:
    """Graph convolution per frame feeding a per-track LSTM, then the head."""

    kind = "recurrent"

    def __init__(self, config: SingleStepConfig | None = None, seed: int = 0,
                 lstm_hidden: int | None = None, max_len: int = 10):
        self.config = config or SingleStepConfig()
        self.seed = seed
        self.max_len = max_len
        self.lstm_hidden = lstm_hidden or self.config.hidden_dim
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        self.gconv = GraphConv(self.config, self.store, rng)
        hid, inp = self.lstm_hidden, self.config.hidden_dim
        self.store.add("lstm.wx", dc.uniform_init(rng, inp, (inp, 4 * hid)))
        self.store.add("lstm.wh", dc.uniform_init(rng, hid, (hid, 4 * hid)))
        bias = np.zeros((1, 4 * hid))
        bias[0, hid:2 * hid] = 1.0  # forget gate
        self.store.add("lstm.b", bias)
        _linear(self.store, rng, "head.0", hid, self.config.head_hidden)
        _linear(self.store, rng, "head.1", self.config.head_hidden, 1)

    def head(self, h: Tensor) -> Tensor:
        return _mlp(self.store, "head", h)

    def lstm_step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        s = self.store
        return dc.lstm_cell(x, h, c, s["lstm.wx"], s["lstm.wh"], s["lstm.b"])

    def forward(self, sequence: Sequence, trace: RecurrentTrace | None = None) -> ModelOutput:
        """Run the frames of ``sequence`` (oldest first); predict for the last one.

        Each element needs ``node_matrix``, ``edge_matrix``, ``topology`` and
        ``track_ids``. Tracks absent from a frame keep their state; a track
        seen for the first time starts from zeros.
        """
        if len(sequence) == 0:
            raise ValueError("recurrent_forward: empty sequence")
        if len(sequence) > self.max_len:
            raise ValueError(f"sequence length {len(sequence)} exceeds T={self.max_len}")
        # One disjoint-union graph for all frames, so the convolution runs once.
        offsets = np.cumsum([0] + [g.node_matrix.shape[0] for g in sequence])
        nodes = np.concatenate([g.node_matrix for g in sequence], axis=0)
        edges = np.concatenate([g.edge_matrix.reshape(-1, self.config.edge_feature_dim)
                                for g in sequence], axis=0)
        topo = np.concatenate([np.asarray(g.topology, dtype=np.intp).reshape(2, -1) + off
                               for g, off in zip(sequence, offsets[:-1])], axis=1)
        h_all = self.gconv(dc.constant(nodes), dc.constant(edges), topo)

        tracks = sorted({int(t) for g in sequence for t in g.track_ids})
        slot = {t: k for k, t in enumerate(tracks)}
        zeros = np.zeros((len(tracks), self.lstm_hidden))
        H, C = dc.constant(zeros), dc.constant(zeros)
        for g, lo, hi in zip(sequence, offsets[:-1], offsets[1:]):
            if hi == lo:
                continue
            idx = [slot[int(t)] for t in g.track_ids]
            x = dc.slice_rows(h_all, int(lo), int(hi))
            h_new, c_new = self.lstm_step(x, dc.gather_rows(H, idx), dc.gather_rows(C, idx))
            H = dc.set_rows(H, idx, h_new)
            C = dc.set_rows(C, idx, c_new)
            if trace is not None:
                for t in g.track_ids:
                    trace.updates[int(t)] = trace.updates.get(int(t), 0) + 1
        final = [slot[int(t)] for t in sequence[-1].track_ids]
        h_final = dc.gather_rows(H, final)
        out = self.head(h_final)
        n = out.shape[0]
        return ModelOutput(out.values[:, 0].copy(), np.ones(n, dtype=bool), out, h_final)

    __call__ = forward

    def header(self) -> dict:
        return {"model": self.kind, "config": asdict(self.config), "seed": self.seed,
                "lstm_hidden": self.lstm_hidden, "seq_len": self.max_len}


def recurrent_forward(model: RecurrentModel, sequence: Sequence, T: int | None = None,
                      trace: RecurrentTrace | None = None) -> ModelOutput:
    if T is not None and len(sequence) > T:
        raise ValueError(f"sequence length {len(sequence)} exceeds T={T}")
    return model.forward(sequence, trace)


@dataclass(frozen=True)
class ConstantPredictor:
    kind: str
    value: float

    def __call__(self, sample) -> ModelOutput:
        coo = sample[-1] if isinstance(sample, (list, tuple)) else getattr(sample, "final", sample)
        n = coo.node_matrix.shape[0]
        return ModelOutput(np.full(n, self.value), np.ones(n, dtype=bool))


def predict_baseline(kind: str, labels: Sequence[float] | np.ndarray = ()) -> ConstantPredictor:
    """Constant predictors: ``"mean"`` of the given labels, or ``"zero"``."""
    kind = kind.lower()
    if kind == "zero":
        return ConstantPredictor("zero", 0.0)
    if kind == "mean":
        arr = np.asarray(labels, dtype=float)
        if arr.size == 0:
            raise ValueError("Mean baseline needs at least one label")
        return ConstantPredictor("mean", float(arr.mean()))
    raise ValueError(f"unknown baseline kind: {kind!r}")


def build_model(header: dict):
    """Instantiate a model from a checkpoint header (see ``header()``)."""
    config = SingleStepConfig(**header["config"])
    if header["model"] == "single":
        return SingleStepModel(config, seed=header.get("seed", 0))
    if header["model"] == "recurrent":
        return RecurrentModel(config, seed=header.get("seed", 0),
                              lstm_hidden=header.get("lstm_hidden"),
                              max_len=header.get("seq_len", 10))
    raise ValueError(f"unknown model kind: {header['model']!r}")
