"""Finite-difference checks of both models' analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .models import RecurrentModel, SingleStepConfig, SingleStepModel
from .scenegraph import EDGE_DIM, NODE_DIM, CooGraph

SMALL_CONFIG = SingleStepConfig(hidden_dim=6, edge_mlp_hidden=5, head_hidden=7)


@dataclass
class GradcheckResult:
    model: str
    max_error: float
    per_param: dict[str, float]
    checked: int

    def passed(self, tol: float) -> bool:
        return self.max_error < tol


def random_graph(rng: np.random.Generator, n: int = 3, m: int = 4,
                 track_ids: list[int] | None = None) -> CooGraph:
    nodes = np.zeros((n, NODE_DIM))
    nodes[np.arange(n), rng.integers(0, NODE_DIM - 1, n)] = 1.0
    nodes[:, -1] = rng.uniform(0.0, 2.0, n)
    edges = np.zeros((m, EDGE_DIM))
    edges[np.arange(m), rng.integers(0, 3, m)] = 1.0
    edges[:, 3] = rng.uniform(0.05, 1.0, m)
    edges[:, 4] = rng.uniform(-1.0, 1.0, m)
    src = rng.integers(0, n, m)
    dst = (src + rng.integers(1, n, m)) % n if n > 1 else src
    return CooGraph(nodes, edges, np.stack([src, dst]).astype(np.int64), rng.normal(size=n),
                    np.ones(n, dtype=bool), track_ids or list(range(1, n + 1)))


def random_sequence(rng: np.random.Generator, frames: int = 3, n: int = 3, m: int = 4) -> list[CooGraph]:
    """Frames over a pool of n + 1 tracks, so one track is missing from some frames."""
    pool = list(range(1, n + 2))
    out = []
    for _ in range(frames):
        ids = sorted(rng.choice(pool, size=n, replace=False).tolist())
        out.append(random_graph(rng, n, m, ids))
    return out


def check_model(model, run, rng: np.random.Generator, max_entries: int | None = None,
                h: float = 1e-5) -> GradcheckResult:
    """Compare backprop with central differences for each parameter of ``model``.

    ``run`` maps the model to its output tensor; the scalar checked is a
    fixed random projection of that output. ``max_entries`` caps the number
    of entries probed per parameter (None checks all of them).
    """
    weights = rng.normal(size=run(model).shape)

    def scalar() -> dc.Tensor:
        return dc.total(dc.mul(run(model), dc.constant(weights)))

    model.store.zero_grad()
    dc.backward(scalar())
    per_param, checked = {}, 0
    for name, p in model.store:
        flat = p.values.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        num = np.zeros(idx.size)
        with dc.no_grad():
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(scalar().values[0, 0])
                flat[i] = orig - h
                fm = float(scalar().values[0, 0])
                flat[i] = orig
                num[k] = (fp - fm) / (2.0 * h)
        ana = p.grad.reshape(-1)[idx]
        # entries are compared relative to the tensor's gradient scale
        scale = max(np.max(np.abs(ana)), np.max(np.abs(num)), 1e-12)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-3 * scale)
        per_param[name] = float(np.max(np.abs(ana - num) / denom)) if idx.size else 0.0
        checked += idx.size
    model.store.zero_grad()
    return GradcheckResult(type(model).kind, max(per_param.values()), per_param, checked)


def check_single_step(seed: int = 0, config: SingleStepConfig | None = None,
                      max_entries: int | None = None) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    model = SingleStepModel(config or SMALL_CONFIG, seed=seed)
    g = random_graph(rng)
    return check_model(model, lambda m: m.forward(g).tensor, rng, max_entries)


def check_recurrent(seed: int = 0, config: SingleStepConfig | None = None,
                    max_entries: int | None = None) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    model = RecurrentModel(config or SMALL_CONFIG, seed=seed, max_len=3)
    seq = random_sequence(rng)
    return check_model(model, lambda m: m.forward(seq).tensor, rng, max_entries)


def run_suite(seed: int = 0, sampled_entries: int = 40) -> list[GradcheckResult]:
    """Every entry on reduced-width models plus sampled entries at default width."""
    return [
        check_single_step(seed),
        check_recurrent(seed),
        check_single_step(seed, SingleStepConfig(), sampled_entries),
        check_recurrent(seed, SingleStepConfig(), sampled_entries),
    ]
