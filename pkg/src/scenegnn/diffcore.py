"""Minimal reverse-mode automatic differentiation over dense 2-D float64 arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a closure
which pushes the output gradient back to them. :func:`backward` walks the graph
in reverse topological order. Parameters live in a :class:`ParamStore`, which
also owns the Adam moments and the global-norm gradient clipping.
"""

from __future__ import annotations

import contextlib
import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(values, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def _result(values: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.parents = tuple(parents)
    out.backward_fn = None
    out.op = op
    out.name = None
    return out


def _check_finite(t: Tensor) -> Tensor:
    if DEBUG and not np.all(np.isfinite(t.values)):
        raise FloatingPointError(f"non-finite values produced by op '{t.op}'")
    return t


DEBUG = False
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Forward ops inside the block record no backward closures."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_debug(enabled: bool) -> None:
    """Toggle finiteness checks after every forward op."""
    global DEBUG
    DEBUG = enabled


# ---------------------------------------------------------------------------
# forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.values @ b.values, (a, b), "matmul")
    if out.requires_grad:
        def backward_fn(g):
            if a.requires_grad:
                a._accumulate(g @ b.values.T)
            if b.requires_grad:
                b._accumulate(a.values.T @ g)
        out.backward_fn = backward_fn
    return _check_finite(out)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a single row broadcast over ``a``'s rows."""
    if a.shape == b.shape:
        broadcast = False
    elif b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        broadcast = True
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.values + b.values, (a, b), "add")
    if out.requires_grad:
        def backward_fn(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0, keepdims=True) if broadcast else g)
        out.backward_fn = backward_fn
    return _check_finite(out)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.values - b.values, (a, b), "sub")
    if out.requires_grad:
        def backward_fn(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(-g)
        out.backward_fn = backward_fn
    return _check_finite(out)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.values * b.values, (a, b), "mul")
    if out.requires_grad:
        def backward_fn(g):
            if a.requires_grad:
                a._accumulate(g * b.values)
            if b.requires_grad:
                b._accumulate(g * a.values)
        out.backward_fn = backward_fn
    return _check_finite(out)


def scale(a: Tensor, factor: float) -> Tensor:
    out = _result(a.values * factor, (a,), "scale")
    if out.requires_grad:
        out.backward_fn = lambda g: a._accumulate(g * factor)
    return _check_finite(out)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    out = _result(np.where(mask, a.values, 0.0), (a,), "relu")
    if out.requires_grad:
        out.backward_fn = lambda g: a._accumulate(g * mask)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.values))
    out = _result(y, (a,), "sigmoid")
    if out.requires_grad:
        out.backward_fn = lambda g: a._accumulate(g * y * (1.0 - y))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)
    out = _result(y, (a,), "tanh")
    if out.requires_grad:
        out.backward_fn = lambda g: a._accumulate(g * (1.0 - y * y))
    return out


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.values)
    out = _result(np.abs(a.values), (a,), "abs")
    if out.requires_grad:
        out.backward_fn = lambda g: a._accumulate(g * sign)
    return out


def square(a: Tensor) -> Tensor:
    out = _result(a.values * a.values, (a,), "square")
    if out.requires_grad:
        out.backward_fn = lambda g: a._accumulate(2.0 * g * a.values)
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack tensors vertically (all must share the column count)."""
    if not parts:
        raise ShapeError("concat_rows: empty input")
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError(f"concat_rows: column mismatch {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    out = _result(np.concatenate([p.values for p in parts], axis=0), parts, "concat_rows")
    if out.requires_grad:
        def backward_fn(g):
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                if p.requires_grad:
                    p._accumulate(g[lo:hi])
        out.backward_fn = backward_fn
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols: empty input")
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row mismatch {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = _result(np.concatenate([p.values for p in parts], axis=1), parts, "concat_cols")
    if out.requires_grad:
        def backward_fn(g):
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                if p.requires_grad:
                    p._accumulate(g[:, lo:hi])
        out.backward_fn = backward_fn
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= a.shape[0]:
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for shape {a.shape}")
    out = _result(a.values[start:stop], (a,), "slice_rows")
    if out.requires_grad:
        def backward_fn(g):
            full = np.zeros_like(a.values)
            full[start:stop] = g
            a._accumulate(full)
        out.backward_fn = backward_fn
    return out


def gather_rows(a: Tensor, index) -> Tensor:
    """Select rows by integer index (repeats allowed)."""
    idx = np.asarray(index, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for shape {a.shape}")
    out = _result(a.values[idx], (a,), "gather_rows")
    if out.requires_grad:
        def backward_fn(g):
            full = np.zeros_like(a.values)
            np.add.at(full, idx, g)
            a._accumulate(full)
        out.backward_fn = backward_fn
    return out


def set_rows(base: Tensor, index, rows: Tensor) -> Tensor:
    """Copy of ``base`` with ``base[index] = rows`` (indices must be unique)."""
    idx = np.asarray(index, dtype=np.intp).reshape(-1)
    if rows.shape != (idx.size, base.shape[1]):
        raise ShapeError(f"set_rows: rows {rows.shape} do not fit {idx.size} x {base.shape[1]}")
    if np.unique(idx).size != idx.size:
        raise ShapeError("set_rows: duplicate indices")
    vals = base.values.copy()
    vals[idx] = rows.values
    out = _result(vals, (base, rows), "set_rows")
    if out.requires_grad:
        def backward_fn(g):
            if base.requires_grad:
                gb = g.copy()
                gb[idx] = 0.0
                base._accumulate(gb)
            if rows.requires_grad:
                rows._accumulate(g[idx])
        out.backward_fn = backward_fn
    return out


def row_mean(a: Tensor) -> Tensor:
    """Mean over rows, giving a 1 x cols tensor."""
    n = a.shape[0]
    if n == 0:
        raise ShapeError("row_mean: no rows")
    out = _result(a.values.mean(axis=0, keepdims=True), (a,), "row_mean")
    if out.requires_grad:
        out.backward_fn = lambda g: a._accumulate(np.broadcast_to(g / n, a.shape))
    return out


def mean(a: Tensor) -> Tensor:
    """Mean of all entries as a 1 x 1 tensor."""
    size = a.values.size
    if size == 0:
        raise ShapeError("mean: empty tensor")
    out = _result(np.full((1, 1), a.values.mean()), (a,), "mean")
    if out.requires_grad:
        out.backward_fn = lambda g: a._accumulate(np.full(a.shape, g[0, 0] / size))
    return out


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 1 x 1 tensor."""
    out = _result(np.full((1, 1), a.values.sum()), (a,), "sum")
    if out.requires_grad:
        out.backward_fn = lambda g: a._accumulate(np.full(a.shape, g[0, 0]))
    return out


def scatter_mean(rows: Tensor, groups, n_groups: int) -> Tensor:
    """Average ``rows`` into ``n_groups`` buckets; empty buckets are zero rows."""
    idx = np.asarray(groups, dtype=np.intp).reshape(-1)
    if idx.size != rows.shape[0]:
        raise ShapeError(f"scatter_mean: {idx.size} group indices for {rows.shape[0]} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= n_groups):
        raise ShapeError(f"scatter_mean: group index out of range for {n_groups} groups")
    counts = np.bincount(idx, minlength=n_groups).astype(DTYPE)
    inv = np.zeros(n_groups, dtype=DTYPE)
    nonzero = counts > 0
    inv[nonzero] = 1.0 / counts[nonzero]
    acc = np.zeros((n_groups, rows.shape[1]), dtype=DTYPE)
    np.add.at(acc, idx, rows.values)
    out = _result(acc / np.maximum(counts, 1.0)[:, None], (rows,), "scatter_mean")
    if out.requires_grad:
        out.backward_fn = lambda g: rows._accumulate(g[idx] * inv[idx, None])
    return out


def edge_matmul(h: Tensor, weights: Tensor) -> Tensor:
    """Per-row vector-matrix product with row-specific weight matrices.

    ``h`` is m x d and ``weights`` is m x (d*k); row r of ``weights`` is read as
    a d x k matrix in row-major order. Returns the m x k products.
    """
    m, d = h.shape
    if weights.shape[0] != m or weights.shape[1] % max(d, 1) != 0:
        raise ShapeError(f"edge_matmul: incompatible shapes {h.shape} and {weights.shape}")
    k = weights.shape[1] // d if d else 0
    w3 = weights.values.reshape(m, d, k)
    out = _result(np.einsum("md,mdk->mk", h.values, w3), (h, weights), "edge_matmul")
    if out.requires_grad:
        def backward_fn(g):
            if h.requires_grad:
                h._accumulate(np.einsum("mk,mdk->md", g, w3))
            if weights.requires_grad:
                weights._accumulate(np.einsum("md,mk->mdk", h.values, g).reshape(m, d * k))
        out.backward_fn = backward_fn
    return out


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor, bias: Tensor):
    """One LSTM step for a batch of rows; gate order in the weights is i, f, g, o.

    Returns ``(h_new, c_new)``. Both outputs share a single backward closure
    that fires once the gradients of both have been collected.
    """
    n, hidden = h.shape
    if w_x.shape != (x.shape[1], 4 * hidden) or w_h.shape != (hidden, 4 * hidden):
        raise ShapeError(f"lstm_cell: weight shapes {w_x.shape}, {w_h.shape} do not fit hidden {hidden}")
    if x.shape[0] != n or c.shape != h.shape or bias.shape != (1, 4 * hidden):
        raise ShapeError(f"lstm_cell: operand shapes {x.shape}, {h.shape}, {c.shape}, {bias.shape}")
    z = x.values @ w_x.values + h.values @ w_h.values + bias.values
    zi, zf, zg, zo = (z[:, k * hidden:(k + 1) * hidden] for k in range(4))
    i = 1.0 / (1.0 + np.exp(-zi))
    f = 1.0 / (1.0 + np.exp(-zf))
    gg = np.tanh(zg)
    o = 1.0 / (1.0 + np.exp(-zo))
    c_new = f * c.values + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    parents = (x, h, c, w_x, w_h, bias)
    # The combined node owns the real backward; h_out/c_out only stash grads.
    joint = _result(np.concatenate([h_new, c_new], axis=1), parents, "lstm_cell")
    h_out = _result(h_new, (joint,), "lstm_h")
    c_out = _result(c_new, (joint,), "lstm_c")
    if joint.requires_grad:
        def h_backward(g):
            joint._accumulate(np.concatenate([g, np.zeros_like(g)], axis=1))

        def c_backward(g):
            joint._accumulate(np.concatenate([np.zeros_like(g), g], axis=1))

        def joint_backward(g):
            gh, gc = g[:, :hidden], g[:, hidden:]
            dc = gc + gh * o * (1.0 - tc * tc)
            dzo = gh * tc * o * (1.0 - o)
            dzi = dc * gg * i * (1.0 - i)
            dzf = dc * c.values * f * (1.0 - f)
            dzg = dc * i * (1.0 - gg * gg)
            dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
            if x.requires_grad:
                x._accumulate(dz @ w_x.values.T)
            if h.requires_grad:
                h._accumulate(dz @ w_h.values.T)
            if c.requires_grad:
                c._accumulate(dc * f)
            if w_x.requires_grad:
                w_x._accumulate(x.values.T @ dz)
            if w_h.requires_grad:
                w_h._accumulate(h.values.T @ dz)
            if bias.requires_grad:
                bias._accumulate(dz.sum(axis=0, keepdims=True))

        h_out.backward_fn = h_backward
        c_out.backward_fn = c_backward
        joint.backward_fn = joint_backward
    return h_out, c_out


# ---------------------------------------------------------------------------
# reverse pass


def topo_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (parents first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that requires it and feeds ``loss``."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss must be 1 x 1, got {loss.shape}")
    order = topo_order(loss)
    for node in order:
        if node.backward_fn is not None:
            node.grad = None
    loss.grad = np.ones((1, 1), dtype=DTYPE)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def trace(root: Tensor) -> list[str]:
    """Op names of the computation graph feeding ``root``, parents first."""
    return [n.op for n in topo_order(root) if n.op != "leaf"]


# ---------------------------------------------------------------------------
# parameters and optimisation


class ParamStore:
    """Named learnable tensors plus their Adam state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, values) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(values, dtype=DTYPE), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.values)
        self.v[name] = np.zeros_like(t.values)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grad_norm(self) -> float:
        sq = 0.0
        for t in self.params.values():
            if t.grad is not None:
                sq += float(np.sum(t.grad * t.grad))
        return float(np.sqrt(sq))

    def n_values(self) -> int:
        return sum(t.values.size for t in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.values.copy() for k, t in self.params.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for k, arr in values.items():
            if self.params[k].values.shape != arr.shape:
                raise ShapeError(f"restore: shape mismatch for {k}")
            self.params[k].values = np.array(arr, dtype=DTYPE)

    def state_dict(self) -> dict:
        return {
            "params": {k: _encode(t.values) for k, t in self.params.items()},
            "adam": {
                "step": self.step,
                "m": {k: _encode(a) for k, a in self.m.items()},
                "v": {k: _encode(a) for k, a in self.v.items()},
            },
        }

    def load_state_dict(self, state: dict) -> None:
        for k, enc in state["params"].items():
            if k not in self.params:
                raise KeyError(f"unknown parameter in checkpoint: {k}")
            self.params[k].values = _decode(enc)
        adam = state.get("adam")
        if adam:
            self.step = int(adam.get("step", 0))
            for k, enc in adam.get("m", {}).items():
                self.m[k] = _decode(enc)
            for k, enc in adam.get("v", {}).items():
                self.v[k] = _decode(enc)


def _encode(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "values": [float(x) for x in arr.ravel()]}


def _decode(enc: dict) -> np.ndarray:
    return np.array(enc["values"], dtype=DTYPE).reshape(enc["shape"])


def clip_global_norm(store: ParamStore, max_norm: float = 1.0) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the applied factor (1.0 when no clipping happened).
    """
    norm = store.grad_norm()
    if norm <= max_norm:
        return 1.0
    factor = max_norm / norm
    for t in store.params.values():
        if t.grad is not None:
            t.grad *= factor
    return factor


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update; gradients are cleared afterwards."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.values)
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.values = p.values - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, int]) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, store: ParamStore, *, epoch: int, rng_seed: int,
                    header: dict | None = None) -> None:
    state = store.state_dict()
    doc = {"format": 1, **(header or {}), "params": state["params"], "adam": state["adam"],
           "epoch": int(epoch), "rng_seed": int(rng_seed)}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != 1:
        raise ValueError(f"unsupported checkpoint format: {doc.get('format')!r}")
    return doc


def numeric_gradient(f: Callable[[], float], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` w.r.t. ``t.values``."""
    grad = np.zeros_like(t.values)
    it = np.nditer(t.values, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = t.values[idx]
        t.values[idx] = orig + h
        fp = f()
        t.values[idx] = orig - h
        fm = f()
        t.values[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
