"""Parameter storage and fully connected networks on top of :mod:`.tensor`."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .tensor import Tensor


class ParameterStore:
    """Named learnable arrays with matching gradient buffers.

    Insertion order is preserved and defines the fixed reduction and
    serialisation order used everywhere else.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grad(self, name: str) -> np.ndarray:
        t = self._params[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def num_scalars(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data.copy()) for k, t in self._params.items())

    def load_state(self, state):
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for k, t in self._params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {t.data.shape}")
            t.data = arr.astype(self.dtype, copy=True)

    def astype(self, dtype) -> "ParameterStore":
        other = ParameterStore(dtype)
        for k, t in self._params.items():
            other.add(k, t.data)
        return other


@dataclass(frozen=True)
class MlpSpec:
    """Layer layout of a ReLU network.

    ``in_parts`` lists the widths of the input groups.  Each group gets its
    own slice of the first weight matrix, which lets a per-ray input (frame
    code, view direction) be multiplied once per ray rather than once per
    sample.  ``skips`` holds hidden-layer indices where the inputs are fed in
    again, as in the usual NeRF trunk.
    """

    in_parts: tuple
    hidden: tuple
    out_width: int = 0
    skips: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.in_parts or any(w <= 0 for w in self.in_parts):
            raise ValueError("input widths must be positive")
        if any(w <= 0 for w in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.out_width < 0:
            raise ValueError("output width must be nonnegative")
        if not self.hidden and not self.out_width:
            raise ValueError("network needs at least one layer")
        if any(not 0 < s < len(self.hidden) for s in self.skips):
            raise ValueError("skip index out of range")

    @property
    def out_dim(self) -> int:
        return self.out_width if self.out_width else self.hidden[-1]

    @property
    def in_width(self) -> int:
        return sum(self.in_parts)


def init_mlp(store: ParameterStore, prefix: str, spec: MlpSpec, rng: np.random.Generator,
             out_bias=None):
    """Create the parameters of ``spec`` under ``prefix`` (uniform fan-in init)."""
    fan_in = sum(spec.in_parts)

    def uniform(fan, shape, gain):
        bound = gain * np.sqrt(1.0 / fan)
        return rng.uniform(-bound, bound, size=shape)

    prev = None
    for i, width in enumerate(spec.hidden):
        if i == 0 or i in spec.skips:
            fan = fan_in + (prev or 0) if i else fan_in
            for j, w_in in enumerate(spec.in_parts):
                store.add(f"{prefix}.l{i}.in{j}", uniform(fan, (w_in, width), np.sqrt(6.0)))
            if i:
                store.add(f"{prefix}.l{i}.w", uniform(fan, (prev, width), np.sqrt(6.0)))
        else:
            store.add(f"{prefix}.l{i}.w", uniform(prev, (prev, width), np.sqrt(6.0)))
        store.add(f"{prefix}.l{i}.b", np.zeros(width))
        prev = width
    if spec.out_width and prev is None:
        for j, w_in in enumerate(spec.in_parts):
            store.add(f"{prefix}.out.in{j}", uniform(fan_in, (w_in, spec.out_width), np.sqrt(3.0)))
    elif spec.out_width:
        store.add(f"{prefix}.out.w", uniform(prev, (prev, spec.out_width), np.sqrt(3.0)))
    if spec.out_width:
        bias = np.zeros(spec.out_width) if out_bias is None else np.asarray(out_bias, dtype=float)
        store.add(f"{prefix}.out.b", bias)


def _rows_broadcast(x: Tensor, rows: int) -> Tensor:
    """Expand an (R, H) per-ray activation to (R*S, H) per-sample rows."""
    r, h = x.shape
    if r == rows:
        return x
    if rows % r:
        raise ValueError(f"cannot broadcast {r} rows to {rows}")
    s = rows // r
    return tt.broadcast_to(tt.reshape(x, (r, 1, h)), (r, s, h)).reshape(rows, h)


def _feed_inputs(store, prefix, layer, parts, rows):
    pre = None
    for j, x in enumerate(parts):
        y = tt.matmul(x, store[f"{prefix}.{layer}.in{j}"])
        y = _rows_broadcast(y, rows)
        pre = y if pre is None else pre + y
    return pre


def mlp_forward(spec: MlpSpec, store: ParameterStore, prefix: str, parts, return_hidden=False):
    """Apply the network to a list of input groups.

    Groups with fewer rows than the largest one are treated as per-ray and
    repeated over that ray's samples (rows must divide evenly).  Returns the
    output layer, or ``(output, last_hidden)`` when ``return_hidden``.
    """
    parts = [tt.as_tensor(p, store.dtype) for p in parts]
    if len(parts) != len(spec.in_parts):
        raise ValueError(f"expected {len(spec.in_parts)} input groups, got {len(parts)}")
    for p, w in zip(parts, spec.in_parts):
        if p.ndim != 2 or p.shape[1] != w:
            raise ValueError(f"input group shape {p.shape} does not match width {w}")
    rows = max(p.shape[0] for p in parts)

    h = None
    for i in range(len(spec.hidden)):
        if i == 0:
            pre = _feed_inputs(store, prefix, "l0", parts, rows)
        else:
            pre = tt.matmul(h, store[f"{prefix}.l{i}.w"])
            if i in spec.skips:
                pre = pre + _feed_inputs(store, prefix, f"l{i}", parts, rows)
        h = tt.relu(pre + store[f"{prefix}.l{i}.b"])
    out = h
    if spec.out_width and h is None:
        out = _feed_inputs(store, prefix, "out", parts, rows) + store[f"{prefix}.out.b"]
    elif spec.out_width:
        out = tt.matmul(h, store[f"{prefix}.out.w"]) + store[f"{prefix}.out.b"]
    if return_hidden:
        return out, h
    return out
