"""Named parameter store, Adam optimizer and the checkpoint file format."""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor

CHECKPOINT_MAGIC = b"LVGCKPT1\n"


class ParameterStore:
    """Maps unique names to learnable tensors, created lazily on first use.

    Each parameter draws its initial values from a generator keyed on
    ``(seed, crc32(name))`` so creation order never affects the values.
    """

    def __init__(self, seed=0, dtype=np.float64):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.frozen_rows: dict[str, int] = {}

    def _rng(self, name):
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def get(self, name, shape, init="uniform", fan_in=None):
        shape = tuple(int(s) for s in shape)
        p = self._params.get(name)
        if p is not None:
            if p.shape != shape:
                raise ShapeError(f"parameter '{name}' has shape {p.shape}, requested {shape}")
            return p
        if init == "zeros":
            value = np.zeros(shape)
        elif init == "uniform":
            fan_in = fan_in if fan_in is not None else shape[-1]
            bound = 1.0 / np.sqrt(fan_in)
            value = self._rng(name).uniform(-bound, bound, size=shape)
        elif init == "normal":
            value = self._rng(name).normal(0.0, 1.0, size=shape)
        else:
            raise ValueError(f"unknown init '{init}'")
        return self._add(name, value)

    def lstm_bias(self, name, hidden, forget=0.0):
        """Zero LSTM bias except the forget-gate block, which starts at ``forget``."""
        fresh = name not in self._params
        b = self.get(name, (4 * hidden,), init="zeros")
        if fresh and forget:
            b.data[hidden:2 * hidden] = forget
        return b

    def _add(self, name, value):
        p = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        p.grad = np.zeros_like(p.data)
        self._params[name] = p
        return p

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def n_scalars(self):
        return int(sum(p.data.size for p in self._params.values()))

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def grads(self):
        return {n: p.grad.copy() for n, p in self.items()}

    def state_dict(self):
        return {n: p.data.copy() for n, p in self.items()}

    def load_state_dict(self, state, strict=True):
        if strict:
            missing = set(self._params) - set(state)
            if missing:
                raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, value in state.items():
            value = np.asarray(value)
            if name in self._params:
                p = self._params[name]
                if p.shape != value.shape:
                    raise ShapeError(
                        f"parameter '{name}': checkpoint shape {value.shape} vs model shape {p.shape}"
                    )
                p.data = value.astype(self.dtype, copy=True)
                p.grad = np.zeros_like(p.data)
            else:
                self._add(name, value)

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        for p in self._params.values():
            p.data = p.data.astype(self.dtype)
            p.grad = np.zeros_like(p.data)


class Adam:
    """Bias-corrected Adam with optional global-norm gradient clipping."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store: ParameterStore):
        params = store.items()
        for name, p in params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient in parameter '{name}'")
        scale = 1.0
        if self.clip_norm is not None:
            total = np.sqrt(np.sum([np.sum(p.grad * p.grad) for _, p in params]))
            if total > self.clip_norm:
                scale = self.clip_norm / (total + 1e-12)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params:
            g = p.grad * scale
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            row = store.frozen_rows.get(name)
            if row is not None:
                p.data[row] = 0.0
        store.zero_grad()

    def state_arrays(self):
        out = {}
        for name in sorted(self.m):
            out[f"adam.m/{name}"] = self.m[name]
            out[f"adam.v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, t):
        self.t = int(t)
        self.m, self.v = {}, {}
        for key, value in arrays.items():
            kind, _, name = key.partition("/")
            if kind == "adam.m":
                self.m[name] = np.array(value, dtype=np.float64)
            elif kind == "adam.v":
                self.v[name] = np.array(value, dtype=np.float64)


def sgd_adam_step(store, optimizer: Adam):
    optimizer.step(store)


def save_checkpoint(path, tensors, meta=None):
    """Write ``name -> array`` plus JSON metadata as a self-describing file.

    Layout: magic, 8-byte little-endian header length, JSON header (sorted
    keys), then each array's raw little-endian bytes in name order.  Output
    depends only on the content, so save/load/save is byte-stable.
    """
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True,
                        separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    header = json.loads(blob[pos:pos + hlen])
    base = pos + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arr = np.frombuffer(blob[start:start + e["nbytes"]], dtype=np.dtype(e["dtype"]))
        tensors[e["name"]] = arr.reshape(e["shape"]).copy()
    return tensors, header["meta"]
