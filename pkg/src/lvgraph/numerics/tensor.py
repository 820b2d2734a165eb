"""Dense tensors with tape-based reverse-mode differentiation.

Every op works on the trailing axis and broadcasts over leading (batch)
axes, so the same code path serves a single episode and a padded batch.
"""
from __future__ import annotations

import builtins
import contextlib
import threading

import numpy as np

DEFAULT_DTYPE = np.float64

_state = threading.local()


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _settings():
    if not hasattr(_state, "grad_enabled"):
        _state.grad_enabled = True
        _state.check_finite = False
        _state.tapes = [Tape()]
    return _state


class Tensor:
    """An array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            floating = isinstance(data, (np.ndarray, np.generic)) and data.dtype.kind == "f"
            dtype = data.dtype if floating else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)


class Tape:
    """Ordered record of differentiable ops executed while it is active."""

    def __init__(self):
        self.records = []

    def record(self, inputs, outputs, backward_fn):
        self.records.append((inputs, outputs, backward_fn))

    def __len__(self):
        return len(self.records)

    def clear(self):
        self.records = []

    def backward(self, loss):
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for inputs, outputs, backward_fn in reversed(self.records):
            out_grads = [o.grad for o in outputs]
            if all(g is None for g in out_grads):
                continue
            out_grads = [np.zeros_like(o.data) if g is None else g for o, g in zip(outputs, out_grads)]
            in_grads = backward_fn(*out_grads)
            for t, g in zip(inputs, in_grads):
                if g is None or not (isinstance(t, Tensor) and t.requires_grad):
                    continue
                if t.grad is None:
                    t.grad = np.array(g, dtype=t.data.dtype)
                else:
                    t.grad += g
        # intermediate grads are only meaningful during the sweep
        for _, outputs, _ in self.records:
            for o in outputs:
                o.grad = None
        loss.grad = None
        self.clear()

    def __enter__(self):
        _settings().tapes.append(self)
        return self

    def __exit__(self, *exc):
        _settings().tapes.pop()
        return False


def current_tape():
    return _settings().tapes[-1]


def backward(loss):
    """Accumulate dloss/dparam into every reachable leaf and clear the tape."""
    current_tape().backward(loss)


@contextlib.contextmanager
def no_grad():
    s = _settings()
    prev = s.grad_enabled
    s.grad_enabled = False
    try:
        yield
    finally:
        s.grad_enabled = prev


def set_check_finite(flag):
    """Toggle the post-op finiteness assertion (off by default for speed)."""
    _settings().check_finite = bool(flag)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward_fn, n_out=None):
    """Wrap forward result(s) and record the op; ``n_out`` set means a tuple of outputs."""
    s = _settings()
    if s.check_finite:
        arrs = data if n_out is not None else (data,)
        for a in arrs:
            if not np.all(np.isfinite(a)):
                raise NonFiniteError("non-finite value produced by forward op")
    needs = s.grad_enabled and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    if n_out is None:
        outs = (Tensor(data, requires_grad=needs),)
    else:
        outs = tuple(Tensor(d, requires_grad=needs) for d in data)
    if needs:
        s.tapes[-1].record(inputs, outs, backward_fn)
    return outs[0] if n_out is None else outs


def unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


elementwise_mul = mul
elementwise_add = add


def tanh(x):
    y = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - y * y),)

    return _make(y, (x,), bw)


tanh_act = tanh


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x):
    y = _sigmoid(x.data)

    def bw(g):
        return (g * y * (1.0 - y),)

    return _make(y, (x,), bw)


def square(x):
    def bw(g):
        return (2.0 * g * x.data,)

    return _make(x.data * x.data, (x,), bw)


def log(x):
    def bw(g):
        return (g / x.data,)

    return _make(np.log(x.data), (x,), bw)


# ------------------------------------------------------------------ structure

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of nothing")
    lead = np.broadcast_shapes(*(t.shape[:-1] for t in tensors))
    arrs = [np.broadcast_to(t.data, lead + t.shape[-1:]) for t in tensors]
    if axis not in (-1, len(lead)):
        raise ShapeError("concat only supports the last axis")
    sizes = [t.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(unbroadcast(g[..., bounds[i]:bounds[i + 1]], t.shape) for i, t in enumerate(tensors))

    return _make(np.concatenate(arrs, axis=-1), tuple(tensors), bw)


def mean(tensors):
    """Elementwise arithmetic mean of same-shaped tensors."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("mean of nothing")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"mean: shapes {shape} and {t.shape} do not match")
    total = tensors[0].data.copy()
    for t in tensors[1:]:
        total = total + t.data
    n = len(tensors)

    def bw(g):
        return tuple(g / n for _ in tensors)

    return _make(total / n, tuple(tensors), bw)


def sum(x, axis=None):
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.sum(x.data, axis=axis), (x,), bw)


def getitem(x, index):
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), bw)


def unbind(x, axis=0):
    """Split along ``axis`` into a list of tensors (one tape record)."""
    n = x.shape[axis]
    pieces = [np.take(x.data, j, axis=axis) for j in range(n)]

    def bw(*gs):
        return (np.stack(gs, axis=axis),)

    return list(_make(pieces, (x,), bw, n_out=n))


def reshape(x, shape):
    old = x.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(x.data.reshape(shape), (x,), bw)


def take_along(x, idx):
    """Row-wise gather: x[b, idx[b], ...] for a leading batch axis."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (rows, idx), g)
        return (out,)

    return _make(x.data[rows, idx], (x,), bw)


def where(mask, a, b):
    """Select ``a`` where mask is true, else ``b`` (mask broadcasts)."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)

    def bw(g):
        return (unbroadcast(np.where(mask, g, 0.0), a.shape), unbroadcast(np.where(mask, 0.0, g), b.shape))

    return _make(out, (a, b), bw)


# ---------------------------------------------------------------- linear algebra

def linear(x, W, b=None, name=None):
    """x @ W.T (+ b); x is [..., n], W is [out, n]."""
    x = as_tensor(x)
    if x.shape[-1] != W.shape[1]:
        label = name or W.name or "weight"
        raise ShapeError(f"linear '{label}': input has {x.shape[-1]} features, weight expects {W.shape[1]}")
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ W.data
        g2 = g.reshape(-1, g.shape[-1])
        xb = np.broadcast_to(x.data, g.shape[:-1] + x.shape[-1:]).reshape(-1, x.shape[-1])
        gW = g2.T @ xb
        grads = [unbroadcast(gx, x.shape), gW]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    inputs = (x, W) if b is None else (x, W, b)
    return _make(out, inputs, bw)


def attn_scores(keys, query):
    """Dot every key row with the query: [..., L, d] x [..., d] -> [..., L]."""
    if keys.shape[-1] != query.shape[-1]:
        raise ShapeError(f"attn_scores: key dim {keys.shape[-1]} vs query dim {query.shape[-1]}")
    out = np.einsum("...ld,...d->...l", keys.data, query.data)

    def bw(g):
        gk = g[..., :, None] * query.data[..., None, :]
        gq = np.einsum("...l,...ld->...d", g, keys.data)
        return unbroadcast(gk, keys.shape), unbroadcast(gq, query.shape)

    return _make(out, (keys, query), bw)


def attn_pool(weights, values):
    """Weighted sum of value rows: [..., L] x [..., L, d] -> [..., d]."""
    if weights.shape[-1] != values.shape[-2]:
        raise ShapeError(f"attn_pool: {weights.shape[-1]} weights for {values.shape[-2]} rows")
    out = np.einsum("...l,...ld->...d", weights.data, values.data)

    def bw(g):
        gw = np.einsum("...d,...ld->...l", g, values.data)
        gv = weights.data[..., :, None] * g[..., None, :]
        return unbroadcast(gw, weights.shape), unbroadcast(gv, values.shape)

    return _make(out, (weights, values), bw)


# -------------------------------------------------------------------- softmax

def _masked(x, mask):
    if mask is None:
        return x
    return np.where(mask, x, -np.inf)


def softmax(x, mask=None):
    """Softmax over the last axis; masked entries get exactly zero weight."""
    x = as_tensor(x)
    if x.shape[-1] == 0:
        raise ShapeError("softmax of an empty vector")
    z = _masked(x.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), bw)


def log_softmax(x, mask=None):
    x = as_tensor(x)
    if x.shape[-1] == 0:
        raise ShapeError("log_softmax of an empty vector")
    z = _masked(x.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    if mask is not None:
        y = np.where(mask, y, 0.0)

    def bw(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), bw)


# ---------------------------------------------------------------- recurrence

def lstm_step(x, h, c, Wx, Wh, b=None):
    """One LSTM cell update, gates ordered (input, forget, candidate, output).

    Fused: a single tape record with a hand-derived backward.
    """
    hid = h.shape[-1]
    if Wx.shape != (4 * hid, x.shape[-1]) or Wh.shape != (4 * hid, hid) or c.shape[-1] != hid:
        raise ShapeError(
            f"lstm_step: x{x.shape} h{h.shape} c{c.shape} incompatible with "
            f"Wx{Wx.shape} Wh{Wh.shape}"
        )
    z = x.data @ Wx.data.T + h.data @ Wh.data.T
    if b is not None:
        z = z + b.data
    i = _sigmoid(z[..., :hid])
    f = _sigmoid(z[..., hid:2 * hid])
    gg = np.tanh(z[..., 2 * hid:3 * hid])
    o = _sigmoid(z[..., 3 * hid:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc
    out_shape = np.broadcast_shapes(h_new.shape, c_new.shape)
    h_new = np.broadcast_to(h_new, out_shape).copy()
    c_new = np.broadcast_to(c_new, out_shape).copy()

    def bw(gh, gc):
        gc_total = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            gc_total * gg * i * (1.0 - i),
            gc_total * c.data * f * (1.0 - f),
            gc_total * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ], axis=-1)
        dz2 = dz.reshape(-1, 4 * hid)
        xb = np.broadcast_to(x.data, out_shape[:-1] + x.shape[-1:]).reshape(-1, x.shape[-1])
        hb = np.broadcast_to(h.data, out_shape[:-1] + (hid,)).reshape(-1, hid)
        grads = [
            unbroadcast(dz @ Wx.data, x.shape),
            unbroadcast(dz @ Wh.data, h.shape),
            unbroadcast(gc_total * f, c.shape),
            dz2.T @ xb,
            dz2.T @ hb,
        ]
        if b is not None:
            grads.append(dz2.sum(axis=0))
        return tuple(grads)

    inputs = (x, h, c, Wx, Wh) if b is None else (x, h, c, Wx, Wh, b)
    return _make((h_new, c_new), inputs, bw, n_out=2)


def embedding(W, ids, pad_id=None):
    """Row lookup; the padding row always reads as zero and never learns."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= W.shape[0]):
        raise IndexError(f"token id out of range [0, {W.shape[0]})")
    out = W.data[ids]
    if pad_id is not None:
        out = np.where((ids == pad_id)[..., None], 0.0, out)

    def bw(g):
        gW = np.zeros_like(W.data)
        np.add.at(gW, ids.reshape(-1), g.reshape(-1, W.shape[1]))
        if pad_id is not None:
            gW[pad_id] = 0.0
        return (gW,)

    return _make(out, (W,), bw)


# ------------------------------------------------------------------ fused ops
# Single-record versions of common chains; each is checked against its
# composed counterpart and against finite differences in the test suite.

def lstm_sequence(xs, mask, Wx, Wh, b=None, reverse=False):
    """Scan an LSTM over [B, L, n] inputs, skipping masked positions.

    Masked steps leave (h, c) untouched and emit zeros.  Returns [B, L, H].
    """
    X = xs.data
    B, L, _ = X.shape
    H = Wh.shape[1]
    if Wx.shape != (4 * H, X.shape[-1]) or Wh.shape != (4 * H, H):
        raise ShapeError(f"lstm_sequence: input {X.shape} incompatible with Wx{Wx.shape} Wh{Wh.shape}")
    m = np.asarray(mask, dtype=float)[..., None]
    order = range(L - 1, -1, -1) if reverse else range(L)
    xz = X @ Wx.data.T
    if b is not None:
        xz = xz + b.data
    h = np.zeros((B, H), dtype=xz.dtype)
    c = np.zeros((B, H), dtype=xz.dtype)
    out = np.zeros((B, L, H), dtype=xz.dtype)
    cache = []
    for j in order:
        z = xz[:, j] + h @ Wh.data.T
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        mj = m[:, j]
        cache.append((j, h, c, i, f, g, o, tc, mj))
        h = mj * h_new + (1.0 - mj) * h
        c = mj * c_new + (1.0 - mj) * c
        out[:, j] = mj * h

    def bw(gout):
        dWh = np.zeros_like(Wh.data)
        dxz = np.zeros((B, L, 4 * H))
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        for j, h_prev, c_prev, i, f, g, o, tc, mj in reversed(cache):
            dh_tot = dh + gout[:, j] * mj
            dh_new, dh_pass = dh_tot * mj, dh_tot * (1.0 - mj)
            dc_new, dc_pass = dc * mj, dc * (1.0 - mj)
            gc = dc_new + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate([gc * g * i * (1.0 - i), gc * c_prev * f * (1.0 - f),
                                 gc * i * (1.0 - g * g), dh_new * tc * o * (1.0 - o)], axis=1)
            dxz[:, j] = dz
            dWh += dz.T @ h_prev
            dh = dz @ Wh.data + dh_pass
            dc = gc * f + dc_pass
        flat = dxz.reshape(-1, 4 * H)
        grads = [dxz @ Wx.data, flat.T @ X.reshape(-1, X.shape[-1]), dWh]
        if b is not None:
            grads.append(flat.sum(axis=0))
        return tuple(grads)

    inputs = (xs, Wx, Wh) if b is None else (xs, Wx, Wh, b)
    return _make(out, inputs, bw)


def bilinear_attention(query, keys, W, mask=None):
    """score_l = keys_l . (W q); returns (sum_l softmax(score)_l keys_l, weights).

    ``query`` [..., dq] broadcasts against ``keys`` [..., L, dk] by
    inserting axes before its feature axis.
    """
    q, K = query.data, keys.data
    if W.shape != (K.shape[-1], q.shape[-1]):
        raise ShapeError(f"attention '{W.name}': weight {W.shape} vs keys {K.shape} / query {q.shape}")
    if K.shape[-2] == 0:
        raise ShapeError(f"attention '{W.name}' over zero items")
    proj = q @ W.data.T
    pshape = proj.shape[:-1] + (1,) * max(K.ndim - 1 - proj.ndim, 0) + proj.shape[-1:]
    pb = proj.reshape(pshape)
    scores = np.einsum("...ld,...d->...l", K, pb)
    z = _masked(scores, mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    w = e / e.sum(axis=-1, keepdims=True)
    ctx = np.einsum("...l,...ld->...d", w, K)

    def bw(gctx, gw):
        gw = gw + np.einsum("...d,...ld->...l", gctx, K)
        gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True))
        gK = w[..., :, None] * gctx[..., None, :] + gs[..., :, None] * pb[..., None, :]
        gp = unbroadcast(np.einsum("...l,...ld->...d", gs, K), pshape).reshape(proj.shape)
        gp2 = gp.reshape(-1, gp.shape[-1])
        gW = gp2.T @ np.broadcast_to(q, proj.shape[:-1] + q.shape[-1:]).reshape(-1, q.shape[-1])
        return unbroadcast(gp @ W.data, q.shape), unbroadcast(gK, K.shape), gW

    return _make((ctx, w), (query, keys, W), bw, n_out=2)


def tanh_linear(parts, W):
    """tanh(W [p_1; p_2; ...]) without materializing the concatenation."""
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[-1] for p in parts]
    if W.shape[1] != builtins.sum(sizes):
        raise ShapeError(f"projection '{W.name}': inputs have {builtins.sum(sizes)} features, weight expects {W.shape[1]}")
    bounds = np.cumsum([0] + sizes)
    blocks = [W.data[:, bounds[k]:bounds[k + 1]] for k in range(len(parts))]
    z = parts[0].data @ blocks[0].T
    for p, Wk in zip(parts[1:], blocks[1:]):
        z = z + p.data @ Wk.T
    y = np.tanh(z)

    def bw(g):
        gz = g * (1.0 - y * y)
        gz2 = gz.reshape(-1, gz.shape[-1])
        grads, gW = [], []
        for p, Wk in zip(parts, blocks):
            grads.append(unbroadcast(gz @ Wk, p.shape))
            pb = np.broadcast_to(p.data, gz.shape[:-1] + p.shape[-1:]).reshape(-1, p.shape[-1])
            gW.append(gz2.T @ pb)
        return tuple(grads) + (np.concatenate(gW, axis=1),)

    return _make(y, tuple(parts) + (W,), bw)


_FUSED = [True]


def fused_enabled():
    return _FUSED[0]


@contextlib.contextmanager
def composed_ops():
    """Build graphs from elementary ops instead of the fused primitives."""
    old = _FUSED[0]
    _FUSED[0] = False
    try:
        yield
    finally:
        _FUSED[0] = old
