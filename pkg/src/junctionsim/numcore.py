"""Dense float64 tensor core with reverse-mode autodiff.

Everything the trajectory model needs and nothing more: a computation
tape over numpy arrays, the layer primitives (LSTM/GRU cells, MLP,
scaled-dot-product multi-head attention), an Adam optimizer with named
parameter storage, a binary checkpoint format, and a finite-difference
gradient checker.

All values are 64-bit floats. Forward passes are pure functions of their
inputs, so repeated evaluation is bitwise identical.
"""

from __future__ import annotations

import contextlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "relu",
    "tsum",
    "tmean",
    "concat",
    "tslice",
    "reshape",
    "swap_last_axes",
    "softmax",
    "log_softmax",
    "masked_softmax",
    "linear",
    "mlp",
    "lstm_cell",
    "gru_cell",
    "multi_head_attention",
    "ParamStore",
    "GradCheckReport",
    "grad_check",
    "xavier_uniform",
    "save_checkpoint",
    "load_checkpoint",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A node in the computation tape wrapping a float64 ndarray."""

    __slots__ = ("value", "grad", "_parents", "_backward", "name")

    def __init__(self, value, parents=(), backward_fn=None, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents if _GRAD_ENABLED else ()
        self._backward = backward_fn if _GRAD_ENABLED else None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def data(self):
        """Flat row-major view of the underlying values."""
        return np.ascontiguousarray(self.value).ravel()

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name!r})"

    # operator sugar; scalars and ndarrays are lifted to constant nodes
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def tensor(value, name=""):
    """Create a leaf tensor; rejects non-finite entries."""
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite entries in tensor {name!r}")
    return Tensor(arr, name=name)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def backward(loss):
    """Reverse-mode sweep from a scalar loss through the recorded tape."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive ops


def _make(value, parents, backward_fn):
    if _GRAD_ENABLED:
        return Tensor(value, parents, backward_fn)
    return Tensor(value)


def add(a, b):
    a, b = _lift(a), _lift(b)
    out_val = a.value + b.value

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return _make(out_val, (a, b), bw)


def sub(a, b):
    a, b = _lift(a), _lift(b)
    out_val = a.value - b.value

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    return _make(out_val, (a, b), bw)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    out_val = a.value * b.value

    def bw(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return _make(out_val, (a, b), bw)


def div(a, b):
    a, b = _lift(a), _lift(b)
    out_val = a.value / b.value

    def bw(g):
        _accum(a, _unbroadcast(g / b.value, a.value.shape))
        _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _make(out_val, (a, b), bw)


def neg(a):
    def bw(g):
        _accum(a, -g)

    return _make(-a.value, (a,), bw)


def matmul(a, b):
    """np.matmul with broadcasting-aware gradients (batched matmul ok)."""
    a, b = _lift(a), _lift(b)
    out_val = a.value @ b.value

    def bw(g):
        av, bv = a.value, b.value
        if av.ndim == 1 and bv.ndim == 1:
            _accum(a, g * bv)
            _accum(b, g * av)
            return
        if av.ndim == 1:
            ga = bv @ g  # (..., k, n) @ (..., n) -> (..., k)
        elif bv.ndim == 1:
            ga = g[..., None] * bv
        else:
            ga = g @ np.swapaxes(bv, -1, -2)
        if bv.ndim == 1:
            gb = np.swapaxes(av, -1, -2) @ g
        elif av.ndim == 1:
            gb = av[:, None] * g[..., None, :]
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        _accum(a, _unbroadcast(ga, av.shape))
        _accum(b, _unbroadcast(gb, bv.shape))

    return _make(out_val, (a, b), bw)


def exp(a):
    out_val = np.exp(a.value)

    def bw(g):
        _accum(a, g * out_val)

    return _make(out_val, (a,), bw)


def log(a):
    def bw(g):
        _accum(a, g / a.value)

    return _make(np.log(a.value), (a,), bw)


def tanh(a):
    out_val = np.tanh(a.value)

    def bw(g):
        _accum(a, g * (1.0 - out_val * out_val))

    return _make(out_val, (a,), bw)


def sigmoid(a):
    out_val = 0.5 * (np.tanh(0.5 * a.value) + 1.0)

    def bw(g):
        _accum(a, g * out_val * (1.0 - out_val))

    return _make(out_val, (a,), bw)


def relu(a):
    out_val = np.maximum(a.value, 0.0)

    def bw(g):
        _accum(a, g * (a.value > 0.0))

    return _make(out_val, (a,), bw)


def tsum(a, axis=None, keepdims=False):
    out_val = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.value.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.value.shape).copy())

    return _make(out_val, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    out_val = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]

    def bw(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis if axis >= 0 else g.ndim + axis] = slice(offset, offset + size)
            _accum(t, g[tuple(idx)])
            offset += size

    return _make(out_val, tuple(tensors), bw)


def tslice(a, index):
    """Basic slicing with scatter-add backward."""
    out_val = a.value[index]

    def bw(g):
        full = np.zeros_like(a.value)
        full[index] = g
        _accum(a, full)

    return _make(out_val, (a,), bw)


def reshape(a, shape):
    out_val = a.value.reshape(shape)

    def bw(g):
        _accum(a, g.reshape(a.value.shape))

    return _make(out_val, (a,), bw)


def swap_last_axes(a):
    out_val = np.swapaxes(a.value, -1, -2)

    def bw(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(out_val, (a,), bw)


def softmax(a, axis=-1):
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_val = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_val).sum(axis=axis, keepdims=True)
        _accum(a, out_val * (g - dot))

    return _make(out_val, (a,), bw)


def log_softmax(a, axis=-1):
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_val = shifted - lse
    sm = np.exp(out_val)

    def bw(g):
        _accum(a, g - sm * g.sum(axis=axis, keepdims=True))

    return _make(out_val, (a,), bw)


def masked_softmax(a, mask, axis=-1):
    """Softmax over unmasked entries; rows with no unmasked entry become all-zero.

    `mask` is a boolean ndarray broadcastable to `a` where True marks a
    valid entry. The all-zero row convention gives empty attention
    contexts a zero output vector instead of NaN.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.value.shape)
    any_valid = mask.any(axis=axis, keepdims=True)
    masked_vals = np.where(mask, a.value, -np.inf)
    mx = np.max(masked_vals, axis=axis, keepdims=True)
    mx = np.where(any_valid, mx, 0.0)
    e = np.where(mask, np.exp(np.where(mask, a.value, mx) - mx), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    out_val = np.where(any_valid, e / np.where(denom == 0.0, 1.0, denom), 0.0)

    def bw(g):
        dot = (g * out_val).sum(axis=axis, keepdims=True)
        _accum(a, np.where(mask, out_val * (g - dot), 0.0))

    return _make(out_val, (a,), bw)


# ---------------------------------------------------------------------------
# layer primitives


def linear(x, w, b=None):
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def mlp(x, layers, activation="tanh"):
    """Feed-forward net: affine -> activation per layer, final layer affine.

    `layers` is a list of (W, b) tensor pairs.
    """
    act = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}[activation]
    out = x
    for i, (w, b) in enumerate(layers):
        out = linear(out, w, b)
        if i < len(layers) - 1:
            out = act(out)
    return out


def _split_cols(t, n_chunks):
    d = t.value.shape[-1] // n_chunks
    return [tslice(t, (..., slice(i * d, (i + 1) * d))) for i in range(n_chunks)]


def lstm_cell(x, h_prev, c_prev, params):
    """One LSTM step. Gate order in the stacked weights is i, f, g, o.

    `params` maps "W_ih" (d_in, 4d), "W_hh" (d, 4d), "b" (4d,).
    Accepts (d,) vectors or (B, d) batches.
    """
    gates = add(add(matmul(x, params["W_ih"]), matmul(h_prev, params["W_hh"])), params["b"])
    gi, gf, gg, go = _split_cols(gates, 4)
    i, f, o = sigmoid(gi), sigmoid(gf), sigmoid(go)
    g = tanh(gg)
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def gru_cell(x, h_prev, params):
    """One GRU step: h' = z*h_prev + (1-z)*n, reset applied inside the candidate.

    `params` maps "W_ih" (d_in, 3d), "W_hh" (d, 3d), "b" (3d,); gate order z, r, n.
    """
    gx = add(matmul(x, params["W_ih"]), params["b"])
    gh = matmul(h_prev, params["W_hh"])
    xz, xr, xn = _split_cols(gx, 3)
    hz, hr, hn = _split_cols(gh, 3)
    z = sigmoid(add(xz, hz))
    r = sigmoid(add(xr, hr))
    n = tanh(add(xn, mul(r, hn)))
    return add(mul(z, h_prev), mul(sub(_lift(1.0), z), n))


def multi_head_attention(q_in, keys_in, vals_in, n_heads, params, mask=None, scale_dim=None):
    """Scaled dot-product attention with per-head projections.

    q_in: (d,) or (B, d); keys_in/vals_in: (n, d) or (B, n, d).
    `params` maps "Wq", "Wk", "Wv" (per-head projections stacked into
    (d, d) matrices) and "Wo" (d, d). `mask` is a boolean array (n,) or
    (B, n), True for valid entries; rows with no valid entry yield a
    zero output vector. Logits are scaled by 1/sqrt(scale_dim), which
    defaults to the per-head dimension d/n_heads.
    """
    single = isinstance(q_in, Tensor) and q_in.value.ndim == 1
    q = reshape(q_in, (1, -1)) if single else q_in
    keys = reshape(keys_in, (1,) + keys_in.value.shape) if keys_in.value.ndim == 2 and single else keys_in
    vals = reshape(vals_in, (1,) + vals_in.value.shape) if vals_in.value.ndim == 2 and single else vals_in
    b, n, d = keys.value.shape
    if d % n_heads:
        raise ValueError(f"model width {d} not divisible by {n_heads} heads")
    dk = d // n_heads
    scale = 1.0 / np.sqrt(scale_dim if scale_dim is not None else dk)
    if mask is None:
        mask = np.ones((b, n), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).reshape(b, n)

    qp = matmul(q, params["Wq"])  # (B, d)
    kp = matmul(keys, params["Wk"])  # (B, n, d)
    vp = matmul(vals, params["Wv"])
    ctx_heads = []
    for h in range(n_heads):
        cols = (..., slice(h * dk, (h + 1) * dk))
        qh = reshape(tslice(qp, cols), (b, 1, dk))
        kh = tslice(kp, cols)  # (B, n, dk)
        vh = tslice(vp, cols)
        logits = mul(matmul(qh, swap_last_axes(kh)), scale)  # (B, 1, n)
        weights = masked_softmax(logits, mask[:, None, :], axis=-1)
        ctx_heads.append(reshape(matmul(weights, vh), (b, dk)))
    out = matmul(concat(ctx_heads, axis=-1), params["Wo"])
    return reshape(out, (-1,)) if single else out


def attention_weights(q_in, keys_in, n_heads, params, mask=None, scale_dim=None):
    """Per-head attention weights as an ndarray (n_heads, B, n); diagnostic path."""
    single = q_in.ndim == 1
    q = np.atleast_2d(q_in)
    keys = keys_in[None] if keys_in.ndim == 2 else keys_in
    b, n, d = keys.shape
    dk = d // n_heads
    scale = 1.0 / np.sqrt(scale_dim if scale_dim is not None else dk)
    mask = np.ones((b, n), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(b, n)
    qp = q @ params["Wq"].value
    kp = keys @ params["Wk"].value
    out = np.zeros((n_heads, b, n))
    for h in range(n_heads):
        sl = slice(h * dk, (h + 1) * dk)
        logits = (qp[:, None, sl] @ np.swapaxes(kp[..., sl], -1, -2))[:, 0, :] * scale
        logits = np.where(mask, logits, -np.inf)
        valid = mask.any(axis=1)
        mx = np.where(valid, logits.max(axis=1, initial=-np.inf), 0.0)
        e = np.where(mask, np.exp(logits - mx[:, None]), 0.0)
        denom = e.sum(axis=1)
        out[h] = np.where(valid[:, None], e / np.where(denom == 0, 1.0, denom)[:, None], 0.0)
    return out[:, 0, :] if single else out


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints


def xavier_uniform(rng, shape):
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Named parameter tensors plus Adam moment buffers and a step counter."""

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def param(self, name, shape, init="xavier"):
        """Fetch a parameter, creating and initializing it on first use."""
        if name in self.params:
            p = self.params[name]
            if p.value.shape != tuple(shape):
                raise ValueError(f"shape mismatch for {name}: {p.value.shape} vs {tuple(shape)}")
            return p
        if callable(init):
            value = np.asarray(init(self.rng, tuple(shape)), dtype=np.float64)
        elif init == "xavier":
            value = xavier_uniform(self.rng, tuple(shape))
        elif init == "zeros":
            value = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        if not np.all(np.isfinite(value)):
            raise ValueError(f"non-finite init for parameter {name!r}")
        p = Tensor(value, name=name)
        self.params[name] = p
        self._m[name] = np.zeros(shape)
        self._v[name] = np.zeros(shape)
        return p

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def adam_step(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        """Adam update with bias correction; zeroes gradients afterward."""
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.value)
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1**t)
            v_hat = v / (1.0 - beta2**t)
            p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        self.zero_grad()

    def flat_values(self):
        return {name: p.value.copy() for name, p in self.params.items()}


_CKPT_MAGIC = b"JNSNTC01"


def save_checkpoint(path, store, config):
    """Write parameters + config manifest; float64 little-endian, bit-exact."""
    names = sorted(store.params)
    header = {
        "config": config,
        "tensors": [{"name": n, "shape": list(store.params[n].value.shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(store.params[n].value, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (ParamStore, config dict)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        store = ParamStore()
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape)
            store.param(entry["name"], shape, init=lambda rng, s, r=raw: r.astype(np.float64))
    return store, header["config"]


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    passed: bool
    worst: tuple = ()
    rows: list = field(default_factory=list)


def grad_check(closure, store, n_samples=25, eps=1e-5, tol=1e-4, rng=None):
    """Compare analytic gradients against central finite differences.

    `closure` must be a deterministic zero-argument callable returning a
    scalar loss Tensor built on the current parameter values. Random
    coordinates are drawn across all parameters; relative error uses an
    absolute fallback when both sides are below 1e-8.
    """
    rng = rng or np.random.default_rng(0)
    v1 = closure().value.item()
    v2 = closure().value.item()
    if v1 != v2:
        raise RuntimeError(f"non-deterministic closure: {v1!r} != {v2!r}")

    store.zero_grad()
    loss = closure()
    backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value)) for name, p in store.params.items()}

    coords = []
    names = sorted(store.params)
    sizes = np.array([store.params[n].value.size for n in names])
    total = sizes.sum()
    for flat in rng.choice(total, size=min(n_samples, total), replace=False):
        k = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        coords.append((names[k], int(flat - np.concatenate(([0], np.cumsum(sizes)))[k])))

    rows = []
    max_rel = 0.0
    worst = ()
    for name, idx in coords:
        p = store.params[name]
        flat_view = p.value.reshape(-1)
        orig = flat_view[idx]
        flat_view[idx] = orig + eps
        f_plus = closure().value.item()
        flat_view[idx] = orig - eps
        f_minus = closure().value.item()
        flat_view[idx] = orig
        fd = (f_plus - f_minus) / (2.0 * eps)
        an = float(analytic[name].reshape(-1)[idx])
        if abs(an) < 1e-8 and abs(fd) < 1e-8:
            err = abs(an - fd)
        else:
            err = abs(an - fd) / max(abs(an), abs(fd))
        rows.append((name, idx, an, fd, err))
        if err > max_rel:
            max_rel = err
            worst = (name, idx, an, fd)
    store.zero_grad()
    return GradCheckReport(max_rel_err=max_rel, n_checked=len(rows), passed=max_rel < tol, worst=worst, rows=rows)
