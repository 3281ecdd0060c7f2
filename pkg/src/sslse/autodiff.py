"""Minimal dense-tensor reverse-mode autodiff with an Adam optimizer.

Define-by-run: every operation records its parents and a backward closure on
the produced tensor, :func:`backward` walks the tape in reverse topological
order. Shapes are explicit everywhere; the only broadcasting allowed is a
1-D bias against the last axis and scalar-times-tensor.

The fused :func:`lstm_seq` op carries a hand-derived backward pass; its
correctness is pinned by the finite-difference suite.
"""
from __future__ import annotations

import contextlib
import struct

import numpy as np

from .errors import FormatError, InvalidInput, NumericalError, ShapeError, StateError

SENP_MAGIC = b"SENP"
SENP_VERSION = 1


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fns", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64 if not isinstance(data, np.ndarray) else data.dtype)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._grad_fns = ()
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}, name={self.name})"


_TAPE_ENABLED = True


@contextlib.contextmanager
def no_tape():
    """Disable graph recording inside the block (forward values only)."""
    global _TAPE_ENABLED
    prev = _TAPE_ENABLED
    _TAPE_ENABLED = False
    try:
        yield
    finally:
        _TAPE_ENABLED = prev


def _result(data, parents, grad_fns):
    if not np.all(np.isfinite(data)):
        raise NumericalError("non-finite values in forward result")
    out = Tensor(data)
    if _TAPE_ENABLED:
        out._parents = tuple(parents)
        out._grad_fns = tuple(grad_fns)
    return out


def _needs_tape(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _accum(tensor, grad):
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=tensor.data.dtype, copy=True)
    else:
        tensor.grad += grad


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from ``loss`` that wants one."""
    if loss.data.size != 1:
        raise InvalidInput(f"backward requires a scalar loss, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            _accum(node, g)
        for parent, fn in zip(node._parents, node._grad_fns):
            if not (parent.requires_grad or parent._parents):
                continue
            contribution = fn(g)
            if id(parent) in grads:
                grads[id(parent)] += contribution
            else:
                grads[id(parent)] = np.array(contribution, copy=True)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., M, K) @ (K, N), or batched (B, M, K) @ (B, K, N)."""
    A, B = a.data, b.data
    if A.ndim >= 2 and B.ndim == 2:
        if A.shape[-1] != B.shape[0]:
            raise ShapeError(f"matmul {A.shape} @ {B.shape}")
        out = A @ B
        grad_fns = [
            lambda g: g @ B.T,
            lambda g: np.tensordot(A, g, axes=(tuple(range(A.ndim - 1)),) * 2)
            if A.ndim > 2
            else A.T @ g,
        ]
    elif A.ndim == 3 and B.ndim == 3:
        if A.shape[0] != B.shape[0] or A.shape[2] != B.shape[1]:
            raise ShapeError(f"bmm {A.shape} @ {B.shape}")
        out = A @ B
        grad_fns = [
            lambda g: g @ B.transpose(0, 2, 1),
            lambda g: A.transpose(0, 2, 1) @ g,
        ]
    else:
        raise ShapeError(f"unsupported matmul ranks {A.ndim}, {B.ndim}")
    return _result(out, [a, b], grad_fns)


def conv1d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Valid 1-D convolution; x (B, T, C_in), w (K, C_in, C_out)."""
    X, W = x.data, w.data
    if X.ndim != 3 or W.ndim != 3 or X.shape[2] != W.shape[1]:
        raise ShapeError(f"conv1d {X.shape} with kernel {W.shape}")
    K = W.shape[0]
    if X.shape[1] < K:
        raise ShapeError(f"sequence length {X.shape[1]} shorter than kernel {K}")
    windows = np.lib.stride_tricks.sliding_window_view(X, K, axis=1)[:, ::stride]
    out = np.einsum("btck,kco->bto", windows, W)
    t_out = out.shape[1]

    def grad_x(g):
        dx = np.zeros_like(X)
        for k in range(K):
            dx[:, k : k + stride * t_out : stride] += g @ W[k].T
        return dx

    def grad_w(g):
        dw = np.empty_like(W)
        for k in range(K):
            xs = X[:, k : k + stride * t_out : stride]
            dw[k] = np.einsum("btc,bto->co", xs, g)
        return dw

    return _result(out, [x, w], [grad_x, grad_w])


def add(a: Tensor, b: Tensor) -> Tensor:
    A, B = a.data, b.data
    if A.shape == B.shape:
        reduce_b = lambda g: g
    elif B.ndim == 1 and A.ndim >= 1 and A.shape[-1] == B.shape[0]:
        reduce_b = lambda g: g.reshape(-1, B.shape[0]).sum(axis=0)
    elif B.size == 1:
        reduce_b = lambda g: g.sum().reshape(B.shape)
    elif A.size == 1:
        return add(b, a)
    else:
        raise ShapeError(f"add {A.shape} + {B.shape}")
    out = A + B
    reduce_a = (lambda g: g.sum().reshape(A.shape)) if A.size == 1 and B.size > 1 else (lambda g: g)
    return _result(out, [a, b], [reduce_a, reduce_b])


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, [a], [lambda g: -g])


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    A, B = a.data, b.data
    if A.shape == B.shape:
        fns = [lambda g: g * B, lambda g: g * A]
    elif B.size == 1:
        fns = [lambda g: g * B, lambda g: (g * A).sum().reshape(B.shape)]
    elif A.size == 1:
        fns = [lambda g: (g * B).sum().reshape(A.shape), lambda g: g * A]
    else:
        raise ShapeError(f"mul {A.shape} * {B.shape}")
    return _result(A * B, [a, b], fns)


def concat_last(tensors) -> Tensor:
    arrays = [t.data for t in tensors]
    base = arrays[0].shape[:-1]
    if any(arr.shape[:-1] != base for arr in arrays):
        raise ShapeError("concat_last requires identical leading shapes")
    out = np.concatenate(arrays, axis=-1)
    offsets = np.cumsum([0] + [arr.shape[-1] for arr in arrays])

    def make_fn(lo, hi):
        return lambda g: g[..., lo:hi]

    fns = [make_fn(offsets[i], offsets[i + 1]) for i in range(len(arrays))]
    return _result(out, tensors, fns)


def concat_frames(tensors) -> Tensor:
    """Concatenate along the frame (second-to-last) axis."""
    arrays = [t.data for t in tensors]
    ref = arrays[0]
    if any(a.shape[:-2] != ref.shape[:-2] or a.shape[-1] != ref.shape[-1] for a in arrays):
        raise ShapeError("concat_frames requires matching batch and feature dims")
    out = np.concatenate(arrays, axis=-2)
    offsets = np.cumsum([0] + [a.shape[-2] for a in arrays])

    def make_fn(lo, hi):
        return lambda g: g[..., lo:hi, :]

    fns = [make_fn(offsets[i], offsets[i + 1]) for i in range(len(arrays))]
    return _result(out, tensors, fns)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _result(y, [a], [lambda g: g * y * (1.0 - y)])


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, [a], [lambda g: g * (1.0 - y * y)])


def softmax_last(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return y * (g - dot)

    return _result(y, [a], [grad])


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    X = x.data
    d = X.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError("layer_norm gain/bias must match the last axis")
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def grad_x(g):
        gg = g * gamma.data
        return inv * (gg - gg.mean(axis=-1, keepdims=True) - xhat * (gg * xhat).mean(axis=-1, keepdims=True))

    return _result(
        out,
        [x, gamma, beta],
        [
            grad_x,
            lambda g: (g * xhat).reshape(-1, d).sum(axis=0),
            lambda g: g.reshape(-1, d).sum(axis=0),
        ],
    )


def slice_op(x: Tensor, key) -> Tensor:
    out = x.data[key]

    def grad(g):
        dx = np.zeros_like(x.data)
        dx[key] = g
        return dx

    return _result(out.copy(), [x], [grad])


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    return _result(x.data.reshape(shape), [x], [lambda g: g.reshape(old)])


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.data.ndim)))
    inverse = np.argsort(axes)
    return _result(x.data.transpose(axes), [x], [lambda g: g.transpose(inverse)])


def sum_all(x: Tensor) -> Tensor:
    shape = x.data.shape
    return _result(np.asarray(x.data.sum()), [x], [lambda g: np.broadcast_to(g, shape).copy()])


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    shape = x.data.shape
    return _result(np.asarray(x.data.mean()), [x], [lambda g: np.broadcast_to(g / n, shape).copy()])


def abs_val(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return _result(np.abs(x.data), [x], [lambda g: g * s])


def repeat2_frames(x: Tensor) -> Tensor:
    """Repeat each frame twice along the frame (second-to-last) axis."""
    out = np.repeat(x.data, 2, axis=-2)

    def grad(g):
        shape = list(x.data.shape)
        shape[-2:] = [shape[-2], 2, shape[-1]]
        return g.reshape(shape).sum(axis=-2)

    return _result(out, [x], [grad])


def reverse_time(x: Tensor) -> Tensor:
    """Flip the frame (second-to-last) axis."""
    return _result(np.flip(x.data, axis=-2).copy(), [x], [lambda g: np.flip(g, axis=-2).copy()])


def lstm_seq(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Unidirectional LSTM over a full sequence; x (B, T, I) -> h (B, T, H).

    Gate layout along the 4H axis is [input, forget, cell, output]; initial
    hidden and cell states are zero.
    """
    X = x.data
    if X.ndim != 3:
        raise ShapeError(f"lstm_seq expects (B, T, I), got {X.shape}")
    B_, T, I = X.shape
    if w_ih.data.shape[0] != I or w_ih.data.shape[1] % 4 != 0:
        raise ShapeError(f"w_ih {w_ih.data.shape} incompatible with input dim {I}")
    H = w_ih.data.shape[1] // 4
    if w_hh.data.shape != (H, 4 * H) or b.data.shape != (4 * H,):
        raise ShapeError("lstm_seq recurrent weight/bias shapes inconsistent")

    Wih, Whh, bias = w_ih.data, w_hh.data, b.data
    pre_x = X.reshape(B_ * T, I) @ Wih
    pre_x = pre_x.reshape(B_, T, 4 * H) + bias

    gi = np.empty((T, B_, H), dtype=X.dtype)
    gf = np.empty_like(gi)
    gg = np.empty_like(gi)
    go = np.empty_like(gi)
    cs = np.empty_like(gi)
    tanh_c = np.empty_like(gi)
    hs = np.empty_like(gi)

    h = np.zeros((B_, H), dtype=X.dtype)
    c = np.zeros((B_, H), dtype=X.dtype)
    for t in range(T):
        gates = pre_x[:, t] + h @ Whh
        i_t = 1.0 / (1.0 + np.exp(-gates[:, :H]))
        f_t = 1.0 / (1.0 + np.exp(-gates[:, H : 2 * H]))
        g_t = np.tanh(gates[:, 2 * H : 3 * H])
        o_t = 1.0 / (1.0 + np.exp(-gates[:, 3 * H :]))
        c = f_t * c + i_t * g_t
        tc = np.tanh(c)
        h = o_t * tc
        gi[t], gf[t], gg[t], go[t] = i_t, f_t, g_t, o_t
        cs[t], tanh_c[t], hs[t] = c, tc, h

    out = hs.transpose(1, 0, 2)

    def backward_fn(g_out):
        g_h_seq = g_out.transpose(1, 0, 2)
        d_pre = np.empty((T, B_, 4 * H), dtype=X.dtype)
        dh_next = np.zeros((B_, H), dtype=X.dtype)
        dc_next = np.zeros((B_, H), dtype=X.dtype)
        for t in range(T - 1, -1, -1):
            dh = g_h_seq[t] + dh_next
            dc = dc_next + dh * go[t] * (1.0 - tanh_c[t] * tanh_c[t])
            do = dh * tanh_c[t] * go[t] * (1.0 - go[t])
            di = dc * gg[t] * gi[t] * (1.0 - gi[t])
            dg = dc * gi[t] * (1.0 - gg[t] * gg[t])
            c_prev = cs[t - 1] if t > 0 else np.zeros_like(dc)
            df = dc * c_prev * gf[t] * (1.0 - gf[t])
            dc_next = dc * gf[t]
            gates_grad = np.concatenate([di, df, dg, do], axis=1)
            d_pre[t] = gates_grad
            dh_next = gates_grad @ Whh.T
        return d_pre

    cache = {}

    def d_pre_of(g_out):
        key = id(g_out)
        if cache.get("key") != key:
            cache["key"] = key
            cache["d_pre"] = backward_fn(g_out)
        return cache["d_pre"]

    def grad_x(g_out):
        d_pre = d_pre_of(g_out)
        return (d_pre.transpose(1, 0, 2).reshape(B_ * T, 4 * H) @ Wih.T).reshape(B_, T, I)

    def grad_w_ih(g_out):
        d_pre = d_pre_of(g_out)
        return X.reshape(B_ * T, I).T @ d_pre.transpose(1, 0, 2).reshape(B_ * T, 4 * H)

    def grad_w_hh(g_out):
        d_pre = d_pre_of(g_out)
        dw = np.zeros_like(Whh)
        for t in range(1, T):
            dw += hs[t - 1].T @ d_pre[t]
        return dw

    def grad_b(g_out):
        d_pre = d_pre_of(g_out)
        return d_pre.sum(axis=(0, 1))

    return _result(out, [x, w_ih, w_hh, b], [grad_x, grad_w_ih, grad_w_hh, grad_b])


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints
# ---------------------------------------------------------------------------

class ParamGroup:
    """Named set of parameter tensors; ``requires_grad`` doubles as the trainable flag."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise StateError(f"duplicate parameter name {name!r}")
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def trainable(self):
        return [t for t in self._params.values() if t.requires_grad]

    def set_trainable(self, trainable: bool, prefix: str = "") -> None:
        for name, t in self._params.items():
            if name.startswith(prefix):
                t.requires_grad = trainable

    def merge(self, other: "ParamGroup", prefix: str = "") -> None:
        for name, t in other.items():
            self.add(prefix + name, t)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None


class Adam:
    """Standard Adam with bias correction; frozen tensors are never touched."""

    def __init__(self, group: ParamGroup, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.group = group
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._state: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._t = 0

    def step(self) -> None:
        self._t += 1
        t = self._t
        for name, p in self.group.items():
            if not p.requires_grad:
                continue
            if p.grad is None:
                raise StateError(f"trainable parameter {name!r} has no gradient")
            if name not in self._state:
                self._state[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
            m, v = self._state[name]
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        self.group.zero_grad()


def adam_step(group: ParamGroup, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
              optimizer: Adam | None = None) -> Adam:
    """One Adam update over a group; pass the returned optimizer back in to keep state."""
    if optimizer is None:
        optimizer = Adam(group, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    optimizer.step()
    return optimizer


def finite_diff_check(fn, tensors, h: float = 1e-5) -> float:
    """Max relative error between analytic grads of ``fn()`` and central differences.

    ``fn`` must rebuild its scalar graph from the current ``tensors`` data on
    every call.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    if loss.data.size != 1:
        raise InvalidInput("finite_diff_check requires a scalar-valued graph")
    backward(loss)

    worst = 0.0
    for t in tensors:
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        flat = t.data.reshape(-1)
        numeric = np.empty_like(analytic)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(fn().data)
            flat[idx] = orig - h
            down = float(fn().data)
            flat[idx] = orig
            numeric[idx] = (up - down) / (2.0 * h)
        # normalize by the tensor's gradient scale: near-zero elements would
        # otherwise fail on finite-difference noise alone
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
        worst = max(worst, float(np.max(np.abs(analytic - numeric)) / scale))
    return worst


def save_params(group: ParamGroup, path) -> None:
    with open(path, "wb") as fh:
        fh.write(SENP_MAGIC)
        fh.write(struct.pack("<I", SENP_VERSION))
        for name, t in group.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(t.data.astype("<f4").tobytes())


def load_params(group: ParamGroup, path) -> None:
    """Load a SENP checkpoint into an existing group (shape-checked, in place)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SENP_MAGIC:
        raise FormatError("bad checkpoint magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != SENP_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = 8
    seen = set()
    while offset < len(blob):
        try:
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if len(blob) - offset < 4 * count:
                raise FormatError("truncated checkpoint payload")
            values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
        except struct.error as exc:
            raise FormatError("truncated checkpoint header") from exc
        if name not in group:
            raise FormatError(f"checkpoint parameter {name!r} unknown to this model")
        target = group[name]
        if tuple(shape) != target.data.shape:
            raise FormatError(f"shape mismatch for {name!r}: {shape} vs {target.data.shape}")
        target.data = values.reshape(shape).astype(target.data.dtype)
        seen.add(name)
    missing = set(group.names()) - seen
    if missing:
        raise FormatError(f"checkpoint missing parameters: {sorted(missing)}")


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
