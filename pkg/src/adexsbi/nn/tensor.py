"""Reverse-mode automatic differentiation on dense float64 arrays.

A ``Tensor`` wraps a numpy array and, when it results from an operation,
remembers its parents and a closure that propagates gradients to them.
The computation graph is therefore built eagerly as expressions are
evaluated; ``Tensor.backward`` walks it once in reverse topological
order. Everything is double precision so that repeated runs are
bit-identical.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "add",
    "mul",
    "matmul",
    "relu",
    "tanh",
    "exp",
    "log",
    "softplus",
    "sigmoid",
    "conv1d",
    "dropout",
    "tsum",
    "tmean",
    "getitem",
    "take_cols",
    "concat",
    "reshape",
    "gru",
    "conv1d_output_length",
    "topological_order",
]


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node of the computation graph.

    Leaf tensors hold data (optionally marked ``requires_grad``); interior
    tensors additionally record the operation that produced them via
    ``_parents`` and a ``_backward`` closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.name = name
        self._parents = parents
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate gradients of every ``requires_grad`` ancestor.

        Only scalar outputs are differentiable end-to-end; reduce first.
        """
        if self.size != 1:
            raise ValueError(
                f"backward requires a scalar output, got shape {self.shape} from op '{self.op}'"
            )
        order = topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_as_array(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def topological_order(root: Tensor) -> list[Tensor]:
    """Parents-first ordering of the graph below `root` (iterative DFS)."""
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op, parents) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents),
                 op=op, parents=tuple(parents))
    return out


# -- arithmetic -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data + b.data, "add", (a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data * b.data, "mul", (a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = _make(a.data @ b.data, "matmul", (a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out._backward = backward
    return out


# -- elementwise nonlinearities ---------------------------------------

def relu(a) -> Tensor:
    a = _wrap(a)
    out = _make(np.maximum(a.data, 0.0), "relu", (a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    out._backward = backward
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)
    t = np.tanh(a.data)
    out = _make(t, "tanh", (a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - t * t))

    out._backward = backward
    return out


def exp(a) -> Tensor:
    a = _wrap(a)
    e = np.exp(a.data)
    out = _make(e, "exp", (a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * e)

    out._backward = backward
    return out


def log(a) -> Tensor:
    a = _wrap(a)
    out = _make(np.log(a.data), "log", (a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    out._backward = backward
    return out


def softplus(a) -> Tensor:
    a = _wrap(a)
    out = _make(np.logaddexp(0.0, a.data), "softplus", (a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * _sigmoid_np(a.data))

    out._backward = backward
    return out


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # exp of the negative magnitude only, so neither branch overflows
    pos = x >= 0
    z = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    s = _sigmoid_np(a.data)
    out = _make(s, "sigmoid", (a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s * (1.0 - s))

    out._backward = backward
    return out


# -- reductions, shaping ----------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,))

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy())

    out._backward = backward
    return out


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = _make(a.data.mean(axis=axis, keepdims=keepdims), "mean", (a,))
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g / n, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg / n, a.shape).copy())

    out._backward = backward
    return out


def getitem(a, idx) -> Tensor:
    a = _wrap(a)
    out = _make(a.data[idx], "slice", (a,))

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    out._backward = backward
    return out


def take_cols(a, cols: np.ndarray) -> Tensor:
    """Gather columns of a 2-D tensor; `cols` must hold unique indices."""
    a = _wrap(a)
    cols = np.asarray(cols, dtype=np.intp)
    out = _make(a.data[:, cols], "take_cols", (a,))

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, cols] = g
            a._accumulate(full)

    out._backward = backward
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(p)

    out._backward = backward
    return out


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out = _make(a.data.reshape(shape), "reshape", (a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    out._backward = backward
    return out


# -- structured ops ----------------------------------------------------

def conv1d_output_length(length: int, kernel: int, stride: int) -> int:
    """Valid (no padding) 1-D convolution output length."""
    if length < kernel:
        raise ValueError(f"input length {length} shorter than kernel {kernel}")
    return (length - kernel) // stride + 1


def _conv_windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    batch, length, cin = x.shape
    lout = conv1d_output_length(length, kernel, stride)
    sb, sl, sc = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, shape=(batch, lout, kernel, cin), strides=(sb, stride * sl, sl, sc)
    )
    return win.reshape(batch, lout, kernel * cin)


def conv1d(x, w, stride: int = 1) -> Tensor:
    """Valid 1-D convolution: x (B, L, Cin), w (K, Cin, F) -> (B, Lout, F)."""
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError(f"conv1d expects x (B,L,Cin) and w (K,Cin,F), got {x.shape}, {w.shape}")
    if x.shape[2] != w.shape[1]:
        raise ValueError(f"conv1d channel mismatch: x {x.shape} vs w {w.shape}")
    kernel, cin, filters = w.shape
    win = _conv_windows(x.data, kernel, stride)  # (B, Lout, K*Cin)
    wflat = w.data.reshape(kernel * cin, filters)
    out = _make(win @ wflat, "conv1d", (x, w))
    lout = out.shape[1]

    def backward(g):
        if w.requires_grad:
            dw = np.einsum("blk,blf->kf", win, g)
            w._accumulate(dw.reshape(w.shape))
        if x.requires_grad:
            contrib = (g @ wflat.T).reshape(-1, lout, kernel, cin)
            dx = np.zeros_like(x.data)
            for k in range(kernel):
                dx[:, k : k + stride * lout : stride, :] += contrib[:, :, k, :]
            x._accumulate(dx)

    out._backward = backward
    return out


def dropout(x, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout (train mode): zero with probability p, scale by 1/(1-p).

    Call only on the training path; evaluation uses the graph without it.
    """
    x = _wrap(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    out = _make(x.data * keep, "dropout", (x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * keep)

    out._backward = backward
    return out


def gru(x, w_ih, w_hh, b_ih, b_hh) -> Tensor:
    """Gated recurrent unit over a sequence, returning the final hidden state.

    x (B, T, C); w_ih (C, 3H); w_hh (H, 3H); biases (3H,). Gate slabs are
    ordered [update z | reset r | candidate n]:

        z_t = sigmoid(x_t Wz + h Uz + bz)
        r_t = sigmoid(x_t Wr + h Ur + br)
        n_t = tanh(x_t Wn + bn_i + r_t * (h Un + bn_h))
        h_t = (1 - z_t) * n_t + z_t * h_{t-1}

    Implemented as one graph node with hand-rolled truncated-free BPTT;
    gradient correctness is enforced by the finite-difference suite.
    """
    x, w_ih, w_hh, b_ih, b_hh = (_wrap(t) for t in (x, w_ih, w_hh, b_ih, b_hh))
    if x.ndim != 3:
        raise ValueError(f"gru expects x (B,T,C), got {x.shape}")
    batch, steps, cin = x.shape
    hidden = w_hh.shape[0]
    if w_ih.shape != (cin, 3 * hidden) or w_hh.shape != (hidden, 3 * hidden):
        raise ValueError(
            f"gru weight shapes inconsistent: x {x.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}"
        )
    H = hidden

    gi_all = x.data.reshape(batch * steps, cin) @ w_ih.data + b_ih.data
    gi_all = gi_all.reshape(batch, steps, 3 * H)

    hs = np.zeros((steps + 1, batch, H))
    zs = np.empty((steps, batch, H))
    rs = np.empty((steps, batch, H))
    ns = np.empty((steps, batch, H))
    for t in range(steps):
        gh = hs[t] @ w_hh.data + b_hh.data
        gi = gi_all[:, t, :]
        z = _sigmoid_np(gi[:, :H] + gh[:, :H])
        r = _sigmoid_np(gi[:, H : 2 * H] + gh[:, H : 2 * H])
        n = np.tanh(gi[:, 2 * H :] + r * gh[:, 2 * H :])
        hs[t + 1] = (1.0 - z) * n + z * hs[t]
        zs[t], rs[t], ns[t] = z, r, n

    out = _make(hs[steps].copy(), "gru", (x, w_ih, w_hh, b_ih, b_hh))

    def backward(g):
        d_wih = np.zeros_like(w_ih.data)
        d_whh = np.zeros_like(w_hh.data)
        d_bih = np.zeros_like(b_ih.data)
        d_bhh = np.zeros_like(b_hh.data)
        dx = np.zeros_like(x.data) if x.requires_grad else None
        dh = g.copy()
        u_n = w_hh.data[:, 2 * H :]
        for t in range(steps - 1, -1, -1):
            h_prev = hs[t]
            z, r, n = zs[t], rs[t], ns[t]
            gh_n = h_prev @ u_n + b_hh.data[2 * H :]

            dz = dh * (h_prev - n)
            dn = dh * (1.0 - z)
            dh_prev = dh * z

            dn_pre = dn * (1.0 - n * n)
            dr = dn_pre * gh_n
            dgh_n = dn_pre * r
            dz_pre = dz * z * (1.0 - z)
            dr_pre = dr * r * (1.0 - r)

            dgi = np.concatenate([dz_pre, dr_pre, dn_pre], axis=1)
            dgh = np.concatenate([dz_pre, dr_pre, dgh_n], axis=1)

            d_wih += x.data[:, t, :].T @ dgi
            d_bih += dgi.sum(axis=0)
            d_whh += h_prev.T @ dgh
            d_bhh += dgh.sum(axis=0)
            dh_prev += dgh @ w_hh.data.T
            if dx is not None:
                dx[:, t, :] = dgi @ w_ih.data.T
            dh = dh_prev

        if x.requires_grad:
            x._accumulate(dx)
        if w_ih.requires_grad:
            w_ih._accumulate(d_wih)
        if w_hh.requires_grad:
            w_hh._accumulate(d_whh)
        if b_ih.requires_grad:
            b_ih._accumulate(d_bih)
        if b_hh.requires_grad:
            b_hh._accumulate(d_bhh)

    out._backward = backward
    return out
