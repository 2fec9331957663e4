"""Dense float64 arrays with reverse-mode automatic differentiation.

A `Tensor` wraps a C-contiguous float64 ndarray.  Operations executed while
a `GradTape` is active append nodes to the tape (append order is execution
order, hence topological); `GradTape.gradients` then sweeps the node list
once in reverse to accumulate vector-Jacobian products.  With no active
tape every operation is plain numpy with no recording overhead.

The primitive set is deliberately small: elementwise add/sub/mul, scalar
scale, bias broadcast, 2-d matmul, stride-1 conv2d, nearest-neighbor
x2 upsample, 2x2 average pool, SiLU, single-group group normalization,
channel concatenation, and the two reductions (sum, mean of squares).
That is exactly what a small U-Net needs; there is no general broadcasting.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import rng
from .errors import ContractError, ShapeError


class Tensor:
    """Dense row-major float64 array, optionally linked into the active tape."""

    __slots__ = ("data", "_tape", "_node")

    def __init__(self, data):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self._tape = None
        self._node = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # Small amount of operator sugar; module-level functions are canonical.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__


class _Node:
    __slots__ = ("inputs", "vjp", "grad")

    def __init__(self, inputs, vjp):
        self.inputs = inputs   # tuple of _Node or None, aligned with vjp output
        self.vjp = vjp         # callable grad_out -> tuple of input grads; None for leaves
        self.grad = None


_ACTIVE: Optional["GradTape"] = None


class GradTape:
    """Records operations for one backward pass; consumed by `gradients`."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise ContractError("a GradTape is already active")
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = None
        return False

    def watch(self, t: Tensor) -> Tensor:
        """Mark `t` as a differentiation target (leaf node)."""
        if t._tape is self and t._node is not None:
            return t
        node = _Node((), None)
        self.nodes.append(node)
        t._tape = self
        t._node = node
        return t

    def gradients(self, loss: Tensor, params: list[Tensor]) -> list[np.ndarray]:
        """Return d loss / d p for every p in `params`; consumes the tape.

        `loss` must be a scalar produced on this tape.  Parameters that did
        not influence the loss get zero gradients.
        """
        if self._consumed:
            raise ContractError("tape already consumed")
        if loss._tape is not self or loss._node is None:
            raise ContractError("loss was not produced on this tape")
        if loss.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")

        loss._node.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            in_grads = node.vjp(node.grad)
            for inp, g in zip(node.inputs, in_grads):
                if inp is None or g is None:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g

        out = []
        for p in params:
            if p._tape is self and p._node is not None and p._node.grad is not None:
                out.append(p._node.grad)
            else:
                out.append(np.zeros_like(p.data))
        self.nodes.clear()
        self._consumed = True
        return out


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    tape = _ACTIVE
    if tape is None or tape._consumed:
        return out
    in_nodes = tuple(t._node if t._tape is tape else None for t in inputs)
    if all(n is None for n in in_nodes):
        return out
    node = _Node(in_nodes, vjp)
    tape.nodes.append(node)
    out._tape = tape
    out._node = node
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# construction

def randn(shape, seed: int) -> Tensor:
    """Seeded standard normal tensor (see `rng` for the exact stream)."""
    return Tensor(rng.randn(shape, seed))


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


# ---------------------------------------------------------------------------
# elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    return _record(out, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def silu(a: Tensor) -> Tensor:
    """SiLU activation x * sigmoid(x)."""
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * s)
    xd = a.data
    return _record(out, (a,), lambda g: (g * s * (1.0 + xd * (1.0 - s)),))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a bias vector with the only broadcasts the network needs.

    Accepted combinations: [N,M]+[M], [N,C,H,W]+[C], [N,C,H,W]+[N,C].
    """
    if x.ndim == 2 and b.ndim == 1 and x.shape[1] == b.shape[0]:
        out = Tensor(x.data + b.data[None, :])
        return _record(out, (x, b), lambda g: (g, g.sum(axis=0)))
    if x.ndim == 4 and b.ndim == 1 and x.shape[1] == b.shape[0]:
        out = Tensor(x.data + b.data[None, :, None, None])
        return _record(out, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))))
    if x.ndim == 4 and b.ndim == 2 and x.shape[:2] == b.shape:
        out = Tensor(x.data + b.data[:, :, None, None])
        return _record(out, (x, b), lambda g: (g, g.sum(axis=(2, 3))))
    raise ShapeError(f"bias_add: unsupported shapes {x.shape} + {b.shape}")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data
    return _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def _im2col(xp: np.ndarray, k: int) -> np.ndarray:
    # xp: padded [N,C,Hp,Wp] -> [N*Ho*Wo, C*k*k] with Ho = Hp-k+1
    n, c, hp, wp = xp.shape
    ho, wo = hp - k + 1, wp - k + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))       # [N,C,Ho,Wo,k,k]
    win = win.transpose(0, 2, 3, 1, 4, 5)                    # [N,Ho,Wo,C,k,k]
    return np.ascontiguousarray(win).reshape(n * ho * wo, c * k * k)


def conv2d(x: Tensor, w: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation with zero padding.

    x: [N,C,H,W], w: [F,C,k,k] with odd k; output [N,F,H+2p-k+1,W+2p-k+1].
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input and kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    f, ck, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if ck != c:
        raise ShapeError(f"conv2d: kernel expects {ck} channels, input has {c}")
    k, p = kh, int(padding)
    ho, wo = h + 2 * p - k + 1, wd + 2 * p - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: output would be empty ({ho}x{wo})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p > 0 else x.data
    cols = _im2col(xp, k)                                    # [N*Ho*Wo, C*k*k]
    wmat = w.data.reshape(f, c * k * k)
    out_mat = cols @ wmat.T                                  # [N*Ho*Wo, F]
    out = Tensor(out_mat.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def vjp(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, f)
        dw = (g_mat.T @ cols).reshape(f, c, k, k)
        dcols = (g_mat @ wmat).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:p + h, p:p + wd] if p > 0 else dxp
        return dx, dw

    return _record(out, (x, w), vjp)


# ---------------------------------------------------------------------------
# resolution changes

def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor x2 upsampling of [N,C,H,W]."""
    if x.ndim != 4:
        raise ShapeError(f"upsample2: need 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3))
    return _record(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def avgpool2(x: Tensor) -> Tensor:
    """2x2 average pooling of [N,C,H,W]; H and W must be even."""
    if x.ndim != 4:
        raise ShapeError(f"avgpool2: need 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2: H and W must be even, got {h}x{w}")
    out = Tensor(x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# normalization

def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalization with a single group (layer-norm-like) on [N,C,H,W]."""
    if x.ndim != 4:
        raise ShapeError(f"group_norm: need 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: gamma/beta must have shape ({c},)")
    mu = x.data.mean(axis=(1, 2, 3), keepdims=True)
    var = x.data.var(axis=(1, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None])
    gd = gamma.data

    def vjp(g):
        dbeta = g.sum(axis=(0, 2, 3))
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dxhat = g * gd[None, :, None, None]
        m1 = dxhat.mean(axis=(1, 2, 3), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(1, 2, 3), keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# shape manipulation

def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two [N,C,H,W] tensors along the channel axis."""
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError("concat_channels: need 4-d inputs")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: shapes {a.shape} and {b.shape} differ off-channel")
    ca = a.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    return _record(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


# ---------------------------------------------------------------------------
# reductions

def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(np.asarray(x.data.sum()))
    shape = x.shape
    return _record(out, (x,), lambda g: (np.full(shape, float(g.reshape(-1)[0])),))


def mean_sq(x: Tensor) -> Tensor:
    """Mean of squared elements, as a scalar tensor."""
    out = Tensor(np.asarray(np.mean(x.data * x.data)))
    xd, nel = x.data, x.size
    return _record(out, (x,), lambda g: (float(g.reshape(-1)[0]) * 2.0 * xd / nel,))
