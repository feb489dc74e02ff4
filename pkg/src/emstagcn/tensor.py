"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable primitive is a :class:`Function` subclass whose
``forward`` works on plain numpy arrays and whose ``backward`` maps the
output gradient to one gradient per tensor input. Applying a function to
tensors that require gradients records the function instance on the output
tensor; :func:`backward` walks those records in reverse topological order.

Layouts are batch-first: feature maps are ``[B, C, ...]`` with the channel
axis at position 1.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float64



class _Mode(threading.local):
    # per thread, so concurrent eval workers cannot clobber a trainer's tape
    grad_enabled = True
    relu_masks: list | None = None


_mode = _Mode()


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _mode.grad_enabled
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = prev


def is_grad_enabled() -> bool:
    return _mode.grad_enabled


@contextlib.contextmanager
def record_relu_masks():
    """Collect the on/off pattern of every ReLU evaluated inside the block."""
    prev = _mode.relu_masks
    _mode.relu_masks = masks = []
    try:
        yield masks
    finally:
        _mode.relu_masks = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: Function | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.shape)

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the model code calls the named functions below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axes=None, keepdims: bool = False):
        return sum_(self, axes, keepdims)

    def mean(self, axes=None):
        if axes is None:
            axes = tuple(range(self.ndim))
        return mean_pool(self, axes)


def _not_scalar(shape):
    raise ValueError(f"item() needs a single-element tensor, got shape {shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


class Function:
    """One recorded node of the tape.

    ``inputs`` holds the tensor operands in order; ``saved`` holds whatever
    the backward rule needs.
    """

    op = "function"

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.saved: tuple = ()

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(*inputs)
        out = Tensor(fn.forward(*(t.data for t in inputs), **kwargs))
        if _mode.grad_enabled and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._node = fn
        return out

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Add(Function):
    op = "add"

    def forward(self, a, b):
        self.saved = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        sa, sb = self.saved
        return _unbroadcast(grad, sa), _unbroadcast(grad, sb)


class Mul(Function):
    op = "mul"

    def forward(self, a, b):
        self.saved = (a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


class Neg(Function):
    op = "neg"

    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class MatMul(Function):
    op = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        self.saved = (a, b)
        if b.ndim == 2:
            # one GEMM instead of a stack of tiny ones
            return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[1],))
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved
        if b.ndim == 2:
            g2 = grad.reshape(-1, grad.shape[-1])
            ga = (g2 @ b.T).reshape(a.shape)
            gb = a.reshape(-1, a.shape[-1]).T @ g2
            return ga, gb
        ga = np.matmul(grad, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), grad)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Reshape(Function):
    op = "reshape"

    def forward(self, a, shape):
        self.saved = (a.shape,)
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.saved[0]),)


class Permute(Function):
    op = "permute"

    def forward(self, a, axes):
        self.saved = (tuple(axes),)
        return np.transpose(a, axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.saved[0])),)


class Sum(Function):
    op = "sum"

    def forward(self, a, axes, keepdims):
        self.saved = (a.shape, axes, keepdims)
        return np.sum(a, axis=axes, keepdims=keepdims)

    def backward(self, grad):
        shape, axes, keepdims = self.saved
        if not keepdims and axes is not None:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, shape).copy(),)


class MeanPool(Function):
    op = "mean_pool"

    def forward(self, a, axes):
        n = 1
        for ax in axes:
            n *= a.shape[ax]
        self.saved = (a.shape, axes, n)
        return np.mean(a, axis=axes)

    def backward(self, grad):
        shape, axes, n = self.saved
        grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad / n, shape).copy(),)


class Relu(Function):
    op = "relu"

    def forward(self, a):
        mask = a > 0
        if _mode.relu_masks is not None:
            _mode.relu_masks.append(mask)
        self.saved = (mask,)
        return np.where(mask, a, 0.0)

    def backward(self, grad):
        return (grad * self.saved[0],)


class Sigmoid(Function):
    op = "sigmoid"

    def forward(self, a):
        # split by sign so exp never overflows
        e = np.exp(-np.abs(a))
        y = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        self.saved = (y,)
        return y

    def backward(self, grad):
        y = self.saved[0]
        return (grad * y * (1.0 - y),)


def _softmax(a: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


class Softmax(Function):
    op = "softmax"

    def forward(self, a, axis):
        y = _softmax(a, axis)
        self.saved = (y, axis)
        return y

    def backward(self, grad):
        y, axis = self.saved
        return (y * (grad - (grad * y).sum(axis=axis, keepdims=True)),)


class LogSoftmax(Function):
    op = "log_softmax"

    def forward(self, a, axis):
        shifted = a - a.max(axis=axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        self.saved = (out, axis)
        return out

    def backward(self, grad):
        out, axis = self.saved
        return (grad - np.exp(out) * grad.sum(axis=axis, keepdims=True),)


class Conv1d(Function):
    """Cross-correlation along one spatial axis of a ``[B, C_in, ...]`` map.

    Computed as ``k`` shifted batched GEMMs; with the convolved axis moved
    to position 2 the shifted slices stay contiguous for stride 1.
    """

    op = "conv_1d"

    def forward(self, x, w, *rest, axis, stride, padding):
        xm = np.moveaxis(x, axis, 2) if axis != 2 else x
        if padding:
            pad = [(0, 0), (0, 0), (padding, padding)] + [(0, 0)] * (xm.ndim - 3)
            xm = np.pad(xm, pad)
        b, c_in, lp = xm.shape[:3]
        tail = xm.shape[3:]
        c_out, _, k = w.shape
        l_out = (lp - k) // stride + 1
        span = stride * (l_out - 1) + 1
        cols = l_out * int(np.prod(tail, dtype=np.int64))
        taps = np.ascontiguousarray(w.transpose(2, 0, 1))  # contiguous taps keep matmul on BLAS
        out = np.zeros((b, c_out, cols))
        for kk in range(k):
            out += taps[kk] @ xm[:, :, kk: kk + span: stride].reshape(b, c_in, cols)
        if rest:
            out += rest[0][None, :, None]
        self.saved = (xm, w, axis, stride, padding, bool(rest), l_out)
        out = out.reshape((b, c_out, l_out) + tail)
        return np.moveaxis(out, 2, axis) if axis != 2 else out

    def backward(self, grad):
        xm, w, axis, stride, padding, has_bias, l_out = self.saved
        b, c_in, lp = xm.shape[:3]
        c_out, _, k = w.shape
        g = np.moveaxis(grad, axis, 2) if axis != 2 else grad
        span = stride * (l_out - 1) + 1
        g3 = np.ascontiguousarray(g).reshape(b, c_out, -1)
        taps_t = np.ascontiguousarray(w.transpose(2, 1, 0))
        gw = np.empty_like(w)
        gxp = np.zeros_like(xm)
        for kk in range(k):
            xs = xm[:, :, kk: kk + span: stride].reshape(b, c_in, -1)
            gw[:, :, kk] = (g3 @ xs.transpose(0, 2, 1)).sum(axis=0)
            gxp[:, :, kk: kk + span: stride] += (taps_t[kk] @ g3).reshape(g.shape[:1] + (c_in,) + g.shape[2:])
        if padding:
            gxp = gxp[:, :, padding: lp - padding]
        grads = [np.moveaxis(gxp, 2, axis) if axis != 2 else gxp, gw]
        if has_bias:
            grads.append(g3.sum(axis=(0, 2)))
        return grads


class DepthwiseConv1d(Function):
    """Per-sample, per-channel kernels ``[B, C, K]`` along axis 2 of ``[B, C, L, ...]``."""

    op = "depthwise_conv_1d"

    def forward(self, x, z, padding):
        k = z.shape[2]
        length = x.shape[2]
        pad = [(0, 0), (0, 0), (padding, padding)] + [(0, 0)] * (x.ndim - 3)
        xp = np.pad(x, pad)
        l_out = xp.shape[2] - k + 1
        tail = (1,) * (x.ndim - 3)
        out = np.zeros(x.shape[:2] + (l_out,) + x.shape[3:])
        for kk in range(k):
            out += z[:, :, kk].reshape(z.shape[:2] + (1,) + tail) * xp[:, :, kk: kk + l_out]
        self.saved = (xp, z, padding, length)
        return out

    def backward(self, grad):
        xp, z, padding, length = self.saved
        k = z.shape[2]
        l_out = grad.shape[2]
        tail = (1,) * (grad.ndim - 3)
        gxp = np.zeros_like(xp)
        gz = np.empty_like(z)
        red = (2,) + tuple(range(3, grad.ndim))
        for kk in range(k):
            window = xp[:, :, kk: kk + l_out]
            gz[:, :, kk] = (grad * window).sum(axis=red)
            gxp[:, :, kk: kk + l_out] += grad * z[:, :, kk].reshape(z.shape[:2] + (1,) + tail)
        return gxp[:, :, padding: padding + length], gz


class ConvPointwise(Function):
    op = "conv_pointwise"

    def forward(self, x, w, *rest):
        if x.ndim < 2 or x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv_pointwise: input {x.shape} has no channel axis matching weights {w.shape}")
        x3 = x.reshape(x.shape[0], x.shape[1], -1)
        out = w @ x3
        if rest:
            out += rest[0][None, :, None]
        self.saved = (x3, w, bool(rest))
        return out.reshape((x.shape[0], w.shape[0]) + x.shape[2:])

    def backward(self, grad):
        x3, w, has_bias = self.saved
        g3 = grad.reshape(grad.shape[0], grad.shape[1], -1)
        gw = (g3 @ x3.transpose(0, 2, 1)).sum(axis=0)
        gx = (w.T @ g3).reshape((grad.shape[0], w.shape[1]) + grad.shape[2:])
        grads = [gx, gw]
        if has_bias:
            grads.append(g3.sum(axis=(0, 2)))
        return grads


class BatchNormTrain(Function):
    op = "batch_norm"

    def forward(self, x, gamma, beta, eps):
        axes = (0,) + tuple(range(2, x.ndim))
        bshape = (1, -1) + (1,) * (x.ndim - 2)
        mu = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv_std
        self.saved = (xhat, inv_std, gamma.reshape(bshape), axes)
        self.stats = (mu.reshape(-1), var.reshape(-1), x.size // x.shape[1])
        return xhat * gamma.reshape(bshape) + beta.reshape(bshape)

    def backward(self, grad):
        xhat, inv_std, gamma, axes = self.saved
        n = grad.size // grad.shape[1]
        dxhat = grad * gamma
        dx = inv_std / n * (
            n * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return dx, (grad * xhat).sum(axis=axes), grad.sum(axis=axes)


class BatchNormEval(Function):
    op = "batch_norm_eval"

    def forward(self, x, gamma, beta, mean, var, eps):
        bshape = (1, -1) + (1,) * (x.ndim - 2)
        inv_std = (1.0 / np.sqrt(var + eps)).reshape(bshape)
        xhat = (x - mean.reshape(bshape)) * inv_std
        self.saved = (xhat, inv_std, gamma.reshape(bshape), (0,) + tuple(range(2, x.ndim)))
        return xhat * gamma.reshape(bshape) + beta.reshape(bshape)

    def backward(self, grad):
        xhat, inv_std, gamma, axes = self.saved
        return grad * gamma * inv_std, (grad * xhat).sum(axis=axes), grad.sum(axis=axes)


class NllLoss(Function):
    """Mean negative log-likelihood of ``labels`` under log-probabilities ``[B, K]``."""

    op = "nll"

    def forward(self, logp, labels):
        rows = np.arange(logp.shape[0])
        self.saved = (logp.shape, rows, labels)
        return np.array(-logp[rows, labels].mean())

    def backward(self, grad):
        shape, rows, labels = self.saved
        g = np.zeros(shape)
        g[rows, labels] = -grad / shape[0]
        return (g,)


# -- functional surface ------------------------------------------------------


def add(a, b) -> Tensor:
    return Add.apply(_as_tensor(a), _as_tensor(b))


def mul(a, b) -> Tensor:
    return Mul.apply(_as_tensor(a), _as_tensor(b))


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    return MatMul.apply(_as_tensor(a), _as_tensor(b))


def reshape(a: Tensor, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def permute(a: Tensor, axes) -> Tensor:
    return Permute.apply(a, axes=tuple(axes))


def sum_(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if axes is not None:
        axes = tuple(np.atleast_1d(axes).tolist())
    return Sum.apply(a, axes=axes, keepdims=keepdims)


def mean_pool(x: Tensor, axes: Iterable[int]) -> Tensor:
    """Arithmetic mean over ``axes``; an empty axis set is the identity."""
    axes = tuple(sorted(ax % x.ndim for ax in axes))
    if len(set(axes)) != len(axes):
        raise ValueError(f"mean_pool: repeated axes {axes}")
    if not axes:
        return x
    for ax in axes:
        if x.shape[ax] == 0:
            raise ValueError(f"mean_pool: axis {ax} of {x.shape} is empty")
    return MeanPool.apply(x, axes=axes)


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return Relu.apply(x)
    if kind == "sigmoid":
        return Sigmoid.apply(x)
    raise ValueError(f"unknown activation {kind!r}")


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis % x.ndim)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis % x.ndim)


def conv_1d(
    x: Tensor,
    weights: Tensor,
    bias: Tensor | None = None,
    *,
    axis: int = -1,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Zero-padded cross-correlation of ``x [B, C_in, ...]`` along ``axis``.

    ``weights`` is ``[C_out, C_in, k]``. The output extent along ``axis`` is
    ``(L + 2*padding - k) // stride + 1``.
    """
    axis = axis % x.ndim
    if axis < 2:
        raise ValueError(f"conv_1d: axis {axis} is a batch or channel axis of {x.shape}")
    if stride <= 0:
        raise ValueError(f"conv_1d: stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv_1d: padding must be non-negative, got {padding}")
    if weights.ndim != 3 or x.shape[1] != weights.shape[1]:
        raise ShapeError(f"conv_1d: input {x.shape} does not match weights {weights.shape}")
    k = weights.shape[2]
    if k > x.shape[axis] + 2 * padding:
        raise ValueError(
            f"conv_1d: kernel {k} longer than padded extent {x.shape[axis] + 2 * padding}; output would be empty"
        )
    args = (x, weights) if bias is None else (x, weights, bias)
    return Conv1d.apply(*args, axis=axis, stride=stride, padding=padding)


def depthwise_conv_1d(x: Tensor, kernels: Tensor, padding: int) -> Tensor:
    """Convolve each (sample, channel) of ``x [B, C, L, ...]`` along axis 2 with its own kernel."""
    if kernels.ndim != 3 or kernels.shape[:2] != x.shape[:2]:
        raise ShapeError(f"depthwise_conv_1d: kernels {kernels.shape} do not match input {x.shape}")
    return DepthwiseConv1d.apply(x, kernels, padding=padding)


def conv_pointwise(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-position channel mixing (a 1x1 convolution) of ``x [B, C_in, ...]``."""
    args = (x, weights) if bias is None else (x, weights, bias)
    return ConvPointwise.apply(*args)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize axis 1 of ``x``; in training mode update the running stats in place."""
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm: input {x.shape} has feature extent != {gamma.shape[0]}")
    if not training:
        return BatchNormEval.apply(x, gamma, beta, mean=running_mean, var=running_var, eps=eps)
    fn = BatchNormTrain(x, gamma, beta)
    out = Tensor(fn.forward(x.data, gamma.data, beta.data, eps))
    if _mode.grad_enabled and (x.requires_grad or gamma.requires_grad or beta.requires_grad):
        out.requires_grad = True
        out._node = fn
    mu, var, n = fn.stats
    unbiased = var * n / (n - 1) if n > 1 else var
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean ``-log softmax(logits)[label]`` over a batch ``[B, K]`` (or one ``[K]`` row)."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if logits.ndim == 1:
        logits = reshape(logits, (1, -1))
    if labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for logits {logits.shape}")
    k = logits.shape[1]
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"cross_entropy: label out of range [0, {k})")
    return NllLoss.apply(log_softmax(logits, axis=1), labels=labels)


# -- reverse pass ------------------------------------------------------------


def _topological_nodes(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for parent in t._node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.data.size != 1:
        raise ValueError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for t in reversed(_topological_nodes(root)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._node is None:
            if t.grad is None:
                t.grad = g.copy()
            else:
                t.grad += g
            continue
        for parent, pg in zip(t._node.inputs, t._node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
