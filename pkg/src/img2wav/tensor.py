"""Minimal dense-tensor engine with reverse-mode differentiation.

Implements exactly the operator set the translation network needs: dense
affine layers, dilated 1D/2D convolutions with "same" padding, batch
normalization, the usual activations, global average pooling, a couple of
elementwise/reduction helpers for building losses, and an RMSProp optimizer
over a named parameter store.

Values are kept in numpy arrays; float64 is the default (used by the test
and verification profile), float32 is supported for faster training runs.
Calling :func:`backward` repeatedly without clearing gradients accumulates
into ``.grad``; callers are expected to zero parameter gradients between
optimization steps (see :meth:`ParameterStore.zero_grad`).
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
RMSPROP_EPS = 1e-8

# When enabled, every op asserts its output is finite. Off by default; the
# test suite switches it on.
CHECK_FINITE = False


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A dense n-dimensional array plus an optional accumulated gradient.

    Tensors form a computation graph: results remember their parents and a
    backward closure, and :func:`backward` walks the graph in reverse
    topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = "leaf"):
        self.data = np.asarray(data, dtype=data.dtype if isinstance(data, np.ndarray) else np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: tuple, op: str) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op {op!r}")
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, _parents=parents, op=op)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss.

    Gradients accumulate into ``.grad`` of every reachable tensor with
    ``requires_grad``; repeated calls keep accumulating until gradients are
    cleared.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.data.shape}")

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    # Interior gradients are per-pass scratch; only leaves accumulate across
    # repeated calls.
    for node in order:
        if node._parents:
            node.grad = None
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()


# ---------------------------------------------------------------------------
# dense / convolution layers


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine layer: out[i, j] = sum_k x[i, k] w[k, j] + b[j]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(
            f"fully_connected expects x(batch,in), w(in,out), b(out); got {x.shape}, {w.shape}, {b.shape}"
        )
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"fully_connected: x {x.shape} does not match w {w.shape}, b {b.shape}")
    out = _result(x.data @ w.data + b.data, (x, w, b), "fully_connected")

    def _bwd():
        g = out.grad
        if x.requires_grad:
            _accum(x, g @ w.data.T)
        if w.requires_grad:
            _accum(w, x.data.T @ g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0))

    out._backward = _bwd
    return out


def _conv_out_len(n: int, k: int, stride: int, dilation: int) -> tuple[int, int]:
    """Return (output length, per-side padding) for "same"-style padding."""
    pad = dilation * (k - 1) // 2
    eff = dilation * (k - 1) + 1
    return (n + 2 * pad - eff) // stride + 1, pad


def conv2d_dilated(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    """Dilated 2D cross-correlation with "same" spatial padding at stride 1.

    Kernel taps are spaced ``dilation`` apart, so a 3-tap axis covers an
    effective receptive field of 2*dilation + 1. Implemented as im2col plus
    one matmul; gradients flow to input, kernel, and bias.
    """
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if x.data.ndim != 4 or w.data.ndim != 4 or b.data.ndim != 1:
        raise ShapeError(f"conv2d expects x(N,C,H,W), w(O,C,kh,kw), b(O); got {x.shape}, {w.shape}, {b.shape}")
    n, c, h, wd = x.data.shape
    o, cw, kh, kw = w.data.shape
    if kh not in (1, 3) or kw != kh:
        raise ShapeError(f"conv2d supports square 1x1 or 3x3 kernels, got {kh}x{kw}")
    if cw != c or b.data.shape[0] != o:
        raise ShapeError(f"conv2d: x {x.shape} does not match w {w.shape}, b {b.shape}")

    ho, ph = _conv_out_len(h, kh, stride, dilation)
    wo, pw = _conv_out_len(wd, kw, stride, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))

    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[
                :, :,
                i * dilation : i * dilation + (ho - 1) * stride + 1 : stride,
                j * dilation : j * dilation + (wo - 1) * stride + 1 : stride,
            ]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    cols2 = cols.reshape(c * kh * kw, n * ho * wo)
    w2 = w.data.reshape(o, c * kh * kw)
    y = (w2 @ cols2).reshape(o, n, ho, wo).transpose(1, 0, 2, 3) + b.data[None, :, None, None]
    out = _result(y, (x, w, b), "conv2d_dilated")

    def _bwd():
        g = out.grad
        g2 = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        if w.requires_grad:
            _accum(w, (g2 @ cols2.T).reshape(w.data.shape))
        if b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, kh, kw, n, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[
                        :, :,
                        i * dilation : i * dilation + (ho - 1) * stride + 1 : stride,
                        j * dilation : j * dilation + (wo - 1) * stride + 1 : stride,
                    ] += dcols[:, i, j].transpose(1, 0, 2, 3)
            _accum(x, dxp[:, :, ph : ph + h, pw : pw + wd])

    out._backward = _bwd
    return out


def conv1d_dilated(x: Tensor, w: Tensor, b: Tensor, dilation: int = 1) -> Tensor:
    """Dilated 1D cross-correlation, stride 1, same-length padding."""
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if x.data.ndim != 3 or w.data.ndim != 3 or b.data.ndim != 1:
        raise ShapeError(f"conv1d expects x(N,C,L), w(O,C,k), b(O); got {x.shape}, {w.shape}, {b.shape}")
    n, c, ln = x.data.shape
    o, cw, k = w.data.shape
    if k not in (1, 3):
        raise ShapeError(f"conv1d supports kernel width 1 or 3, got {k}")
    if cw != c or b.data.shape[0] != o:
        raise ShapeError(f"conv1d: x {x.shape} does not match w {w.shape}, b {b.shape}")

    lo, pad = _conv_out_len(ln, k, 1, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    cols = np.empty((c, k, n, lo), dtype=x.data.dtype)
    for i in range(k):
        cols[:, i] = xp[:, :, i * dilation : i * dilation + lo].transpose(1, 0, 2)
    cols2 = cols.reshape(c * k, n * lo)
    w2 = w.data.reshape(o, c * k)
    y = (w2 @ cols2).reshape(o, n, lo).transpose(1, 0, 2) + b.data[None, :, None]
    out = _result(y, (x, w, b), "conv1d_dilated")

    def _bwd():
        g = out.grad
        g2 = g.transpose(1, 0, 2).reshape(o, n * lo)
        if w.requires_grad:
            _accum(w, (g2 @ cols2.T).reshape(w.data.shape))
        if b.requires_grad:
            _accum(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, k, n, lo)
            dxp = np.zeros_like(xp)
            for i in range(k):
                dxp[:, :, i * dilation : i * dilation + lo] += dcols[:, i].transpose(1, 0, 2)
            _accum(x, dxp[:, :, pad : pad + ln])

    out._backward = _bwd
    return out


class BatchNormState:
    """Per-channel running statistics for one batch-norm layer."""

    def __init__(self, channels: int, dtype=np.float64):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Batch normalization over the batch (and spatial) axes, per channel.

    Train mode normalizes with the current batch's population statistics and
    updates the running statistics with momentum 0.9; infer mode normalizes
    with the stored running statistics. Train mode requires batch size >= 2
    (a single sample has zero variance along the batch axis).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if x.data.ndim == 2:
        axes: tuple = (0,)
        bshape = (1, -1)
    elif x.data.ndim == 4:
        axes = (0, 2, 3)
        bshape = (1, -1, 1, 1)
    else:
        raise ShapeError(f"batch_norm expects (N,C) or (N,C,H,W) input, got {x.shape}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({c},)")

    if mode == "train":
        if x.data.shape[0] < 2:
            raise ValueError("batch_norm in train mode needs batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.running_mean = BN_MOMENTUM * state.running_mean + (1.0 - BN_MOMENTUM) * mu
        state.running_var = BN_MOMENTUM * state.running_var + (1.0 - BN_MOMENTUM) * var
    else:
        mu = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    y = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    out = _result(y, (x, gamma, beta), f"batch_norm[{mode}]")
    m = x.data.size // c

    def _bwd():
        g = out.grad
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            gs = gamma.data.reshape(bshape) * inv_std.reshape(bshape)
            if mode == "infer":
                _accum(x, g * gs)
            else:
                dxhat = g * gamma.data.reshape(bshape)
                t1 = dxhat.sum(axis=axes, keepdims=True)
                t2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                _accum(x, inv_std.reshape(bshape) * (dxhat - t1 / m - xhat * t2 / m))

    out._backward = _bwd
    return out


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    out = _result(np.maximum(x.data, 0.0), (x,), "relu")

    def _bwd():
        if x.requires_grad:
            _accum(x, out.grad * (x.data > 0))

    out._backward = _bwd
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = _result(y, (x,), "tanh")

    def _bwd():
        if x.requires_grad:
            _accum(x, out.grad * (1.0 - y * y))

    out._backward = _bwd
    return out


def _sigmoid_values(z: np.ndarray) -> np.ndarray:
    # Piecewise form avoids overflow in exp for large |z|.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_values(x.data)
    out = _result(y, (x,), "sigmoid")

    def _bwd():
        if x.requires_grad:
            _accum(x, out.grad * y * (1.0 - y))

    out._backward = _bwd
    return out


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, computed with max subtraction."""
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _result(y, (logits,), "softmax")

    def _bwd():
        if logits.requires_grad:
            g = out.grad
            _accum(logits, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    out._backward = _bwd
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: (N,C,H,W) -> (N,C)."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.data.shape
    out = _result(x.data.mean(axis=(2, 3)), (x,), "global_avg_pool")

    def _bwd():
        if x.requires_grad:
            _accum(x, np.broadcast_to(out.grad[:, :, None, None] / (h * w), x.data.shape))

    out._backward = _bwd
    return out


# ---------------------------------------------------------------------------
# elementwise / reduction helpers


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes differ {a.shape} vs {b.shape}")
    out = _result(a.data + b.data, (a, b), "add")

    def _bwd():
        _accum(a, out.grad)
        _accum(b, out.grad)

    out._backward = _bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shapes differ {a.shape} vs {b.shape}")
    out = _result(a.data - b.data, (a, b), "sub")

    def _bwd():
        _accum(a, out.grad)
        _accum(b, -out.grad)

    out._backward = _bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes differ {a.shape} vs {b.shape}")
    out = _result(a.data * b.data, (a, b), "mul")

    def _bwd():
        if a.requires_grad:
            _accum(a, out.grad * b.data)
        if b.requires_grad:
            _accum(b, out.grad * a.data)

    out._backward = _bwd
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = _result(x.data * c, (x,), "scale")

    def _bwd():
        if x.requires_grad:
            _accum(x, out.grad * c)

    out._backward = _bwd
    return out


def square(x: Tensor) -> Tensor:
    out = _result(x.data * x.data, (x,), "square")

    def _bwd():
        if x.requires_grad:
            _accum(x, out.grad * 2.0 * x.data)

    out._backward = _bwd
    return out


def log_clamped(x: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log with the input clamped below at ``floor``.

    The gradient is zero wherever the clamp is active (the clamped value is
    constant there).
    """
    clamped = np.maximum(x.data, floor)
    out = _result(np.log(clamped), (x,), "log_clamped")

    def _bwd():
        if x.requires_grad:
            _accum(x, out.grad * (x.data > floor) / clamped)

    out._backward = _bwd
    return out


def smooth_l1_elem(x: Tensor) -> Tensor:
    """Elementwise smooth L1: 0.5 x^2 inside |x| < 1, |x| - 0.5 outside."""
    a = np.abs(x.data)
    inner = a < 1.0
    y = np.where(inner, 0.5 * x.data * x.data, a - 0.5)
    out = _result(y, (x,), "smooth_l1")

    def _bwd():
        if x.requires_grad:
            _accum(x, out.grad * np.where(inner, x.data, np.sign(x.data)))

    out._backward = _bwd
    return out


def sum_all(x: Tensor) -> Tensor:
    out = _result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), "sum_all")

    def _bwd():
        if x.requires_grad:
            _accum(x, np.broadcast_to(out.grad, x.data.shape))

    out._backward = _bwd
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = _result(np.asarray(x.data.mean(), dtype=x.data.dtype), (x,), "mean_all")

    def _bwd():
        if x.requires_grad:
            _accum(x, np.broadcast_to(out.grad / n, x.data.shape))

    out._backward = _bwd
    return out


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = _result(x.data.reshape(shape), (x,), "reshape")

    def _bwd():
        if x.requires_grad:
            _accum(x, out.grad.reshape(x.data.shape))

    out._backward = _bwd
    return out


# ---------------------------------------------------------------------------
# parameters and optimizer


def truncated_normal(rng: np.random.Generator, shape: tuple, std: float, dtype=np.float64) -> np.ndarray:
    """Normal samples with |value| <= 2 std, resampling anything outside."""
    v = rng.standard_normal(shape)
    bad = np.abs(v) > 2.0
    while bad.any():
        v[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(v) > 2.0
    return (v * std).astype(dtype)


class ParameterStore:
    """Named, ordered collection of learnable tensors with optimizer state.

    Names are unique; iteration follows insertion order. Each entry owns a
    mean-square cache and a momentum cache (both start at zero) plus a flag
    saying whether weight decay applies to it (kernels yes, biases and
    normalization scales no, by convention of the callers).
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.entries: dict[str, Tensor] = {}
        self.optimizer_state: dict[str, dict[str, np.ndarray]] = {}
        self.decay_flags: dict[str, bool] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray, decay: bool = True) -> Tensor:
        if name in self.entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, op=f"param:{name}")
        self.entries[name] = t
        self.optimizer_state[name] = {
            "cache": np.zeros_like(t.data),
            "momentum": np.zeros_like(t.data),
        }
        self.decay_flags[name] = decay
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.entries.items())

    def decayed_tensors(self) -> list[Tensor]:
        return [t for n, t in self.entries.items() if self.decay_flags[n]]

    def zero_grad(self) -> None:
        for t in self.entries.values():
            t.grad = None

    def checksum(self) -> str:
        """SHA-256 over names and raw little-endian bytes of all entries."""
        h = hashlib.sha256()
        for name, t in self.entries.items():
            h.update(name.encode())
            h.update(str(t.data.shape).encode())
            arr = t.data
            if arr.dtype.byteorder == ">":
                arr = arr.astype(arr.dtype.newbyteorder("<"))
            h.update(arr.tobytes())
        return h.hexdigest()


def rmsprop_step(
    params: ParameterStore,
    grads: Mapping[str, np.ndarray] | None = None,
    lr: float = 0.001,
    decay_rate: float = 0.9,
    momentum: float = 0.9,
    eps: float = RMSPROP_EPS,
) -> ParameterStore:
    """One RMSProp update with momentum, in place.

    cache <- rho * cache + (1 - rho) * g^2
    mom   <- momentum * mom + lr * g / sqrt(cache + eps)
    param <- param - mom

    ``grads`` defaults to each entry's accumulated ``.grad`` (missing
    gradients count as zero). An explicit mapping must cover exactly the
    entry names.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if grads is not None and set(grads) != set(params.entries):
        missing = set(params.entries) ^ set(grads)
        raise ValueError(f"gradient names do not align with parameters: {sorted(missing)}")

    for name, t in params.items():
        g = grads[name] if grads is not None else t.grad
        if g is None:
            g = np.zeros_like(t.data)
        g = np.asarray(g, dtype=t.data.dtype)
        if g.shape != t.data.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, expected {t.data.shape}")
        st = params.optimizer_state[name]
        st["cache"] *= decay_rate
        st["cache"] += (1.0 - decay_rate) * g * g
        st["momentum"] *= momentum
        st["momentum"] += lr * g / np.sqrt(st["cache"] + eps)
        t.data -= st["momentum"]
    params.step_count += 1
    return params
