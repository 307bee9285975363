"""Dense NCHW tensors with a reverse-mode gradient tape.

Every differentiable operation appends one node to the module-level tape
when gradient recording is enabled and at least one input requires a
gradient. ``backward`` replays the tape in reverse exactly once and then
resets it, so a second ``backward`` on the same loss without a fresh
forward pass is an error.

Convolutions are evaluated through an explicit im2col matrix whose column
order is (input channel, kernel row, kernel column); the contraction order
per output element is therefore fixed and results are bit-reproducible for
a given BLAS thread count.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, TapeError

DTYPES = {"f32": np.float32, "f64": np.float64}


class Tensor:
    """An ndarray plus gradient bookkeeping.

    Images and feature maps are rank 4 (batch, channels, height, width).
    Parameters may have other ranks (biases are vectors, the fusion scalars
    are rank 0, spatially varying kernels carry a leading bank axis).
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
        self.data = np.array(data, dtype=dtype, copy=True)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: tuple[int, int] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


@dataclass
class _Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered record of differentiable operations since the last reset."""

    nodes: list[_Node] = field(default_factory=list)
    generation: int = 0

    def record(self, node: _Node) -> None:
        node.output._node = (self.generation, len(self.nodes))
        self.nodes.append(node)

    def reset(self) -> None:
        for node in self.nodes:
            node.output._node = None
        self.nodes = []
        self.generation += 1

    def __len__(self) -> int:
        return len(self.nodes)


_TAPE = Tape()
_GRAD_ENABLED = [True]


def get_tape() -> Tape:
    return _TAPE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED[0]


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward, op: str) -> Tensor:
    needs = _GRAD_ENABLED[0] and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs
    out.grad = None
    out._node = None
    out.name = None
    if needs:
        _TAPE.record(_Node(out, inputs, backward, op))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad-requiring leaf."""
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad:
            raise TapeError("loss is not on the active tape (backward already ran; re-run forward)")
        raise TapeError("loss does not depend on any tensor that requires grad")
    gen, idx = loss._node
    if gen != _TAPE.generation:
        raise TapeError("loss belongs to a consumed tape; re-run forward")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    try:
        for node in reversed(_TAPE.nodes[: idx + 1]):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    pending[key] = gi if key not in pending else pending[key] + gi
    finally:
        _TAPE.reset()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data / b.data, (a, b), bw, "div")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def tabs(x: Tensor) -> Tensor:
    # subgradient 0 at ties
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def tsum(x: Tensor, axis=None) -> Tensor:
    """Sum keeping reduced axes (rank is preserved)."""
    out = x.data.sum(axis=axis, keepdims=True)
    return _result(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=True)
    n = x.size // out.size
    return _result(out, (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),), "mean")


def l2norm(x: Tensor, axis: int = 1) -> Tensor:
    """Euclidean norm along ``axis`` (kept); gradient is 0 where the norm is 0."""
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))

    def bw(g):
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * x.data / safe, 0.0).astype(x.dtype),)

    return _result(n, (x,), bw, "l2norm")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


# --------------------------------------------------------------- convolution


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """Patches of a padded NCHW array as a (B*oh*ow, C*kh*kw) matrix."""
    b, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : sh * (oh - 1) + 1 : sh, : sw * (ow - 1) + 1 : sw]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)


def col2im(cols: np.ndarray, xp_shape, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients into a padded array."""
    b, c = xp_shape[:2]
    cols = cols.reshape(b, oh, ow, c, kh, kw)
    out = np.zeros(xp_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + sh * (oh - 1) + 1 : sh, j : j + sw * (ow - 1) + 1 : sw] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Args:
        x: input of shape (B, C_in, H, W).
        weight: kernel of shape (C_out, C_in, K_h, K_w).
        bias: optional vector of length C_out.
        stride: int or (row, col) stride, each >= 1.
        padding: int or (row, col) zero padding.

    Returns:
        Tensor of shape (B, C_out, floor((H + 2p - K)/s) + 1, ...).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(f"conv2d expects rank-4 input and weight, got {x.shape} and {weight.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise DimensionError(f"stride must be >= 1, got {(sh, sw)}")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"weight expects {wcin} input channels, input has {cin}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"bias shape {bias.shape} does not match {cout} output channels")
    oh, ow = conv_output_size(h, kh, sh, ph), conv_output_size(w, kw, sw, pw)
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"conv2d output would be empty ({oh}x{ow})")

    xp = _pad(x.data, ph, pw)
    cols = im2col(xp, kh, kw, sh, sw, oh, ow)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gxp = col2im(g2 @ wmat, xp.shape, kh, kw, sh, sw, oh, ow)
            gx = gxp[:, :, ph : ph + h, pw : pw + w]
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, inputs, bw, "conv2d")


def _shuffle(a: np.ndarray, f: int) -> np.ndarray:
    b, c, h, w = a.shape
    return a.reshape(b, c // (f * f), f, f, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c // (f * f), h * f, w * f)


def _unshuffle(a: np.ndarray, f: int) -> np.ndarray:
    b, c, h, w = a.shape
    return a.reshape(b, c, h // f, f, w // f, f).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * f * f, h // f, w // f)


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """Sub-pixel rearrangement: out[c, h*f+a, w*f+b] = in[c*f*f + a*f + b, h, w]."""
    x = as_tensor(x)
    if factor < 1:
        raise DimensionError(f"shuffle factor must be >= 1, got {factor}")
    if x.data.ndim != 4 or x.shape[1] % (factor * factor):
        raise DimensionError(f"channel count {x.shape[1] if x.data.ndim == 4 else '?'} "
                             f"not divisible by factor^2 = {factor * factor}")
    return _result(_shuffle(x.data, factor), (x,), lambda g: (_unshuffle(g, factor),), "pixel_shuffle")


def pixel_unshuffle(x: Tensor, factor: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    x = as_tensor(x)
    if x.data.ndim != 4 or x.shape[2] % factor or x.shape[3] % factor:
        raise DimensionError(f"spatial extents {x.shape[2:]} not divisible by {factor}")
    return _result(_unshuffle(x.data, factor), (x,), lambda g: (_shuffle(g, factor),), "pixel_unshuffle")


# ----------------------------------------------------------------- training


@dataclass
class CosineSchedule:
    """Cosine annealing from ``initial`` at step 0 to ``final`` at ``total``."""

    total: int
    initial: float = 2e-4
    final: float = 1e-7

    def rate(self, step: int) -> float:
        if self.total <= 0:
            return self.initial
        t = min(max(step, 0), self.total)
        w = 0.5 * (1.0 + math.cos(math.pi * t / self.total))
        return self.initial * w + self.final * (1.0 - w)


@dataclass
class Adam:
    """Adam with bias correction; moments live in ``m``/``v`` keyed by name."""

    params: dict[str, Tensor]
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for parameter {name!r}", name=name)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def optimizer_step(state: Adam, schedule: CosineSchedule) -> float:
    """Apply one scheduled Adam update using the gradients stored on the params."""
    if schedule.total and state.step_count >= schedule.total:
        raise NumericError(f"optimizer step {state.step_count} beyond schedule length {schedule.total}")
    lr = schedule.rate(state.step_count)
    state.step(lr)
    return lr


# --------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def grad_check(closure: Callable[[], Tensor], params: dict[str, Tensor] | Iterable[Tensor],
               tolerance: float = 1e-5, step: float = 1e-6, max_entries: int | None = None,
               seed: int = 0) -> GradCheckReport:
    """Compare taped gradients with central finite differences.

    ``closure`` must rebuild the loss from the current parameter values each
    call. The error per tensor is max |analytic - numeric| over the entries
    checked, relative to the larger of the two gradients' max magnitudes.
    ``max_entries`` limits the number of randomly chosen entries probed per
    tensor (all entries when None).
    """
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    loss = closure()
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    rng = np.random.default_rng(seed)
    errors = {}
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            numeric = np.empty(idx.size)
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                fp = closure().item()
                flat[i] = orig - step
                fm = closure().item()
                flat[i] = orig
                numeric[n] = (fp - fm) / (2 * step)
            errors[name] = _rel_err(analytic[name].reshape(-1)[idx], numeric)
    for p in params.values():
        p.grad = None
    return GradCheckReport(errors, tolerance)
