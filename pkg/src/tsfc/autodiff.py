"""Minimal reverse-mode differentiation over numpy arrays.

Only the operations the classifier needs are provided: 2-D convolution
(stride 1, square kernels), relu, tanh, 2x2 max pooling, adaptive average
pooling, affine maps, softmax / cross-entropy and a few shape helpers.
There is no broadcasting: binary ops require identical shapes.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    """Raised on NaN/Inf where a finite value is required."""


class Tensor:
    """An n-d array with an optional gradient and a link to the op that made it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def backward(self) -> None:
        backward(self)


def _raise_item(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


# ---------------------------------------------------------------- tape

def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of every differentiable node feeding ``root``.

    Producers always precede consumers; ``root`` is last.
    """
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable ``t``.

    ``params``, when given, are guaranteed a gradient array afterwards; those
    not reachable from ``loss`` get zeros.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return
    tape = build_tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0
    return _make(np.where(mask, t.data, 0).astype(t.dtype), (t,), lambda g: (g * mask,), "relu")


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    return _make(y, (t,), lambda g: (g * (1.0 - y * y),), "tanh")


def tensor_sum(t: Tensor) -> Tensor:
    shape = t.shape
    return _make(np.asarray(t.data.sum()).reshape(1), (t,),
                 lambda g: (np.full(shape, g.reshape(-1)[0], dtype=g.dtype),), "sum")


# ---------------------------------------------------------------- shape helpers

def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    old = t.shape
    return _make(t.data.reshape(shape), (t,), lambda g: (g.reshape(old),), "reshape")


def flatten(t: Tensor) -> Tensor:
    return reshape(t, (t.size,))


def select(t: Tensor, index: int) -> Tensor:
    """Element ``index`` of a 1-d tensor, as a shape-(1,) tensor."""
    if t.data.ndim != 1:
        raise ShapeError(f"select expects a 1-d tensor, got {t.shape}")
    n = t.shape[0]

    def bw(g):
        out = np.zeros(n, dtype=g.dtype)
        out[index] = g[0]
        return (out,)

    return _make(t.data[index:index + 1].copy(), (t,), bw, "select")


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    if not tensors:
        raise ValueError("stack needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors:
        _check_same_shape(tensors[0], t, "stack")
    data = np.stack([t.data for t in tensors])
    return _make(data, tuple(tensors), lambda g: tuple(g[i] for i in range(len(tensors))), "stack")


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-d tensors in the given order."""
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    for t in tensors:
        if t.data.ndim != 1:
            raise ShapeError(f"concat expects 1-d tensors, got {t.shape}")
    sizes = [t.shape[0] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors]), tuple(tensors), bw, "concat")


def weighted_sum(weights: Tensor, rows: Tensor) -> Tensor:
    """sum_k weights[k] * rows[k]; weights [K], rows [K, M] -> [M]."""
    if weights.data.ndim != 1 or rows.data.ndim != 2 or rows.shape[0] != weights.shape[0]:
        raise ShapeError(f"weighted_sum: weights {weights.shape} vs rows {rows.shape}")
    wd, rd = weights.data, rows.data
    return _make(wd @ rd, (weights, rows), lambda g: (rd @ g, np.outer(wd, g)), "weighted_sum")


# ---------------------------------------------------------------- layers

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """weight @ x + bias for 1-d ``x``."""
    if x.data.ndim != 1 or weight.data.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = wd @ xd
    if bias is not None:
        out = out + bias.data

    def bw(g):
        grads = [wd.T @ g, np.outer(g, xd)]
        if bias is not None:
            grads.append(g)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "linear")


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # x: [C, Hp, Wp] -> [C*k*k, Ho*Wo]
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # C, Ho, Wo, k, k
    c, ho, wo = win.shape[:3]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation of a [C_in, H, W] input with [C_out, C_in, k, k] kernels."""
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape}, kernels {kernels.shape}")
    c_out, c_in, k, k2 = kernels.shape
    if k != k2:
        raise ShapeError("conv2d: only square kernels are supported")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d: input has {x.shape[0]} channels, kernels expect {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {bias.shape}, expected ({c_out},)")
    _, h, w = x.shape
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {h}x{w}+2*{padding}")
    ho, wo = h + 2 * padding - k + 1, w + 2 * padding - k + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k)
    wmat = kernels.data.reshape(c_out, -1)
    out = (wmat @ cols).reshape(c_out, ho, wo) + bias.data[:, None, None]
    need_input_grad = x.requires_grad

    def bw(g):
        g2 = g.reshape(c_out, -1)
        d_kernels = (g2 @ cols.T).reshape(kernels.shape)
        d_bias = g2.sum(axis=1)
        d_x = None
        if need_input_grad:
            # full correlation of the upstream grad with flipped, channel-swapped kernels
            flipped = kernels.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c_in, -1)
            gp = np.pad(g, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
            dxp = (flipped @ _im2col(gp, k)).reshape(c_in, h + 2 * padding, w + 2 * padding)
            d_x = dxp[:, padding:padding + h, padding:padding + w] if padding else dxp
        return d_x, d_kernels, d_bias

    return _make(out, (x, kernels, bias), bw, "conv2d")


def maxpool2d(t: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 on [C, H, W]; odd sides are padded by
    replicating the last row/column. Ties send the gradient to the first
    element in row-major order."""
    if t.data.ndim != 3:
        raise ShapeError(f"maxpool2d expects [C, H, W], got {t.shape}")
    c, h, w = t.shape
    x = t.data
    if h % 2 or w % 2:
        x = np.pad(x, ((0, 0), (0, h % 2), (0, w % 2)), mode="edge")
    hp, wp = x.shape[1], x.shape[2]
    blocks = x.reshape(c, hp // 2, 2, wp // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, hp // 2, wp // 2, 4)
    arg = blocks.argmax(axis=-1)  # first maximum on ties
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros((c, hp // 2, wp // 2, 4), dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(c, hp // 2, wp // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, hp, wp)
        if hp != h or wp != w:
            # replicated cells fold back onto the edge they copied
            if hp != h:
                gx[:, h - 1, :] += gx[:, h, :]
            if wp != w:
                gx[:, :, w - 1] += gx[:, :, w]
            gx = gx[:, :h, :w]
        return (gx,)

    return _make(out, (t,), bw, "maxpool2d")


def adaptive_avg_pool(t: Tensor) -> Tensor:
    """Per-channel mean of [C, H, W] -> [C, 1, 1]."""
    if t.data.ndim != 3:
        raise ShapeError(f"adaptive_avg_pool expects [C, H, W], got {t.shape}")
    c, h, w = t.shape
    out = t.data.mean(axis=(1, 2), keepdims=True)
    return _make(out, (t,), lambda g: (np.broadcast_to(g / (h * w), (c, h, w)).copy(),), "adaptive_avg_pool")


def softmax(t: Tensor) -> Tensor:
    if t.data.ndim != 1:
        raise ShapeError(f"softmax expects a 1-d tensor, got {t.shape}")
    z = t.data - t.data.max()
    e = np.exp(z)
    p = e / e.sum()

    def bw(g):
        return (p * (g - np.dot(g, p)),)

    return _make(p, (t,), bw, "softmax")


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label] as a shape-(1,) tensor."""
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy expects 1-d logits, got {logits.shape}")
    n = logits.shape[0]
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    ls = log_softmax_np(logits.data)
    p = np.exp(ls)

    def bw(g):
        d = p.copy()
        d[label] -= 1.0
        return (d * g[0],)

    return _make(np.asarray([-ls[label]], dtype=logits.dtype), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------- optimisation

def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: dict,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``state`` holds ``t`` plus first/second moment lists ``m`` and ``v``; an
    empty dict starts from zero moments. The updated state is returned.
    """
    if not state:
        state = {"t": 0, "m": [np.zeros_like(p) for p in params], "v": [np.zeros_like(p) for p in params]}
    t = state["t"] + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if lr != 0.0:
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    state["t"] = t
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def zero_grad(self) -> None:
        zero_grads(self.params)

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        self.state = adam_step([p.data for p in self.params], grads, self.state, self.lr,
                               self.betas[0], self.betas[1], self.eps)


# ---------------------------------------------------------------- checking

def grad_check(f: Callable[[Sequence[Tensor]], Tensor], point: Sequence[np.ndarray],
               step: float = 1e-5, max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between backward gradients and central differences.

    ``f`` maps a list of tensors (built from ``point``) to a scalar tensor.
    The error per coordinate is |a - n| / max(1, |a|, |n|). With
    ``max_coords``, at most that many randomly chosen coordinates of each
    input are perturbed.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(p, dtype=np.float64, copy=True) for p in point]
    inputs = [Tensor(a, requires_grad=True) for a in arrays]
    loss = f(inputs)
    backward(loss, inputs)
    analytic = [t.grad.copy() for t in inputs]
    worst = 0.0
    for a, an in zip(arrays, analytic):
        flat = a.reshape(-1)
        an_flat = an.reshape(-1)
        coords = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = f([Tensor(x) for x in arrays]).item()
            flat[i] = orig - step
            down = f([Tensor(x) for x in arrays]).item()
            flat[i] = orig
            num = (up - down) / (2.0 * step)
            err = abs(an_flat[i] - num) / max(1.0, abs(an_flat[i]), abs(num))
            worst = max(worst, err)
    return worst
