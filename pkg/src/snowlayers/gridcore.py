"""Dense 4D grids and a small reverse-mode differentiation engine.

Grids are float64 numpy arrays shaped ``(batch, channels, rows, cols)``.
Every differentiable op takes and returns :class:`Node` objects; a node keeps
its forward value plus a closure mapping the upstream gradient to gradients
for its inputs. :func:`backward` walks the graph in reverse topological order.

Convolutions use the cross-correlation convention. Transposed-convolution
kernels are laid out ``(in_channels, out_channels, kh, kw)`` so that
``tconv2d(x, w, s)`` is the adjoint of ``conv2d(y, w, stride=s)``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import wavelet

OP_KINDS = (
    "param", "const", "conv2d", "tconv2d", "maxpool2", "relu", "sigmoid",
    "concat", "crop", "add", "dwt-fixed", "loss",
)


class ShapeError(ValueError):
    pass


def as_grid(x, name="grid") -> np.ndarray:
    """Validate and convert to a finite float64 4D grid."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4D (batch, channels, rows, cols), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


class Node:
    __slots__ = ("value", "op", "parents", "backward_fn", "name", "requires_grad")

    def __init__(self, value, op, parents=(), backward_fn=None, name=None):
        if op not in OP_KINDS:
            raise ValueError(f"unknown op kind {op!r}")
        self.value = value
        self.op = op
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name
        self.requires_grad = op == "param" or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"


def param(value, name: str) -> Node:
    return Node(np.asarray(value, dtype=np.float64), "param", name=name)


def const(value) -> Node:
    return Node(np.asarray(value, dtype=np.float64), "const")


def _node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


# ---------------------------------------------------------------- im2col

def _im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols, shape, kh, kw, stride, ho, wo):
    n, c, hp, wp = shape
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros(shape)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return out


# ---------------------------------------------------------------- raw ops

def conv2d_forward(x, w, b=None, pad=0, stride=1):
    """Plain-array convolution; returns ``(out, cols)`` where ``cols`` is the im2col buffer."""
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    if ic != c:
        raise ShapeError(f"kernel expects {ic} input channels, input has {c} (input shape {x.shape}, kernel {w.shape})")
    if stride < 1 or pad < 0:
        raise ValueError(f"need stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = np.matmul(w.reshape(oc, -1), cols).reshape(n, oc, ho, wo)
    if b is not None:
        out += np.asarray(b).reshape(1, oc, 1, 1)
    return out, cols


def conv2d(x, w, b=None, pad=0, stride=1) -> Node:
    x, w = _node(x), _node(w)
    b = None if b is None else _node(b)
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ShapeError(f"conv2d needs 4D input and kernel, got {x.shape} and {w.shape}")
    out, cols = conv2d_forward(x.value, w.value, None if b is None else b.value, pad, stride)
    xshape = x.value.shape
    hp, wp = xshape[2] + 2 * pad, xshape[3] + 2 * pad
    oc, ic, kh, kw = w.value.shape
    ho, wo = out.shape[2:]
    wmat = w.value.reshape(oc, -1)

    def backward(g):
        g2 = g.reshape(g.shape[0], oc, -1)
        dw = np.einsum("nop,nkp->ok", g2, cols).reshape(w.value.shape)
        dx = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g2)
            dxp = _col2im(dcols, (xshape[0], ic, hp, wp), kh, kw, stride, ho, wo)
            dx = dxp[:, :, pad : pad + xshape[2], pad : pad + xshape[3]]
        grads = [dx, dw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Node(out, "conv2d", parents, backward)


def tconv2d(x, w, stride: int) -> Node:
    """Transposed convolution, kernel size ``2 * stride``, no padding: output dims ``stride * (in + 1)``."""
    x, w = _node(x), _node(w)
    ic, oc, kh, kw = w.value.shape
    if kh != 2 * stride or kw != 2 * stride:
        raise ShapeError(f"tconv2d kernel must be {2 * stride}x{2 * stride} for stride {stride}, got {kh}x{kw}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n, c, h, wd = x.value.shape
    if c != ic:
        raise ShapeError(f"tconv2d kernel expects {ic} input channels, input has {c}")
    ho, wo = stride * (h - 1) + kh, stride * (wd - 1) + kw
    wmat = w.value.reshape(ic, -1)
    x2 = x.value.reshape(n, ic, h * wd)
    cols = np.matmul(wmat.T, x2)
    out = _col2im(cols, (n, oc, ho, wo), kh, kw, stride, h, wd)

    def backward(g):
        gcols = _im2col(g, kh, kw, stride, h, wd)
        dw = np.einsum("nip,nkp->ik", x2, gcols).reshape(w.value.shape)
        dx = np.matmul(wmat, gcols).reshape(x.value.shape) if x.requires_grad else None
        return [dx, dw]

    return Node(out, "tconv2d", (x, w), backward)


def bilinear_kernel(stride: int, channels: int = 1) -> np.ndarray:
    """Bilinear upsampling kernel of size ``2 * stride``, diagonal over channels."""
    size = 2 * stride
    center = stride - 0.5
    og = np.arange(size)
    filt1d = 1 - np.abs(og - center) / stride
    filt = np.outer(filt1d, filt1d)
    k = np.zeros((channels, channels, size, size))
    for c in range(channels):
        k[c, c] = filt
    return k


def maxpool2(x) -> Node:
    x = _node(x)
    n, c, h, w = x.value.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even rows and cols, got {h}x{w}")
    win = x.value.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # np.argmax picks the first maximum: row-major tie-breaking within the window
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return [gx]

    return Node(out, "maxpool2", (x,), backward)


def relu(x) -> Node:
    x = _node(x)
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0.0), "relu", (x,), lambda g: [g * mask])


def sigmoid(x) -> Node:
    x = _node(x)
    s = expit(x.value)
    return Node(s, "sigmoid", (x,), lambda g: [g * s * (1 - s)])


def activation(x, kind: str) -> Node:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}; expected relu or sigmoid")


def concat(parts) -> Node:
    parts = [_node(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one part")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.value.ndim != 4 or (p.shape[0], *p.shape[2:]) != (ref[0], *ref[2:]):
            raise ShapeError(f"concat parts disagree on batch/rows/cols: {ref} vs {p.shape}")
    sizes = np.cumsum([p.shape[1] for p in parts])[:-1]
    out = np.concatenate([p.value for p in parts], axis=1)
    return Node(out, "concat", parts, lambda g: np.split(g, sizes, axis=1))


def crop_center(x, rows: int, cols: int) -> Node:
    x = _node(x)
    n, c, h, w = x.value.shape
    if rows > h or cols > w or rows < 0 or cols < 0:
        raise ShapeError(f"cannot crop {h}x{w} to {rows}x{cols}")
    r0, c0 = (h - rows) // 2, (w - cols) // 2
    out = x.value[:, :, r0 : r0 + rows, c0 : c0 + cols].copy()

    def backward(g):
        gx = np.zeros(x.value.shape)
        gx[:, :, r0 : r0 + rows, c0 : c0 + cols] = g
        return [gx]

    return Node(out, "crop", (x,), backward)


def add(a, b) -> Node:
    a, b = _node(a), _node(b)
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    return Node(a.value + b.value, "add", (a, b), lambda g: [g, g])


def dwt_details(x, bank) -> Node:
    """Level-1 detail coefficients of each channel as a fixed linear op.

    Output channels are ``[H_0..H_{C-1}, V_0.., D_0..]``. The transform has no
    trainable parameters; gradients flow through it via the inverse transform,
    which is the adjoint of the orthonormal analysis.
    """
    x = _node(x)
    bank = wavelet.filter_bank(bank) if isinstance(bank, str) else bank
    dec = wavelet.dwt2(x.value, bank)
    out = np.concatenate([dec.H, dec.V, dec.D], axis=1)
    c = x.shape[1]

    def backward(g):
        gh, gv, gd = g[:, :c], g[:, c : 2 * c], g[:, 2 * c :]
        return [wavelet.idwt2(wavelet.Decomposition(np.zeros_like(gh), gh, gv, gd), bank)]

    return Node(out, "dwt-fixed", (x,), backward)


# ---------------------------------------------------------------- backward

def _topo_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Node, params=None) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every named parameter node.

    ``params`` (mapping or iterable of parameter nodes) fixes the returned set;
    parameters the loss does not depend on get zero gradients.
    """
    if not isinstance(loss, Node):
        raise TypeError("backward needs a Node produced by a forward pass")
    if np.size(loss.value) != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.value)}
    found = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op == "param":
            found[node.name] = found.get(node.name, 0) + g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    if params is None:
        return found
    nodes = params.values() if isinstance(params, dict) else params
    return {p.name: np.asarray(found.get(p.name, np.zeros_like(p.value))) for p in nodes}


def numeric_gradient(f, x: np.ndarray, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. entries of ``x`` (modified in place, then restored)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def tensor_relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|a|, max|n|)`` over one tensor; 0 when both vanish.

    Scaling by the tensor's largest entry keeps finite-difference round-off on
    near-zero entries from dominating the score.
    """
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n))) / scale


def check_gradients(loss_fn, tensors: dict, analytic: dict, eps: float = 1e-5, samples: int = 6,
                    seed: int = 0) -> dict[str, float]:
    """Compare ``analytic`` gradients with central differences of scalar ``loss_fn()``.

    Each tensor in ``tensors`` is perturbed in place at its largest-magnitude
    analytic entry plus up to ``samples`` seeded random entries. Returns the
    per-tensor ``tensor_relative_error`` over the checked entries.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for name, x in tensors.items():
        g = np.asarray(analytic[name])
        if g.shape != x.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, tensor has {x.shape}")
        idx = {int(np.argmax(np.abs(g)))}
        idx.update(int(i) for i in rng.choice(x.size, size=min(samples, x.size), replace=False))
        idx = sorted(idx)
        num = numeric_gradient(loss_fn, x, eps, idx).reshape(-1)[idx]
        out[name] = tensor_relative_error(g.reshape(-1)[idx], num)
    return out
