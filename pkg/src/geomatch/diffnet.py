"""Dense/sparse tensor core with reverse-mode autodiff.

Everything is 64-bit floats. The graph is built eagerly: each op returns a
Tensor holding its parents and a closure that routes the upstream gradient.
Only the op set needed by the grasp model exists; there is no general
broadcasting beyond a bias row.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import MissingGradient, ShapeMismatch
from .rng import Rng
from .sparse import SparseCOO


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in _parents)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, scalar):
        return scale(self, scalar)

    __rmul__ = __mul__


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable tensor."""
    if loss.data.shape not in ((), (1,)):
        raise ShapeMismatch(f"loss must be scalar, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    state: dict[int, int] = {}     # 0 = visiting, 1 = done
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            state[id(node)] = 1
            topo.append(node)
            continue
        mark = state.get(id(node))
        if mark == 1:
            continue
        assert mark != 0, "cycle in autodiff graph"
        state[id(node)] = 0
        stack.append((node, True))
        for p in node._parents:
            if state.get(id(p)) != 1:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")

    def back(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=back)


def spmm(sp: SparseCOO, h: Tensor) -> Tensor:
    """Constant sparse matrix times dense tensor."""
    h = _as_tensor(h)
    if h.data.shape[0] != sp.shape[1]:
        raise ShapeMismatch(f"spmm {sp.shape} @ {h.data.shape}")

    def back(g):
        return ((h, sp.rmatmul(g)),)

    return Tensor(sp.matmul(h.data), _parents=(h,), _backward=back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also accepts a (F,) bias row against an (A, F) left."""
    a, b = _as_tensor(a), _as_tensor(b)
    bias_row = (a.data.ndim == 2 and b.data.ndim == 1
                and a.data.shape[1] == b.data.shape[0])
    if not bias_row and a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add {a.data.shape} + {b.data.shape}")

    def back(g):
        gb = g.sum(axis=0) if bias_row else g
        return ((a, g), (b, gb))

    return Tensor(a.data + b.data, _parents=(a, b), _backward=back)


def scale(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)

    def back(g):
        return ((x, g * c),)

    return Tensor(x.data * c, _parents=(x,), _backward=back)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def back(g):
        return ((x, g * mask),)

    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,), _backward=back)


def concat_cols(parts) -> Tensor:
    """Concatenate 2-D tensors (or constant arrays) along columns."""
    parts = [_as_tensor(p) for p in parts]
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise ShapeMismatch("concat_cols requires equal row counts")
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def back(g):
        return tuple((p, g[:, offsets[i]:offsets[i + 1]])
                     for i, p in enumerate(parts))

    return Tensor(np.concatenate([p.data for p in parts], axis=1),
                  _parents=tuple(parts), _backward=back)


def gather_rows(x: Tensor, indices) -> Tensor:
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ShapeMismatch("gather index out of range")

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return ((x, gx),)

    return Tensor(x.data[idx], _parents=(x,), _backward=back)


def transpose(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def back(g):
        return ((x, g.T),)

    return Tensor(x.data.T, _parents=(x,), _backward=back)


def column(x: Tensor, j: int) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or not 0 <= j < x.data.shape[1]:
        raise ShapeMismatch(f"column {j} of shape {x.data.shape}")

    def back(g):
        gx = np.zeros_like(x.data)
        gx[:, j] = g
        return ((x, gx),)

    return Tensor(x.data[:, j], _parents=(x,), _backward=back)


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def back(g):
        return ((x, np.full_like(x.data, float(g))),)

    return Tensor(x.data.sum(), _parents=(x,), _backward=back)


def tmean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size

    def back(g):
        return ((x, np.full_like(x.data, float(g) / n)),)

    return Tensor(x.data.mean(), _parents=(x,), _backward=back)


def square(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def back(g):
        return ((x, g * 2.0 * x.data),)

    return Tensor(x.data ** 2, _parents=(x,), _backward=back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def bce_with_pos_weight(logits: Tensor, targets, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy on logits, positives weighted by pos_weight.

    Uses the log-sum-exp form, so large-magnitude logits stay finite.
    """
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.size != logits.data.size:
        raise ShapeMismatch(
            f"targets {y.shape} do not match logits {logits.data.shape}")
    y = y.reshape(logits.data.shape)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ShapeMismatch("targets must be binary")
    x = logits.data
    softplus_negx = np.logaddexp(0.0, -x)
    elem = pos_weight * y * softplus_negx + (1.0 - y) * (x + softplus_negx)
    n = x.size

    def back(g):
        s = _sigmoid(x)
        grad = (pos_weight * y * (s - 1.0) + (1.0 - y) * s) * (float(g) / n)
        return ((logits, grad),)

    return Tensor(elem.mean(), _parents=(logits,), _backward=back)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def gcn_layer(adj: SparseCOO, h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """ReLU(A_hat @ H @ W + b) graph convolution."""
    return relu(add(matmul(spmm(adj, h), w), b))


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return add(out, bias) if bias is not None else out


def mlp(x: Tensor, layers) -> Tensor:
    """Stack of (w, b) pairs: ReLU between layers, final layer linear."""
    out = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        out = linear(out, w, b)
        if i != last:
            out = relu(out)
    return out


# ---------------------------------------------------------------------------
# parameters and optimization
# ---------------------------------------------------------------------------

def glorot_init(shape, seed) -> Tensor:
    """Uniform(+-sqrt(6 / (fan_in + fan_out))) initialization."""
    if len(shape) != 2:
        raise ShapeMismatch("glorot_init expects a 2-D shape")
    rng = seed if isinstance(seed, Rng) else Rng(int(seed))
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    data = np.array(rng.randoms(shape[0] * shape[1])).reshape(shape)
    return Tensor((data * 2.0 - 1.0) * limit, requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class ParameterStore:
    """Named parameters in insertion order plus shared Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ShapeMismatch(f"duplicate parameter name {name}")
        tensor.requires_grad = True
        self._params[name] = tensor
        self._m[name] = np.zeros_like(tensor.data)
        self._v[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None


def adam_step(store: ParameterStore, lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update over all parameters; zeroes grads after."""
    for name, p in store.items():
        if p.grad is None:
            raise MissingGradient(f"parameter {name} has no gradient")
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.items():
        g = p.grad
        m, v = store._m[name], store._v[name]
        m *= beta1
        v *= beta2
        g2 = g * g
        g2 *= (1.0 - beta2)
        v += g2
        g *= (1.0 - beta1)
        m += g
        denom = np.sqrt(v / c2, out=g2)     # reuse the g*g buffer
        denom += eps
        np.divide(m, denom, out=denom)
        denom *= lr / c1
        p.data -= denom
        p.grad = None


# ---------------------------------------------------------------------------
# weight files
# ---------------------------------------------------------------------------

def save_weights(store: ParameterStore, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = []
    offset = 0
    blobs = []
    for name, p in store.items():
        raw = p.data.astype("<f8").tobytes()
        manifest.append({"name": name, "shape": list(p.data.shape),
                         "byte_offset": offset})
        offset += len(raw)
        blobs.append(raw)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    with open(os.path.join(directory, "weights.bin"), "wb") as fh:
        fh.write(b"".join(blobs))


def load_weights(store: ParameterStore, directory) -> None:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    with open(os.path.join(directory, "weights.bin"), "rb") as fh:
        blob = fh.read()
    for entry in manifest:
        name = entry["name"]
        shape = tuple(entry["shape"])
        if name not in store:
            raise ShapeMismatch(f"weight file has unknown parameter {name}")
        p = store[name]
        if tuple(p.data.shape) != shape:
            raise ShapeMismatch(
                f"parameter {name}: stored shape {shape} != model {p.data.shape}")
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        values = struct.unpack(f"<{count}d", blob[start:start + 8 * count])
        p.data = np.array(values).reshape(shape)
