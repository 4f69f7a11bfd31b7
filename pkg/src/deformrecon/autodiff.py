"""Dense-tensor reverse-mode autodiff sized for small MLP field networks.

Eager tape over float64 numpy arrays: applying an op runs the forward
computation immediately and records a backward closure; ``Tensor.backward``
walks the tape in reverse topological order. Gradients accumulate until
explicitly zeroed, which is what minibatch chunking and row-by-row Jacobians
rely on.

The op set is closed and deliberately small: what the field networks,
volume-rendering weights and losses need, nothing else. Every op's gradient
is property-tested against central finite differences.
"""

from __future__ import annotations

import base64
import json
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Shape mismatch at op construction, naming the node and both shapes."""

    def __init__(self, op: str, expected, actual, detail: str = ""):
        self.op = op
        self.expected = expected
        self.actual = actual
        msg = f"{op}: expected shape {expected}, got {actual}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GraphError(RuntimeError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node of the tape: float64 ndarray plus backward bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _op="leaf",
                 _backward=None, validate: bool | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if validate is None:
            validate = _op == "leaf"
        if validate and not np.all(np.isfinite(arr)):
            raise ValueError(f"{_op}: non-finite values rejected at construction")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward_fn = _backward
        self.op = _op

    # -- basics ------------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            if np.shape(g) == self.data.shape:
                self.grad = np.array(g, dtype=np.float64)
            else:
                self.grad = np.zeros_like(self.data)
                self.grad += g
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    # -- backward ----------------------------------------------------------

    def _topo(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

    def backward(self, seed=None):
        """Accumulate gradients of this tensor into every reachable leaf.

        `seed` defaults to ones; its shape must equal this tensor's shape.
        Repeated calls accumulate; use zero_grad / ParamStore.zero_grad to reset.
        """
        if not self.requires_grad:
            raise GraphError("backward: tensor does not require gradients")
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise ShapeError("backward seed", self.data.shape, seed.shape)
        order = self._topo()
        # each pass walks with fresh gradients, then adds onto whatever was
        # already accumulated, so repeated calls sum instead of compounding
        stash = [node.grad for node in order]
        for node in order:
            node.grad = None
        self._accum(seed)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        for node, old in zip(order, stash):
            if old is not None:
                node.grad = old if node.grad is None else node.grad + old

    def zero_graph(self):
        """Clear gradients on every tensor reachable from this one."""
        for node in self._topo():
            node.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape, "operands not broadcastable")
    out = Tensor(data, _parents=(a, b), _op="add")

    def _bw(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    out._backward_fn = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape, "operands not broadcastable")
    out = Tensor(data, _parents=(a, b), _op="mul")

    def _bw(g):
        a._accum(_unbroadcast(g * b.data, a.shape))
        b._accum(_unbroadcast(g * a.data, b.shape))

    out._backward_fn = _bw
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul", "(2D, 2D)", (a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"({a.shape[0]}, k) @ (k, {b.shape[1]})",
                         (a.shape, b.shape), f"inner dims {a.shape[1]} != {b.shape[0]}")
    out = Tensor(a.data @ b.data, _parents=(a, b), _op="matmul")

    def _bw(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    out._backward_fn = _bw
    return out


def transpose2d(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose2d", "2D", a.shape)
    out = Tensor(a.data.T.copy(), _parents=(a,), _op="transpose")
    out._backward_fn = lambda g: a._accum(g.T)
    return out


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    out = Tensor(data, _parents=tuple(ts), _op="concat")
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def _bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            t._accum(g[tuple(sl)])

    out._backward_fn = _bw
    return out


def slice_axis1(a, lo: int, hi: int) -> Tensor:
    """Slice columns [lo, hi) along axis 1 of an array with ndim >= 2."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("slice_axis1", ">=2D", a.shape)
    out = Tensor(a.data[:, lo:hi].copy(), _parents=(a,), _op="slice_axis1")

    def _bw(g):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        a._accum(full)

    out._backward_fn = _bw
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), _parents=(a,), _op="reshape")
    out._backward_fn = lambda g: a._accum(g.reshape(a.shape))
    return out


def sin(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sin(a.data), _parents=(a,), _op="sin")
    out._backward_fn = lambda g: a._accum(g * np.cos(a.data))
    return out


def cos(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.cos(a.data), _parents=(a,), _op="cos")
    out._backward_fn = lambda g: a._accum(-g * np.sin(a.data))
    return out


def exp(a) -> Tensor:
    a = _as_tensor(a)
    e = np.exp(a.data)
    out = Tensor(e, _parents=(a,), _op="exp")
    out._backward_fn = lambda g: a._accum(g * e)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh formulation: overflow-free and a single vectorized transcendental
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)
    out = Tensor(s, _parents=(a,), _op="sigmoid")
    out._backward_fn = lambda g: a._accum(g * s * (1.0 - s))
    return out


def _softplus(x: np.ndarray, beta: float) -> np.ndarray:
    bx = beta * x
    return (np.maximum(bx, 0.0) + np.log1p(np.exp(-np.abs(bx)))) / beta


def softplus(a, beta: float = 1.0, slope: "Tensor | None" = None) -> Tensor:
    """softplus_beta(x) = log(1 + exp(beta x)) / beta; derivative sigmoid(beta x).

    `slope` optionally shares an already-built sigmoid(beta x) node so the
    backward pass reuses its values instead of recomputing them.
    """
    a = _as_tensor(a)
    out = Tensor(_softplus(a.data, beta), _parents=(a,), _op="softplus")
    if slope is not None:
        out._backward_fn = lambda g: a._accum(g * slope.data)
    else:
        out._backward_fn = lambda g: a._accum(g * _sigmoid(beta * a.data))
    return out


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.abs(a.data), _parents=(a,), _op="abs")
    out._backward_fn = lambda g: a._accum(g * np.sign(a.data))
    return out


def pow_const(a, p: float) -> Tensor:
    """Elementwise x**p for a constant exponent."""
    a = _as_tensor(a)
    out = Tensor(np.power(a.data, p), _parents=(a,), _op=f"pow{p}")
    out._backward_fn = lambda g: a._accum(g * p * np.power(a.data, p - 1.0))
    return out


def sqrt(a) -> Tensor:
    return pow_const(a, 0.5)


def clip(a, lo: float | None, hi: float | None) -> Tensor:
    """Clamp with zero gradient outside the open interval (subgradient choice)."""
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)
    out = Tensor(data, _parents=(a,), _op="clip")
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    mask = (a.data > lo_v) & (a.data < hi_v)

    def _bw(g):
        a._accum(g * mask)

    out._backward_fn = _bw
    return out


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,), _op="sum")

    def _bw(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape).copy() if np.ndim(g) else np.full(a.shape, g))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accum(np.broadcast_to(gg, a.shape).copy())

    out._backward_fn = _bw
    return out


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def l2_norm(a, axis: int = -1, keepdims: bool = True, eps: float = 0.0) -> Tensor:
    """Euclidean norm along one axis: sqrt(sum(x^2) + eps^2).

    A nonzero eps keeps the sqrt differentiable at exactly-zero vectors
    (callers normalizing possibly-vanishing fields pass a tiny one).
    """
    s = sum_(mul(a, a), axis=axis, keepdims=keepdims)
    if eps:
        s = add(s, eps * eps)
    return sqrt(s)


def exclusive_cumprod(c) -> Tensor:
    """T[:, i] = prod_{j<i} c[:, j] along axis 1 of a 2D array (T[:, 0] = 1).

    Backward uses dL/dc_k = (sum_{i>k} g_i T_i) / c_k, valid because callers
    keep c strictly positive (alpha is clamped below 1).
    """
    c = _as_tensor(c)
    if c.ndim != 2:
        raise ShapeError("exclusive_cumprod", "2D", c.shape)
    rows = c.shape[0]
    t = np.concatenate(
        [np.ones((rows, 1)), np.cumprod(c.data[:, :-1], axis=1)], axis=1
    )
    out = Tensor(t, _parents=(c,), _op="exclusive_cumprod")

    def _bw(g):
        gt = g * t
        # suffix sums excluding position k itself
        incl = np.cumsum(gt[:, ::-1], axis=1)[:, ::-1]
        suffix = incl - gt
        c._accum(suffix / c.data)

    out._backward_fn = _bw
    return out


# ---------------------------------------------------------------------------
# parameters & checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT_VERSION = 1


class ParamStore:
    """Named parameter tensors with stable iteration order and grad buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def parameter(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if name == "format_version":
            raise ValueError("parameter name 'format_version' is reserved")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True, _op="param")
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def sgd_step(self, lr: float):
        for p in self._params.values():
            if p.grad is not None:
                p.data -= lr * p.grad

    def rms_step(self, lr: float, eps: float = 1e-8):
        """Gradient step with per-tensor RMS normalization.

        Stateless and momentum-free like plain GD, but each tensor moves at
        the learning rate regardless of its gradient scale; layers whose raw
        gradients differ by orders of magnitude train at comparable speed.
        The absolute eps keeps near-zero gradients from being amplified.
        """
        for p in self._params.values():
            if p.grad is not None:
                scale = float(np.sqrt(np.mean(p.grad * p.grad))) + eps
                p.data -= lr * p.grad / scale

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    # -- checkpoint format: one JSON document, name -> {shape, data b64 <f8} --

    def state_json(self) -> str:
        doc: dict = {"format_version": CHECKPOINT_FORMAT_VERSION}
        for name, p in self._params.items():
            doc[name] = {
                "shape": list(p.shape),
                "data": base64.b64encode(p.data.astype("<f8").tobytes()).decode("ascii"),
            }
        return json.dumps(doc, indent=0, sort_keys=True)

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.state_json())

    def load(self, path):
        """Load values into existing parameters; shapes must match."""
        with open(path) as f:
            doc = json.load(f)
        version = doc.pop("format_version", None)
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"checkpoint format_version {version!r} unsupported")
        missing = set(self._params) - set(doc)
        extra = set(doc) - set(self._params)
        if missing or extra:
            raise ValueError(
                f"checkpoint parameter mismatch: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        for name, entry in doc.items():
            shape = tuple(entry["shape"])
            raw = base64.b64decode(entry["data"])
            if len(raw) != 8 * int(np.prod(shape, dtype=np.int64)) and shape != ():
                raise ValueError(f"checkpoint entry {name!r}: data length does not match shape")
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"checkpoint entry {name!r}: non-finite values")
            p = self._params[name]
            if p.shape != shape:
                raise ShapeError(f"checkpoint entry {name!r}", p.shape, shape)
            p.data = arr.copy()


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------

def jacobian(f: Callable[[Tensor], Tensor], x) -> np.ndarray:
    """Exact Jacobian of a differentiable map R^3 -> R^3 at x.

    Row i is the gradient of output component i, obtained by one reverse
    pass per row with a one-hot seed.
    """
    x_arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if x_arr.shape != (3,):
        raise ShapeError("jacobian input", (3,), np.asarray(x).shape)
    xt = Tensor(x_arr, requires_grad=True, _op="jacobian-input")
    y = f(xt)
    if not isinstance(y, Tensor) or y.data.reshape(-1).shape != (3,):
        raise ShapeError("jacobian output", (3,), getattr(y, "shape", None))
    jac = np.zeros((3, 3))
    for i in range(3):
        y.zero_graph()
        seed = np.zeros_like(y.data)
        seed.reshape(-1)[i] = 1.0
        y.backward(seed)
        jac[i] = xt.grad.reshape(-1)
    return jac


def finite_diff_jacobian(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian estimate of an R^3 -> R^3 map (test oracle)."""
    if h <= 0:
        raise ValueError("finite_diff_jacobian: h must be positive")
    x_arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if x_arr.shape != (3,):
        raise ShapeError("finite_diff_jacobian input", (3,), np.asarray(x).shape)

    def call(v):
        out = f(Tensor(v))
        return (out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)).reshape(-1)

    jac = np.zeros((3, 3))
    for j in range(3):
        hi = x_arr.copy()
        lo = x_arr.copy()
        hi[j] += h
        lo[j] -= h
        jac[:, j] = (call(hi) - call(lo)) / (2.0 * h)
    return jac
