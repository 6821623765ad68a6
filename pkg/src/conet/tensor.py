"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Everything is float64 and eagerly evaluated: building an operation on a
:class:`CompGraph` computes its value immediately and records the node on a
tape, so ``backward`` is a single reverse sweep.  The op set is deliberately
small - matmul, conv1d/conv2d, a handful of elementwise kinds, pooling,
softmax and logsumexp - plus the structural helpers (transpose, reshape,
slicing out of concat) needed to wire pairwise-interaction layers that
cannot be written as compositions of the arithmetic kinds alone.

Tensors are immutable once attached to a graph.  Parameters live outside
graphs as plain numpy arrays; each forward pass binds them as trainable
leaves so distinct graphs can be evaluated in parallel.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class ConfigError(ValueError):
    """Raised for invalid structural configuration (e.g. even conv window)."""


class GraphError(RuntimeError):
    """Raised when a graph contract is violated (non-scalar loss, ...)."""


def _as_f64(values) -> np.ndarray:
    # always copy so freezing the tensor never freezes caller-owned arrays
    arr = np.array(values, dtype=np.float64, order="C")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor data must be finite (no NaN/Inf)")
    return arr


class Tensor:
    """Dense row-major float64 array bound to the graph that produced it."""

    __slots__ = ("data", "graph", "name", "trainable", "_node_index")

    def __init__(self, data: np.ndarray, graph: "CompGraph", name: str | None = None,
                 trainable: bool = False):
        if any(d <= 0 for d in data.shape):
            raise ShapeError(f"dimensions must be positive, got {data.shape}")
        self.data = data
        self.data.flags.writeable = False
        self.graph = graph
        self.name = name
        self.trainable = trainable
        self._node_index: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() requires a scalar tensor, shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = self.name or "tensor"
        return f"<Tensor {tag} shape={self.shape}>"


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor,
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.op = op
        self.inputs = list(inputs)
        self.output = output
        self.backward = backward


def _pooled_cells(n: int, out: int) -> list[tuple[int, int]]:
    # adaptive partition: cell i covers [floor(i*n/out), ceil((i+1)*n/out)), never empty
    return [(i * n // out, -(-((i + 1) * n) // out)) for i in range(out)]


class CompGraph:
    """Tape of eagerly evaluated operations over :class:`Tensor` values.

    A graph instance is single-threaded.  Leaves are either trainable
    parameters (named) or constants; ``backward`` returns gradients for the
    trainable leaves only.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: list[Tensor] = []
        self.params: dict[str, Tensor] = {}

    # ------------------------------------------------------------------ leaves

    def leaf(self, values, *, name: str | None = None, trainable: bool = False) -> Tensor:
        t = Tensor(_as_f64(values), self, name=name, trainable=trainable)
        self._leaves.append(t)
        if trainable:
            if not name:
                raise GraphError("trainable leaves must be named")
            if name in self.params:
                raise GraphError(f"duplicate parameter name {name!r}")
            self.params[name] = t
        return t

    def constant(self, values) -> Tensor:
        return self.leaf(values)

    def bind(self, params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        """Attach a parameter dict as trainable leaves, preserving names."""
        return {name: self.leaf(arr, name=name, trainable=True)
                for name, arr in params.items()}

    # --------------------------------------------------------------- registry

    def _register(self, op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
                  backward) -> Tensor:
        for t in inputs:
            if t.graph is not self:
                raise GraphError(f"input tensor belongs to a different graph ({op})")
        if not np.all(np.isfinite(out_data)):
            raise ValueError(f"operation {op} produced non-finite values")
        out = Tensor(np.ascontiguousarray(out_data, dtype=np.float64), self)
        node = _Node(op, inputs, out, backward)
        out._node_index = len(self._nodes)
        self._nodes.append(node)
        return out

    # -------------------------------------------------------------- operations

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ShapeError(f"matmul expects rank-2 tensors, got {a.shape} x {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
        out = a.data @ b.data

        def backward(g):
            return g @ b.data.T, a.data.T @ g

        return self._register("matmul", (a, b), out, backward)

    def transpose(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2:
            raise ShapeError(f"transpose expects a rank-2 tensor, got {x.shape}")
        return self._register("transpose", (x,), x.data.T.copy(),
                              lambda g: (g.T,))

    def reshape(self, x: Tensor, shape: Sequence[int]) -> Tensor:
        shape = tuple(int(s) for s in shape)
        if math.prod(shape) != x.size:
            raise ShapeError(f"cannot reshape {x.shape} to {shape}")
        old = x.shape
        return self._register("reshape", (x,), x.data.reshape(shape),
                              lambda g: (g.reshape(old),))

    def conv1d(self, seq: Tensor, kernel: Tensor, window: int) -> Tensor:
        """Same-padded 1-D convolution over the time axis.

        ``seq`` is [len, d], ``kernel`` is [k, d, d_out] with ``window == k``
        odd; the sequence is zero-padded by (k-1)/2 on each side.
        """
        if window % 2 == 0:
            raise ConfigError(f"conv1d window must be odd, got {window}")
        if seq.data.ndim != 2 or kernel.data.ndim != 3:
            raise ShapeError(f"conv1d expects seq [len,d], kernel [k,d,d_out]; "
                             f"got {seq.shape}, {kernel.shape}")
        k, d, d_out = kernel.shape
        if k != window:
            raise ConfigError(f"kernel leading dim {k} != window {window}")
        if seq.shape[1] != d:
            raise ShapeError(f"conv1d feature dims disagree: seq {seq.shape}, kernel {kernel.shape}")
        length = seq.shape[0]
        pad = (k - 1) // 2
        padded = np.zeros((length + 2 * pad, d))
        padded[pad:pad + length] = seq.data
        windows = np.stack([padded[i:i + k] for i in range(length)])  # [len, k, d]
        out = np.tensordot(windows, kernel.data, axes=([1, 2], [0, 1]))

        def backward(g):
            gk = np.tensordot(windows, g, axes=([0], [0]))           # [k, d, d_out]
            gw = np.tensordot(g, kernel.data, axes=([1], [2]))       # [len, k, d]
            gpad = np.zeros_like(padded)
            for i in range(length):
                gpad[i:i + k] += gw[i]
            return gpad[pad:pad + length], gk

        return self._register("conv1d", (seq, kernel), out, backward)

    def conv2d(self, x: Tensor, kernel: Tensor) -> Tensor:
        """Same-padded stride-1 2-D convolution; x [H,W,C_in], kernel [kh,kw,C_in,C_out]."""
        if x.data.ndim != 3 or kernel.data.ndim != 4:
            raise ShapeError(f"conv2d expects x [H,W,C], kernel [kh,kw,C,C_out]; "
                             f"got {x.shape}, {kernel.shape}")
        kh, kw, c_in, c_out = kernel.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
        if x.shape[2] != c_in:
            raise ShapeError(f"conv2d channel dims disagree: {x.shape} vs {kernel.shape}")
        h, w = x.shape[0], x.shape[1]
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        padded = np.zeros((h + 2 * ph, w + 2 * pw, c_in))
        padded[ph:ph + h, pw:pw + w] = x.data
        windows = np.empty((h, w, kh, kw, c_in))
        for i in range(h):
            for j in range(w):
                windows[i, j] = padded[i:i + kh, j:j + kw]
        out = np.tensordot(windows, kernel.data, axes=([2, 3, 4], [0, 1, 2]))

        def backward(g):
            gk = np.tensordot(windows, g, axes=([0, 1], [0, 1]))
            gw = np.tensordot(g, kernel.data, axes=([2], [3]))       # [H,W,kh,kw,C_in]
            gpad = np.zeros_like(padded)
            for i in range(h):
                for j in range(w):
                    gpad[i:i + kh, j:j + kw] += gw[i, j]
            return gpad[ph:ph + h, pw:pw + w], gk

        return self._register("conv2d", (x, kernel), out, backward)

    # elementwise family -----------------------------------------------------

    def tanh(self, x: Tensor) -> Tensor:
        out = np.tanh(x.data)
        return self._register("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))

    def sigmoid(self, x: Tensor) -> Tensor:
        out = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-x.data)),
                       np.exp(x.data) / (1.0 + np.exp(x.data)))
        return self._register("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))

    def relu(self, x: Tensor) -> Tensor:
        mask = x.data > 0
        return self._register("relu", (x,), np.where(mask, x.data, 0.0),
                              lambda g: (g * mask,))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
        return self._register("add", (a, b), a.data + b.data, lambda g: (g, g))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
        return self._register("mul", (a, b), a.data * b.data,
                              lambda g: (g * b.data, g * a.data))

    def scale(self, x: Tensor, c: float) -> Tensor:
        """x * c for a python scalar; sugar over mul with a constant."""
        return self.mul(x, self.constant(np.full(x.shape, float(c))))

    def concat(self, inputs: Sequence[Tensor], axis: int = 0) -> Tensor:
        if not inputs:
            raise ShapeError("concat needs at least one input")
        ndim = inputs[0].data.ndim
        for t in inputs:
            if t.data.ndim != ndim:
                raise ShapeError("concat inputs must share rank")
        out = np.concatenate([t.data for t in inputs], axis=axis)
        sizes = [t.shape[axis] for t in inputs]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            return tuple(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                         for i in range(len(inputs)))

        return self._register("concat", inputs, out, backward)

    def max_pool_over_time(self, x: Tensor) -> Tensor:
        """Reduce the time axis (axis 0) of [len, d] by max; ties go leftmost."""
        if x.data.ndim != 2:
            raise ShapeError(f"max_pool_over_time expects [len,d], got {x.shape}")
        idx = np.argmax(x.data, axis=0)
        out = x.data[idx, np.arange(x.shape[1])]

        def backward(g):
            gx = np.zeros_like(x.data)
            gx[idx, np.arange(x.shape[1])] = g
            return (gx,)

        return self._register("max_pool_over_time", (x,), out, backward)

    def mean_pool_over_time(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2:
            raise ShapeError(f"mean_pool_over_time expects [len,d], got {x.shape}")
        n = x.shape[0]
        return self._register("mean_pool_over_time", (x,), x.data.mean(axis=0),
                              lambda g: (np.tile(g / n, (n, 1)),))

    def max_pool_grid(self, x: Tensor, out_h: int, out_w: int) -> Tensor:
        """Adaptive per-channel max pooling of [H,W,C] onto a fixed [out_h,out_w,C] grid."""
        if x.data.ndim != 3:
            raise ShapeError(f"max_pool_grid expects [H,W,C], got {x.shape}")
        h, w, c = x.shape
        rows = _pooled_cells(h, out_h)
        cols = _pooled_cells(w, out_w)
        out = np.empty((out_h, out_w, c))
        argpos = np.empty((out_h, out_w, c, 2), dtype=np.int64)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                cell = x.data[r0:r1, c0:c1]                      # [rh, rw, C]
                flat = cell.reshape(-1, c)
                k = np.argmax(flat, axis=0)
                out[i, j] = flat[k, np.arange(c)]
                rw = c1 - c0
                argpos[i, j, :, 0] = r0 + k // rw
                argpos[i, j, :, 1] = c0 + k % rw

        def backward(g):
            gx = np.zeros_like(x.data)
            for i in range(out_h):
                for j in range(out_w):
                    np.add.at(gx, (argpos[i, j, :, 0], argpos[i, j, :, 1], np.arange(c)),
                              g[i, j])
            return (gx,)

        return self._register("max_pool_grid", (x,), out, backward)

    def softmax(self, x: Tensor, axis: int = -1) -> Tensor:
        shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / np.sum(e, axis=axis, keepdims=True)

        def backward(g):
            dot = np.sum(g * out, axis=axis, keepdims=True)
            return ((g - dot) * out,)

        return self._register("softmax", (x,), out, backward)

    def logsumexp(self, x: Tensor, axis: int | None = None) -> Tensor:
        """Overflow-safe log-sum-exp; axis=None reduces to a scalar of shape (1,)."""
        if axis is None:
            m = float(np.max(x.data))
            out = np.array([m + math.log(np.sum(np.exp(x.data - m)))])
            soft = np.exp(x.data - out[0])

            def backward(g):
                return (g[0] * soft,)
        else:
            m = np.max(x.data, axis=axis, keepdims=True)
            out = np.squeeze(m, axis=axis) + np.log(
                np.sum(np.exp(x.data - m), axis=axis))
            soft = np.exp(x.data - np.expand_dims(out, axis))

            def backward(g):
                return (np.expand_dims(g, axis) * soft,)

        return self._register("logsumexp", (x,), out, backward)

    def pairwise_tanh_scores(self, p: Tensor, q: Tensor, v: Tensor) -> Tensor:
        """scores[i,j] = v . tanh(p_i + q_j) for p [m,d], q [l,d], v [d,1].

        The pairwise outer sum cannot be composed from the broadcast-free op
        set, so it is a first-class node with an analytic backward.
        """
        if p.data.ndim != 2 or q.data.ndim != 2 or p.shape[1] != q.shape[1]:
            raise ShapeError(f"pairwise_tanh_scores expects [m,d] and [l,d], "
                             f"got {p.shape}, {q.shape}")
        if v.shape != (p.shape[1], 1):
            raise ShapeError(f"v must be [{p.shape[1]},1], got {v.shape}")
        t = np.tanh(p.data[:, None, :] + q.data[None, :, :])     # [m,l,d]
        out = t @ v.data[:, 0]                                   # [m,l]

        def backward(g):
            inner = (1.0 - t * t) * v.data[:, 0]                 # [m,l,d]
            gp = np.einsum("ml,mld->md", g, inner)
            gq = np.einsum("ml,mld->ld", g, inner)
            gv = np.einsum("ml,mld->d", g, t)[:, None]
            return gp, gq, gv

        return self._register("pairwise_tanh_scores", (p, q, v), out, backward)

    def custom(self, op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
               backward) -> Tensor:
        """Register a composite node with a caller-supplied analytic backward."""
        return self._register(op, inputs, out_data, backward)

    def elementwise(self, kind: str, *inputs: Tensor, axis: int | None = None) -> Tensor:
        """Dispatch by kind name; the supported elementwise/pooling family."""
        unary = {"tanh": self.tanh, "sigmoid": self.sigmoid, "relu": self.relu,
                 "max_pool_over_time": self.max_pool_over_time,
                 "mean_pool_over_time": self.mean_pool_over_time}
        if kind in unary:
            (x,) = inputs
            return unary[kind](x)
        if kind == "add":
            a, b = inputs
            return self.add(a, b)
        if kind == "mul":
            a, b = inputs
            return self.mul(a, b)
        if kind == "concat":
            return self.concat(inputs, axis=0 if axis is None else axis)
        if kind == "softmax":
            (x,) = inputs
            return self.softmax(x, axis=-1 if axis is None else axis)
        if kind == "logsumexp":
            (x,) = inputs
            return self.logsumexp(x, axis=axis)
        raise ConfigError(f"unsupported elementwise kind {kind!r}")

    # ---------------------------------------------------------------- backward

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Reverse sweep from a scalar loss; returns grads for trainable leaves."""
        if loss.graph is not self:
            raise GraphError("loss tensor belongs to a different graph")
        if loss.size != 1:
            raise GraphError(f"backward requires a scalar loss, shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
        for node in reversed(self._nodes):
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            in_grads = node.backward(g_out)
            for t, g in zip(node.inputs, in_grads):
                if g is None:
                    continue
                if g.shape != t.shape:
                    raise GraphError(f"gradient shape {g.shape} != value shape "
                                     f"{t.shape} in op {node.op}")
                acc = grads.get(id(t))
                grads[id(t)] = g if acc is None else acc + g
        out = {}
        for name, leaf in self.params.items():
            g = grads.get(id(leaf))
            out[name] = np.zeros(leaf.shape) if g is None else g
            if not np.all(np.isfinite(out[name])):
                raise ValueError(f"non-finite gradient for parameter {name!r}")
        return out


# --------------------------------------------------------------------- helpers


def glorot(rng: np.random.Generator, shape: Sequence[int],
           fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    """Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out))."""
    shape = tuple(shape)
    if fan_in is None:
        fan_in = shape[0] if len(shape) > 1 else shape[0]
    if fan_out is None:
        fan_out = shape[-1]
    r = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             lr: float) -> dict[str, np.ndarray]:
    """One deterministic SGD update: p <- p - lr * g."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        out[name] = p.copy() if g is None else p - lr * g
    return out


def grad_check(build: Callable[[CompGraph, dict[str, Tensor]], Tensor],
               params: Mapping[str, np.ndarray], eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``build`` constructs the loss on a fresh graph from bound parameter
    leaves; it is called repeatedly with perturbed copies, so no caller
    state is mutated.
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    g = CompGraph()
    leaves = g.bind(base)
    loss = build(g, leaves)
    analytic = g.backward(loss)

    def eval_loss(p):
        fg = CompGraph()
        return build(fg, fg.bind(p)).item()

    worst = 0.0
    for name, arr in base.items():
        flat = arr.reshape(-1)
        for i in range(flat.size):
            bumped = {k: v.copy() for k, v in base.items()}
            bumped[name].reshape(-1)[i] = flat[i] + eps
            hi = eval_loss(bumped)
            bumped[name].reshape(-1)[i] = flat[i] - eps
            lo = eval_loss(bumped)
            num = (hi - lo) / (2.0 * eps)
            ana = analytic[name].reshape(-1)[i]
            denom = max(abs(ana), abs(num), 1.0e-2)
            err = abs(ana - num) / denom
            if abs(ana) < 1e-12 and abs(num) < 1e-12:
                err = 0.0
            worst = max(worst, err)
    return worst


# ------------------------------------------------------------------ checkpoint

CHECKPOINT_FORMAT = "conet-params-v1"


def save_params(path, params: Mapping[str, np.ndarray],
                header: Mapping | None = None) -> None:
    """Write parameters as canonical JSON: name -> {shape, flat row-major data}."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "header": dict(header or {}),
        "params": {
            name: {"shape": list(arr.shape),
                   "data": [float(x) for x in np.asarray(arr, dtype=np.float64).reshape(-1)]}
            for name, arr in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unknown checkpoint format {payload.get('format')!r}")
    params = {}
    for name, rec in payload["params"].items():
        shape = tuple(rec["shape"])
        arr = np.array(rec["data"], dtype=np.float64).reshape(shape)
        params[name] = arr
    return params, payload.get("header", {})
