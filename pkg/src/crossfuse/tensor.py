"""Dense float tensors with taped reverse-mode differentiation.

The op set is deliberately small: elementwise add/mul, matmul, a pointwise
linear map, a causal depthwise 1-d convolution, layer norm, silu, softplus,
exp, and the shape ops (concat, slice, reshape, transpose, sum/mean
reductions). Domain modules that need a fused kernel register it through
``register_op`` instead of growing this file.

Values are immutable: every op returns a fresh ``Tensor`` and the backing
numpy buffers are marked read-only. Recording is explicit; ops executed
outside a ``Graph`` context run eagerly with no tape, which is the inference
path.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "GraphError",
    "ShapeError",
    "NondeterministicFunctionError",
    "GradCheckReport",
    "register_op",
    "op_forward",
    "backward",
    "grad_check",
    "constant",
    "parameter",
    "zeros",
    "ones",
    "add",
    "mul",
    "scale",
    "matmul",
    "linear",
    "conv1d_causal",
    "layer_norm",
    "silu",
    "softplus",
    "exp",
    "sigmoid",
    "concat",
    "narrow",
    "reshape",
    "transpose",
    "reduce_sum",
    "reduce_mean",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


class GraphError(RuntimeError):
    """Raised on misuse of the recording tape (empty graph, non-scalar loss)."""


class NondeterministicFunctionError(RuntimeError):
    """Raised by grad_check when two evaluations of f disagree bitwise."""


class Tensor:
    """An immutable dense float array (float32 by default).

    ``trainable`` tensors must carry a ``name``; gradient maps are keyed by
    that name. Data is stored C-contiguous and marked read-only, so a Tensor
    can be shared freely between graphs and threads.
    """

    __slots__ = ("data", "name", "trainable")

    def __init__(self, data, name: Optional[str] = None, trainable: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.flags.writeable:
            # Copy-free lock; callers hand over ownership of freshly built
            # arrays, and asarray above did not copy read-only inputs.
            arr.flags.writeable = False
        if trainable and not name:
            raise ValueError("trainable tensors must be named")
        self.data = arr
        self.name = name
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def to_numpy(self) -> np.ndarray:
        """Read-only view of the backing array."""
        return self.data

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), name=self.name, trainable=self.trainable)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{tag})"


def constant(value, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))


def parameter(value, name: str) -> Tensor:
    return Tensor(np.asarray(value), name=name, trainable=True)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def _const_like(t: Tensor, value) -> Tensor:
    return Tensor(np.asarray(value, dtype=t.dtype))


# ---------------------------------------------------------------------------
# Op registry and tape
# ---------------------------------------------------------------------------

# forward: (*arrays, **attrs) -> (out_array, ctx)
# backward: (ctx, grad_out) -> tuple of per-input gradients (None = no grad)
@dataclass(frozen=True)
class OpDef:
    kind: str
    forward: Callable
    backward: Callable


_OP_REGISTRY: dict[str, OpDef] = {}


def register_op(kind: str, forward: Callable, backward: Callable) -> None:
    """Add an op to the dispatch table. Re-registering a kind is an error."""
    if kind in _OP_REGISTRY:
        raise ValueError(f"op kind {kind!r} is already registered")
    _OP_REGISTRY[kind] = OpDef(kind, forward, backward)


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: dict


class Graph:
    """Recording tape: a list of op records in execution order.

    Use as a context manager; ops executed inside the ``with`` block are
    appended. A graph expects a single recording thread, but independent
    graphs on different threads do not interfere (the active-graph stack is
    thread-local).
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.parameters: dict[str, Tensor] = {}

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _graph_stack()
        if not stack or stack[-1] is not self:
            raise GraphError("graph context exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


_tls = threading.local()


def _graph_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_graph() -> Optional[Graph]:
    stack = _graph_stack()
    return stack[-1] if stack else None


def op_forward(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Execute one op, recording it on the active graph if there is one."""
    opdef = _OP_REGISTRY.get(kind)
    if opdef is None:
        raise KeyError(f"unknown op kind {kind!r}")
    for i, t in enumerate(inputs):
        if not isinstance(t, Tensor):
            raise TypeError(f"{kind}: input {i} is {type(t).__name__}, expected Tensor")
    arrays = [t.data for t in inputs]
    out_arr, ctx = opdef.forward(*arrays, **attrs)
    out = Tensor(out_arr)
    graph = _active_graph()
    if graph is not None:
        graph.nodes.append(Node(kind, tuple(inputs), out, ctx))
        for t in inputs:
            if t.trainable:
                graph.parameters.setdefault(t.name, t)
    return out


def backward(graph: Graph, loss: Tensor, parameters: Optional[Iterable[Tensor]] = None) -> dict[str, Tensor]:
    """Accumulate d(loss)/d(param) for every trainable parameter.

    Walks the tape once in reverse. Parameters that never touched the loss
    get explicit zero gradients (pass them via ``parameters`` if they may be
    absent from the graph entirely).
    """
    if not graph.nodes:
        raise GraphError("cannot run backward on an empty graph")
    if loss.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        in_grads = _OP_REGISTRY[node.kind].backward(node.ctx, g_out)
        if len(in_grads) != len(node.inputs):
            raise GraphError(f"{node.kind}: backward returned {len(in_grads)} grads for {len(node.inputs)} inputs")
        for t, g in zip(node.inputs, in_grads):
            if g is None:
                continue
            if g.shape != t.shape:
                raise GraphError(f"{node.kind}: gradient shape {g.shape} != input shape {t.shape}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    out: dict[str, Tensor] = {}
    for name, p in graph.parameters.items():
        g = grads.get(id(p))
        out[name] = Tensor(g) if g is not None else Tensor(np.zeros_like(p.data))
    if parameters is not None:
        for p in parameters:
            if p.trainable and p.name not in out:
                out[p.name] = Tensor(np.zeros_like(p.data))
    return out


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    per_param: dict[str, float] = field(default_factory=dict)

    def ok(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error < tol


def grad_check(f: Callable[[dict[str, Tensor]], Tensor], params: dict[str, Tensor], eps: float = 1e-5) -> GradCheckReport:
    """Compare taped gradients of a scalar function against central differences.

    The whole check runs in float64; ``f`` receives a dict of named trainable
    tensors and must return a scalar Tensor. ``f`` is evaluated twice up front
    and must reproduce its output bit for bit, otherwise the finite-difference
    baseline is meaningless and ``NondeterministicFunctionError`` is raised.

    Relative error per entry is |ga - gn| / max(|ga|, |gn|, 1e-8).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not params:
        raise ValueError("grad_check needs at least one parameter")
    p64 = {
        k: Tensor(v.data.astype(np.float64), name=k, trainable=True)
        for k, v in params.items()
    }

    y1 = f(dict(p64))
    y2 = f(dict(p64))
    if y1.size != 1:
        raise ShapeError(f"f must return a scalar, got shape {y1.shape}")
    if not np.array_equal(y1.data, y2.data):
        raise NondeterministicFunctionError(
            "two evaluations of f produced different outputs; "
            "finite differences require a deterministic function"
        )

    with Graph() as graph:
        y = f(dict(p64))
    analytic = backward(graph, y, parameters=p64.values())

    report = GradCheckReport(max_rel_error=0.0, worst_param="", worst_index=())
    for name, p in p64.items():
        ga = analytic[name].data
        gn = np.zeros_like(ga)
        base = np.array(p.data)
        for idx in np.ndindex(p.shape or (1,)):
            key = idx if p.shape else ()
            plus = base.copy()
            plus[key] += eps
            minus = base.copy()
            minus[key] -= eps
            trial = dict(p64)
            trial[name] = Tensor(plus, name=name, trainable=True)
            y_plus = f(trial).item()
            trial[name] = Tensor(minus, name=name, trainable=True)
            y_minus = f(trial).item()
            gn[key] = (y_plus - y_minus) / (2.0 * eps)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-8)
        rel = np.abs(ga - gn) / denom
        worst = float(rel.max()) if rel.size else 0.0
        report.per_param[name] = worst
        if worst > report.max_rel_error:
            flat = int(np.argmax(rel))
            report.max_rel_error = worst
            report.worst_param = name
            report.worst_index = np.unravel_index(flat, rel.shape) if rel.shape else ()
    return report


# ---------------------------------------------------------------------------
# Broadcasting helpers (leading-dimension expansion only)
# ---------------------------------------------------------------------------

def _check_suffix_broadcast(kind: str, sa: tuple, sb: tuple) -> tuple:
    """Allow equal shapes or one shape being a trailing suffix of the other."""
    if sa == sb:
        return sa
    if len(sa) > len(sb):
        big, small = sa, sb
    elif len(sb) > len(sa):
        big, small = sb, sa
    else:
        raise ShapeError(f"{kind}: shapes {sa} and {sb} do not match")
    if small != big[len(big) - len(small):]:
        raise ShapeError(
            f"{kind}: shape {small} is not a trailing suffix of {big}; "
            "only leading-dimension broadcasting is supported"
        )
    return big


def _reduce_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(extra)))


# ---------------------------------------------------------------------------
# Core op set
# ---------------------------------------------------------------------------

def _add_fwd(a, b):
    _check_suffix_broadcast("add", a.shape, b.shape)
    return a + b, {"sa": a.shape, "sb": b.shape}


def _add_bwd(ctx, g):
    return _reduce_to_shape(g, ctx["sa"]), _reduce_to_shape(g, ctx["sb"])


def _mul_fwd(a, b):
    _check_suffix_broadcast("mul", a.shape, b.shape)
    return a * b, {"a": a, "b": b}


def _mul_bwd(ctx, g):
    a, b = ctx["a"], ctx["b"]
    return _reduce_to_shape(g * b, a.shape), _reduce_to_shape(g * a, b.shape)


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return a @ b, {"a": a, "b": b}


def _matmul_bwd(ctx, g):
    a, b = ctx["a"], ctx["b"]
    return g @ b.T, a.T @ g


def _linear_fwd(x, w, b=None):
    if w.ndim != 2:
        raise ShapeError(f"linear: weight must be rank-2, got {w.shape}")
    if x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight {w.shape}")
    y = x @ w
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
        y = y + b
    return y, {"x": x, "w": w, "has_bias": b is not None}


def _linear_bwd(ctx, g):
    x, w = ctx["x"], ctx["w"]
    gx = g @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    gw = x2.T @ g2
    grads = [gx, gw]
    if ctx["has_bias"]:
        grads.append(g2.sum(axis=0))
    return tuple(grads)


def _conv1d_fwd(x, k, b=None):
    if x.ndim != 2:
        raise ShapeError(f"conv1d_causal: input must be (length, channels), got {x.shape}")
    if k.ndim != 2 or k.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1d_causal: kernel {k.shape} incompatible with input {x.shape}")
    length, channels = x.shape
    width = k.shape[0]
    xp = np.concatenate([np.zeros((width - 1, channels), dtype=x.dtype), x], axis=0)
    out = np.zeros((length, channels), dtype=x.dtype)
    # k[width-1] multiplies the current position; earlier taps reach back.
    for j in range(width):
        out += k[j] * xp[j:j + length]
    if b is not None:
        if b.shape != (channels,):
            raise ShapeError(f"conv1d_causal: bias shape {b.shape} != ({channels},)")
        out = out + b
    return out, {"xp": xp, "k": k, "length": length, "has_bias": b is not None}


def _conv1d_bwd(ctx, g):
    xp, k, length = ctx["xp"], ctx["k"], ctx["length"]
    width, channels = k.shape
    gk = np.empty_like(k)
    gxp = np.zeros_like(xp)
    for j in range(width):
        gk[j] = (g * xp[j:j + length]).sum(axis=0)
        gxp[j:j + length] += k[j] * g
    grads = [gxp[width - 1:], gk]
    if ctx["has_bias"]:
        grads.append(g.sum(axis=0))
    return tuple(grads)


def _layer_norm_fwd(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must be ({d},) for input {x.shape}"
        )
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    y = xhat * gamma + beta
    return y, {"xhat": xhat, "inv": inv, "gamma": gamma}


def _layer_norm_bwd(ctx, g):
    xhat, inv, gamma = ctx["xhat"], ctx["inv"], ctx["gamma"]
    gg = g * gamma
    axes = tuple(range(g.ndim - 1))
    dgamma = (g * xhat).sum(axis=axes)
    dbeta = g.sum(axis=axes)
    m1 = gg.mean(axis=-1, keepdims=True)
    m2 = (gg * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (gg - m1 - xhat * m2)
    return dx, dgamma, dbeta


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _silu_fwd(x):
    s = _sigmoid_np(x)
    return x * s, {"x": x, "s": s}


def _silu_bwd(ctx, g):
    x, s = ctx["x"], ctx["s"]
    return (g * (s + x * s * (1.0 - s)),)


def _softplus_fwd(x):
    return np.logaddexp(np.array(0.0, dtype=x.dtype), x), {"x": x}


def _softplus_bwd(ctx, g):
    return (g * _sigmoid_np(ctx["x"]),)


def _exp_fwd(x):
    y = np.exp(x)
    return y, {"y": y}


def _exp_bwd(ctx, g):
    return (g * ctx["y"],)


def _concat_fwd(*arrays, axis=0):
    if not arrays:
        raise ShapeError("concat: needs at least one input")
    rank = arrays[0].ndim
    for a in arrays:
        if a.ndim != rank:
            raise ShapeError(f"concat: rank mismatch between inputs ({[x.shape for x in arrays]})")
    if not -rank <= axis < rank:
        raise ShapeError(f"concat: axis {axis} out of range for rank {rank}")
    ax = axis % rank
    ref = list(arrays[0].shape)
    for a in arrays:
        s = list(a.shape)
        s[ax] = ref[ax]
        if s != ref:
            raise ShapeError(f"concat: shapes {[x.shape for x in arrays]} differ off axis {ax}")
    sizes = [a.shape[ax] for a in arrays]
    return np.concatenate(arrays, axis=ax), {"axis": ax, "sizes": sizes}


def _concat_bwd(ctx, g):
    splits = np.cumsum(ctx["sizes"])[:-1]
    return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=ctx["axis"]))


def _slice_fwd(x, axis=0, start=0, length=1):
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"slice: axis {axis} out of range for shape {x.shape}")
    ax = axis % x.ndim
    if start < 0 or length < 1 or start + length > x.shape[ax]:
        raise ShapeError(f"slice: window [{start}, {start + length}) exceeds axis {ax} of shape {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, start + length)
    return np.ascontiguousarray(x[tuple(idx)]), {"shape": x.shape, "axis": ax, "start": start, "length": length}


def _slice_bwd(ctx, g):
    out = np.zeros(ctx["shape"], dtype=g.dtype)
    idx = [slice(None)] * len(ctx["shape"])
    idx[ctx["axis"]] = slice(ctx["start"], ctx["start"] + ctx["length"])
    out[tuple(idx)] = g
    return (out,)


def _reshape_fwd(x, shape=()):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} ({x.size} elements) as {shape}")
    return x.reshape(shape), {"shape": x.shape}


def _reshape_bwd(ctx, g):
    return (g.reshape(ctx["shape"]),)


def _transpose_fwd(x, axes=()):
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} are not a permutation of rank {x.ndim}")
    return np.ascontiguousarray(x.transpose(axes)), {"axes": axes}


def _transpose_bwd(ctx, g):
    inverse = np.argsort(ctx["axes"])
    return (np.ascontiguousarray(g.transpose(tuple(inverse))),)


def _normalize_axis(x, axis):
    if axis is None:
        return tuple(range(x.ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -x.ndim <= a < x.ndim:
            raise ShapeError(f"reduction axis {a} out of range for shape {x.shape}")
        out.append(a % x.ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"duplicate reduction axes {axis}")
    return tuple(sorted(out))


def _expand_reduced(g, shape, axes):
    full = list(g.shape)
    for a in axes:
        full.insert(a, 1)
    return np.broadcast_to(g.reshape(full), shape)


def _sum_fwd(x, axis=None):
    axes = _normalize_axis(x, axis)
    return x.sum(axis=axes), {"shape": x.shape, "axes": axes}


def _sum_bwd(ctx, g):
    return (np.ascontiguousarray(_expand_reduced(g, ctx["shape"], ctx["axes"])),)


def _mean_fwd(x, axis=None):
    axes = _normalize_axis(x, axis)
    return x.mean(axis=axes), {"shape": x.shape, "axes": axes}


def _mean_bwd(ctx, g):
    n = 1
    for a in ctx["axes"]:
        n *= ctx["shape"][a]
    return (np.ascontiguousarray(_expand_reduced(g, ctx["shape"], ctx["axes"]) / n),)


register_op("add", _add_fwd, _add_bwd)
register_op("mul", _mul_fwd, _mul_bwd)
register_op("matmul", _matmul_fwd, _matmul_bwd)
register_op("linear", _linear_fwd, _linear_bwd)
register_op("conv1d_causal", _conv1d_fwd, _conv1d_bwd)
register_op("layer_norm", _layer_norm_fwd, _layer_norm_bwd)
register_op("silu", _silu_fwd, _silu_bwd)
register_op("softplus", _softplus_fwd, _softplus_bwd)
register_op("exp", _exp_fwd, _exp_bwd)
register_op("concat", _concat_fwd, _concat_bwd)
register_op("slice", _slice_fwd, _slice_bwd)
register_op("reshape", _reshape_fwd, _reshape_bwd)
register_op("transpose", _transpose_fwd, _transpose_bwd)
register_op("reduce_sum", _sum_fwd, _sum_bwd)
register_op("reduce_mean", _mean_fwd, _mean_bwd)


# ---------------------------------------------------------------------------
# Functional wrappers
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return op_forward("add", (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return op_forward("mul", (a, b))


def scale(x: Tensor, value: float) -> Tensor:
    """Multiply by a python scalar (wrapped as a constant of matching dtype)."""
    return op_forward("mul", (x, _const_like(x, value)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return op_forward("matmul", (a, b))


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    inputs = (x, w) if b is None else (x, w, b)
    return op_forward("linear", inputs)


def conv1d_causal(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return op_forward("conv1d_causal", inputs)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return op_forward("layer_norm", (x, gamma, beta), eps=eps)


def silu(x: Tensor) -> Tensor:
    return op_forward("silu", (x,))


def softplus(x: Tensor) -> Tensor:
    return op_forward("softplus", (x,))


def exp(x: Tensor) -> Tensor:
    return op_forward("exp", (x,))


def sigmoid(x: Tensor) -> Tensor:
    """Composed as exp(x - softplus(x)), which is stable for any x."""
    neg = scale(softplus(x), -1.0)
    return exp(add(x, neg))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return op_forward("concat", tuple(tensors), axis=axis)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    return op_forward("slice", (x,), axis=axis, start=start, length=length)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return op_forward("reshape", (x,), shape=tuple(shape))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    return op_forward("transpose", (x,), axes=tuple(axes))


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    return op_forward("reduce_sum", (x,), axis=axis)


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    return op_forward("reduce_mean", (x,), axis=axis)
