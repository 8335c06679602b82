"""Selective state-space scan and the gated residual blocks built on it.

The continuous system per channel is h'(t) = A h(t) + B x(t), y = W h'(t)
with a diagonal A. Discretization is zero-order hold on A and an Euler step
on B:

    A_bar = exp(delta * A)        (elementwise)
    B_bar = delta * B

Selectivity: B and delta are linear functions of the current token, A and
the output map W are input-independent. A is parameterized as -exp(a_log)
so it stays strictly negative, and delta goes through a softplus so it
stays strictly positive; together these keep |A_bar| < 1 and the recurrence
stable regardless of parameter values.

The full-sequence recurrence is exposed both as ``selective_scan`` (a single
registered graph op with an analytic adjoint, so the tape stays small) and
as ``scan_step`` (one token at a time, for streaming inference).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, register_op

__all__ = [
    "SSMParams",
    "SSMState",
    "MambaBlockParams",
    "discretize",
    "scan_step",
    "scan_sequence",
    "selective_scan",
    "init_ssm",
    "init_block",
    "block_forward",
    "stack_forward",
    "default_dt_rank",
]

SCAN_OP = "ssm_scan"


def default_dt_rank(dim: int) -> int:
    """Low-rank width of the delta projection, ceil(dim / 16) with a floor of 1."""
    return max(1, math.ceil(dim / 16))


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class SSMParams:
    """Per-channel diagonal SSM with input-dependent B and delta.

    Shapes, for ``channels`` C, ``state_size`` N and delta rank R:

        a_log    (C, N)   A = -exp(a_log)
        w_b      (C, N)   B_t = x_t @ w_b
        dt_down  (C, R)   delta_t = softplus(x_t @ dt_down @ dt_up + dt_bias)
        dt_up    (R, C)
        dt_bias  (C,)
        w_out    (C, N)   y_t[c] = sum_n w_out[c, n] * h_t[c, n]
    """

    a_log: Tensor
    w_b: Tensor
    dt_down: Tensor
    dt_up: Tensor
    dt_bias: Tensor
    w_out: Tensor

    def __post_init__(self):
        c, n = self.a_log.shape
        r = self.dt_down.shape[1] if self.dt_down.ndim == 2 else -1
        checks = {
            "a_log": (self.a_log.shape, (c, n)),
            "w_b": (self.w_b.shape, (c, n)),
            "dt_down": (self.dt_down.shape, (c, r)),
            "dt_up": (self.dt_up.shape, (r, c)),
            "dt_bias": (self.dt_bias.shape, (c,)),
            "w_out": (self.w_out.shape, (c, n)),
        }
        for field, (got, want) in checks.items():
            if got != want:
                raise ShapeError(f"SSMParams.{field}: shape {got}, expected {want}")

    @property
    def channels(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_size(self) -> int:
        return self.a_log.shape[1]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.A_log": self.a_log,
            f"{prefix}.w_b": self.w_b,
            f"{prefix}.dt_down": self.dt_down,
            f"{prefix}.dt_up": self.dt_up,
            f"{prefix}.dt_bias": self.dt_bias,
            f"{prefix}.w_out": self.w_out,
        }


@dataclass
class SSMState:
    """Hidden state h, one (channels, state_size) matrix."""

    h: Tensor

    @classmethod
    def zeros(cls, channels: int, state_size: int, dtype=np.float32) -> "SSMState":
        return cls(Tensor(np.zeros((channels, state_size), dtype=dtype)))


# ---------------------------------------------------------------------------
# Discretization and the scan kernels
# ---------------------------------------------------------------------------

def discretize(a, b, delta):
    """Map continuous (A, B) to one-step (A_bar, B_bar) for step size delta.

    Accepts numpy arrays (or scalars): ``a`` of shape (C, N), ``delta`` scalar
    or (C,), ``b`` scalar or (N,). Returns arrays shaped like ``a``. delta
    must be strictly positive everywhere.
    """
    a = np.asarray(a, dtype=np.float64) if not isinstance(a, np.ndarray) else a
    b = np.asarray(b, dtype=a.dtype)
    delta = np.asarray(delta, dtype=a.dtype)
    if np.any(delta <= 0):
        raise ValueError(f"discretize: delta must be positive, min was {delta.min()}")
    d_col = delta if delta.ndim == 0 else delta[..., None]
    a_bar = np.exp(d_col * a)
    b_bar = d_col * b
    return a_bar, np.broadcast_to(b_bar, a_bar.shape).copy()


def _scan_fwd(x, delta, b_seq, a, state0):
    length, channels = x.shape
    n = a.shape[1]
    if delta.shape != (length, channels):
        raise ShapeError(f"ssm_scan: delta shape {delta.shape} != {(length, channels)}")
    if b_seq.shape != (length, n):
        raise ShapeError(f"ssm_scan: B sequence shape {b_seq.shape} != {(length, n)}")
    if a.shape != (channels, n):
        raise ShapeError(f"ssm_scan: A shape {a.shape} != {(channels, n)}")
    if state0.shape != (channels, n):
        raise ShapeError(f"ssm_scan: initial state shape {state0.shape} != {(channels, n)}")
    d_a = np.exp(delta[:, :, None] * a[None])              # (L, C, N)
    d_bx = (delta * x)[:, :, None] * b_seq[:, None, :]     # (L, C, N)
    h_all = np.empty((length, channels, n), dtype=x.dtype)
    h = state0
    for t in range(length):
        h = d_a[t] * h + d_bx[t]
        h_all[t] = h
    ctx = {"x": x, "delta": delta, "b_seq": b_seq, "a": a,
           "state0": state0, "d_a": d_a, "h_all": h_all}
    return h_all, ctx


def _scan_bwd(ctx, g):
    x, delta, b_seq, a = ctx["x"], ctx["delta"], ctx["b_seq"], ctx["a"]
    state0, d_a, h_all = ctx["state0"], ctx["d_a"], ctx["h_all"]
    length = x.shape[0]
    g_da = np.empty_like(d_a)
    g_dbx = np.empty_like(d_a)
    acc = np.zeros_like(state0)
    for t in range(length - 1, -1, -1):
        acc = acc + g[t]
        h_prev = h_all[t - 1] if t > 0 else state0
        g_da[t] = acc * h_prev
        g_dbx[t] = acc
        acc = d_a[t] * acc
    g_state0 = acc
    dx_delta = delta * x
    g_delta = (g_da * d_a * a[None]).sum(axis=-1) + (g_dbx * b_seq[:, None, :]).sum(axis=-1) * x
    g_x = (g_dbx * b_seq[:, None, :]).sum(axis=-1) * delta
    g_b = (g_dbx * dx_delta[:, :, None]).sum(axis=1)
    g_a = (g_da * d_a * delta[:, :, None]).sum(axis=0)
    return g_x, g_delta, g_b, g_a, g_state0


register_op(SCAN_OP, _scan_fwd, _scan_bwd)


def selective_scan(x: Tensor, delta: Tensor, b_seq: Tensor, a: Tensor, state0: Tensor) -> Tensor:
    """All hidden states of h_t = exp(delta_t A) h_{t-1} + delta_t B_t x_t.

    Args:
        x:      (L, C) input tokens.
        delta:  (L, C) positive step sizes.
        b_seq:  (L, N) per-token input maps.
        a:      (C, N) diagonal continuous A (negative for stability).
        state0: (C, N) initial hidden state (h_0).

    Returns:
        (L, C, N) tensor of h_1..h_L.
    """
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"selective_scan: tokens must be (length >= 1, channels), got {x.shape}")
    return T.op_forward(SCAN_OP, (x, delta, b_seq, a, state0))


def _project_delta(params: SSMParams, tokens: Tensor) -> Tensor:
    low = T.matmul(tokens, params.dt_down)
    pre = T.add(T.matmul(low, params.dt_up), params.dt_bias)
    return T.softplus(pre)


def scan_sequence(params: SSMParams, tokens: Tensor, state0: Optional[SSMState] = None) -> tuple[Tensor, SSMState]:
    """Run the selective scan over a whole token sequence.

    Returns per-token outputs (L, C) and the final hidden state. Identical
    (to float32 roundoff) to folding ``scan_step`` over the sequence.
    """
    if tokens.ndim != 2:
        raise ShapeError(f"scan_sequence: tokens must be rank-2, got shape {tokens.shape}")
    length, channels = tokens.shape
    if length < 1:
        raise ShapeError("scan_sequence: empty sequence")
    if channels != params.channels:
        raise ShapeError(f"scan_sequence: tokens have {channels} channels, params expect {params.channels}")
    if state0 is None:
        state0 = SSMState.zeros(channels, params.state_size, dtype=tokens.dtype)
    if state0.h.shape != (channels, params.state_size):
        raise ShapeError(f"scan_sequence: state shape {state0.h.shape} != {(channels, params.state_size)}")

    b_seq = T.matmul(tokens, params.w_b)                     # (L, N)
    delta = _project_delta(params, tokens)                   # (L, C)
    a = T.scale(T.exp(params.a_log), -1.0)                   # (C, N)
    h_all = selective_scan(tokens, delta, b_seq, a, state0.h)
    y = T.reduce_sum(T.mul(h_all, params.w_out), axis=-1)    # (L, C)
    last = T.reshape(T.narrow(h_all, 0, length - 1, 1), (channels, params.state_size))
    return y, SSMState(last)


def scan_step(params: SSMParams, x_t: Tensor, state: SSMState) -> tuple[Tensor, SSMState]:
    """Advance the scan by a single token. Pure inference; never recorded.

    Args:
        x_t:   (C,) one token.
        state: current hidden state.

    Returns:
        (y_t, new_state) with y_t of shape (C,).
    """
    if x_t.shape != (params.channels,):
        raise ShapeError(f"scan_step: token shape {x_t.shape} != ({params.channels},)")
    if state.h.shape != (params.channels, params.state_size):
        raise ShapeError(
            f"scan_step: state shape {state.h.shape} != {(params.channels, params.state_size)}"
        )
    x = x_t.data
    b_t = x @ params.w_b.data                                          # (N,)
    pre = (x @ params.dt_down.data) @ params.dt_up.data + params.dt_bias.data
    delta_t = np.logaddexp(np.array(0.0, dtype=pre.dtype), pre)        # (C,)
    a = -np.exp(params.a_log.data)
    a_bar, b_bar = discretize(a, b_t, delta_t)
    h_new = a_bar * state.h.data + b_bar * x[:, None]
    y = (params.w_out.data * h_new).sum(axis=-1)
    return Tensor(y), SSMState(Tensor(h_new))


# ---------------------------------------------------------------------------
# Gated residual block
# ---------------------------------------------------------------------------

@dataclass
class MambaBlockParams:
    """Pre-norm gated SSM block.

    Forward, for tokens u of width d and inner width e = expand * d:

        n   = layer_norm(u)
        a   = n @ in_w                    (d -> e, no bias)
        c   = causal depthwise conv(a) + conv_b
        s   = silu(c)
        y   = SSM(s)                      (selective scan at width e)
        g   = silu(n @ gate_w)            (d -> e, no bias)
        out = u + (y * g) @ out_w + out_b  (e -> d)

    ``out_w``/``out_b`` start at zero, so a fresh block is the identity.
    """

    norm_gamma: Tensor
    norm_beta: Tensor
    in_w: Tensor
    conv_k: Tensor
    conv_b: Tensor
    gate_w: Tensor
    ssm: SSMParams
    out_w: Tensor
    out_b: Tensor

    def __post_init__(self):
        d, e = self.in_w.shape
        if self.norm_gamma.shape != (d,) or self.norm_beta.shape != (d,):
            raise ShapeError(f"block norm params must be ({d},)")
        if self.gate_w.shape != (d, e):
            raise ShapeError(f"block gate_w shape {self.gate_w.shape} != {(d, e)}")
        if self.conv_k.ndim != 2 or self.conv_k.shape[1] != e:
            raise ShapeError(f"block conv kernel shape {self.conv_k.shape} incompatible with inner width {e}")
        if self.conv_b.shape != (e,):
            raise ShapeError(f"block conv bias shape {self.conv_b.shape} != ({e},)")
        if self.ssm.channels != e:
            raise ShapeError(f"block ssm channels {self.ssm.channels} != inner width {e}")
        if self.out_w.shape != (e, d) or self.out_b.shape != (d,):
            raise ShapeError(f"block out projection must map {e} -> {d}")

    @property
    def dim(self) -> int:
        return self.in_w.shape[0]

    @property
    def inner_dim(self) -> int:
        return self.in_w.shape[1]

    @property
    def conv_kernel(self) -> int:
        return self.conv_k.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}.norm.gamma": self.norm_gamma,
            f"{prefix}.norm.beta": self.norm_beta,
            f"{prefix}.in_proj.w": self.in_w,
            f"{prefix}.conv.w": self.conv_k,
            f"{prefix}.conv.b": self.conv_b,
            f"{prefix}.gate.w": self.gate_w,
            f"{prefix}.out_proj.w": self.out_w,
            f"{prefix}.out_proj.b": self.out_b,
        }
        out.update(self.ssm.named(f"{prefix}.ssm"))
        return out


def init_ssm(
    rng: np.random.Generator,
    channels: int,
    state_size: int = 16,
    dt_rank: Optional[int] = None,
    dt_min: float = 1e-3,
    dt_max: float = 1e-1,
    prefix: str = "ssm",
) -> SSMParams:
    """Seeded init. -A spans 1..state_size per channel so decay rates are
    spread, and softplus(dt_bias) lands log-uniform in [dt_min, dt_max]."""
    if channels < 1 or state_size < 1:
        raise ValueError(f"channels={channels} and state_size={state_size} must be >= 1")
    r = dt_rank if dt_rank is not None else default_dt_rank(channels)
    a_log = np.tile(np.log(np.arange(1, state_size + 1, dtype=np.float32)), (channels, 1))
    w_b = rng.normal(0.0, channels ** -0.5, size=(channels, state_size)).astype(np.float32)
    dt_down = rng.normal(0.0, channels ** -0.5, size=(channels, r)).astype(np.float32)
    bound = r ** -0.5
    dt_up = rng.uniform(-bound, bound, size=(r, channels)).astype(np.float32)
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=channels))
    dt_bias = np.log(np.expm1(dt)).astype(np.float32)  # softplus inverse
    w_out = rng.normal(0.0, state_size ** -0.5, size=(channels, state_size)).astype(np.float32)

    def p(name, arr):
        return Tensor(arr, name=f"{prefix}.{name}", trainable=True)

    return SSMParams(
        a_log=p("A_log", a_log),
        w_b=p("w_b", w_b),
        dt_down=p("dt_down", dt_down),
        dt_up=p("dt_up", dt_up),
        dt_bias=p("dt_bias", dt_bias),
        w_out=p("w_out", w_out),
    )


def init_block(
    rng: np.random.Generator,
    dim: int,
    state_size: int = 16,
    conv_kernel: int = 4,
    expand: int = 2,
    dt_rank: Optional[int] = None,
    prefix: str = "block",
) -> MambaBlockParams:
    if dim < 1:
        raise ValueError(f"block dim must be >= 1, got {dim}")
    inner = expand * dim
    rank = dt_rank if dt_rank is not None else default_dt_rank(dim)

    def p(name, arr):
        return Tensor(arr, name=f"{prefix}.{name}", trainable=True)

    in_w = rng.normal(0.0, dim ** -0.5, size=(dim, inner)).astype(np.float32)
    gate_w = rng.normal(0.0, dim ** -0.5, size=(dim, inner)).astype(np.float32)
    kb = conv_kernel ** -0.5
    conv_k = rng.uniform(-kb, kb, size=(conv_kernel, inner)).astype(np.float32)
    ssm = init_ssm(rng, inner, state_size=state_size, dt_rank=rank, prefix=f"{prefix}.ssm")
    return MambaBlockParams(
        norm_gamma=p("norm.gamma", np.ones(dim, dtype=np.float32)),
        norm_beta=p("norm.beta", np.zeros(dim, dtype=np.float32)),
        in_w=p("in_proj.w", in_w),
        conv_k=p("conv.w", conv_k),
        conv_b=p("conv.b", np.zeros(inner, dtype=np.float32)),
        gate_w=p("gate.w", gate_w),
        ssm=ssm,
        out_w=p("out_proj.w", np.zeros((inner, dim), dtype=np.float32)),
        out_b=p("out_proj.b", np.zeros(dim, dtype=np.float32)),
    )


def block_forward(block: MambaBlockParams, tokens: Tensor) -> Tensor:
    """Apply one gated SSM block; shape-preserving (L, d) -> (L, d)."""
    if tokens.ndim != 2 or tokens.shape[1] != block.dim:
        raise ShapeError(f"block_forward: tokens shape {tokens.shape} incompatible with block dim {block.dim}")
    n = T.layer_norm(tokens, block.norm_gamma, block.norm_beta)
    a = T.matmul(n, block.in_w)
    c = T.conv1d_causal(a, block.conv_k, block.conv_b)
    s = T.silu(c)
    y, _ = scan_sequence(block.ssm, s)
    g = T.silu(T.matmul(n, block.gate_w))
    mixed = T.mul(y, g)
    out = T.linear(mixed, block.out_w, block.out_b)
    return T.add(tokens, out)


def stack_forward(blocks: Sequence[MambaBlockParams], tokens: Tensor) -> tuple[Tensor, list[Tensor]]:
    """Compose blocks in order; also returns every layer's output tokens."""
    if not blocks:
        raise ValueError("stack_forward: need at least one block")
    outputs = []
    x = tokens
    for block in blocks:
        x = block_forward(block, x)
        outputs.append(x)
    return x, outputs
