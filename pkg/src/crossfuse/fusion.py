"""Multi-head hierarchical patch fusion for cross-spectral feature pairs.

One fusion stage takes an RGB/thermal feature-map pair (H, W, C), adds
learned positional and modality embeddings, and runs K parallel heads. Head
k space-to-depth patches both maps at its own patch size S_k, interleave-
flattens the pair into a token sequence, projects tokens down to C/K, and
runs a stack of gated SSM blocks over them. The head's token outputs are
projected back up, un-flattened, and residually added to its patched
inputs. After de-patching, head outputs are concatenated channelwise and a
zero-initialized pointwise aggregation projects K*C back to C, which is
residually added to the original (un-embedded) inputs. A fresh stage is
therefore the identity map.

An optional carry token per head is prepended before the block stack (the
temporal module threads it between frames); its output position is dropped
before the up-projection, and the stack's last-position output is handed
back so the caller can extract the next carry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .interleave import build_layout, ocf_flatten, ocf_unflatten
from .ssm import MambaBlockParams, init_block, stack_forward
from .tensor import ShapeError, Tensor

__all__ = [
    "patch",
    "unpatch",
    "EmbeddingSet",
    "HeadParams",
    "StageConfig",
    "StageParams",
    "StageResult",
    "init_stage",
    "add_embeddings",
    "stage_forward",
]


def patch(x: Tensor, size: int) -> Tensor:
    """Space-to-depth: (H, W, C) -> (H/size, W/size, C*size^2).

    Within each block the layout is block-row-major with the original
    channels fastest, i.e. new channel index = (si*size + sj)*C + c.
    size=1 is the identity.
    """
    if x.ndim != 3:
        raise ShapeError(f"patch: input must be (H, W, C), got {x.shape}")
    h, w, c = x.shape
    if size < 1:
        raise ValueError(f"patch size must be >= 1, got {size}")
    if h % size or w % size:
        raise ShapeError(f"patch: size {size} does not divide map {h}x{w}")
    if size == 1:
        return x
    hb, wb = h // size, w // size
    t = T.reshape(x, (hb, size, wb, size, c))
    t = T.transpose(t, (0, 2, 1, 3, 4))
    return T.reshape(t, (hb, wb, size * size * c))


def unpatch(x: Tensor, size: int) -> Tensor:
    """Inverse of ``patch``: (h, w, C*size^2) -> (h*size, w*size, C)."""
    if x.ndim != 3:
        raise ShapeError(f"unpatch: input must be rank-3, got {x.shape}")
    hb, wb, packed = x.shape
    if size < 1:
        raise ValueError(f"patch size must be >= 1, got {size}")
    if packed % (size * size):
        raise ShapeError(f"unpatch: channel count {packed} is not divisible by {size}^2")
    if size == 1:
        return x
    c = packed // (size * size)
    t = T.reshape(x, (hb, wb, size, size, c))
    t = T.transpose(t, (0, 2, 1, 3, 4))
    return T.reshape(t, (hb * size, wb * size, c))


@dataclass
class EmbeddingSet:
    """Learned embeddings added before patching: a positional map shared by
    both spectra plus one per-modality channel vector."""

    pos: Tensor      # (H, W, C)
    rgb: Tensor      # (C,)
    thermal: Tensor  # (C,)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.pos": self.pos,
            f"{prefix}.rgb": self.rgb,
            f"{prefix}.thermal": self.thermal,
        }


@dataclass
class HeadParams:
    patch_size: int
    w_in: Tensor                      # (C * S^2, head_dim), no bias
    blocks: list[MambaBlockParams]
    out_w: Tensor                     # (head_dim, C * S^2)
    out_b: Tensor                     # (C * S^2,)

    @property
    def head_dim(self) -> int:
        return self.w_in.shape[1]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}.w_in": self.w_in,
            f"{prefix}.out_linear.w": self.out_w,
            f"{prefix}.out_linear.b": self.out_b,
        }
        for i, b in enumerate(self.blocks):
            out.update(b.named(f"{prefix}.layer{i}"))
        return out


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class StageConfig:
    """Static description of one fusion stage.

    ``patch_sizes`` has one entry per head; every entry must be a power of
    two dividing both spatial dims, and channels must split evenly over
    heads (head width is channels // heads).
    """

    name: str
    height: int
    width: int
    channels: int
    heads: int
    patch_sizes: tuple[int, ...]
    layers: int
    state_size: int = 16
    conv_kernel: int = 4
    expand: int = 2
    dt_rank: Optional[int] = None

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ValueError(f"{self.name}: degenerate stage dims {self.height}x{self.width}x{self.channels}")
        if self.heads < 1:
            raise ValueError(f"{self.name}: need at least one head")
        if len(self.patch_sizes) != self.heads:
            raise ValueError(
                f"{self.name}: {self.heads} heads but {len(self.patch_sizes)} patch sizes"
            )
        if self.channels % self.heads:
            raise ValueError(f"{self.name}: channels {self.channels} not divisible by heads {self.heads}")
        if self.layers < 1:
            raise ValueError(f"{self.name}: need at least one layer")
        for s in self.patch_sizes:
            if not _is_power_of_two(s):
                raise ValueError(f"{self.name}: patch size {s} is not a power of two")
            if self.height % s or self.width % s:
                raise ValueError(f"{self.name}: patch size {s} does not divide {self.height}x{self.width}")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    def token_count(self, head: int) -> int:
        s = self.patch_sizes[head]
        return 2 * (self.height // s) * (self.width // s)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "heads": self.heads,
            "patch_sizes": list(self.patch_sizes),
            "layers": self.layers,
            "state_size": self.state_size,
            "conv_kernel": self.conv_kernel,
            "expand": self.expand,
            "dt_rank": self.dt_rank,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageConfig":
        return cls(
            name=d["name"],
            height=d["height"],
            width=d["width"],
            channels=d["channels"],
            heads=d["heads"],
            patch_sizes=tuple(d["patch_sizes"]),
            layers=d["layers"],
            state_size=d.get("state_size", 16),
            conv_kernel=d.get("conv_kernel", 4),
            expand=d.get("expand", 2),
            dt_rank=d.get("dt_rank"),
        )


@dataclass
class StageParams:
    config: StageConfig
    embeddings: EmbeddingSet
    heads: list[HeadParams]
    agg_w: Tensor  # (heads * C, C), zero at init
    agg_b: Tensor  # (C,), zero at init

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.embeddings.named(f"{prefix}.emb")
        for i, h in enumerate(self.heads):
            out.update(h.named(f"{prefix}.head{i}"))
        out[f"{prefix}.agg.w"] = self.agg_w
        out[f"{prefix}.agg.b"] = self.agg_b
        return out


@dataclass
class StageResult:
    rgb: Tensor
    thermal: Tensor
    # Final-layer token outputs per head, carry position included when one
    # was prepended; the last row is the next carry token.
    head_tokens: list[Tensor] = field(default_factory=list)


def init_stage(config: StageConfig, rng: np.random.Generator, prefix: Optional[str] = None) -> StageParams:
    """Build seeded stage parameters. The aggregation is zeroed, making the
    whole stage an exact identity until training moves it."""
    pre = prefix if prefix is not None else config.name
    c = config.channels
    d = config.head_dim

    def p(name, arr):
        return Tensor(arr, name=f"{pre}.{name}", trainable=True)

    emb = EmbeddingSet(
        pos=p("emb.pos", rng.normal(0.0, 0.02, size=(config.height, config.width, c)).astype(np.float32)),
        rgb=p("emb.rgb", rng.normal(0.0, 0.02, size=c).astype(np.float32)),
        thermal=p("emb.thermal", rng.normal(0.0, 0.02, size=c).astype(np.float32)),
    )
    heads = []
    for i, s in enumerate(config.patch_sizes):
        packed = c * s * s
        w_in = rng.normal(0.0, packed ** -0.5, size=(packed, d)).astype(np.float32)
        out_w = rng.normal(0.0, d ** -0.5, size=(d, packed)).astype(np.float32)
        blocks = [
            init_block(
                rng,
                d,
                state_size=config.state_size,
                conv_kernel=config.conv_kernel,
                expand=config.expand,
                dt_rank=config.dt_rank,
                prefix=f"{pre}.head{i}.layer{j}",
            )
            for j in range(config.layers)
        ]
        heads.append(
            HeadParams(
                patch_size=s,
                w_in=p(f"head{i}.w_in", w_in),
                blocks=blocks,
                out_w=p(f"head{i}.out_linear.w", out_w),
                out_b=p(f"head{i}.out_linear.b", np.zeros(packed, dtype=np.float32)),
            )
        )
    return StageParams(
        config=config,
        embeddings=emb,
        heads=heads,
        agg_w=p("agg.w", np.zeros((config.heads * c, c), dtype=np.float32)),
        agg_b=p("agg.b", np.zeros(c, dtype=np.float32)),
    )


def add_embeddings(rgb: Tensor, thermal: Tensor, emb: EmbeddingSet) -> tuple[Tensor, Tensor]:
    if rgb.shape != emb.pos.shape or thermal.shape != emb.pos.shape:
        raise ShapeError(
            f"add_embeddings: maps {rgb.shape}/{thermal.shape} do not match embedding {emb.pos.shape}"
        )
    e_rgb = T.add(T.add(rgb, emb.pos), emb.rgb)
    e_thm = T.add(T.add(thermal, emb.pos), emb.thermal)
    return e_rgb, e_thm


def stage_forward(
    params: StageParams,
    rgb: Tensor,
    thermal: Tensor,
    carries: Optional[Sequence[Optional[Tensor]]] = None,
) -> StageResult:
    """Run one fusion stage on a feature pair.

    ``carries`` is either None or one (1, head_dim) token per head; a head
    with carry None gets no prepended token.
    """
    cfg = params.config
    expect = (cfg.height, cfg.width, cfg.channels)
    if rgb.shape != expect or thermal.shape != expect:
        raise ShapeError(
            f"stage_forward[{cfg.name}]: expected maps of shape {expect}, "
            f"got {rgb.shape} and {thermal.shape}"
        )
    if carries is not None and len(carries) != len(params.heads):
        raise ShapeError(
            f"stage_forward[{cfg.name}]: {len(carries)} carries for {len(params.heads)} heads"
        )
    e_rgb, e_thm = add_embeddings(rgb, thermal, params.embeddings)

    up_rgb, up_thm, head_tokens = [], [], []
    for k, head in enumerate(params.heads):
        s = head.patch_size
        p_rgb = patch(e_rgb, s)
        p_thm = patch(e_thm, s)
        layout = build_layout(cfg.height // s, cfg.width // s)
        z = ocf_flatten(p_rgb, p_thm, layout)
        x = T.matmul(z, head.w_in)
        carry = carries[k] if carries is not None else None
        if carry is not None:
            if carry.shape != (1, head.head_dim):
                raise ShapeError(
                    f"stage_forward[{cfg.name}]: head {k} carry shape {carry.shape} "
                    f"!= (1, {head.head_dim})"
                )
            x = T.concat([carry, x], axis=0)
        tokens, _ = stack_forward(head.blocks, x)
        head_tokens.append(tokens)
        feats = T.narrow(tokens, 0, 1, layout.tokens) if carry is not None else tokens
        y = T.linear(feats, head.out_w, head.out_b)
        r_delta, t_delta = ocf_unflatten(y, layout)
        up_rgb.append(unpatch(T.add(p_rgb, r_delta), s))
        up_thm.append(unpatch(T.add(p_thm, t_delta), s))

    cat_rgb = up_rgb[0] if len(up_rgb) == 1 else T.concat(up_rgb, axis=2)
    cat_thm = up_thm[0] if len(up_thm) == 1 else T.concat(up_thm, axis=2)
    out_rgb = T.add(rgb, T.linear(cat_rgb, params.agg_w, params.agg_b))
    out_thm = T.add(thermal, T.linear(cat_thm, params.agg_w, params.agg_b))
    return StageResult(rgb=out_rgb, thermal=out_thm, head_tokens=head_tokens)
