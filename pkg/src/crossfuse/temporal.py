"""Frame-recurrent fusion: carry tokens threaded through the stage fusers.

Each stage head owns a single carry token (1, head_dim). At stream start
every carry is zero; after fusing frame t, the new carry is the final
block layer's output at the last token position. State size is fixed, so
streaming over an arbitrarily long clip uses constant memory, and the
update is Markov: frame t+1 sees earlier frames only through the carries.

Fusing a clip is literally init + repeated single-frame fusion, so batch
and streaming execution agree bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .fusion import StageConfig, StageParams, StageResult, init_stage, stage_forward
from .tensor import ShapeError, Tensor
from .tensorio import load_checkpoint, save_checkpoint

__all__ = [
    "FeaturePair",
    "FusionModel",
    "StreamState",
    "build_model",
    "config_hash",
    "init_stream",
    "fuse_next",
    "fuse_clip",
    "save_stream_state",
    "load_stream_state",
]


@dataclass
class FeaturePair:
    """One stage's RGB and thermal feature maps."""

    stage: str
    rgb: Tensor
    thermal: Tensor


def config_hash(configs: Sequence[StageConfig]) -> str:
    payload = json.dumps([c.to_dict() for c in configs], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class FusionModel:
    """An ordered set of fusion stages plus the hash that pins their config."""

    stages: list[StageParams]
    hash: str

    @property
    def stage_names(self) -> list[str]:
        return [s.config.name for s in self.stages]

    @property
    def configs(self) -> list[StageConfig]:
        return [s.config for s in self.stages]

    def stage(self, name: str) -> StageParams:
        for s in self.stages:
            if s.config.name == name:
                return s
        raise KeyError(f"no stage named {name!r} (have {self.stage_names})")

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for s in self.stages:
            out.update(s.named(s.config.name))
        return out

    def replace_parameters(self, updated: dict[str, Tensor]) -> None:
        """Swap parameter tensors in place by name (used by the optimizer
        and by checkpoint loading). Unknown names are an error."""
        current = self.named_parameters()
        unknown = set(updated) - set(current)
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)[:5]}")
        for s in self.stages:
            _rebind(s, updated)


def _rebind(obj, updated: dict[str, Tensor]) -> None:
    """Replace Tensor fields whose names appear in ``updated``."""
    from dataclasses import fields as dc_fields

    for f in dc_fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, Tensor):
            if v.name in updated:
                new = updated[v.name]
                if new.shape != v.shape:
                    raise ShapeError(f"{v.name}: shape {new.shape} != expected {v.shape}")
                setattr(obj, f.name, Tensor(new.data, name=v.name, trainable=v.trainable))
        elif isinstance(v, list):
            for item in v:
                if hasattr(item, "__dataclass_fields__"):
                    _rebind(item, updated)
        elif hasattr(v, "__dataclass_fields__"):
            _rebind(v, updated)


def build_model(configs: Sequence[StageConfig], seed: int = 0) -> FusionModel:
    if not configs:
        raise ValueError("build_model: need at least one stage config")
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate stage names: {names}")
    rng = np.random.default_rng(seed)
    stages = [init_stage(c, rng) for c in configs]
    return FusionModel(stages=stages, hash=config_hash(configs))


@dataclass
class StreamState:
    """Per-stage, per-head carry tokens plus a frame counter.

    The config hash pins the state to the model that produced it; mixing
    states across differently-shaped models is an error, not a crash later.
    """

    carries: dict[str, list[Tensor]]
    frame_index: int
    model_hash: str

    def carry_floats(self) -> int:
        return sum(t.size for ts in self.carries.values() for t in ts)


def init_stream(model: FusionModel) -> StreamState:
    carries = {
        s.config.name: [
            Tensor(np.zeros((1, s.config.head_dim), dtype=np.float32))
            for _ in range(s.config.heads)
        ]
        for s in model.stages
    }
    return StreamState(carries=carries, frame_index=0, model_hash=model.hash)


def _check_pyramid(model: FusionModel, pyramid: dict[str, FeaturePair]) -> None:
    missing = [n for n in model.stage_names if n not in pyramid]
    if missing:
        raise ShapeError(f"pyramid is missing stages {missing}")


def fuse_next(
    model: FusionModel,
    state: StreamState,
    pyramid: dict[str, FeaturePair],
) -> tuple[dict[str, FeaturePair], StreamState]:
    """Fuse one frame's feature pyramid and advance the carries."""
    if state.model_hash != model.hash:
        raise ValueError(
            "stream state belongs to a different model config "
            f"(state {state.model_hash[:12]}, model {model.hash[:12]})"
        )
    _check_pyramid(model, pyramid)
    fused: dict[str, FeaturePair] = {}
    new_carries: dict[str, list[Tensor]] = {}
    for stage in model.stages:
        name = stage.config.name
        pair = pyramid[name]
        result: StageResult = stage_forward(stage, pair.rgb, pair.thermal, carries=state.carries[name])
        fused[name] = FeaturePair(stage=name, rgb=result.rgb, thermal=result.thermal)
        carries = []
        for tokens in result.head_tokens:
            last = T.narrow(tokens, 0, tokens.shape[0] - 1, 1)  # (1, head_dim)
            carries.append(last)
        new_carries[name] = carries
    new_state = StreamState(carries=new_carries, frame_index=state.frame_index + 1, model_hash=state.model_hash)
    return fused, new_state


def fuse_clip(model: FusionModel, frames: Sequence[dict[str, FeaturePair]]) -> list[dict[str, FeaturePair]]:
    """Fuse a whole clip; defined as init_stream + one fuse_next per frame."""
    if not frames:
        raise ValueError("fuse_clip: empty clip")
    state = init_stream(model)
    fused = []
    for pyramid in frames:
        out, state = fuse_next(model, state, pyramid)
        fused.append(out)
    return fused


def save_stream_state(dirpath, state: StreamState) -> None:
    tensors = {}
    names: dict[str, list[str]] = {}
    for stage, carries in state.carries.items():
        names[stage] = []
        for i, c in enumerate(carries):
            key = f"{stage}.carry{i}"
            tensors[key] = c
            names[stage].append(key)
    meta = {
        "kind": "stream_state",
        "frame_index": state.frame_index,
        "model_hash": state.model_hash,
        "carry_names": names,
    }
    save_checkpoint(dirpath, tensors, metadata=meta)


def load_stream_state(dirpath) -> StreamState:
    tensors, meta = load_checkpoint(dirpath)
    if meta.get("kind") != "stream_state":
        raise ValueError(f"{dirpath} does not hold a stream state")
    carries = {
        stage: [tensors[key] for key in keys]
        for stage, keys in meta["carry_names"].items()
    }
    return StreamState(carries=carries, frame_index=meta["frame_index"], model_hash=meta["model_hash"])
