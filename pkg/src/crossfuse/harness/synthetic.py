"""Synthetic RGB+thermal clips with moving blob targets.

Each clip tracks a handful of rectangular blobs under constant velocity.
Frames are sampled from the underlying motion at a fixed temporal stride
(frame i shows motion step i * stride). Ground truth follows blob positions
exactly, whether or not the blob is visible in that frame.

Illumination modes change only the RGB channel statistics:

  * day:   blobs render into RGB well above the noise floor;
  * night: RGB blob contrast drops below the noise floor, so the RGB
    channel alone carries almost no signal.

Thermal rendering is identical in both modes. Occlusion mode "last_frame"
skips rendering blobs (in both spectra) on a clip's final frame while
keeping their ground-truth boxes, which is the case a temporal model can
solve and a single-frame model cannot.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..tensor import Tensor
from ..tensorio import load_tensor, save_tensor
from ..metrics import Box

__all__ = ["SyntheticClipSpec", "RenderParams", "gen_clips", "load_dataset", "Clip", "Dataset"]

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA = 1


@dataclass(frozen=True)
class RenderParams:
    """Channel statistics per illumination mode. Night RGB contrast sits
    below the night noise sigma by construction; thermal never changes."""

    rgb_contrast_day: float = 0.55
    rgb_noise_day: float = 0.02
    rgb_contrast_night: float = 0.03
    rgb_noise_night: float = 0.15
    rgb_background: float = 0.45
    thermal_contrast: float = 0.75
    thermal_noise: float = 0.02
    thermal_background: float = 0.10


@dataclass(frozen=True)
class SyntheticClipSpec:
    seed: int = 0
    frames: int = 3
    height: int = 64
    width: int = 64
    blob_count_min: int = 1
    blob_count_max: int = 2
    blob_size_min: int = 10
    blob_size_max: int = 22
    blob_speed_max: float = 1.5
    illumination: str = "day"
    stride: int = 3
    occlusion: str = "none"

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if self.height < 16 or self.width < 16:
            raise ValueError(f"image {self.height}x{self.width} too small for blob targets")
        if self.illumination not in ("day", "night"):
            raise ValueError(f"illumination must be day or night, got {self.illumination!r}")
        if self.occlusion not in ("none", "last_frame"):
            raise ValueError(f"occlusion must be none or last_frame, got {self.occlusion!r}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not 0 < self.blob_size_min <= self.blob_size_max < min(self.height, self.width):
            raise ValueError("blob size range must fit inside the image")
        if not 0 < self.blob_count_min <= self.blob_count_max:
            raise ValueError("blob count range is empty")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticClipSpec":
        return cls(**d)


@dataclass
class _Blob:
    x: float  # top-left corner at motion step 0
    y: float
    w: float
    h: float
    vx: float
    vy: float

    def at(self, step: int, bounds: tuple[int, int]) -> tuple[float, float]:
        """Top-left corner at a motion step, clamped inside the image."""
        height, width = bounds
        x = min(max(self.x + self.vx * step, 0.0), width - self.w)
        y = min(max(self.y + self.vy * step, 0.0), height - self.h)
        return x, y


def _render_frame(
    spec: SyntheticClipSpec,
    render: RenderParams,
    blobs: list[_Blob],
    motion_step: int,
    rng: np.random.Generator,
    occluded: bool,
) -> tuple[np.ndarray, np.ndarray, list[Box]]:
    h, w = spec.height, spec.width
    night = spec.illumination == "night"
    rgb_noise = render.rgb_noise_night if night else render.rgb_noise_day
    rgb_contrast = render.rgb_contrast_night if night else render.rgb_contrast_day

    rgb = np.full((h, w, 3), render.rgb_background, dtype=np.float32)
    rgb += rng.normal(0.0, rgb_noise, size=(h, w, 3)).astype(np.float32)
    thm = np.full((h, w, 1), render.thermal_background, dtype=np.float32)
    thm += rng.normal(0.0, render.thermal_noise, size=(h, w, 1)).astype(np.float32)

    boxes = []
    for blob in blobs:
        x, y = blob.at(motion_step, (h, w))
        boxes.append(Box(x=x, y=y, w=blob.w, h=blob.h))
        if occluded:
            continue
        r0, r1 = int(round(y)), int(round(y + blob.h))
        c0, c1 = int(round(x)), int(round(x + blob.w))
        rgb[r0:r1, c0:c1, :] += rgb_contrast
        thm[r0:r1, c0:c1, :] += render.thermal_contrast
    return rgb, thm, boxes


@dataclass
class Clip:
    clip_id: str
    tag: str
    frames: list[dict]  # {"frame_id", "rgb", "thermal"} with paths relative to root
    gt: dict[str, list[Box]]


@dataclass
class Dataset:
    root: Path
    spec: SyntheticClipSpec
    clips: list[Clip]

    def load_frame(self, frame: dict) -> tuple[Tensor, Tensor]:
        return (
            load_tensor(self.root / frame["rgb"]),
            load_tensor(self.root / frame["thermal"]),
        )


def gen_clips(spec: SyntheticClipSpec, count: int, out_dir, render: RenderParams = RenderParams()) -> dict:
    """Write ``count`` clips plus a manifest; fully determined by spec.seed.

    Returns the manifest dict. Layout:

        out_dir/manifest.json
        out_dir/clips/<clip_id>/f<i>.rgb.tnsr
        out_dir/clips/<clip_id>/f<i>.thm.tnsr
        out_dir/clips/<clip_id>/gt.jsonl
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    manifest_clips = []
    for ci in range(count):
        clip_id = f"clip{ci:04d}"
        clip_dir = root / "clips" / clip_id
        clip_dir.mkdir(parents=True, exist_ok=True)
        n_blobs = int(rng.integers(spec.blob_count_min, spec.blob_count_max + 1))
        blobs = []
        for _ in range(n_blobs):
            bw = float(rng.uniform(spec.blob_size_min, spec.blob_size_max))
            bh = float(rng.uniform(spec.blob_size_min, spec.blob_size_max))
            # Leave motion headroom so clamping rarely engages.
            x = float(rng.uniform(0, spec.width - bw))
            y = float(rng.uniform(0, spec.height - bh))
            angle = rng.uniform(0, 2 * np.pi)
            speed = rng.uniform(0, spec.blob_speed_max)
            blobs.append(_Blob(x=x, y=y, w=bw, h=bh, vx=speed * np.cos(angle), vy=speed * np.sin(angle)))
        frames = []
        gt_rows: dict[str, list[Box]] = {}
        for fi in range(spec.frames):
            occluded = spec.occlusion == "last_frame" and fi == spec.frames - 1
            rgb, thm, boxes = _render_frame(spec, render, blobs, fi * spec.stride, rng, occluded)
            frame_id = f"{clip_id}/f{fi}"
            rgb_rel = f"clips/{clip_id}/f{fi}.rgb.tnsr"
            thm_rel = f"clips/{clip_id}/f{fi}.thm.tnsr"
            save_tensor(root / rgb_rel, Tensor(rgb))
            save_tensor(root / thm_rel, Tensor(thm))
            frames.append({"frame_id": frame_id, "rgb": rgb_rel, "thermal": thm_rel})
            gt_rows[frame_id] = boxes
        gt_rel = f"clips/{clip_id}/gt.jsonl"
        with open(root / gt_rel, "w") as fp:
            for frame_id in sorted(gt_rows):
                row = {"frame_id": frame_id, "boxes": [b.to_dict() for b in gt_rows[frame_id]]}
                fp.write(json.dumps(row, sort_keys=True) + "\n")
        manifest_clips.append({"id": clip_id, "tag": spec.illumination, "frames": frames, "gt": gt_rel})
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "spec": spec.to_dict(),
        "render": asdict(render),
        "clips": manifest_clips,
    }
    with open(root / MANIFEST_NAME, "w") as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
        fp.write("\n")
    return manifest


def load_dataset(root) -> Dataset:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"{root} has no {MANIFEST_NAME}")
    with open(path) as fp:
        manifest = json.load(fp)
    if manifest.get("schema_version") != MANIFEST_SCHEMA:
        raise ValueError(f"unsupported dataset schema {manifest.get('schema_version')!r}")
    spec = SyntheticClipSpec.from_dict(manifest["spec"])
    clips = []
    for row in manifest["clips"]:
        gt: dict[str, list[Box]] = {}
        with open(root / row["gt"]) as fp:
            for line in fp:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                gt[obj["frame_id"]] = [Box.from_dict(b) for b in obj["boxes"]]
        clips.append(Clip(clip_id=row["id"], tag=row["tag"], frames=row["frames"], gt=gt))
    return Dataset(root=root, spec=spec, clips=clips)
