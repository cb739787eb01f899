"""Edit masks and the unedited-content condition.

Mask polarity: 1 marks preserved (unedited) pixels, 0 marks the editable
region. The content condition is the source video with the editable region
blanked to zero, which in the model's shifted value space reads as "no
information here".

Decoupled training pairs are composed from two independent scenes: the
preserved region shows one video while the editable region shows another,
so content appearance and commanded motion carry no mutual information.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .scenes import load_video
from .trajectory import MotionCondition, load_trajectory_file


@dataclass(frozen=True)
class EditMask:
    """Static (H, W) float mask, 1 = preserved, 0 = editable."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=np.float32)
        if m.ndim != 2:
            raise ValueError(f"mask must be 2-d, got shape {m.shape}")
        if m.min() < 0 or m.max() > 1:
            raise ValueError("mask values must lie in [0, 1]")
        object.__setattr__(self, "mask", m)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def editable(self) -> np.ndarray:
        return 1.0 - self.mask

    @classmethod
    def from_box(cls, h: int, w: int, top: int, left: int, height: int, width: int) -> "EditMask":
        if height < 1 or width < 1:
            raise ValueError("box must have positive extent")
        if top < 0 or left < 0 or top + height > h or left + width > w:
            raise ValueError("box exceeds frame bounds")
        m = np.ones((h, w), dtype=np.float32)
        m[top : top + height, left : left + width] = 0.0
        return cls(m)

    @classmethod
    def load_png(cls, path: str | Path) -> "EditMask":
        arr = np.asarray(Image.open(path).convert("L"), dtype=np.float32) / 255.0
        # PNG masks are authored as binary; snap away compression dither
        return cls((arr >= 0.5).astype(np.float32))

    def save_png(self, path: str | Path):
        arr = (np.round(self.mask * 255.0)).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)


def masked_video(video: np.ndarray, mask: EditMask) -> np.ndarray:
    """Unedited-content condition: editable region blanked to zero."""
    v = np.asarray(video, dtype=np.float32)
    if v.ndim != 4 or v.shape[1] != 3:
        raise ValueError(f"video must be (N, 3, H, W), got {v.shape}")
    if v.shape[2:] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match video frames {v.shape[2:]}")
    return v * mask.mask[None, None]


def compose_decoupled(
    video_keep: np.ndarray, video_edit: np.ndarray, mask: EditMask
) -> np.ndarray:
    """V = V_keep * M + V_edit * (1 - M), the decoupling composition."""
    a = np.asarray(video_keep, dtype=np.float32)
    b = np.asarray(video_edit, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError(f"video shapes differ: {a.shape} vs {b.shape}")
    m = mask.mask[None, None]
    return a * m + b * (1.0 - m)


def union_motion(parts: list[MotionCondition]) -> MotionCondition:
    """Sum of displacement maps from several track groups."""
    if not parts:
        raise ValueError("union_motion needs at least one part")
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out


# ---------------------------------------------------------------------------
# edit specifications (what the CLI consumes)


@dataclass
class EditSpec:
    """One editing request: source video, mask, commanded trajectories.

    tracks are absolute-position point tracks for the editable region's
    intended motion; they must span the same number of frames as the video.
    first_frame optionally replaces frame 0 as the conditioning frame: a
    content edit hands in a frame 0 that already shows the new content.
    """

    video: np.ndarray
    mask: EditMask
    tracks: list = field(default_factory=list)
    seed: int = 0
    first_frame: np.ndarray | None = None

    def validate(self):
        v = np.asarray(self.video)
        if v.ndim != 4 or v.shape[1] != 3:
            raise ValueError(f"video must be (N, 3, H, W), got {v.shape}")
        if v.shape[2:] != self.mask.shape:
            raise ValueError("mask shape does not match video")
        if not (self.mask.editable > 0).any():
            raise ValueError("mask has no editable region")
        n, h, w = v.shape[0], v.shape[2], v.shape[3]
        for t in self.tracks:
            if t.num_frames != n:
                raise ValueError(f"track spans {t.num_frames} frames, video has {n}")
            px = np.floor(t.positions[:, 0] + 0.5)
            py = np.floor(t.positions[:, 1] + 0.5)
            if px.min() < 0 or px.max() >= w or py.min() < 0 or py.max() >= h:
                raise ValueError("track leaves frame bounds")
        if self.first_frame is not None:
            ff = np.asarray(self.first_frame)
            if ff.shape != v.shape[1:]:
                raise ValueError(f"first_frame shape {ff.shape} does not match frames")

    @classmethod
    def from_regions(
        cls,
        video: np.ndarray,
        regions: list[tuple["EditMask", list]],
        seed: int = 0,
        first_frame: np.ndarray | None = None,
    ) -> "EditSpec":
        """Fold a multi-area request into one spec.

        The effective preservation mask is the elementwise product of the
        region masks (editable areas union); tracks concatenate, which is
        equivalent to summing per-region rasterizations since rasterize is
        linear in the track list. Region editable areas must be pairwise
        disjoint and each region's tracks must start inside its own area.
        """
        if not regions:
            raise ValueError("at least one edit region is required")
        editables = [np.asarray(m.editable > 0) for m, _ in regions]
        for i in range(len(regions)):
            for j in range(i + 1, len(regions)):
                if (editables[i] & editables[j]).any():
                    raise ValueError(f"edit regions {i} and {j} overlap")
        for k, (m, tracks) in enumerate(regions):
            for t in tracks:
                x = int(np.floor(t.positions[0, 0] + 0.5))
                y = int(np.floor(t.positions[0, 1] + 0.5))
                if not (0 <= x < m.shape[1] and 0 <= y < m.shape[0]) or not editables[k][y, x]:
                    raise ValueError(f"track of region {k} starts outside its editing area")
        product = np.ones(regions[0][0].shape, dtype=np.float32)
        all_tracks = []
        for m, tracks in regions:
            product = product * m.mask
            all_tracks.extend(tracks)
        spec = cls(video=video, mask=EditMask(product), tracks=all_tracks,
                   seed=seed, first_frame=first_frame)
        spec.validate()
        return spec

    @classmethod
    def load(cls, spec_path: str | Path) -> "EditSpec":
        """Read a JSON edit spec with paths relative to the spec file.

        Either flat keys: video (dir), mask (png), tracks (json); or a
        multi-area form: video plus regions = [{mask, tracks}, ...].
        Optional keys: seed (int), first_frame (png).
        """
        spec_path = Path(spec_path)
        payload = json.loads(spec_path.read_text())
        base = spec_path.parent
        if "video" not in payload:
            raise ValueError("edit spec missing required key 'video'")
        video = load_video(base / payload["video"])
        first_frame = None
        if "first_frame" in payload:
            img = Image.open(base / payload["first_frame"]).convert("RGB")
            first_frame = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
        seed = int(payload.get("seed", 0))
        if "regions" in payload:
            regions = [
                (EditMask.load_png(base / r["mask"]), load_trajectory_file(base / r["tracks"]))
                for r in payload["regions"]
            ]
            return cls.from_regions(video, regions, seed=seed, first_frame=first_frame)
        for key in ("mask", "tracks"):
            if key not in payload:
                raise ValueError(f"edit spec missing required key '{key}'")
        spec = cls(
            video=video,
            mask=EditMask.load_png(base / payload["mask"]),
            tracks=load_trajectory_file(base / payload["tracks"]),
            seed=seed,
            first_frame=first_frame,
        )
        spec.validate()
        return spec
