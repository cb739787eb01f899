"""Applying trained models to edit requests.

An edit regenerates the source video under three conditions: the first
frame (which already shows the desired content, since a motion-only edit
keeps frame 0 and a content edit supplies an edited frame 0), the source
video with the editable region blanked, and displacement maps rasterized
from the commanded trajectories.

Videos longer than the model's native window are edited in overlapping
windows that share one seam frame: each window is conditioned on a seam
reference that takes the editable region from the previous window's last
generated frame and the preserved region from the source, and the
duplicate seam frame is dropped when stitching, so the result has
exactly the source length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .conditioning import EditMask, EditSpec, masked_video
from .diffusion import SamplerConfig, sample_video, tensor_to_video, video_to_tensor
from .scenes import PointTrack
from .trajectory import TrackSamplerConfig, rasterize
from .seeding import derive_seed


@dataclass
class EditConfig:
    sampler: SamplerConfig
    fusion: str = "gated"
    window: int = 8
    gaussian_sigma: float = TrackSamplerConfig.gaussian_sigma

    def validate(self):
        self.sampler.validate()
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")


def build_condition(
    video: np.ndarray,
    mask: EditMask,
    tracks: list[PointTrack],
    sigma: float,
    first_frame: np.ndarray | None = None,
) -> dict[str, torch.Tensor]:
    """Model-space condition dict for one edit window.

    video: (N, 3, H, W) source frames in [0, 1]; first_frame overrides
    frame 0 as the conditioning frame (content edits, window chaining).
    """
    n, _, h, w = video.shape
    motion = rasterize(tracks, (n, h, w), sigma)
    content = video_to_tensor(masked_video(video, mask))
    ff = video[0] if first_frame is None else first_frame
    return {
        "first_frame": torch.from_numpy(np.asarray(ff, np.float32).copy())[None] - 0.5,
        "content": content,
        "motion": torch.from_numpy(motion.maps)[None],
        "mask": torch.from_numpy(mask.mask)[None, None],
    }


def edit_video(
    model,
    spec: EditSpec,
    cfg: EditConfig,
    first_frame: np.ndarray | None = None,
) -> np.ndarray:
    """Single-window edit. Returns the edited video, (N, 3, H, W) in [0, 1]."""
    cfg.validate()
    spec.validate()
    if first_frame is None:
        first_frame = spec.first_frame
    video = np.asarray(spec.video, dtype=np.float32)
    cond = build_condition(video, spec.mask, spec.tracks, cfg.gaussian_sigma, first_frame)
    gen = torch.Generator().manual_seed(derive_seed(spec.seed, "edit"))
    model.eval()
    out = sample_video(model, cond, tuple(cond["content"].shape), cfg.sampler, gen, cfg.fusion)
    return tensor_to_video(out)


def _window_starts(length: int, window: int) -> list[int]:
    """Start indices of windows overlapping by one frame, covering length."""
    step = window - 1
    n_windows = max(1, -(-(length - 1) // step))
    return [w * step for w in range(n_windows)]


def _pad_video(video: np.ndarray, total: int) -> np.ndarray:
    if video.shape[0] >= total:
        return video
    pad = np.repeat(video[-1:], total - video.shape[0], axis=0)
    return np.concatenate([video, pad], axis=0)


def _pad_track(track: PointTrack, total: int) -> PointTrack:
    pos = track.positions
    if pos.shape[0] >= total:
        return track
    pad = np.repeat(pos[-1:], total - pos.shape[0], axis=0)
    return PointTrack(np.concatenate([pos, pad], axis=0))


def edit_long_video(model, spec: EditSpec, cfg: EditConfig) -> np.ndarray:
    """Windowed edit of a video longer than the model's native window.

    The source is padded (last frame and track positions repeated) up to
    1 + k*(window-1) frames, edited window by window, and trimmed back to
    the source length. Window k >= 1 regenerates the seam frame; the copy
    from window k-1 is kept and the duplicate dropped.
    """
    cfg.validate()
    spec.validate()
    video = np.asarray(spec.video, dtype=np.float32)
    length = video.shape[0]
    if length <= cfg.window:
        return edit_video(model, spec, cfg)

    starts = _window_starts(length, cfg.window)
    total = starts[-1] + cfg.window
    padded = _pad_video(video, total)
    tracks = [_pad_track(t, total) for t in spec.tracks]

    frames: list[np.ndarray] = []
    m = spec.mask.mask[None]  # (1, H, W), 1 = preserved
    seam: np.ndarray | None = spec.first_frame
    for w_idx, s in enumerate(starts):
        sl = slice(s, s + cfg.window)
        win_tracks = [PointTrack(t.positions[sl].copy()) for t in tracks]
        win_spec = EditSpec(
            video=padded[sl].copy(),
            mask=spec.mask,
            tracks=win_tracks,
            seed=derive_seed(spec.seed, "window", w_idx),
        )
        out = edit_video(model, win_spec, cfg, first_frame=seam)
        if w_idx == 0:
            frames.extend(out)
        else:
            frames.extend(out[1:])  # drop the regenerated seam duplicate
        # Next window's reference: preserved content from the source at the
        # seam frame, edited content carried over from this window's output.
        seam = padded[s + cfg.window - 1] * m + out[-1] * (1.0 - m)
    return np.stack(frames[:length])
