"""Trajectory sampling and rasterization into motion condition maps.

Training-time pipeline: a coarse grid sparsifies the dense per-pixel track
field, a mean-length threshold keeps the strongly moving candidates, and a
length-proportional draw without replacement picks the final tracks. The
selected tracks are rasterized into per-frame 2-channel displacement maps
(channel 0 horizontal, channel 1 vertical, raw pixel units) and smoothed
with a normalized Gaussian. Map 0 is always zero.

Displacements for frame i are written at the track's frame i-1 position
(source anchoring): the map says "the point here moves by (dx, dy) next".
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .scenes import PointTrack, TrackField


@dataclass
class TrackSamplerConfig:
    grid_cell: int = 8
    max_tracks: int = 10
    gaussian_sigma: float = 3.0
    region: np.ndarray | None = None  # (H, W) bool; None = whole frame

    def validate(self):
        if self.grid_cell < 1:
            raise ValueError(f"grid_cell must be >= 1, got {self.grid_cell}")
        if self.max_tracks < 1:
            raise ValueError(f"max_tracks must be >= 1, got {self.max_tracks}")
        if self.gaussian_sigma <= 0:
            raise ValueError(f"gaussian_sigma must be > 0, got {self.gaussian_sigma}")


@dataclass(frozen=True)
class MotionCondition:
    """Per-frame displacement maps: (N, 2, H, W), maps[0] all-zero."""

    maps: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.maps, dtype=np.float32)
        if m.ndim != 4 or m.shape[1] != 2:
            raise ValueError(f"motion maps must be (N, 2, H, W), got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("motion maps must be finite")
        if np.any(m[0] != 0):
            raise ValueError("maps[0] must be all-zero")
        object.__setattr__(self, "maps", m)

    @property
    def shape(self):
        return self.maps.shape

    def __add__(self, other: "MotionCondition") -> "MotionCondition":
        if self.maps.shape != other.maps.shape:
            raise ValueError("motion map shapes differ")
        return MotionCondition(self.maps + other.maps)


# ---------------------------------------------------------------------------
# pipeline stages


def sparsify_grid(field: TrackField, cfg: TrackSamplerConfig) -> list[PointTrack]:
    """One candidate track per grid cell, seeded at the cell center.

    With a region mask set, cells that intersect the region contribute one
    candidate seeded at the in-region pixel closest to the cell center, so
    every seed lies inside the region.
    """
    cfg.validate()
    h, w = field.frame_shape
    cell = cfg.grid_cell
    region = cfg.region
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != (h, w):
            raise ValueError(f"region shape {region.shape} does not match frame ({h}, {w})")
        if not region.any():
            raise ValueError("empty sampling region")
    tracks = []
    for r0 in range(0, h, cell):
        for c0 in range(0, w, cell):
            cy = min(r0 + cell // 2, h - 1)
            cx = min(c0 + cell // 2, w - 1)
            if region is None:
                tracks.append(field.track_at(cx, cy))
                continue
            sub = region[r0 : min(r0 + cell, h), c0 : min(c0 + cell, w)]
            if not sub.any():
                continue
            ys, xs = np.nonzero(sub)
            ys = ys + r0
            xs = xs + c0
            d2 = (xs - cx) ** 2 + (ys - cy) ** 2
            k = int(np.argmin(d2))  # ties resolve row-major via argmin
            tracks.append(field.track_at(int(xs[k]), int(ys[k])))
    if not tracks:
        raise ValueError("empty sampling region")
    return tracks


def filter_by_threshold(candidates: list[PointTrack]) -> list[PointTrack]:
    """Keep candidates whose path length strictly exceeds the mean length.

    If the strict filter empties the set (all lengths equal), fall back to
    every candidate attaining the maximum length.
    """
    if not candidates:
        raise ValueError("filter_by_threshold needs a non-empty candidate list")
    lengths = np.array([t.path_length for t in candidates])
    threshold = lengths.mean()
    kept = [t for t, l in zip(candidates, lengths) if l > threshold]
    if kept:
        return kept
    top = lengths.max()
    return [t for t, l in zip(candidates, lengths) if l == top]


def sample_tracks(filtered: list[PointTrack], n: int, rng: np.random.Generator) -> list[PointTrack]:
    """Draw min(n, len(filtered)) distinct tracks, probability per draw
    proportional to path length among the remaining candidates (uniform once
    all remaining lengths are zero)."""
    if not filtered:
        raise ValueError("sample_tracks needs a non-empty track list")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    remaining = list(range(len(filtered)))
    lengths = np.array([t.path_length for t in filtered], dtype=np.float64)
    picked = []
    for _ in range(min(n, len(filtered))):
        weights = lengths[remaining]
        total = weights.sum()
        probs = weights / total if total > 0 else np.full(len(remaining), 1.0 / len(remaining))
        k = int(rng.choice(len(remaining), p=probs))
        picked.append(remaining.pop(k))
    return [filtered[i] for i in picked]


def _gaussian_kernel_1d(sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def rasterize(
    tracks: list[PointTrack], shape: tuple[int, int, int], sigma: float
) -> MotionCondition:
    """Write displacements at rounded previous-frame positions and smooth.

    shape is (N, H, W). For frame i >= 1, each track contributes its
    displacement[i] at the rounded position of frame i-1; coincident writes
    sum. Each channel of each frame is then convolved with a normalized
    Gaussian (zero padding), so the per-frame channel sum of interior
    contributions is preserved. Map 0 stays zero.
    """
    n, h, w = shape
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    maps = np.zeros((n, 2, h, w), dtype=np.float64)
    for t in tracks:
        if t.num_frames != n:
            raise ValueError(f"track has {t.num_frames} frames, expected {n}")
        disp = t.displacements
        for i in range(1, n):
            px = int(np.floor(t.positions[i - 1, 0] + 0.5))
            py = int(np.floor(t.positions[i - 1, 1] + 0.5))
            if not (0 <= px < w and 0 <= py < h):
                raise ValueError(f"track position ({px}, {py}) outside frame bounds")
            maps[i, 0, py, px] += disp[i, 0]
            maps[i, 1, py, px] += disp[i, 1]
    kernel = _gaussian_kernel_1d(sigma)
    for i in range(1, n):
        for c in range(2):
            sm = ndimage.convolve1d(maps[i, c], kernel, axis=0, mode="constant")
            maps[i, c] = ndimage.convolve1d(sm, kernel, axis=1, mode="constant")
    return MotionCondition(maps.astype(np.float32))


# ---------------------------------------------------------------------------
# convenience: full sampling pipeline for training


def in_bounds(track: PointTrack, h: int, w: int) -> bool:
    px = np.floor(track.positions[:, 0] + 0.5)
    py = np.floor(track.positions[:, 1] + 0.5)
    return bool((px >= 0).all() and (px < w).all() and (py >= 0).all() and (py < h).all())


def clamp_track(track: PointTrack, h: int, w: int) -> PointTrack:
    pos = track.positions.copy()
    pos[:, 0] = np.clip(pos[:, 0], 0, w - 1)
    pos[:, 1] = np.clip(pos[:, 1], 0, h - 1)
    return PointTrack(pos)


def sample_motion_condition(
    field: TrackField,
    cfg: TrackSamplerConfig,
    n: int,
    rng: np.random.Generator,
) -> tuple[MotionCondition, list[PointTrack]]:
    """sparsify -> threshold filter -> weighted draw -> rasterize.

    Candidates that leave the frame (drifting background points near an
    edge) are dropped before filtering; if that empties the set, the
    original candidates are clamped to the frame instead.
    """
    num_frames = field.num_frames
    h, w = field.frame_shape
    candidates = sparsify_grid(field, cfg)
    bounded = [t for t in candidates if in_bounds(t, h, w)]
    if not bounded:
        bounded = [clamp_track(t, h, w) for t in candidates]
    kept = filter_by_threshold(bounded)
    chosen = sample_tracks(kept, n, rng)
    return rasterize(chosen, (num_frames, h, w), cfg.gaussian_sigma), chosen


# ---------------------------------------------------------------------------
# trajectory spec files (user-authored at edit time)


def canonical_track(entry: dict) -> PointTrack:
    """Canonicalize one trajectory-file entry into a PointTrack.

    Accepts {"positions": [[x, y], ...]} or {"start": [x, y],
    "displacements": [[dx, dy], ...]} where displacements[0] is (0, 0).
    """
    if "positions" in entry:
        return PointTrack(np.asarray(entry["positions"], dtype=np.float64))
    if "start" in entry and "displacements" in entry:
        return PointTrack.from_displacements(tuple(entry["start"]), entry["displacements"])
    raise ValueError("trajectory entry needs 'positions' or 'start'+'displacements'")


def load_trajectory_file(path: str | Path) -> list[PointTrack]:
    payload = json.loads(Path(path).read_text())
    if not isinstance(payload, list):
        raise ValueError("trajectory file must contain a JSON list of tracks")
    return [canonical_track(entry) for entry in payload]
