"""Synthetic moving-shape scenes with analytically exact point tracks.

A scene is a deterministic function of (SceneConfig, seed): a short video of
rigidly translating shapes over a parametric background, plus the exact
motion of every point in it. Because all motion is analytic, ground-truth
tracks need no tracker and per-shape masks need no segmentation.

Conventions: videos are float32 arrays of shape (N, 3, H, W) with values in
[0, 1]; positions are continuous (x, y) pixel coordinates where integer
values are pixel centers (pixel [row, col] has center (x=col, y=row)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

BACKGROUND_KINDS = ("flat", "gradient", "noise_texture", "scrolling_texture")
SHAPE_KINDS = ("square", "disc")

# Reserved for objects that evaluation needs to localize. Randomly sampled
# scene colors keep their distance from it so a weighted-centroid search
# over color space finds exactly the marked object.
EDIT_MARKER_COLOR = (0.9, 0.05, 0.85)


# ---------------------------------------------------------------------------
# point tracks


@dataclass(frozen=True)
class PointTrack:
    """Per-frame positions of one tracked point and the derived displacements.

    displacements[0] is always (0, 0); displacements[i] = positions[i] -
    positions[i-1]. path_length is the sum of per-step displacement norms.
    """

    positions: np.ndarray  # (N, 2) float64, columns (x, y)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError(f"track positions must be (N, 2), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("track positions must be finite")
        object.__setattr__(self, "positions", pos)

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def displacements(self) -> np.ndarray:
        disp = np.zeros_like(self.positions)
        disp[1:] = np.diff(self.positions, axis=0)
        return disp

    @property
    def path_length(self) -> float:
        return float(np.linalg.norm(self.displacements[1:], axis=1).sum())

    @staticmethod
    def from_displacements(start: tuple[float, float], displacements) -> "PointTrack":
        disp = np.asarray(displacements, dtype=np.float64)
        if disp.ndim != 2 or disp.shape[1] != 2:
            raise ValueError(f"displacements must be (N, 2), got {disp.shape}")
        if not np.allclose(disp[0], 0.0, atol=1e-9):
            raise ValueError("displacements[0] must be (0, 0)")
        positions = np.asarray(start, dtype=np.float64)[None, :] + np.cumsum(disp, axis=0)
        return PointTrack(positions)

    def to_json(self) -> list[list[float]]:
        return [[float(x), float(y)] for x, y in self.positions]


# ---------------------------------------------------------------------------
# motion paths

# A motion path gives the shape-center offset from its configured initial
# position as a function of the frame index. Supported kinds:
#   linear:    {"kind": "linear", "velocity": [vx, vy]}
#   waypoints: {"kind": "waypoints", "points": [[x, y], ...]} -- absolute
#              positions visited at evenly spaced frames, starting at the
#              initial position.
#   sinusoid:  {"kind": "sinusoid", "amplitude": [ax, ay], "period": frames,
#              "phase": radians} -- position = initial + A*sin(2*pi*i/period
#              + phase), so the initial position is the oscillation center.


def motion_center(motion: dict, initial: tuple[float, float], i: int | np.ndarray):
    """Shape center position at frame index i (scalar or array)."""
    i = np.asarray(i, dtype=np.float64)
    x0, y0 = float(initial[0]), float(initial[1])
    kind = motion["kind"]
    if kind == "linear":
        vx, vy = motion["velocity"]
        return np.stack([x0 + vx * i, y0 + vy * i], axis=-1)
    if kind == "waypoints":
        pts = np.asarray([[x0, y0]] + [list(p) for p in motion["points"]], dtype=np.float64)
        n_frames = motion["_num_frames"]
        times = np.linspace(0.0, n_frames - 1.0, len(pts))
        x = np.interp(i, times, pts[:, 0])
        y = np.interp(i, times, pts[:, 1])
        return np.stack([x, y], axis=-1)
    if kind == "sinusoid":
        ax, ay = motion["amplitude"]
        period = float(motion["period"])
        phase = float(motion.get("phase", 0.0))
        arg = 2.0 * np.pi * i / period + phase
        return np.stack([x0 + ax * np.sin(arg), y0 + ay * np.sin(arg)], axis=-1)
    raise ValueError(f"unknown motion kind {kind!r}")


# ---------------------------------------------------------------------------
# configs


@dataclass
class ShapeSpec:
    kind: str  # "square" | "disc"
    size: float  # side length / diameter in px
    color: tuple[float, float, float]
    motion: dict
    initial: tuple[float, float]

    def validate(self, num_frames: int, width: int, height: int):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.size < 4:
            raise ValueError(f"shape size must be >= 4 px, got {self.size}")
        if not all(0.0 <= c <= 1.0 for c in self.color):
            raise ValueError(f"shape color must be in [0, 1], got {self.color}")
        x0, y0 = self.initial
        if not (0 <= x0 < width and 0 <= y0 < height):
            raise ValueError(f"shape initial position {self.initial} outside frame")
        centers = self.centers(num_frames)
        if (
            centers[:, 0].min() < 0
            or centers[:, 0].max() > width - 1
            or centers[:, 1].min() < 0
            or centers[:, 1].max() > height - 1
        ):
            raise ValueError("shape path exits frame bounds")

    def centers(self, num_frames: int) -> np.ndarray:
        """Analytic center position for every frame, shape (N, 2)."""
        motion = dict(self.motion)
        motion["_num_frames"] = num_frames
        return motion_center(motion, self.initial, np.arange(num_frames))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "size": self.size,
            "color": list(self.color),
            "motion": {k: v for k, v in self.motion.items() if not k.startswith("_")},
            "initial": list(self.initial),
        }

    @staticmethod
    def from_dict(d: dict) -> "ShapeSpec":
        return ShapeSpec(
            kind=d["kind"],
            size=float(d["size"]),
            color=tuple(d["color"]),
            motion=d["motion"],
            initial=tuple(d["initial"]),
        )


@dataclass
class SceneConfig:
    num_frames: int = 8
    width: int = 64
    height: int = 64
    background: str = "flat"
    bg_colors: tuple = ((0.5, 0.5, 0.5),)  # flat: 1 color; gradient: 2 colors
    bg_axis: str = "x"  # gradient orientation
    drift: tuple[float, float] = (0.0, 0.0)  # px/frame, scrolling_texture only
    texture_cells: int = 8  # texture granularity in px
    shapes: list = field(default_factory=list)

    def validate(self):
        if self.num_frames < 2:
            raise ValueError(f"num_frames must be >= 2, got {self.num_frames}")
        if self.width < 16 or self.height < 16:
            raise ValueError("frame size must be at least 16x16")
        if self.background not in BACKGROUND_KINDS:
            raise ValueError(f"unknown background kind {self.background!r}")
        drifting = self.drift != (0.0, 0.0) and any(self.drift)
        if self.background == "scrolling_texture":
            if not drifting:
                raise ValueError("scrolling_texture requires a nonzero drift velocity")
        elif drifting:
            raise ValueError(f"background {self.background!r} must have zero drift")
        if not self.shapes:
            raise ValueError("scene needs at least one shape")
        for s in self.shapes:
            s.validate(self.num_frames, self.width, self.height)

    def to_dict(self) -> dict:
        return {
            "num_frames": self.num_frames,
            "width": self.width,
            "height": self.height,
            "background": self.background,
            "bg_colors": [list(c) for c in self.bg_colors],
            "bg_axis": self.bg_axis,
            "drift": list(self.drift),
            "texture_cells": self.texture_cells,
            "shapes": [s.to_dict() for s in self.shapes],
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneConfig":
        return SceneConfig(
            num_frames=int(d["num_frames"]),
            width=int(d["width"]),
            height=int(d["height"]),
            background=d["background"],
            bg_colors=tuple(tuple(c) for c in d["bg_colors"]),
            bg_axis=d.get("bg_axis", "x"),
            drift=tuple(d.get("drift", (0.0, 0.0))),
            texture_cells=int(d.get("texture_cells", 8)),
            shapes=[ShapeSpec.from_dict(s) for s in d["shapes"]],
        )


# ---------------------------------------------------------------------------
# rendering


def _coverage(kind: str, center, size: float, width: int, height: int) -> np.ndarray:
    """Anti-aliased coverage of a shape over the pixel grid, in [0, 1]."""
    cx, cy = float(center[0]), float(center[1])
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    if kind == "square":
        half = size / 2.0
        ox = np.clip(np.minimum(xs + 0.5, cx + half) - np.maximum(xs - 0.5, cx - half), 0.0, 1.0)
        oy = np.clip(np.minimum(ys + 0.5, cy + half) - np.maximum(ys - 0.5, cy - half), 0.0, 1.0)
        return ox * oy
    if kind == "disc":
        r = size / 2.0
        dist = np.hypot(xs - cx, ys - cy)
        return np.clip(r - dist + 0.5, 0.0, 1.0)
    raise ValueError(f"unknown shape kind {kind!r}")


def _texture(rng: np.random.Generator, cells: int, width: int, height: int) -> np.ndarray:
    """Smooth random RGB texture, (H, W, 3), values away from 0 and 1."""
    gw = max(2, width // cells) + 1
    gh = max(2, height // cells) + 1
    grid = rng.uniform(0.2, 0.9, size=(gh, gw, 3))
    ys = np.linspace(0, gh - 1, height)
    xs = np.linspace(0, gw - 1, width)
    y0 = np.floor(ys).astype(int).clip(0, gh - 2)
    x0 = np.floor(xs).astype(int).clip(0, gw - 2)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    a = grid[y0][:, x0]
    b = grid[y0][:, x0 + 1]
    c = grid[y0 + 1][:, x0]
    d = grid[y0 + 1][:, x0 + 1]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


class Scene:
    """A rendered scene bundle: video, per-shape masks, dense track field."""

    def __init__(self, config: SceneConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = int(seed)
        self._video = None
        self._masks = None
        self._centers = [s.centers(config.num_frames) for s in config.shapes]

    # -- background ---------------------------------------------------------

    def _background_frame(self, i: int, texture: np.ndarray | None) -> np.ndarray:
        cfg = self.config
        h, w = cfg.height, cfg.width
        if cfg.background == "flat":
            return np.broadcast_to(np.asarray(cfg.bg_colors[0], np.float64), (h, w, 3)).copy()
        if cfg.background == "gradient":
            c0 = np.asarray(cfg.bg_colors[0], np.float64)
            c1 = np.asarray(cfg.bg_colors[1 % len(cfg.bg_colors)], np.float64)
            t = np.linspace(0.0, 1.0, w if cfg.bg_axis == "x" else h)
            ramp = t[None, :, None] if cfg.bg_axis == "x" else t[:, None, None]
            return c0 * (1 - ramp) + c1 * ramp
        # textures; scrolling shifts the pattern by i*drift with toroidal wrap
        dx, dy = cfg.drift
        sx, sy = i * dx, i * dy
        ys = (np.arange(h)[:, None] - sy) % h
        xs = (np.arange(w)[None, :] - sx) % w
        y0 = np.floor(ys).astype(int)
        x0 = np.floor(xs).astype(int)
        fy = (ys - y0)[..., None]
        fx = (xs - x0)[..., None]
        y1 = (y0 + 1) % h
        x1 = (x0 + 1) % w
        tex = texture
        return (
            tex[y0, x0] * (1 - fy) * (1 - fx)
            + tex[y0, x1] * (1 - fy) * fx
            + tex[y1, x0] * fy * (1 - fx)
            + tex[y1, x1] * fy * fx
        )

    # -- rendering ----------------------------------------------------------

    def _render(self):
        cfg = self.config
        n, h, w = cfg.num_frames, cfg.height, cfg.width
        texture = None
        if cfg.background in ("noise_texture", "scrolling_texture"):
            texture = _texture(np.random.default_rng(self.seed), cfg.texture_cells, w, h)
        video = np.zeros((n, 3, h, w), dtype=np.float32)
        masks = np.zeros((len(cfg.shapes), n, h, w), dtype=bool)
        for i in range(n):
            frame = self._background_frame(i, texture)
            for j, shape in enumerate(cfg.shapes):
                cov = _coverage(shape.kind, self._centers[j][i], shape.size, w, h)
                color = np.asarray(shape.color, np.float64)
                frame = frame * (1 - cov[..., None]) + color * cov[..., None]
                masks[j, i] = cov > 0.5
            video[i] = frame.transpose(2, 0, 1)
        self._video = np.clip(video, 0.0, 1.0)
        self._masks = masks

    def video(self) -> np.ndarray:
        if self._video is None:
            self._render()
        return self._video

    def shape_masks(self) -> np.ndarray:
        """Binary per-frame masks, one per shape: (num_shapes, N, H, W)."""
        if self._masks is None:
            self._render()
        return self._masks

    # -- analytic motion ----------------------------------------------------

    def _covering_shape(self, x: float, y: float) -> int | None:
        """Index of the topmost shape covering (x, y) at frame 0, else None."""
        for j in reversed(range(len(self.config.shapes))):
            s = self.config.shapes[j]
            cx, cy = self._centers[j][0]
            if s.kind == "square":
                inside = max(abs(x - cx), abs(y - cy)) <= s.size / 2.0
            else:
                inside = float(np.hypot(x - cx, y - cy)) <= s.size / 2.0
            if inside:
                return j
        return None

    def point_track(self, x: float, y: float) -> PointTrack:
        """Exact analytic track of the scene element covering (x, y) at frame 0."""
        cfg = self.config
        if not (0 <= x < cfg.width and 0 <= y < cfg.height):
            raise ValueError(f"start point ({x}, {y}) outside frame 0")
        n = cfg.num_frames
        j = self._covering_shape(x, y)
        start = np.array([x, y], dtype=np.float64)
        if j is not None:
            offsets = self._centers[j] - self._centers[j][0]
            return PointTrack(start[None, :] + offsets)
        drift = np.asarray(cfg.drift, dtype=np.float64)
        steps = np.arange(n, dtype=np.float64)[:, None]
        return PointTrack(start[None, :] + steps * drift)

    def shape_track(self, index: int) -> PointTrack:
        """Track of shape `index`'s center."""
        return PointTrack(self._centers[index].copy())

    def track_field(self) -> "TrackField":
        """Dense analytic track field seeded at every pixel center of frame 0."""
        cfg = self.config
        n, h, w = cfg.num_frames, cfg.height, cfg.width
        positions = np.empty((n, h, w, 2), dtype=np.float64)
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        drift = np.asarray(cfg.drift, dtype=np.float64)
        for i in range(n):
            positions[i, ..., 0] = xs + i * drift[0]
            positions[i, ..., 1] = ys + i * drift[1]
        # later shapes overwrite earlier ones (z-order)
        for j, shape in enumerate(self.config.shapes):
            cov0 = _coverage(shape.kind, self._centers[j][0], shape.size, w, h)
            inside = cov0 > 0.5
            offsets = self._centers[j] - self._centers[j][0]
            for i in range(n):
                positions[i, inside, 0] = xs[inside] + offsets[i, 0]
                positions[i, inside, 1] = ys[inside] + offsets[i, 1]
        return TrackField(positions)


@dataclass(frozen=True)
class TrackField:
    """Analytic tracks for every pixel of frame 0, as one dense array."""

    positions: np.ndarray  # (N, H, W, 2) float64

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.positions.shape[1], self.positions.shape[2]  # (H, W)

    def track_at(self, x: int, y: int) -> PointTrack:
        return PointTrack(self.positions[:, int(y), int(x), :].copy())


# ---------------------------------------------------------------------------
# module-level operations (the spec'd entry points)


def generate_scene(config: SceneConfig, seed: int):
    """Render a scene: (video, dense track field, per-shape masks).

    Deterministic for fixed (config, seed); raises ValueError on configs
    whose shape paths exit the frame.
    """
    scene = Scene(config, seed)
    return scene.video(), scene.track_field(), scene.shape_masks()


def ground_truth_track(scene: Scene, start_point: tuple[float, float]) -> PointTrack:
    return scene.point_track(start_point[0], start_point[1])


# ---------------------------------------------------------------------------
# random scene sampling (training data and evaluation cases)


def random_color(rng: np.random.Generator, avoid=EDIT_MARKER_COLOR, avoid_dist: float = 0.5):
    """Uniform RGB draw kept away from a reserved color (rejection loop)."""
    while True:
        c = rng.uniform(0.05, 0.95, size=3)
        if avoid is None or np.linalg.norm(c - np.asarray(avoid)) >= avoid_dist:
            return tuple(float(v) for v in c)


def _center_bounds(size: float, width: int, height: int, region=None):
    """Allowed center range keeping the whole shape visible (and inside an
    optional (top, left, h, w) region) at every frame."""
    half = size / 2.0 + 1.0
    x_lo, x_hi = half, width - 1.0 - half
    y_lo, y_hi = half, height - 1.0 - half
    if region is not None:
        top, left, rh, rw = region
        x_lo = max(x_lo, left + size / 2.0)
        x_hi = min(x_hi, left + rw - 1.0 - size / 2.0)
        y_lo = max(y_lo, top + size / 2.0)
        y_hi = min(y_hi, top + rh - 1.0 - size / 2.0)
    if x_hi <= x_lo or y_hi <= y_lo:
        raise ValueError("region too small for the shape size")
    return (x_lo, x_hi), (y_lo, y_hi)


def random_motion(
    rng: np.random.Generator,
    initial: tuple[float, float],
    bounds,
    num_frames: int,
    kinds=("linear", "waypoints", "sinusoid"),
) -> dict:
    """Random motion spec whose center path stays inside bounds."""
    (x_lo, x_hi), (y_lo, y_hi) = bounds
    x0, y0 = initial
    kind = kinds[int(rng.integers(len(kinds)))]
    if kind == "linear":
        tx = rng.uniform(x_lo, x_hi)
        ty = rng.uniform(y_lo, y_hi)
        return {
            "kind": "linear",
            "velocity": [(tx - x0) / (num_frames - 1), (ty - y0) / (num_frames - 1)],
        }
    if kind == "waypoints":
        pts = [[float(rng.uniform(x_lo, x_hi)), float(rng.uniform(y_lo, y_hi))] for _ in range(2)]
        return {"kind": "waypoints", "points": pts}
    ax = rng.uniform(0.3, 1.0) * min(x0 - x_lo, x_hi - x0)
    ay = rng.uniform(0.3, 1.0) * min(y0 - y_lo, y_hi - y0)
    return {
        "kind": "sinusoid",
        "amplitude": [float(ax), float(ay)],
        "period": float(rng.uniform(4.0, 12.0)),
        "phase": float(rng.uniform(0.0, 2 * np.pi)),
    }


def random_shape(
    rng: np.random.Generator,
    num_frames: int,
    width: int,
    height: int,
    region=None,
    color=None,
    size_range=(8.0, 18.0),
    motion_kinds=("linear", "waypoints", "sinusoid"),
    avoid_color=EDIT_MARKER_COLOR,
) -> ShapeSpec:
    """Shape with random geometry and a motion path that keeps it fully
    visible (and inside region when given) at every frame.

    avoid_color=None allows the full color cube (training data); the
    default keeps evaluation scenes away from the reserved marker color.
    """
    size = float(rng.uniform(*size_range))
    bounds = _center_bounds(size, width, height, region)
    (x_lo, x_hi), (y_lo, y_hi) = bounds
    initial = (float(rng.uniform(x_lo, x_hi)), float(rng.uniform(y_lo, y_hi)))
    return ShapeSpec(
        kind=SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))],
        size=size,
        color=color if color is not None else random_color(rng, avoid=avoid_color),
        motion=random_motion(rng, initial, bounds, num_frames, motion_kinds),
        initial=initial,
    )


def random_scene_config(
    rng: np.random.Generator,
    num_frames: int = 8,
    width: int = 64,
    height: int = 64,
    max_shapes: int = 3,
    backgrounds=BACKGROUND_KINDS,
    avoid_color=EDIT_MARKER_COLOR,
) -> SceneConfig:
    bg = backgrounds[int(rng.integers(len(backgrounds)))]
    drift = (0.0, 0.0)
    if bg == "scrolling_texture":
        while drift == (0.0, 0.0):
            d = rng.uniform(-1.5, 1.5, size=2)
            if np.abs(d).max() >= 0.3:
                drift = (float(d[0]), float(d[1]))
    n_shapes = int(rng.integers(1, max_shapes + 1))
    shapes = [
        random_shape(rng, num_frames, width, height, avoid_color=avoid_color)
        for _ in range(n_shapes)
    ]
    return SceneConfig(
        num_frames=num_frames,
        width=width,
        height=height,
        background=bg,
        bg_colors=(random_color(rng, avoid=avoid_color), random_color(rng, avoid=avoid_color)),
        bg_axis="x" if rng.integers(2) == 0 else "y",
        drift=drift,
        texture_cells=int(rng.integers(6, 13)),
        shapes=shapes,
    )


# ---------------------------------------------------------------------------
# persistence: PNG frame directories + JSON manifests


def save_video(video: np.ndarray, out_dir: str | Path, fps: int = 8):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, _, h, w = video.shape
    for i in range(n):
        frame = (np.clip(video[i], 0, 1) * 255.0).round().astype(np.uint8)
        Image.fromarray(frame.transpose(1, 2, 0)).save(out / f"frame_{i:04d}.png")
    manifest = {"num_frames": int(n), "width": int(w), "height": int(h), "fps": int(fps)}
    (out / "video.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))


def load_video(in_dir: str | Path) -> np.ndarray:
    src = Path(in_dir)
    manifest = json.loads((src / "video.json").read_text())
    frames = []
    for i in range(manifest["num_frames"]):
        img = np.asarray(Image.open(src / f"frame_{i:04d}.png").convert("RGB"), dtype=np.float32)
        frames.append(img.transpose(2, 0, 1) / 255.0)
    video = np.stack(frames)
    if video.shape[2] != manifest["height"] or video.shape[3] != manifest["width"]:
        raise ValueError("frame size does not match the video manifest")
    return video


def save_tracks(tracks: list[PointTrack], path: str | Path):
    payload = [{"positions": t.to_json()} for t in tracks]
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2))


def load_tracks(path: str | Path) -> list[PointTrack]:
    from .trajectory import canonical_track  # late import to avoid a cycle

    payload = json.loads(Path(path).read_text())
    return [canonical_track(entry) for entry in payload]
