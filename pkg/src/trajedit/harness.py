"""End-to-end pipeline: evaluation data, branch training, metric reports.

One config object drives everything. `reproduce` chains the three phases
into a directory tree:

    out/
      data/      held-out edit cases with analytic ground truth
      models/    one subdirectory per curriculum stage or ablation stage
      reports/   deterministic JSON metric reports
      acceptance_report.json
      manifest.json   sha256 of checkpoints, reports, and data files

Every artifact is a pure function of the config, so running the pipeline
twice into two directories yields byte-identical reports.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .conditioning import EditMask, EditSpec
from .diffusion import SamplerConfig
from .editing import EditConfig, edit_long_video, edit_video
from .evalmetrics import (
    boundary_band_mse,
    endpoint_error,
    locate_marker,
    motion_attribution,
    region_psnr,
    temporal_consistency,
    write_report,
)
from .model import EditModel, ModelConfig, default_config, load_checkpoint
from .scenes import (
    EDIT_MARKER_COLOR,
    PointTrack,
    Scene,
    SceneConfig,
    ShapeSpec,
    motion_center,
    random_color,
    save_tracks,
    save_video,
    load_video,
)
from .seeding import derive_seed
from .training import BRANCH_POINTS, make_curriculum, run_curriculum
from .evalmetrics import pearson


class ConfigError(ValueError):
    """Bad configuration or arguments; the CLI maps this to exit code 1."""


# ---------------------------------------------------------------------------
# pipeline configuration


@dataclass
class PipelineConfig:
    seed: int = 0
    profile: str = "full"
    num_frames: int = 8
    frame_size: int = 64
    window: int = 8
    long_frames: int = 29
    batch_size: int = 8
    lr: float = 1e-4
    sampler_steps: int = 25
    iters: dict = field(default_factory=lambda: {
        "pretrain": 3000,
        "motion_prior": 4000,
        "decouple": 3000,
        "harmonize": 2000,
        "joint": 4500,
        "ablation": 1500,
    })
    cases: dict = field(default_factory=lambda: {
        "decoupled": 20, "edits": 20, "wavy": 10, "masks": 10,
    })
    model: ModelConfig = field(default_factory=default_config)

    def validate(self):
        try:
            self.model.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.num_frames < 2:
            raise ConfigError(f"num_frames must be >= 2, got {self.num_frames}")
        if self.frame_size % 16:
            raise ConfigError("frame_size must be a multiple of 16")
        if self.window < 2:
            raise ConfigError("window must be >= 2")
        if self.long_frames <= self.window:
            raise ConfigError("long_frames must exceed window")
        for key in ("pretrain", "motion_prior", "decouple", "harmonize", "joint", "ablation"):
            if int(self.iters.get(key, 0)) < 1:
                raise ConfigError(f"iters[{key!r}] must be >= 1")
        for key in ("decoupled", "edits", "wavy", "masks"):
            if int(self.cases.get(key, 0)) < 1:
                raise ConfigError(f"cases[{key!r}] must be >= 1")
        if self.sampler_steps < 1 or self.batch_size < 1:
            raise ConfigError("sampler_steps and batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "model" in d:
            try:
                d["model"] = ModelConfig.from_dict(d["model"])
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad model config: {e}") from e
        base = cls()
        for key in ("iters", "cases"):
            if key in d:
                merged = dict(getattr(base, key))
                merged.update(d[key])
                d[key] = merged
        cfg = cls(**d)
        cfg.validate()
        return cfg


def full_profile() -> PipelineConfig:
    return PipelineConfig()


def smoke_profile() -> PipelineConfig:
    """Minutes-scale end-to-end run exercising every pipeline path."""
    return PipelineConfig(
        profile="smoke",
        long_frames=15,
        batch_size=2,
        sampler_steps=4,
        iters={"pretrain": 8, "motion_prior": 8, "decouple": 8,
               "harmonize": 8, "joint": 8, "ablation": 6},
        cases={"decoupled": 3, "edits": 3, "wavy": 2, "masks": 3},
        model=ModelConfig(
            stem_widths=(4, 4, 8),
            core_widths=(8, 16),
            cond_widths=(4, 4),
            cond_channels=8,
            gate_width=4,
            emb_dim=16,
            fourier_dim=8,
            norm_groups=4,
        ),
    )


PROFILES = {"full": full_profile, "smoke": smoke_profile}


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply dotted key=value strings (values parsed as JSON, else kept as
    strings) to a nested config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = value
    return data


def load_config(
    path: str | None = None,
    profile: str | None = None,
    overrides: list[str] | None = None,
) -> PipelineConfig:
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
    name = profile or data.get("profile") or "full"
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}, expected one of {sorted(PROFILES)}")
    base = PROFILES[name]().to_dict()
    for key in ("iters", "cases", "model"):
        if key in data:
            merged = dict(base[key])
            merged.update(data[key])
            data[key] = merged
    base.update(data)
    base["profile"] = name
    apply_overrides(base, overrides or [])
    return PipelineConfig.from_dict(base)


# ---------------------------------------------------------------------------
# evaluation case construction

_EVAL_BACKGROUNDS = ("flat", "gradient", "noise_texture")


def _anchored_path(motion: dict, anchor: np.ndarray, num_frames: int) -> np.ndarray:
    """Path of a motion spec re-anchored so the frame-0 position is anchor."""
    motion = dict(motion)
    motion["_num_frames"] = num_frames
    raw = motion_center(motion, (0.0, 0.0), np.arange(num_frames))
    return raw - raw[0] + anchor[None, :]


def _sinusoid(rng: np.random.Generator, amp_range=(2.5, 5.0), period_range=(3.0, 6.0)) -> dict:
    signs = rng.choice([-1.0, 1.0], size=2)
    amp = rng.uniform(*amp_range, size=2) * signs
    return {
        "kind": "sinusoid",
        "amplitude": [float(amp[0]), float(amp[1])],
        "period": float(rng.uniform(*period_range)),
        "phase": float(rng.uniform(0.0, 2 * np.pi)),
    }


def _disp(path: np.ndarray) -> np.ndarray:
    return np.diff(path, axis=0)


def _decorrelated_sinusoids(rng: np.random.Generator, num_frames: int):
    """Two sinusoid motions whose displacement sequences have per-axis
    Pearson correlation at most 0.35 (rejection sampled)."""
    origin = np.zeros(2)
    for _ in range(200):
        a = _sinusoid(rng)
        b = _sinusoid(rng)
        if abs(a["period"] - b["period"]) < 0.8:
            continue
        da = _disp(_anchored_path(a, origin, num_frames))
        db = _disp(_anchored_path(b, origin, num_frames))
        if max(abs(pearson(da[:, k], db[:, k])) for k in range(2)) <= 0.35:
            return a, b
    raise RuntimeError("could not draw decorrelated motion pair")


def _bounding_box(paths: list[np.ndarray], half: float, margin: float,
                  h: int, w: int) -> tuple[int, int, int, int]:
    pts = np.concatenate(paths, axis=0)
    left = max(int(math.floor(pts[:, 0].min() - half - margin)), 0)
    right = min(int(math.ceil(pts[:, 0].max() + half + margin)), w - 1)
    top = max(int(math.floor(pts[:, 1].min() - half - margin)), 0)
    bottom = min(int(math.ceil(pts[:, 1].max() + half + margin)), h - 1)
    return top, left, bottom - top + 1, right - left + 1


def _box_disjoint(box_a, box_b, gap: int = 2) -> bool:
    ta, la, ha, wa = box_a
    tb, lb, hb, wb = box_b
    return (la + wa + gap <= lb or lb + wb + gap <= la
            or ta + ha + gap <= tb or tb + hb + gap <= ta)


def _random_background(rng: np.random.Generator) -> dict:
    return {
        "background": _EVAL_BACKGROUNDS[int(rng.integers(len(_EVAL_BACKGROUNDS)))],
        "bg_colors": (random_color(rng), random_color(rng)),
        "bg_axis": "x" if rng.integers(2) == 0 else "y",
        "texture_cells": int(rng.integers(6, 13)),
    }


def _marker_shape(rng, size_range=(9.0, 13.0)) -> tuple[str, float]:
    kind = "square" if rng.integers(2) == 0 else "disc"
    return kind, float(rng.uniform(*size_range))


def _distractor(rng, num_frames, h, w, forbidden_box, size_range=(8.0, 12.0)):
    """Moving non-marker shape whose path box avoids the editable box."""
    from .scenes import random_shape

    for _ in range(100):
        shape = random_shape(rng, num_frames, w, h, size_range=size_range)
        path = shape.centers(num_frames)
        box = _bounding_box([path], shape.size / 2.0, 1.0, h, w)
        if _box_disjoint(box, forbidden_box):
            return shape
    return None


def _write_case(case_dir: Path, video: np.ndarray, mask: EditMask,
                tracks: list[PointTrack], seed: int, truth: dict,
                first_frame: np.ndarray | None = None):
    case_dir.mkdir(parents=True, exist_ok=True)
    save_video(video, case_dir / "video")
    mask.save_png(case_dir / "mask.png")
    save_tracks(tracks, case_dir / "tracks.json")
    spec = {"video": "video", "mask": "mask.png", "tracks": "tracks.json", "seed": seed}
    if first_frame is not None:
        frame = (np.clip(first_frame, 0, 1) * 255.0).round().astype(np.uint8)
        Image.fromarray(frame.transpose(1, 2, 0)).save(case_dir / "first_frame.png")
        spec["first_frame"] = "first_frame.png"
    (case_dir / "edit.json").write_text(json.dumps(spec, sort_keys=True, indent=2))
    write_report(case_dir / "truth.json", truth)


def make_decoupled_case(seed: int, num_frames: int, size: int, case_dir: Path):
    """Source object and a preserved reference share one motion pattern;
    the command is a decorrelated pattern. Following the command instead of
    the content-implied motion is exactly what the metric rewards."""
    rng = np.random.default_rng(seed)
    h = w = size
    m_src, m_cmd = _decorrelated_sinusoids(rng, num_frames)
    kind, msize = _marker_shape(rng)
    half = msize / 2.0

    for _ in range(200):
        init = rng.uniform(size * 0.3, size * 0.7, size=2)
        marker = ShapeSpec(kind, msize, EDIT_MARKER_COLOR, m_src, tuple(init))
        src_path = marker.centers(num_frames)
        cmd_path = _anchored_path(m_cmd, src_path[0], num_frames)
        lo = np.minimum(src_path.min(0), cmd_path.min(0)) - half - 3
        hi = np.maximum(src_path.max(0), cmd_path.max(0)) + half + 3
        if lo.min() >= 1 and hi[0] <= w - 2 and hi[1] <= h - 2:
            break
    else:
        raise RuntimeError("could not place decoupled case marker")
    box = _bounding_box([src_path, cmd_path], half, 3.0, h, w)

    ref = None
    for _ in range(200):
        ref_size = float(rng.uniform(8.0, 11.0))
        ref_init = rng.uniform(ref_size, size - 1 - ref_size, size=2)
        cand = ShapeSpec(
            "square" if rng.integers(2) else "disc", ref_size,
            random_color(rng), m_src, (float(ref_init[0]), float(ref_init[1])),
        )
        ref_path = cand.centers(num_frames)
        if ref_path.min() < ref_size / 2 + 1:
            continue
        if max(ref_path[:, 0].max(), ref_path[:, 1].max()) > size - 2 - ref_size / 2:
            continue
        ref_box = _bounding_box([ref_path], ref_size / 2.0, 1.0, h, w)
        if _box_disjoint(ref_box, box):
            ref = cand
            break
    shapes = [marker] + ([ref] if ref is not None else [])

    cfg = SceneConfig(num_frames=num_frames, width=w, height=h,
                      shapes=shapes, **_random_background(rng))
    scene = Scene(cfg, int(rng.integers(2**63)))
    truth = {
        "kind": "decoupled",
        "commanded": [[float(x), float(y)] for x, y in cmd_path],
        "source": [[float(x), float(y)] for x, y in src_path],
        "has_reference": ref is not None,
    }
    _write_case(case_dir, scene.video(), EditMask.from_box(h, w, *box),
                [PointTrack(cmd_path)], seed & 0x7FFFFFFF, truth)


EDIT_KINDS = ("motion", "content", "both")


def make_edit_case(seed: int, num_frames: int, size: int, case_dir: Path,
                   edit_kind: str):
    """Held-out edit. Motion edits command a fresh path for a marker
    object. Content edits recolor a static object via the conditioning
    first frame and command no motion at all (empty track list): the
    region is expected to stay put. Combined edits recolor and command a
    new path in one pass."""
    if edit_kind not in EDIT_KINDS:
        raise ValueError(f"edit_kind must be one of {EDIT_KINDS}, got {edit_kind!r}")
    rng = np.random.default_rng(seed)
    h = w = size
    kind, msize = _marker_shape(rng)
    half = msize / 2.0

    if edit_kind == "content":
        init = rng.uniform(size * 0.25, size * 0.75, size=2)
        src_motion = {"kind": "linear", "velocity": [0.0, 0.0]}
        probe = ShapeSpec(kind, msize, EDIT_MARKER_COLOR, src_motion, tuple(init))
        src_path = probe.centers(num_frames)
        cmd_path = src_path.copy()
        tracks = []
    else:
        for _ in range(200):
            init = rng.uniform(size * 0.3, size * 0.7, size=2)
            src_motion = _sinusoid(rng, amp_range=(1.5, 3.5))
            if rng.integers(2):
                tgt = rng.uniform(size * 0.25, size * 0.75, size=2)
                src_motion = {"kind": "linear",
                              "velocity": [float((tgt[0] - init[0]) / (num_frames - 1)),
                                           float((tgt[1] - init[1]) / (num_frames - 1))]}
            probe = ShapeSpec(kind, msize, EDIT_MARKER_COLOR, src_motion, tuple(init))
            src_path = probe.centers(num_frames)
            cmd_motion = _sinusoid(rng, amp_range=(3.0, 6.0))
            cmd_path = _anchored_path(cmd_motion, src_path[0], num_frames)
            if np.linalg.norm((cmd_path[-1] - cmd_path[0]) - (src_path[-1] - src_path[0])) < 5.0:
                continue
            lo = np.minimum(src_path.min(0), cmd_path.min(0)) - half - 3
            hi = np.maximum(src_path.max(0), cmd_path.max(0)) + half + 3
            if lo.min() >= 1 and hi[0] <= w - 2 and hi[1] <= h - 2:
                break
        else:
            raise RuntimeError("could not place edit case object")
        tracks = [PointTrack(cmd_path)]
    box = _bounding_box([src_path, cmd_path], half, 3.0, h, w)

    recolor = edit_kind in ("content", "both")
    src_color = random_color(rng) if recolor else EDIT_MARKER_COLOR
    obj = ShapeSpec(kind, msize, src_color, src_motion, tuple(init))
    shapes = [obj]
    d = _distractor(rng, num_frames, h, w, box)
    if d is not None:
        shapes.append(d)
    cfg = SceneConfig(num_frames=num_frames, width=w, height=h,
                      shapes=shapes, **_random_background(rng))
    scene_seed = int(rng.integers(2**63))
    scene = Scene(cfg, scene_seed)

    first_frame = None
    if recolor:
        recolored = SceneConfig(num_frames=num_frames, width=w, height=h,
                                background=cfg.background, bg_colors=cfg.bg_colors,
                                bg_axis=cfg.bg_axis, texture_cells=cfg.texture_cells,
                                shapes=[ShapeSpec(kind, msize, EDIT_MARKER_COLOR,
                                                  src_motion, tuple(init))] + shapes[1:])
        first_frame = Scene(recolored, scene_seed).video()[0]

    truth = {
        "kind": edit_kind,
        "commanded": [[float(x), float(y)] for x, y in cmd_path],
        "source": [[float(x), float(y)] for x, y in src_path],
    }
    _write_case(case_dir, scene.video(), EditMask.from_box(h, w, *box),
                tracks, seed & 0x7FFFFFFF, truth, first_frame)


def make_wavy_case(seed: int, num_frames: int, size: int, case_dir: Path):
    """Motion-only edit with an oscillating command and a rendered exact
    target video for boundary comparisons."""
    rng = np.random.default_rng(seed)
    h = w = size
    kind, msize = _marker_shape(rng)
    half = msize / 2.0

    for _ in range(200):
        init = rng.uniform(size * 0.35, size * 0.65, size=2)
        vel = rng.uniform(-0.6, 0.6, size=2)
        src_motion = {"kind": "linear", "velocity": [float(vel[0]), float(vel[1])]}
        probe = ShapeSpec(kind, msize, EDIT_MARKER_COLOR, src_motion, tuple(init))
        src_path = probe.centers(num_frames)
        cmd_motion = _sinusoid(rng, amp_range=(3.0, 6.0), period_range=(3.0, 6.0))
        cmd_path = _anchored_path(cmd_motion, src_path[0], num_frames)
        lo = np.minimum(src_path.min(0), cmd_path.min(0)) - half - 3
        hi = np.maximum(src_path.max(0), cmd_path.max(0)) + half + 3
        if lo.min() >= 1 and hi[0] <= w - 2 and hi[1] <= h - 2:
            break
    else:
        raise RuntimeError("could not place wavy case object")
    box = _bounding_box([src_path, cmd_path], half, 3.0, h, w)

    flat = {"background": "flat", "bg_colors": (random_color(rng),), "bg_axis": "x",
            "texture_cells": 8}
    obj = ShapeSpec(kind, msize, EDIT_MARKER_COLOR, src_motion, tuple(init))
    cfg = SceneConfig(num_frames=num_frames, width=w, height=h, shapes=[obj], **flat)
    scene = Scene(cfg, int(rng.integers(2**63)))

    target = ShapeSpec(
        kind, msize, EDIT_MARKER_COLOR,
        {"kind": "waypoints", "points": [[float(x), float(y)] for x, y in cmd_path[1:]]},
        (float(cmd_path[0, 0]), float(cmd_path[0, 1])),
    )
    gt_cfg = SceneConfig(num_frames=num_frames, width=w, height=h, shapes=[target], **flat)
    gt = Scene(gt_cfg, scene.seed)

    truth = {
        "kind": "wavy",
        "commanded": [[float(x), float(y)] for x, y in cmd_path],
        "source": [[float(x), float(y)] for x, y in src_path],
    }
    _write_case(case_dir, scene.video(), EditMask.from_box(h, w, *box),
                [PointTrack(cmd_path)], seed & 0x7FFFFFFF, truth)
    save_video(gt.video(), case_dir / "gt_video")


def make_long_case(seed: int, long_frames: int, size: int, case_dir: Path):
    """Long motion edit spanning several windows."""
    rng = np.random.default_rng(seed)
    h = w = size
    kind, msize = _marker_shape(rng)
    half = msize / 2.0

    for _ in range(200):
        init = rng.uniform(size * 0.35, size * 0.65, size=2)
        src_motion = _sinusoid(rng, amp_range=(2.0, 4.0), period_range=(10.0, 16.0))
        probe = ShapeSpec(kind, msize, EDIT_MARKER_COLOR, src_motion, tuple(init))
        src_path = probe.centers(long_frames)
        cmd_motion = _sinusoid(rng, amp_range=(3.0, 6.0), period_range=(9.0, 15.0))
        cmd_path = _anchored_path(cmd_motion, src_path[0], long_frames)
        lo = np.minimum(src_path.min(0), cmd_path.min(0)) - half - 3
        hi = np.maximum(src_path.max(0), cmd_path.max(0)) + half + 3
        if lo.min() >= 1 and hi[0] <= w - 2 and hi[1] <= h - 2:
            break
    else:
        raise RuntimeError("could not place long case object")
    box = _bounding_box([src_path, cmd_path], half, 3.0, h, w)

    obj = ShapeSpec(kind, msize, EDIT_MARKER_COLOR, src_motion, tuple(init))
    shapes = [obj]
    d = _distractor(rng, long_frames, h, w, box)
    if d is not None:
        shapes.append(d)
    cfg = SceneConfig(num_frames=long_frames, width=w, height=h,
                      shapes=shapes, **_random_background(rng))
    scene = Scene(cfg, int(rng.integers(2**63)))
    truth = {
        "kind": "long",
        "commanded": [[float(x), float(y)] for x, y in cmd_path],
        "source": [[float(x), float(y)] for x, y in src_path],
    }
    _write_case(case_dir, scene.video(), EditMask.from_box(h, w, *box),
                [PointTrack(cmd_path)], seed & 0x7FFFFFFF, truth)


def generate_data(cfg: PipelineConfig, out_dir: str | Path) -> dict:
    """Build all held-out evaluation suites under out_dir/data."""
    data_dir = Path(out_dir) / "data"
    counts = {}
    for i in range(cfg.cases["decoupled"]):
        make_decoupled_case(derive_seed(cfg.seed, "data", "decoupled", i),
                            cfg.num_frames, cfg.frame_size,
                            data_dir / "decoupled" / f"case_{i:02d}")
    counts["decoupled"] = cfg.cases["decoupled"]
    n_edits = cfg.cases["edits"]
    for i in range(n_edits):
        make_edit_case(derive_seed(cfg.seed, "data", "edits", i),
                       cfg.num_frames, cfg.frame_size,
                       data_dir / "edits" / f"case_{i:02d}",
                       edit_kind=EDIT_KINDS[i % len(EDIT_KINDS)])
    counts["edits"] = n_edits
    for i in range(cfg.cases["wavy"]):
        make_wavy_case(derive_seed(cfg.seed, "data", "wavy", i),
                       cfg.num_frames, cfg.frame_size,
                       data_dir / "wavy" / f"case_{i:02d}")
    counts["wavy"] = cfg.cases["wavy"]
    masks_dir = data_dir / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    for i in range(cfg.cases["masks"]):
        rng = np.random.default_rng(derive_seed(cfg.seed, "data", "masks", i))
        s = cfg.frame_size
        bh = int(rng.integers(16, s - 16))
        bw = int(rng.integers(16, s - 16))
        top = int(rng.integers(0, s - bh + 1))
        left = int(rng.integers(0, s - bw + 1))
        EditMask.from_box(s, s, top, left, bh, bw).save_png(masks_dir / f"mask_{i:02d}.png")
    counts["masks"] = cfg.cases["masks"]
    make_long_case(derive_seed(cfg.seed, "data", "long", 0),
                   cfg.long_frames, cfg.frame_size, data_dir / "long" / "case_00")
    counts["long"] = 1
    return counts


# ---------------------------------------------------------------------------
# training orchestration

ACCEPTANCE_BRANCHES = ("full", "naive_joint", "sum_fusion", "static_gate")


def train_branch(cfg: PipelineConfig, out_dir: str | Path, mode: str,
                 quiet: bool = False) -> list[dict]:
    """Train one mode into out_dir/models. Stages shared with previously
    trained modes (same stage name) are reused via their checkpoints."""
    torch.set_num_threads(1)
    models_dir = Path(out_dir) / "models"
    stages = make_curriculum(mode, iters=dict(cfg.iters),
                             batch_size=cfg.batch_size, lr=cfg.lr)
    for st in stages:
        st.num_frames = cfg.num_frames
        st.frame_size = cfg.frame_size
    # every branch starts from the same seeded init; shared early stages
    # then restore identical weights from their checkpoints
    torch.manual_seed(derive_seed(cfg.seed, "model_init"))
    model = EditModel(cfg.model)
    return run_curriculum(model, stages, models_dir, cfg.seed, quiet=quiet)


def final_stage_name(mode: str) -> str:
    return make_curriculum(mode)[-1].name


def load_model_for_eval(cfg: PipelineConfig, out_dir: str | Path, mode: str):
    """Load a branch's final checkpoint; returns (model, edit_config)."""
    ckpt = Path(out_dir) / "models" / final_stage_name(mode) / "final.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"missing checkpoint for mode {mode!r}: {ckpt}")
    model = EditModel(cfg.model)
    meta = load_checkpoint(ckpt, model)
    model.static_gate = bool(meta.get("static_gate", False))
    model.to(memory_format=torch.channels_last)
    model.eval()
    edit_cfg = EditConfig(
        sampler=SamplerConfig(steps=cfg.sampler_steps),
        fusion=meta.get("fusion") or "gated",
        window=cfg.window,
    )
    return model, edit_cfg


# ---------------------------------------------------------------------------
# evaluation suites


def _case_dirs(out_dir: Path, suite: str) -> list[Path]:
    root = Path(out_dir) / "data" / suite
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no cases found under {root}")
    return dirs


def _truth(case_dir: Path) -> dict:
    return json.loads((case_dir / "truth.json").read_text())


def eval_decoupled(cfg: PipelineConfig, out_dir: Path, models: dict) -> dict:
    """Endpoint error and motion attribution per case for each model."""
    report = {"cases": {}, "summary": {}}
    for name, (model, edit_cfg) in models.items():
        rows = []
        for case_dir in _case_dirs(out_dir, "decoupled"):
            spec = EditSpec.load(case_dir / "edit.json")
            truth = _truth(case_dir)
            edited = edit_video(model, spec, edit_cfg)
            commanded = PointTrack(np.asarray(truth["commanded"]))
            source = PointTrack(np.asarray(truth["source"]))
            try:
                realized = locate_marker(edited)
                ep = endpoint_error(realized, commanded)
                attr = motion_attribution(realized, commanded, source)
                row = {
                    "case": case_dir.name,
                    "endpoint_mean": ep["mean"],
                    "endpoint_final": ep["final"],
                    "corr_commanded": attr["corr_commanded"],
                    "corr_source": attr["corr_source"],
                    "marker_found": True,
                }
            except ValueError:
                row = {
                    "case": case_dir.name,
                    "endpoint_mean": float(cfg.frame_size),
                    "endpoint_final": float(cfg.frame_size),
                    "corr_commanded": 0.0,
                    "corr_source": 0.0,
                    "marker_found": False,
                }
            rows.append(row)
        follows = [r["corr_commanded"] > r["corr_source"] for r in rows]
        report["cases"][name] = rows
        report["summary"][name] = {
            "mean_endpoint": float(np.mean([r["endpoint_mean"] for r in rows])),
            "frac_follows_command": float(np.mean(follows)),
        }
    return report


def eval_edits(cfg: PipelineConfig, out_dir: Path, model, edit_cfg) -> dict:
    rows = []
    for case_dir in _case_dirs(out_dir, "edits"):
        spec = EditSpec.load(case_dir / "edit.json")
        truth = _truth(case_dir)
        edited = edit_video(model, spec, edit_cfg)
        source = np.asarray(spec.video)
        preserved = spec.mask.mask > 0.5
        psnr = region_psnr(edited, source, preserved)
        consistency = temporal_consistency(edited, preserved)
        commanded = PointTrack(np.asarray(truth["commanded"]))
        try:
            realized = locate_marker(edited)
            ep = endpoint_error(realized, commanded)
            found = True
        except ValueError:
            ep = {"mean": float(cfg.frame_size), "final": float(cfg.frame_size)}
            found = False
        rows.append({
            "case": case_dir.name,
            "kind": truth["kind"],
            "psnr_preserved": psnr,
            "temporal_consistency": consistency,
            "endpoint_mean": ep["mean"],
            "endpoint_final": ep["final"],
            "marker_found": found,
        })
    def _mean(key, kinds):
        vals = [r[key] for r in rows if r["kind"] in kinds]
        return float(np.mean(vals)) if vals else None
    return {
        "cases": rows,
        "summary": {
            "mean_psnr_preserved": float(np.mean([r["psnr_preserved"] for r in rows])),
            # Commanded-path accuracy pools pure motion edits with combined
            # edits; content-only edits are held to the stay-put bound.
            "mean_endpoint_motion": _mean("endpoint_mean", ("motion", "both")),
            "mean_endpoint_content": _mean("endpoint_mean", ("content",)),
            "mean_temporal_consistency": float(
                np.mean([r["temporal_consistency"] for r in rows])),
        },
    }


def eval_wavy(cfg: PipelineConfig, out_dir: Path, models: dict) -> dict:
    report = {"cases": {}, "summary": {}}
    for name, (model, edit_cfg) in models.items():
        rows = []
        for case_dir in _case_dirs(out_dir, "wavy"):
            spec = EditSpec.load(case_dir / "edit.json")
            truth = _truth(case_dir)
            gt = load_video(case_dir / "gt_video")
            edited = edit_video(model, spec, edit_cfg)
            commanded = PointTrack(np.asarray(truth["commanded"]))
            try:
                realized = locate_marker(edited)
                ep_mean = endpoint_error(realized, commanded)["mean"]
            except ValueError:
                ep_mean = float(cfg.frame_size)
            rows.append({
                "case": case_dir.name,
                "endpoint_mean": ep_mean,
                "boundary_mse": boundary_band_mse(edited, gt, spec.mask, radius=4),
            })
        report["cases"][name] = rows
        report["summary"][name] = {
            "mean_endpoint": float(np.mean([r["endpoint_mean"] for r in rows])),
            "mean_boundary_mse": float(np.mean([r["boundary_mse"] for r in rows])),
        }
    return report


GATE_SIGMAS = (0.05, 0.3, 1.0, 5.0, 40.0)


def eval_gate(cfg: PipelineConfig, out_dir: Path, model) -> dict:
    """Gate statistics per (mask, sigma): bounds and preserved-vs-editable
    separation, computed directly from the gate network."""
    mask_paths = sorted((Path(out_dir) / "data" / "masks").glob("mask_*.png"))
    if not mask_paths:
        raise FileNotFoundError("no mask files for gate evaluation")
    rows = []
    with torch.no_grad():
        for mp in mask_paths:
            mask = EditMask.load_png(mp)
            mt = torch.from_numpy(mask.mask)[None, None]
            m8 = torch.nn.functional.avg_pool2d(mt, 8)[0, 0].numpy()
            preserved = m8 >= 0.5
            for sigma in GATE_SIGMAS:
                c_noise = torch.tensor([math.log(sigma) / 4.0])
                g = model.control.gate(mt, c_noise, model.static_gate)[0, 0].numpy()
                rows.append({
                    "mask": mp.name,
                    "sigma": sigma,
                    "gate_min": float(g.min()),
                    "gate_max": float(g.max()),
                    "mean_preserved": float(g[preserved].mean()),
                    "mean_editable": float(g[~preserved].mean()),
                })
    n_ok = sum(r["mean_preserved"] > r["mean_editable"] for r in rows)
    return {
        "cases": rows,
        "summary": {
            "gate_min": float(min(r["gate_min"] for r in rows)),
            "gate_max": float(max(r["gate_max"] for r in rows)),
            "combos_separated": n_ok,
            "combos_total": len(rows),
        },
    }


def eval_long(cfg: PipelineConfig, out_dir: Path, model, edit_cfg) -> dict:
    case_dir = _case_dirs(out_dir, "long")[0]
    spec = EditSpec.load(case_dir / "edit.json")
    truth = _truth(case_dir)
    edited = edit_long_video(model, spec, edit_cfg)
    source = np.asarray(spec.video)
    preserved = spec.mask.mask > 0.5
    length = edited.shape[0]
    step = edit_cfg.window - 1
    n_windows = max(1, -(-(length - 1) // step))
    windows = []
    for wi in range(n_windows):
        s = wi * step
        fr = slice(s, min(s + edit_cfg.window, length))
        windows.append(region_psnr(edited[fr], source[fr], preserved))
    # seam smoothness: the frame pair straddling each window join is
    # (s, s+1) where s = join frame index, so its delta sits at index s
    deltas = np.abs(np.diff(edited, axis=0)).mean(axis=(1, 2, 3))
    seam_set = {wi * step for wi in range(1, n_windows)}
    seam_d = [float(deltas[s]) for s in seam_set if s < len(deltas)]
    within_d = [float(d) for i, d in enumerate(deltas) if i not in seam_set]
    commanded = PointTrack(np.asarray(truth["commanded"]))
    try:
        realized = locate_marker(edited)
        ep_mean = endpoint_error(realized, commanded)["mean"]
    except ValueError:
        ep_mean = float(cfg.frame_size)
    return {
        "length": int(length),
        "source_length": int(source.shape[0]),
        "num_windows": int(n_windows),
        "psnr_per_window": [float(p) for p in windows],
        "max_seam_delta": float(max(seam_d)) if seam_d else 0.0,
        "max_within_delta": float(max(within_d)) if within_d else 0.0,
        "endpoint_mean": float(ep_mean),
    }


# ---------------------------------------------------------------------------
# acceptance assembly


def evaluate(cfg: PipelineConfig, out_dir: str | Path) -> dict:
    """Run all suites against trained branches and write reports."""
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    reports_dir = out_dir / "reports"
    full_model, full_edit = load_model_for_eval(cfg, out_dir, "full")
    naive_model, naive_edit = load_model_for_eval(cfg, out_dir, "naive_joint")
    sum_model, sum_edit = load_model_for_eval(cfg, out_dir, "sum_fusion")
    static_model, static_edit = load_model_for_eval(cfg, out_dir, "static_gate")

    decoupled = eval_decoupled(cfg, out_dir, {
        "full": (full_model, full_edit),
        "naive_joint": (naive_model, naive_edit),
    })
    write_report(reports_dir / "decoupled.json", decoupled)

    edits = eval_edits(cfg, out_dir, full_model, full_edit)
    write_report(reports_dir / "edits.json", edits)

    wavy = eval_wavy(cfg, out_dir, {
        "full": (full_model, full_edit),
        "sum_fusion": (sum_model, sum_edit),
        "static_gate": (static_model, static_edit),
    })
    write_report(reports_dir / "wavy.json", wavy)

    gate = eval_gate(cfg, out_dir, full_model)
    write_report(reports_dir / "gate.json", gate)

    long_rep = eval_long(cfg, out_dir, full_model, full_edit)
    write_report(reports_dir / "long.json", long_rep)

    acceptance = build_acceptance_report(cfg, decoupled, edits, wavy, gate, long_rep)
    write_report(out_dir / "acceptance_report.json", acceptance)
    return acceptance


def build_acceptance_report(cfg, decoupled, edits, wavy, gate, long_rep) -> dict:
    ds = decoupled["summary"]
    ws = wavy["summary"]
    es = edits["summary"]
    gs = gate["summary"]
    psnr_w = long_rep["psnr_per_window"]
    crit = {
        "decoupling_vs_naive": {
            "full_mean_endpoint": ds["full"]["mean_endpoint"],
            "naive_mean_endpoint": ds["naive_joint"]["mean_endpoint"],
            "full_frac_follows_command": ds["full"]["frac_follows_command"],
            "naive_frac_follows_command": ds["naive_joint"]["frac_follows_command"],
            "passed": bool(
                ds["full"]["mean_endpoint"] < ds["naive_joint"]["mean_endpoint"]
                and ds["full"]["frac_follows_command"] >= 0.8
                and ds["naive_joint"]["frac_follows_command"] <= 0.5
            ),
        },
        "edit_quality": {
            "mean_psnr_preserved": es["mean_psnr_preserved"],
            "mean_endpoint_motion": es["mean_endpoint_motion"],
            "mean_endpoint_content": es["mean_endpoint_content"],
            "passed": bool(
                es["mean_psnr_preserved"] >= 25.0
                and es["mean_endpoint_motion"] is not None
                and es["mean_endpoint_motion"] <= 3.0
                and es["mean_endpoint_content"] is not None
                and es["mean_endpoint_content"] <= 2.0
            ),
        },
        "fusion_ablations": {
            "full_mean_endpoint_wavy": ws["full"]["mean_endpoint"],
            "sum_fusion_mean_endpoint_wavy": ws["sum_fusion"]["mean_endpoint"],
            "full_mean_boundary_mse": ws["full"]["mean_boundary_mse"],
            "static_gate_mean_boundary_mse": ws["static_gate"]["mean_boundary_mse"],
            "passed": bool(
                ws["sum_fusion"]["mean_endpoint"] > ws["full"]["mean_endpoint"]
                and ws["static_gate"]["mean_boundary_mse"] > ws["full"]["mean_boundary_mse"]
            ),
        },
        "gate_behavior": {
            "gate_min": gs["gate_min"],
            "gate_max": gs["gate_max"],
            "combos_separated": gs["combos_separated"],
            "combos_total": gs["combos_total"],
            "passed": bool(
                0.0 <= gs["gate_min"]
                and gs["gate_max"] <= 1.0
                and gs["combos_separated"] == gs["combos_total"]
            ),
        },
        "long_video": {
            "length_ok": bool(long_rep["length"] == long_rep["source_length"]),
            "num_windows": long_rep["num_windows"],
            "psnr_first_window": psnr_w[0],
            "psnr_last_window": psnr_w[-1],
            "max_seam_delta": long_rep["max_seam_delta"],
            "max_within_delta": long_rep["max_within_delta"],
            "passed": bool(
                long_rep["length"] == long_rep["source_length"]
                and psnr_w[-1] >= 0.5 * psnr_w[0]
                and long_rep["max_seam_delta"]
                <= 2.0 * max(long_rep["max_within_delta"], 1e-6)
            ),
        },
    }
    return {"config": cfg.to_dict(), "criteria": crit}


# ---------------------------------------------------------------------------
# manifest and the one-command pipeline


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str | Path) -> dict:
    """Hash checkpoints, reports, and data files (training logs excluded:
    they append across resumed runs)."""
    out_dir = Path(out_dir)
    files = {}
    patterns = ["models/**/final.ckpt", "reports/*.json", "acceptance_report.json",
                "data/**/*.json", "data/**/*.png"]
    for pat in patterns:
        for p in sorted(out_dir.glob(pat)):
            files[str(p.relative_to(out_dir))] = _sha256_file(p)
    manifest = {"files": files}
    write_report(out_dir / "manifest.json", manifest)
    return manifest


def reproduce(cfg: PipelineConfig, out_dir: str | Path, quiet: bool = False) -> dict:
    """Data, training (all acceptance branches), evaluation, manifest."""
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    generate_data(cfg, out_dir)
    for mode in ACCEPTANCE_BRANCHES:
        train_branch(cfg, out_dir, mode, quiet=quiet)
    acceptance = evaluate(cfg, out_dir)
    write_manifest(out_dir)
    return acceptance


# ---------------------------------------------------------------------------
# small visual helper


def contact_sheet(video: np.ndarray, path: str | Path, cols: int | None = None):
    """Tile frames into one PNG for quick human inspection."""
    v = np.asarray(video)
    n, _, h, w = v.shape
    cols = cols or min(n, 8)
    rows = -(-n // cols)
    sheet = np.ones((rows * h + (rows - 1) * 2, cols * w + (cols - 1) * 2, 3),
                    dtype=np.float32)
    for i in range(n):
        r, c = divmod(i, cols)
        y, x = r * (h + 2), c * (w + 2)
        sheet[y : y + h, x : x + w] = v[i].transpose(1, 2, 0)
    img = (np.clip(sheet, 0, 1) * 255.0).round().astype(np.uint8)
    Image.fromarray(img).save(path)
