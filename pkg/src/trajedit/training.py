"""Staged training of the edit model.

Four data regimes feed the curriculum:

  plain      clean scenes, first-frame conditioning only (base pretraining)
  motion     scenes plus whole-frame sampled trajectories (motion prior)
  decoupled  two independent scenes composited through a random mask, so
             the preserved content says nothing about the commanded motion
  masked     one scene with a mask around a shape's path, content and
             motion conditions drawn from the same video

Each curriculum stage fixes a data regime, a fusion mode, and the set of
trainable parameter roles. Training is deterministic and resumable: the
batch for iteration i is a pure function of (root seed, stage name, i), and
checkpoints carry optimizer state, so an interrupted run continues to the
same final weights bit for bit.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .conditioning import EditMask, compose_decoupled, masked_video
from .diffusion import LossConfig, dsm_loss
from .model import (
    EditModel,
    init_control_from_base,
    load_checkpoint,
    save_checkpoint,
    set_trainable,
    state_hash,
    trainable_parameters,
)
from .model.params import load_tensors
from .scenes import Scene, random_scene_config, random_shape
from .seeding import derive_seed
from .trajectory import TrackSamplerConfig, sample_motion_condition

DATA_REGIMES = ("plain", "motion", "decoupled", "masked")

# Sampling quality at small batch sizes depends on averaging away optimizer
# noise; evaluation loads the bias-corrected average (load_checkpoint
# prefer_ema) while stages hand raw weights forward.
EMA_DECAY = 0.999


@dataclass
class StageConfig:
    name: str
    data: str
    fusion: str | None
    roles: tuple[str, ...]
    iters: int
    batch_size: int = 8
    lr: float = 1e-4
    static_gate: bool = False
    init_control: bool = False  # copy base trunk into control before training
    num_frames: int = 8
    frame_size: int = 64
    max_tracks: int = 10
    log_every: int = 50
    checkpoint_every: int = 500

    def validate(self):
        if self.data not in DATA_REGIMES:
            raise ValueError(f"unknown data regime {self.data!r}")
        if self.iters < 1 or self.batch_size < 1:
            raise ValueError("iters and batch_size must be >= 1")
        if self.data != "plain" and self.fusion is None:
            raise ValueError(f"data regime {self.data!r} needs a fusion mode")


def make_curriculum(
    mode: str = "full",
    iters: dict[str, int] | None = None,
    batch_size: int = 8,
    lr: float = 1e-4,
) -> list[StageConfig]:
    """Stage list for a training mode.

    full: pretrain -> motion_prior -> decouple -> harmonize.
    Ablation modes replace or truncate the sequence; branch points (which
    earlier checkpoint a mode resumes from) are handled by the caller.
    """
    it = {
        "pretrain": 3000,
        "motion_prior": 4000,
        "decouple": 3000,
        "harmonize": 2000,
        "joint": 4500,
        "ablation": 1500,
    }
    it.update(iters or {})
    kw = dict(batch_size=batch_size, lr=lr)
    pretrain = StageConfig("pretrain", "plain", None, ("base",), it["pretrain"], **kw)
    motion_prior = StageConfig(
        "motion_prior", "motion", "motion_only",
        ("control_trunk", "motion_encoder", "zero_convs"),
        it["motion_prior"], init_control=True, **kw,
    )
    decouple = StageConfig(
        "decouple", "decoupled", "sum",
        ("control_trunk", "motion_encoder", "content_encoder", "zero_convs"),
        it["decouple"], **kw,
    )
    harmonize = StageConfig(
        "harmonize", "masked", "gated", ("temporal_kv", "gate"), it["harmonize"], **kw
    )
    if mode == "full":
        return [pretrain, motion_prior, decouple, harmonize]
    if mode == "naive_joint":
        joint = StageConfig(
            "joint", "masked", "gated",
            ("base", "control_trunk", "motion_encoder", "content_encoder",
             "zero_convs", "gate"),
            it["joint"], init_control=True, **kw,
        )
        return [pretrain, joint]
    if mode == "sum_fusion":
        alt = StageConfig(
            "harmonize_sum", "masked", "sum", ("temporal_kv",), it["ablation"], **kw
        )
        return [pretrain, motion_prior, decouple, alt]
    if mode == "static_gate":
        alt = StageConfig(
            "harmonize_static", "masked", "gated", ("temporal_kv", "gate"),
            it["ablation"], static_gate=True, **kw,
        )
        return [pretrain, motion_prior, decouple, alt]
    if mode == "tune_all_stage3":
        alt = StageConfig(
            "harmonize_all", "masked", "gated",
            ("base", "control_trunk", "motion_encoder", "content_encoder",
             "zero_convs", "gate"),
            it["ablation"], **kw,
        )
        return [pretrain, motion_prior, decouple, alt]
    if mode == "no_base_tuning":
        alt = StageConfig(
            "harmonize_nobase", "masked", "gated",
            ("temporal_kv_control", "gate"), it["ablation"], **kw,
        )
        return [pretrain, motion_prior, decouple, alt]
    if mode == "tune_spatial":
        alt = StageConfig(
            "harmonize_spatial", "masked", "gated", ("spatial_kv", "gate"),
            it["ablation"], **kw,
        )
        return [pretrain, motion_prior, decouple, alt]
    raise ValueError(f"unknown training mode {mode!r}")


TRAINING_MODES = (
    "full", "naive_joint", "sum_fusion", "static_gate",
    "tune_all_stage3", "no_base_tuning", "tune_spatial",
)

# stage name of the full curriculum each alternate mode branches from
BRANCH_POINTS = {
    "naive_joint": "pretrain",
    "sum_fusion": "decouple",
    "static_gate": "decouple",
    "tune_all_stage3": "decouple",
    "no_base_tuning": "decouple",
    "tune_spatial": "decouple",
}


# ---------------------------------------------------------------------------
# example synthesis


def _random_box(rng: np.random.Generator, h: int, w: int, lo: int = 20, hi: int = 44):
    # clamp to the frame so small debug frame sizes still get a valid box
    bh = int(rng.integers(min(lo, h), min(hi, h) + 1))
    bw = int(rng.integers(min(lo, w), min(hi, w) + 1))
    top = int(rng.integers(0, h - bh + 1))
    left = int(rng.integers(0, w - bw + 1))
    return top, left, bh, bw


def _overlapping_box(rng: np.random.Generator, h: int, w: int, box,
                     lo: int = 12, hi: int = 32):
    """A second rectangle guaranteed to intersect `box`: pick an anchor
    pixel inside `box` and place the new rectangle around it."""
    top, left, bh, bw = box
    py = int(rng.integers(top, top + bh))
    px = int(rng.integers(left, left + bw))
    b2h = int(rng.integers(min(lo, h), min(hi, h) + 1))
    b2w = int(rng.integers(min(lo, w), min(hi, w) + 1))
    t2 = int(rng.integers(max(0, py - b2h + 1), min(h - b2h, py) + 1))
    l2 = int(rng.integers(max(0, px - b2w + 1), min(w - b2w, px) + 1))
    return t2, l2, b2h, b2w


def _region_mask(rng: np.random.Generator, h: int, w: int, box,
                 p_irregular: float = 0.25) -> EditMask:
    """Editing region for conditioned regimes: the given rectangle, or with
    probability p_irregular the union of it and an overlapping second
    rectangle, so the model also sees non-rectangular regions."""
    boxes = [box]
    if rng.uniform() < p_irregular:
        boxes.append(_overlapping_box(rng, h, w, box))
    m = np.ones((h, w), dtype=np.float32)
    for top, left, bh, bw in boxes:
        m[top:top + bh, left:left + bw] = 0.0
    return EditMask(m)


def _path_box(shape, num_frames: int, h: int, w: int, margin: float):
    """Axis-aligned box covering the shape at every frame, plus a margin."""
    centers = shape.centers(num_frames)
    half = shape.size / 2.0
    left = int(np.floor(centers[:, 0].min() - half - margin))
    right = int(np.ceil(centers[:, 0].max() + half + margin))
    top = int(np.floor(centers[:, 1].min() - half - margin))
    bottom = int(np.ceil(centers[:, 1].max() + half + margin))
    top, left = max(top, 0), max(left, 0)
    bottom, right = min(bottom, h - 1), min(right, w - 1)
    return top, left, bottom - top + 1, right - left + 1


def _motion_for(scene: Scene, region: np.ndarray | None, rng, max_tracks: int):
    cfg = TrackSamplerConfig(region=region)
    n = int(rng.integers(1, max_tracks + 1))
    cond, _ = sample_motion_condition(scene.track_field(), cfg, n, rng)
    return cond.maps


def _maybe_static(shape, rng: np.random.Generator, p: float = 0.15):
    """Occasionally hold the edit-region object still, so all-zero
    displacement maps have a learned meaning (content-only edits command
    no motion and expect the region to stay put)."""
    if rng.uniform() < p:
        shape.motion = {"kind": "linear", "velocity": [0.0, 0.0]}
    return shape


def make_example(stage: StageConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """One training example for the stage's data regime, as numpy arrays:
    video (N, 3, H, W) in [0, 1], motion (N, 2, H, W), mask (H, W).

    Training scenes draw from the full color cube (avoid_color=None);
    the reserved-color exclusion is an evaluation-scene concern."""
    n, hw = stage.num_frames, stage.frame_size
    if stage.data == "plain":
        scene = Scene(random_scene_config(rng, n, hw, hw, avoid_color=None),
                      int(rng.integers(2**63)))
        return {"video": scene.video()}
    if stage.data == "motion":
        scene = Scene(random_scene_config(rng, n, hw, hw, avoid_color=None),
                      int(rng.integers(2**63)))
        return {"video": scene.video(), "motion": _motion_for(scene, None, rng, stage.max_tracks)}
    if stage.data == "decoupled":
        keep = Scene(random_scene_config(rng, n, hw, hw, avoid_color=None),
                     int(rng.integers(2**63)))
        box = _random_box(rng, hw, hw)
        edit_cfg = random_scene_config(rng, n, hw, hw, max_shapes=1, avoid_color=None)
        # re-anchor the edit scene's shape inside the box so the editable
        # region actually contains commanded motion
        edit_cfg.shapes = [_maybe_static(
            random_shape(rng, n, hw, hw, region=box, avoid_color=None), rng)]
        edit = Scene(edit_cfg, int(rng.integers(2**63)))
        mask = _region_mask(rng, hw, hw, box)
        video = compose_decoupled(keep.video(), edit.video(), mask)
        motion = _motion_for(edit, mask.editable > 0.5, rng, stage.max_tracks)
        return {
            "video": video,
            "content": masked_video(video, mask),
            "motion": motion,
            "mask": mask.mask,
        }
    # masked: one scene, box around the first shape's path
    cfg = random_scene_config(rng, n, hw, hw, avoid_color=None)
    cfg.shapes[0] = _maybe_static(cfg.shapes[0], rng)
    scene = Scene(cfg, int(rng.integers(2**63)))
    box = _path_box(cfg.shapes[0], n, hw, hw, margin=float(rng.uniform(2.0, 6.0)))
    mask = _region_mask(rng, hw, hw, box)
    video = scene.video()
    motion = _motion_for(scene, mask.editable > 0.5, rng, stage.max_tracks)
    return {
        "video": video,
        "content": masked_video(video, mask),
        "motion": motion,
        "mask": mask.mask,
    }


def make_batch(stage: StageConfig, rng: np.random.Generator):
    """Stack examples into model-space tensors: x0 and the condition dict."""
    examples = [make_example(stage, rng) for _ in range(stage.batch_size)]
    video = torch.from_numpy(np.stack([e["video"] for e in examples])) - 0.5
    cond = {"first_frame": video[:, 0]}
    if "motion" in examples[0]:
        cond["motion"] = torch.from_numpy(np.stack([e["motion"] for e in examples]))
    if "content" in examples[0]:
        content = torch.from_numpy(np.stack([e["content"] for e in examples])) - 0.5
        cond["content"] = content
        cond["mask"] = torch.from_numpy(np.stack([e["mask"] for e in examples]))[:, None]
    return video, cond


# ---------------------------------------------------------------------------
# stage runner


def _latest_checkpoint(stage_dir: Path) -> Path | None:
    if (stage_dir / "final.ckpt").exists():
        return stage_dir / "final.ckpt"
    steps = sorted(stage_dir.glob("step_*.ckpt"))
    return steps[-1] if steps else None


def run_stage(
    model: EditModel,
    stage: StageConfig,
    out_dir: str | Path,
    root_seed: int,
    quiet: bool = False,
) -> dict:
    """Train one stage, resuming from its newest checkpoint if present.

    Returns a summary dict. The model is mutated in place; frozen roles are
    bit-identical before and after.
    """
    stage.validate()
    stage_dir = Path(out_dir) / stage.name
    stage_dir.mkdir(parents=True, exist_ok=True)
    log_path = stage_dir / "log.jsonl"

    resume = _latest_checkpoint(stage_dir)
    if resume is None and stage.init_control:
        init_control_from_base(model)
    model.static_gate = stage.static_gate
    model.to(memory_format=torch.channels_last)
    n_train = set_trainable(model, stage.roles)
    optimizer = torch.optim.Adam(trainable_parameters(model), lr=stage.lr)
    ema = {n: torch.zeros_like(p) for n, p in model.named_parameters() if p.requires_grad}
    ema_steps = 0

    start = 0
    if resume is not None:
        meta = load_checkpoint(resume, model, optimizer)
        start = int(meta["iter"]) + 1
        ema_steps = int(meta.get("ema_steps", 0))
        tensors, _ = load_tensors(resume)
        for k, v in tensors.items():
            if k.startswith("ema/") and k[len("ema/") :] in ema:
                ema[k[len("ema/") :]] = v
        if not quiet:
            print(f"[{stage.name}] resumed at iter {start} from {resume.name}",
                  file=sys.stderr)
    if not quiet:
        print(f"[{stage.name}] {stage.iters} iters, {n_train} trainable params",
              file=sys.stderr)

    loss_cfg = LossConfig()
    last_loss = float("nan")
    t0 = time.time()
    for i in range(start, stage.iters):
        rng = np.random.default_rng(derive_seed(root_seed, stage.name, "data", i))
        gen = torch.Generator().manual_seed(derive_seed(root_seed, stage.name, "noise", i))
        x0, cond = make_batch(stage, rng)
        loss = dsm_loss(model, x0, cond, stage.fusion, loss_cfg, gen)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            for n, p in model.named_parameters():
                if p.requires_grad:
                    ema[n].mul_(EMA_DECAY).add_(p, alpha=1.0 - EMA_DECAY)
        ema_steps += 1
        last_loss = float(loss.detach())
        if i % stage.log_every == 0 or i == stage.iters - 1:
            with open(log_path, "a") as f:
                f.write(json.dumps({"iter": i, "loss": last_loss}) + "\n")
            if not quiet:
                rate = (i - start + 1) / (time.time() - t0)
                print(f"[{stage.name}] iter {i}/{stage.iters} "
                      f"loss {last_loss:.4f} ({rate:.2f} it/s)", file=sys.stderr)
        if (i + 1) % stage.checkpoint_every == 0 and (i + 1) < stage.iters:
            save_checkpoint(
                stage_dir / f"step_{i + 1:06d}.ckpt", model, optimizer,
                {"iter": i, "stage": stage.name,
                 "ema_steps": ema_steps, "ema_decay": EMA_DECAY},
                extra={f"ema/{n}": t for n, t in ema.items()},
            )
    save_checkpoint(
        stage_dir / "final.ckpt", model, optimizer,
        {
            "iter": stage.iters - 1,
            "stage": stage.name,
            "fusion": stage.fusion,
            "static_gate": stage.static_gate,
            "ema_steps": ema_steps,
            "ema_decay": EMA_DECAY,
        },
        extra={f"ema/{n}": t for n, t in ema.items()},
    )
    return {
        "stage": stage.name,
        "iters": stage.iters,
        "final_loss": last_loss,
        "state_hash": state_hash(model),
    }


def run_curriculum(
    model: EditModel,
    stages: list[StageConfig],
    out_dir: str | Path,
    root_seed: int,
    quiet: bool = False,
) -> list[dict]:
    summaries = []
    for stage in stages:
        summaries.append(run_stage(model, stage, out_dir, root_seed, quiet))
    return summaries
