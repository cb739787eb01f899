"""Control branch and the assembled edit model.

The control branch is a structural copy of the base encoder trunk. Two
small encoders bring the unedited-content video and the motion maps down
to eighth resolution, a fusion step combines them into one condition
feature, and that feature enters the trunk input through a zero-init 1x1
conv after nearest upsampling. The trunk's multiscale features (all three
stem resolutions, both interior levels, and the middle output) reach the
matching base decoder skips only through zero-init 1x1 convs, so a
freshly built model is exactly the base model: every control path
contributes zero until trained.

Fusion modes:
  motion_only  f = E_m(motion)
  sum          f = E_c(content) + E_m(motion)
  gated        f = E_c(content) * g + E_m(motion) * (1 - g)
where the gate g is predicted from the downsampled preserve-mask and the
noise-level embedding input, sigmoid-bounded, and 0.5 everywhere at init.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .params import ModelConfig
from .unet import (
    BaseUNet,
    ResBlock,
    SpatialAttention,
    TemporalAttention,
    run_trunk,
    zero_module,
)

FUSION_MODES = ("motion_only", "sum", "gated")
STEM_FACTOR = 8


class CondEncoder(nn.Module):
    """Three conv + avgpool sub-blocks: full resolution down to eighth."""

    def __init__(self, cin: int, w0: int, w1: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, w0, 3, padding=1)
        self.conv2 = nn.Conv2d(w0, w1, 3, padding=1)
        self.conv3 = nn.Conv2d(w1, cout, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.avg_pool2d(F.silu(self.conv1(x)), 2)
        x = F.avg_pool2d(F.silu(self.conv2(x)), 2)
        return F.avg_pool2d(F.silu(self.conv3(x)), 2)


class GateNet(nn.Module):
    """Per-site fusion gate from (downsampled mask, noise level).

    Final conv starts at zero, so the sigmoid output is 0.5 everywhere
    until trained. Output shape (B, 1, H/8, W/8), values in (0, 1).
    """

    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(2, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.conv3 = zero_module(nn.Conv2d(width, 1, 3, padding=1))

    def forward(self, mask8: torch.Tensor, c_noise: torch.Tensor) -> torch.Tensor:
        t = c_noise.view(-1, 1, 1, 1).expand_as(mask8)
        h = F.silu(self.conv1(torch.cat([mask8, t], dim=1)))
        return torch.sigmoid(self.conv3(F.silu(self.conv2(h))))


class ControlBranch(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        s0, s1, s2 = cfg.stem_widths
        c0, c1 = cfg.core_widths
        g, e = cfg.norm_groups, cfg.emb_dim
        w0, w1 = cfg.cond_widths
        cf = cfg.cond_channels
        # trunk: attribute-for-attribute copy of the base encoder
        self.conv_in = nn.Conv2d(BaseUNet.IN_CHANNELS, s0, 3, padding=1)
        self.down1 = nn.Conv2d(s0, s1, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(s1, s2, 3, stride=2, padding=1)
        self.down3 = nn.Conv2d(s2, c0, 3, stride=2, padding=1)
        self.enc1 = ResBlock(c0, c0, e, g)
        self.attn_t1 = TemporalAttention(c0, g)
        self.down_mid = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.enc2 = ResBlock(c1, c1, e, g)
        self.attn_t2 = TemporalAttention(c1, g)
        self.mid_res1 = ResBlock(c1, c1, e, g)
        self.mid_attn_s = SpatialAttention(c1, g)
        self.mid_attn_t = TemporalAttention(c1, g)
        self.mid_res2 = ResBlock(c1, c1, e, g)
        # condition side
        self.e_content = CondEncoder(3, w0, w1, cf)
        self.e_motion = CondEncoder(2, w0, w1, cf)
        self.gate_net = GateNet(cfg.gate_width)
        self.z_in = zero_module(nn.Conv2d(cf, BaseUNet.IN_CHANNELS, 1))
        self.inj_skip64 = zero_module(nn.Conv2d(s0, s0, 1))
        self.inj_skip32 = zero_module(nn.Conv2d(s1, s1, 1))
        self.inj_skip16 = zero_module(nn.Conv2d(s2, s2, 1))
        self.inj_skip8 = zero_module(nn.Conv2d(c0, c0, 1))
        self.inj_skip4 = zero_module(nn.Conv2d(c1, c1, 1))
        self.inj_mid = zero_module(nn.Conv2d(c1, c1, 1))

    def gate(
        self, mask: torch.Tensor, c_noise: torch.Tensor, static_gate: bool = False
    ) -> torch.Tensor:
        """mask: (B, 1, H, W) with 1 = preserved; returns (B, 1, H/8, W/8)."""
        mask8 = F.avg_pool2d(mask, STEM_FACTOR)
        if static_gate:
            c_noise = torch.zeros_like(c_noise)
        return self.gate_net(mask8, c_noise)

    def fuse(
        self,
        content: torch.Tensor | None,
        motion: torch.Tensor,
        mask: torch.Tensor | None,
        c_noise: torch.Tensor,
        fusion: str,
        n: int,
        static_gate: bool = False,
    ) -> torch.Tensor:
        if fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {fusion!r}")
        f_m = self.e_motion(motion)
        if fusion == "motion_only":
            return f_m
        if content is None:
            raise ValueError(f"fusion mode {fusion!r} needs a content condition")
        f_c = self.e_content(content)
        if fusion == "sum":
            return f_c + f_m
        if mask is None:
            raise ValueError("gated fusion needs a mask condition")
        g = self.gate(mask, c_noise, static_gate).repeat_interleave(n, dim=0)
        return f_c * g + f_m * (1 - g)

    def forward(
        self,
        x: torch.Tensor,
        emb: torch.Tensor,
        b: int,
        n: int,
        content: torch.Tensor | None,
        motion: torch.Tensor,
        mask: torch.Tensor | None,
        c_noise: torch.Tensor,
        fusion: str,
        static_gate: bool = False,
    ) -> dict[str, torch.Tensor]:
        """x: (b*n, 6, H, W), the same scaled input the base receives."""
        f = self.fuse(content, motion, mask, c_noise, fusion, n, static_gate)
        h = x + F.interpolate(self.z_in(f), scale_factor=STEM_FACTOR, mode="nearest")
        (x0, x1, x2), e1, e2, m = run_trunk(self, h, emb, b, n)
        return {
            "skip64": self.inj_skip64(x0),
            "skip32": self.inj_skip32(x1),
            "skip16": self.inj_skip16(x2),
            "skip8": self.inj_skip8(e1),
            "skip4": self.inj_skip4(e2),
            "mid": self.inj_mid(m),
        }


class EditModel(nn.Module):
    """Base denoiser plus control branch.

    forward takes the scaled noisy video (B, N, 3, H, W), the noise-level
    embedding input c_noise (B,), and a condition dict with keys
    first_frame (B, 3, H, W) and, when fusion is not None, motion
    (B, N, 2, H, W) plus content (B, N, 3, H, W) and mask (B, 1, H, W) as
    the fusion mode requires. fusion=None runs the base alone.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.base = BaseUNet(cfg)
        self.control = ControlBranch(cfg)
        self.static_gate = False

    def forward(
        self,
        x: torch.Tensor,
        c_noise: torch.Tensor,
        cond: dict[str, torch.Tensor],
        fusion: str | None = None,
    ) -> torch.Tensor:
        if x.ndim != 5 or x.shape[2] != 3:
            raise ValueError(f"expected (B, N, 3, H, W), got {tuple(x.shape)}")
        b, n, _, hh, ww = x.shape
        ff = cond["first_frame"][:, None].expand(b, n, 3, hh, ww)
        x6 = torch.cat([x, ff], dim=2).reshape(b * n, BaseUNet.IN_CHANNELS, hh, ww)
        emb = self.base.embed(c_noise).repeat_interleave(n, dim=0)
        inj = None
        if fusion is not None:
            content = cond.get("content")
            if content is not None:
                content = content.reshape(b * n, 3, hh, ww)
            motion = cond["motion"].reshape(b * n, 2, hh, ww)
            inj = self.control(
                x6, emb, b, n, content, motion, cond.get("mask"), c_noise,
                fusion, self.static_gate,
            )
        out = self.base(x6, emb, b, n, inj)
        return out.reshape(b, n, 3, hh, ww)
