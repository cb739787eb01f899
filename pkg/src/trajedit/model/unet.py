"""Base video denoiser.

A compact U-Net over (batch, frames, 3, H, W) video tensors. Frames are
folded into the batch for all spatial operators; temporal attention
re-folds to attend across frames at each spatial site. A three-step conv
stem brings full resolution down 8x before the interior levels, and the
matching upsample path carries stem skips back so fine detail survives
the bottleneck.

Conditioning: the clean first frame is concatenated per frame at the
input (3 extra channels), the noise level enters through a Fourier
embedding that modulates each residual block, and an external control
branch may inject features into every decoder skip connection (the
three stem skips, the two interior skips, and the middle output).
The final conv starts at zero so the raw network output is zero at init.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .params import ModelConfig


def zero_module(m: nn.Module) -> nn.Module:
    for p in m.parameters():
        nn.init.zeros_(p)
    return m


class FourierEmbedding(nn.Module):
    """Scalar -> [sin(f_i x), cos(f_i x)] with log-spaced frequencies."""

    def __init__(self, dim: int, max_freq: float = 100.0):
        super().__init__()
        half = dim // 2
        exponents = torch.linspace(0.0, 1.0, half, dtype=torch.float64)
        self.register_buffer("freqs", (max_freq ** exponents).to(torch.float32))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        ang = x[:, None].to(self.freqs.dtype) * self.freqs[None, :]
        return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class ResBlock(nn.Module):
    """Pre-norm residual block with per-level scale/shift modulation."""

    def __init__(self, cin: int, cout: int, emb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb_lin = nn.Linear(emb_dim, 2 * cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = zero_module(nn.Conv2d(cout, cout, 3, padding=1))
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.emb_lin(emb)[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


def _attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    w = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]), dim=-1)
    return w @ v


class TemporalAttention(nn.Module):
    """Self-attention across frames, independently at each spatial site."""

    def __init__(self, ch: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, ch)
        self.to_q = nn.Linear(ch, ch)
        self.to_k = nn.Linear(ch, ch)
        self.to_v = nn.Linear(ch, ch)
        self.to_out = zero_module(nn.Linear(ch, ch))

    def forward(self, x: torch.Tensor, b: int, n: int) -> torch.Tensor:
        bn, c, h, w = x.shape
        y = self.norm(x).reshape(b, n, c, h * w).permute(0, 3, 1, 2).reshape(b * h * w, n, c)
        a = self.to_out(_attend(self.to_q(y), self.to_k(y), self.to_v(y)))
        a = a.reshape(b, h * w, n, c).permute(0, 2, 3, 1).reshape(bn, c, h, w)
        return x + a


class SpatialAttention(nn.Module):
    """Self-attention over spatial sites within each frame."""

    def __init__(self, ch: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, ch)
        self.to_q = nn.Linear(ch, ch)
        self.to_k = nn.Linear(ch, ch)
        self.to_v = nn.Linear(ch, ch)
        self.to_out = zero_module(nn.Linear(ch, ch))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        bn, c, h, w = x.shape
        y = self.norm(x).reshape(bn, c, h * w).transpose(1, 2)
        a = self.to_out(_attend(self.to_q(y), self.to_k(y), self.to_v(y)))
        return x + a.transpose(1, 2).reshape(bn, c, h, w)


def _up2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="nearest")


def run_trunk(mod: nn.Module, x: torch.Tensor, emb: torch.Tensor, b: int, n: int):
    """Stem and interior encoder, shared between base and control trunk.

    mod must carry the trunk attributes (conv_in .. mid_res2); sharing the
    code path keeps the control trunk an exact structural copy.
    """
    x0 = mod.conv_in(x)
    x1 = mod.down1(F.silu(x0))
    x2 = mod.down2(F.silu(x1))
    h = mod.down3(F.silu(x2))
    e1 = mod.attn_t1(mod.enc1(h, emb), b, n)
    e2 = mod.attn_t2(mod.enc2(mod.down_mid(e1), emb), b, n)
    m = mod.mid_res1(e2, emb)
    m = mod.mid_attn_t(mod.mid_attn_s(m), b, n)
    m = mod.mid_res2(m, emb)
    return (x0, x1, x2), e1, e2, m


class BaseUNet(nn.Module):
    IN_CHANNELS = 6  # 3 noisy + 3 first-frame

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        s0, s1, s2 = cfg.stem_widths
        c0, c1 = cfg.core_widths
        g, e = cfg.norm_groups, cfg.emb_dim
        self.fourier = FourierEmbedding(cfg.fourier_dim)
        self.emb_mlp = nn.Sequential(
            nn.Linear(cfg.fourier_dim, e), nn.SiLU(), nn.Linear(e, e)
        )
        self.conv_in = nn.Conv2d(self.IN_CHANNELS, s0, 3, padding=1)
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
        self.dec2 = ResBlock(2 * c1, c1, e, g)
        self.dec_attn_t2 = TemporalAttention(c1, g)
        self.up_mid = nn.Conv2d(c1, c0, 3, padding=1)
        self.dec1 = ResBlock(2 * c0, c0, e, g)
        self.dec_attn_t1 = TemporalAttention(c0, g)
        self.up3 = nn.Conv2d(c0 + s2, s2, 3, padding=1)
        self.up2 = nn.Conv2d(s2 + s1, s1, 3, padding=1)
        self.up1 = nn.Conv2d(s1 + s0, s0, 3, padding=1)
        self.out_norm = nn.GroupNorm(g, s0)
        self.out_conv = zero_module(nn.Conv2d(s0, 3, 3, padding=1))

    def embed(self, c_noise: torch.Tensor) -> torch.Tensor:
        return self.emb_mlp(self.fourier(c_noise))

    def encode(self, x: torch.Tensor, emb: torch.Tensor, b: int, n: int):
        return run_trunk(self, x, emb, b, n)

    def forward(
        self,
        x: torch.Tensor,
        emb: torch.Tensor,
        b: int,
        n: int,
        inj: dict[str, torch.Tensor] | None = None,
    ) -> torch.Tensor:
        """x: (b*n, 6, H, W) scaled input, emb: (b*n, emb_dim)."""
        (x0, x1, x2), e1, e2, m = self.encode(x, emb, b, n)
        if inj is not None:
            x0 = x0 + inj["skip64"]
            x1 = x1 + inj["skip32"]
            x2 = x2 + inj["skip16"]
            e1 = e1 + inj["skip8"]
            e2 = e2 + inj["skip4"]
            m = m + inj["mid"]
        d = self.dec_attn_t2(self.dec2(torch.cat([m, e2], dim=1), emb), b, n)
        d = self.up_mid(F.silu(_up2(d)))
        d = self.dec_attn_t1(self.dec1(torch.cat([d, e1], dim=1), emb), b, n)
        y = self.up3(F.silu(torch.cat([_up2(d), x2], dim=1)))
        y = self.up2(F.silu(torch.cat([_up2(y), x1], dim=1)))
        y = self.up1(F.silu(torch.cat([_up2(y), x0], dim=1)))
        return self.out_conv(F.silu(self.out_norm(y)))
