"""Continuous-noise diffusion: preconditioning, training loss, sampling.

The raw network F never sees unscaled inputs. The denoiser is

    D(z, sigma) = c_skip(sigma) z + c_out(sigma) F(c_in(sigma) z, c_noise(sigma))

with
    c_skip = sd^2 / (sigma^2 + sd^2)
    c_out  = sigma sd / sqrt(sigma^2 + sd^2)
    c_in   = 1 / sqrt(sigma^2 + sd^2)
    c_noise = ln(sigma) / 4

and sd the data standard deviation, 0.5 here since videos live in
[-0.5, 0.5] inside the model. As sigma -> 0 the denoiser collapses to the
identity (c_skip -> 1, c_out -> 0), so F only ever learns the residual.

Training draws ln(sigma) from a normal, perturbs clean video with
sigma-scaled noise, and minimizes the weighted denoising error with
weight (sigma^2 + sd^2) / (sigma sd)^2, which holds the effective target
scale constant across noise levels.

Sampling walks a descending sigma ladder with deterministic Euler steps
of the probability-flow equation; every step re-runs the full model, so
conditions that depend on sigma (the fusion gate) are re-evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

SIGMA_DATA = 0.5


def precond_coeffs(sigma: torch.Tensor, sigma_data: float = SIGMA_DATA):
    """Returns (c_skip, c_out, c_in, c_noise), each shaped like sigma."""
    var = sigma**2 + sigma_data**2
    c_skip = sigma_data**2 / var
    c_out = sigma * sigma_data / var.sqrt()
    c_in = 1.0 / var.sqrt()
    c_noise = torch.log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


def loss_weight(sigma: torch.Tensor, sigma_data: float = SIGMA_DATA) -> torch.Tensor:
    return (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2


def denoise(
    model,
    z: torch.Tensor,
    sigma: torch.Tensor,
    cond: dict[str, torch.Tensor],
    fusion: str | None = None,
    sigma_data: float = SIGMA_DATA,
) -> torch.Tensor:
    """Preconditioned clean-video estimate. z: (B, N, 3, H, W), sigma: (B,)."""
    c_skip, c_out, c_in, c_noise = precond_coeffs(sigma, sigma_data)
    bc = (slice(None), None, None, None, None)
    raw = model(c_in[bc] * z, c_noise, cond, fusion)
    return c_skip[bc] * z + c_out[bc] * raw


@dataclass
class LossConfig:
    p_mean: float = -1.2
    p_std: float = 1.2
    sigma_data: float = SIGMA_DATA


def draw_sigma_noise(
    shape: tuple[int, ...],
    cfg: LossConfig,
    generator: torch.Generator,
    dtype: torch.dtype = torch.float32,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Draw order is pinned: the sigma vector first, then the noise tensor."""
    b = shape[0]
    ln_sigma = cfg.p_mean + cfg.p_std * torch.randn(b, generator=generator, dtype=dtype)
    sigma = ln_sigma.exp()
    noise = torch.randn(shape, generator=generator, dtype=dtype)
    return sigma, noise


def dsm_loss(
    model,
    x0: torch.Tensor,
    cond: dict[str, torch.Tensor],
    fusion: str | None = None,
    cfg: LossConfig | None = None,
    generator: torch.Generator | None = None,
    sigma: torch.Tensor | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Denoising loss on clean video x0 (B, N, 3, H, W), model space.

    sigma and noise may be passed explicitly (gradient checks, replays);
    otherwise both are drawn from generator in the pinned order.
    """
    cfg = cfg or LossConfig()
    if (sigma is None) != (noise is None):
        raise ValueError("pass both sigma and noise or neither")
    if sigma is None:
        if generator is None:
            raise ValueError("dsm_loss needs a generator when sigma is not given")
        sigma, noise = draw_sigma_noise(tuple(x0.shape), cfg, generator, x0.dtype)
    bc = (slice(None), None, None, None, None)
    z = x0 + sigma[bc] * noise
    est = denoise(model, z, sigma, cond, fusion, cfg.sigma_data)
    per_sample = ((est - x0) ** 2).flatten(1).mean(dim=1)
    return (loss_weight(sigma, cfg.sigma_data) * per_sample).mean()


# ---------------------------------------------------------------------------
# sampling


@dataclass
class SamplerConfig:
    steps: int = 25
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    sigma_data: float = SIGMA_DATA

    def validate(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.rho <= 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")


def sigma_schedule(cfg: SamplerConfig, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Descending sigma ladder of length steps + 1 ending at exactly 0."""
    cfg.validate()
    if cfg.steps == 1:
        return torch.tensor([cfg.sigma_max, 0.0], dtype=dtype)
    k = torch.arange(cfg.steps, dtype=dtype)
    inv_rho = 1.0 / cfg.rho
    hi, lo = cfg.sigma_max**inv_rho, cfg.sigma_min**inv_rho
    sigmas = (hi + k / (cfg.steps - 1) * (lo - hi)) ** cfg.rho
    return torch.cat([sigmas, torch.zeros(1, dtype=dtype)])


@torch.no_grad()
def sample_video(
    model,
    cond: dict[str, torch.Tensor],
    shape: tuple[int, ...],
    cfg: SamplerConfig,
    generator: torch.Generator,
    fusion: str | None = None,
) -> torch.Tensor:
    """Deterministic Euler sampling. Returns model-space video (B, N, 3, H, W)."""
    sigmas = sigma_schedule(cfg, torch.float32)
    z = sigmas[0] * torch.randn(shape, generator=generator, dtype=torch.float32)
    b = shape[0]
    for k in range(cfg.steps):
        s_k = sigmas[k].expand(b)
        est = denoise(model, z, s_k, cond, fusion, cfg.sigma_data)
        z = z + (sigmas[k + 1] - sigmas[k]) * (z - est) / sigmas[k]
    return z


# ---------------------------------------------------------------------------
# value-space helpers: files hold [0, 1] video, the model sees [-0.5, 0.5]


def video_to_tensor(video: np.ndarray) -> torch.Tensor:
    """(N, 3, H, W) float [0, 1] -> (1, N, 3, H, W) model-space tensor."""
    v = np.asarray(video, dtype=np.float32)
    if v.ndim != 4 or v.shape[1] != 3:
        raise ValueError(f"video must be (N, 3, H, W), got {v.shape}")
    return torch.from_numpy(v.copy())[None] - 0.5


def tensor_to_video(t: torch.Tensor) -> np.ndarray:
    """(1, N, 3, H, W) model space -> (N, 3, H, W) float clipped to [0, 1]."""
    if t.ndim != 5 or t.shape[0] != 1:
        raise ValueError(f"expected (1, N, 3, H, W), got {tuple(t.shape)}")
    v = (t[0] + 0.5).numpy()
    return np.clip(v, 0.0, 1.0).astype(np.float32)
