import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from trajedit.harness import smoke_profile
from trajedit.model import EditModel, tiny_config

settings.register_profile(
    "ci",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_model_cfg():
    """The smoke-profile model: every module present, widths minimal."""
    return smoke_profile().model


@pytest.fixture()
def small_model(small_model_cfg):
    torch.manual_seed(0)
    return EditModel(small_model_cfg)


@pytest.fixture()
def tiny_model():
    """Finite-difference scale: well under 2k parameters."""
    torch.manual_seed(0)
    return EditModel(tiny_config())


def randomize_(model: torch.nn.Module, seed: int = 0, scale: float = 0.05):
    """Perturb every parameter so zero-init layers carry signal.

    Gradient and equivariance tests need the model away from the measure-zero
    init point where the control branch and attention outputs vanish.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return model


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def tiny_cond(b=1, n=2, hw=16, dtype=torch.float32, seed=0, with_control=True):
    """A full condition dict sized for the tiny/small models."""
    gen = torch.Generator().manual_seed(seed)
    cond = {"first_frame": torch.rand((b, 3, hw, hw), generator=gen, dtype=dtype) - 0.5}
    if with_control:
        cond["motion"] = torch.randn((b, n, 2, hw, hw), generator=gen, dtype=dtype)
        cond["content"] = torch.rand((b, n, 3, hw, hw), generator=gen, dtype=dtype) - 0.5
        mask = torch.ones((b, 1, hw, hw), dtype=dtype)
        mask[:, :, : hw // 2, : hw // 2] = 0.0
        cond["mask"] = mask
    return cond
