from .control import FUSION_MODES, ControlBranch, EditModel, GateNet
from .params import (
    ModelConfig,
    default_config,
    init_control_from_base,
    load_checkpoint,
    load_tensors,
    param_roles,
    save_checkpoint,
    save_tensors,
    set_trainable,
    state_hash,
    tiny_config,
    trainable_parameters,
)
from .unet import BaseUNet, SpatialAttention, TemporalAttention

__all__ = [
    "BaseUNet",
    "ControlBranch",
    "EditModel",
    "FUSION_MODES",
    "GateNet",
    "ModelConfig",
    "SpatialAttention",
    "TemporalAttention",
    "default_config",
    "init_control_from_base",
    "load_checkpoint",
    "load_tensors",
    "param_roles",
    "save_checkpoint",
    "save_tensors",
    "set_trainable",
    "state_hash",
    "tiny_config",
    "trainable_parameters",
]
