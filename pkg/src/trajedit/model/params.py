"""Model configuration, parameter roles, and checkpoint serialization.

Roles name functional parameter groups (base network, control trunk,
condition encoders, gate, zero convs, temporal attention key/value
projections) so training stages can freeze and thaw by intent instead of
by hand-listed names.

Checkpoints use a small self-describing container: magic, JSON header with
a name-sorted tensor table, raw little-endian payload, and a trailing
sha256 over header plus payload. Optimizer state rides along under opt/
paths so an interrupted run resumes bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

MAGIC = b"TEDC"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": (torch.float32, "<f4"),
    "float64": (torch.float64, "<f8"),
}


@dataclass(frozen=True)
class ModelConfig:
    """Width plan for the edit model.

    stem_widths are the three full-to-eighth resolution stages, core_widths
    the two interior levels (eighth and sixteenth resolution), cond_widths
    the hidden widths of the condition encoders, cond_channels the fused
    condition feature width, gate_width the gate network hidden width.
    """

    stem_widths: tuple[int, int, int] = (12, 16, 24)
    core_widths: tuple[int, int] = (40, 80)
    cond_widths: tuple[int, int] = (8, 16)
    cond_channels: int = 40
    gate_width: int = 16
    emb_dim: int = 64
    fourier_dim: int = 32
    norm_groups: int = 4

    def validate(self):
        widths = (*self.stem_widths, *self.core_widths, *self.cond_widths,
                  self.cond_channels, self.gate_width, self.emb_dim)
        if any(w < 1 for w in widths):
            raise ValueError("all widths must be >= 1")
        if self.fourier_dim < 2 or self.fourier_dim % 2:
            raise ValueError(f"fourier_dim must be even and >= 2, got {self.fourier_dim}")
        if self.norm_groups < 1:
            raise ValueError("norm_groups must be >= 1")
        for w in (*self.stem_widths, *self.core_widths):
            if w % self.norm_groups:
                raise ValueError(f"width {w} not divisible by norm_groups {self.norm_groups}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("stem_widths", "core_widths", "cond_widths"):
            if key in d:
                d[key] = tuple(d[key])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def default_config() -> ModelConfig:
    return ModelConfig()


def tiny_config() -> ModelConfig:
    """Minimal-width instance of the full architecture, for finite-difference
    gradient checks. Keeps every module type in play."""
    return ModelConfig(
        stem_widths=(1, 1, 1),
        core_widths=(2, 2),
        cond_widths=(1, 1),
        cond_channels=1,
        gate_width=1,
        emb_dim=2,
        fourier_dim=2,
        norm_groups=1,
    )


# ---------------------------------------------------------------------------
# parameter roles

ZERO_CONV_NAMES = (
    "z_in", "inj_skip64", "inj_skip32", "inj_skip16",
    "inj_skip8", "inj_skip4", "inj_mid",
)
KV_LEAVES = ("to_k.weight", "to_k.bias", "to_v.weight", "to_v.bias")


def _attention_kv(model: torch.nn.Module, cls, prefix_filter: str | None) -> set[str]:
    from .unet import SpatialAttention, TemporalAttention  # local to avoid cycle

    target = {"temporal": TemporalAttention, "spatial": SpatialAttention}[cls]
    names = set()
    for mod_name, mod in model.named_modules():
        if not isinstance(mod, target):
            continue
        if prefix_filter is not None and not mod_name.startswith(prefix_filter):
            continue
        for leaf in KV_LEAVES:
            names.add(f"{mod_name}.{leaf}")
    all_params = {n for n, _ in model.named_parameters()}
    return names & all_params


def param_roles(model: torch.nn.Module) -> dict[str, set[str]]:
    """Map role name to the set of parameter names it covers."""
    names = [n for n, _ in model.named_parameters()]
    aux_prefixes = tuple(
        f"control.{m}." for m in ("e_content", "e_motion", "gate_net", *ZERO_CONV_NAMES)
    )
    roles = {
        "base": {n for n in names if n.startswith("base.")},
        "control_trunk": {
            n for n in names if n.startswith("control.") and not n.startswith(aux_prefixes)
        },
        "content_encoder": {n for n in names if n.startswith("control.e_content.")},
        "motion_encoder": {n for n in names if n.startswith("control.e_motion.")},
        "gate": {n for n in names if n.startswith("control.gate_net.")},
        "zero_convs": {
            n for n in names
            if any(n.startswith(f"control.{z}.") for z in ZERO_CONV_NAMES)
        },
        "temporal_kv": _attention_kv(model, "temporal", None),
        "temporal_kv_base": _attention_kv(model, "temporal", "base."),
        "temporal_kv_control": _attention_kv(model, "temporal", "control."),
        "spatial_kv": _attention_kv(model, "spatial", None),
    }
    return roles


def set_trainable(model: torch.nn.Module, roles: list[str] | set[str]) -> int:
    """Freeze everything except the union of the given roles.

    Returns the number of trainable parameters. Unknown role names raise.
    """
    table = param_roles(model)
    unknown = set(roles) - set(table)
    if unknown:
        raise ValueError(f"unknown roles: {sorted(unknown)}")
    allowed = set()
    for r in roles:
        allowed |= table[r]
    count = 0
    for name, p in model.named_parameters():
        on = name in allowed
        p.requires_grad_(on)
        if on:
            count += p.numel()
    return count


def trainable_parameters(model: torch.nn.Module) -> list[torch.nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def init_control_from_base(model: torch.nn.Module):
    """Copy the base trunk weights into the control trunk (shared names)."""
    base_sd = model.base.state_dict()
    ctrl_sd = model.control.state_dict()
    with torch.no_grad():
        for key, val in base_sd.items():
            if key in ctrl_sd and ctrl_sd[key].shape == val.shape:
                ctrl_sd[key].copy_(val)


# ---------------------------------------------------------------------------
# checkpoint container


def _tensor_bytes(t: torch.Tensor) -> bytes:
    arr = t.detach().cpu().contiguous().numpy()
    code = _DTYPES[str(t.dtype).replace("torch.", "")][1]
    return np.ascontiguousarray(arr.astype(code, copy=False)).tobytes()


def save_tensors(path: str | Path, tensors: dict[str, torch.Tensor], meta: dict | None = None):
    """Write the container atomically (tmp file then rename)."""
    path = Path(path)
    entries = []
    chunks = []
    for name in sorted(tensors):
        t = tensors[name]
        dtype = str(t.dtype).replace("torch.", "")
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {dtype} for {name}")
        entries.append({"name": name, "shape": list(t.shape), "dtype": dtype})
        chunks.append(_tensor_bytes(t))
    header = json.dumps(
        {"version": FORMAT_VERSION, "meta": meta or {}, "tensors": entries},
        sort_keys=True,
    ).encode()
    payload = b"".join(chunks)
    digest = hashlib.sha256(header + payload).digest()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)
        f.write(digest)
    os.replace(tmp, path)


def load_tensors(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    header_raw = raw[12 : 12 + hlen]
    payload = raw[12 + hlen : -32]
    if hashlib.sha256(header_raw + payload).digest() != raw[-32:]:
        raise ValueError(f"{path}: checksum mismatch, file corrupt")
    header = json.loads(header_raw)
    if header["version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {header['version']}")
    tensors = {}
    off = 0
    for e in header["tensors"]:
        torch_dt, np_dt = _DTYPES[e["dtype"]]
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        nbytes = n * np.dtype(np_dt).itemsize
        arr = np.frombuffer(payload[off : off + nbytes], dtype=np_dt).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.copy()).to(torch_dt)
        off += nbytes
    if off != len(payload):
        raise ValueError(f"{path}: payload size mismatch")
    return tensors, header["meta"]


def save_checkpoint(
    path: str | Path,
    model: torch.nn.Module,
    optimizer: torch.optim.Optimizer | None = None,
    meta: dict | None = None,
    extra: dict[str, torch.Tensor] | None = None,
):
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    if extra:
        tensors.update(extra)
    if optimizer is not None:
        name_of = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                pname = name_of[id(p)]
                for key, val in state.items():
                    if not torch.is_tensor(val):
                        val = torch.tensor(float(val))
                    tensors[f"opt/{pname}/{key}"] = val.to(torch.float32)
    save_tensors(path, tensors, meta)


def load_checkpoint(
    path: str | Path,
    model: torch.nn.Module,
    optimizer: torch.optim.Optimizer | None = None,
    prefer_ema: bool = False,
) -> dict:
    """Restore model (and optionally optimizer) state from a container.

    prefer_ema=True overwrites parameters that carry an ema/ accumulator
    with their bias-corrected average — the weights evaluation should use.
    Raw weights stay in the container so training resumes bit-exactly.
    """
    tensors, meta = load_tensors(path)
    state = {k[len("model/") :]: v for k, v in tensors.items() if k.startswith("model/")}
    model.load_state_dict(state, strict=True)
    if prefer_ema and int(meta.get("ema_steps", 0)) > 0:
        decay = float(meta["ema_decay"])
        corr = 1.0 - decay ** int(meta["ema_steps"])
        params = dict(model.named_parameters())
        with torch.no_grad():
            for k, v in tensors.items():
                if k.startswith("ema/"):
                    params[k[len("ema/") :]].copy_(v / corr)
    if optimizer is not None:
        by_param: dict[str, dict] = {}
        for k, v in tensors.items():
            if not k.startswith("opt/"):
                continue
            pname, key = k[len("opt/") :].rsplit("/", 1)
            by_param.setdefault(pname, {})[key] = v
        params = dict(model.named_parameters())
        for pname, st in by_param.items():
            optimizer.state[params[pname]] = st
    return meta


def state_hash(model: torch.nn.Module) -> str:
    """sha256 over the name-sorted raw parameter and buffer bytes."""
    h = hashlib.sha256()
    sd = model.state_dict()
    for name in sorted(sd):
        h.update(name.encode())
        h.update(_tensor_bytes(sd[name]))
    return h.hexdigest()
