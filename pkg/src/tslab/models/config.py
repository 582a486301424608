"""Model configurations and named presets."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

FAMILIES = ("ConvLSTM", "CNN3D", "TimeSformer")
TS_SIZES = (2, 4, 6, 8, 10, 12, 16, 24, 32, 48)


@dataclass(frozen=True)
class InputGeometry:
    channels: int = 1
    frames: int = 20
    height: int = 64
    width: int = 64


@dataclass(frozen=True)
class ModelConfig:
    family: str
    hidden: tuple[int, ...] = ()
    kernel_sizes: tuple[int, ...] = ()
    heads: int = 1
    head_dim: int = 0
    model_dim: int = 0
    depth: int = 0
    patch_size: int = 16
    input: InputGeometry = InputGeometry()
    num_classes: int = 5
    head: str = "flatten"  # ConvLSTM classifier input: "flatten" or "gap"
    pool_time: tuple[bool, ...] = ()  # CNN3D: pool the temporal axis in block i (default: all)
    rotary: bool = True
    name: Optional[str] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.family in ("ConvLSTM", "CNN3D"):
            if not self.hidden or any(h < 1 for h in self.hidden):
                raise ValueError("hidden units per layer must be positive")
            if len(self.kernel_sizes) != len(self.hidden):
                raise ValueError(f"kernel list length {len(self.kernel_sizes)} != block count {len(self.hidden)}")
            if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
                raise ValueError(f"kernel sizes must be odd, got {self.kernel_sizes}")
            if self.pool_time and len(self.pool_time) != len(self.hidden):
                raise ValueError("pool_time must have one entry per block")
            if self.head not in ("flatten", "gap"):
                raise ValueError(f"unknown head {self.head!r}")
        else:
            if self.heads < 1 or self.head_dim < 1 or self.model_dim < 1 or self.depth < 0:
                raise ValueError("TimeSformer needs positive heads, head_dim, model_dim and depth >= 0")
            if self.rotary and self.head_dim % 2:
                raise ValueError(f"rotary positions need an even head_dim, got {self.head_dim}")
            if self.input.height % self.patch_size or self.input.width % self.patch_size:
                raise ValueError(f"patch size {self.patch_size} must divide {self.input.height}x{self.input.width}")

    @property
    def blocks(self) -> int:
        return len(self.hidden) if self.family != "TimeSformer" else self.depth

    @property
    def inner_dim(self) -> int:
        return self.heads * self.head_dim

    def time_pooled(self, i: int) -> bool:
        return self.pool_time[i] if self.pool_time else True

    def with_input(self, **kw) -> "ModelConfig":
        return replace(self, input=replace(self.input, **kw))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["kernel_sizes"] = list(self.kernel_sizes)
        d["pool_time"] = list(self.pool_time)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["input"] = InputGeometry(**d["input"])
        for key in ("hidden", "kernel_sizes", "pool_time"):
            d[key] = tuple(d.get(key, ()))
        return cls(**d)


def convlstm_ts(h: int, **kw) -> ModelConfig:
    return ModelConfig("ConvLSTM", hidden=(h,) * 3, kernel_sizes=(3,) * 3, name=f"convlstm-ts-h{h}", **kw)


def cnn3d_ts(h: int, **kw) -> ModelConfig:
    return ModelConfig("CNN3D", hidden=(h,) * 3, kernel_sizes=(3,) * 3, name=f"cnn3d-ts-h{h}", **kw)


def timesf_ts(heads: int, head_dim: int, **kw) -> ModelConfig:
    kw.setdefault("patch_size", 16)
    kw.setdefault("depth", 3)
    return ModelConfig("TimeSformer", heads=heads, head_dim=head_dim, model_dim=heads * head_dim,
                       name=f"timesf-ts-a{heads}-dh{head_dim}", **kw)


_D48_INPUT = InputGeometry(channels=3, frames=32, height=224, width=224)

_FIXED_PRESETS = {
    "cnn3d-d48-4x128": ModelConfig("CNN3D", hidden=(128,) * 4, kernel_sizes=(7, 7, 5, 3), input=_D48_INPUT,
                                   num_classes=48, name="cnn3d-d48-4x128"),
    "convlstm-d48-4x128": ModelConfig("ConvLSTM", hidden=(128,) * 4, kernel_sizes=(7, 7, 5, 3), input=_D48_INPUT,
                                      num_classes=48, head="gap", name="convlstm-d48-4x128"),
    "timesf-d48": ModelConfig("TimeSformer", heads=8, head_dim=128, model_dim=1024, depth=4, patch_size=16,
                              input=_D48_INPUT, num_classes=48, name="timesf-d48"),
    # 32 frames cannot be halved six times; time is pooled in the first four blocks only
    "cnn3d-d48-6x128": ModelConfig("CNN3D", hidden=(128,) * 6, kernel_sizes=(7, 7, 7, 5, 3, 3), input=_D48_INPUT,
                                   num_classes=48, pool_time=(True,) * 4 + (False,) * 2, name="cnn3d-d48-6x128"),
}

_PATTERNS = [
    (re.compile(r"^convlstm-ts-h(\d+)$"), lambda m: convlstm_ts(int(m[1]))),
    (re.compile(r"^cnn3d-ts-h(\d+)$"), lambda m: cnn3d_ts(int(m[1]))),
    (re.compile(r"^timesf-ts-a(\d+)-dh(\d+)$"), lambda m: timesf_ts(int(m[1]), int(m[2]))),
]


def preset(name: str) -> ModelConfig:
    if name in _FIXED_PRESETS:
        return _FIXED_PRESETS[name]
    for pat, build in _PATTERNS:
        m = pat.match(name)
        if m:
            return build(m)
    raise KeyError(f"unknown preset {name!r}")


def preset_names() -> list[str]:
    names = [f"convlstm-ts-h{n}" for n in TS_SIZES] + [f"cnn3d-ts-h{n}" for n in TS_SIZES]
    names += [f"timesf-ts-a{a}-dh{n}" for a in (1, 8) for n in TS_SIZES]
    return names + list(_FIXED_PRESETS)


FAMILY_ALIASES = {
    "convlstm": lambda n: convlstm_ts(n),
    "cnn3d": lambda n: cnn3d_ts(n),
    "timesf1": lambda n: timesf_ts(1, n),
    "timesf8": lambda n: timesf_ts(8, n),
}


def sweep_config(family: str, size: int) -> ModelConfig:
    try:
        return FAMILY_ALIASES[family](size)
    except KeyError:
        raise ValueError(f"unknown family {family!r}; expected one of {sorted(FAMILY_ALIASES)}") from None
