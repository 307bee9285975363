"""Training configuration as dotted key=value text."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .imageio import format_kv, read_kv
from .network import ModelConfig
from .radiometry import DEFAULT_ALPHA

# key -> attribute
_KEYS = {
    "data.path": "data",
    "train.out": "out",
    "train.batch": "batch",
    "train.patch": "patch",
    "train.iterations": "iterations",
    "train.lr_initial": "lr_initial",
    "train.lr_final": "lr_final",
    "train.lambda": "lam",
    "train.seed": "seed",
    "train.ckpt_interval": "ckpt_interval",
    "train.dtype": "dtype",
    "mask.alpha": "alpha",
    "mask.weighting": "weighting",
}


@dataclass(frozen=True)
class TrainConfig:
    data: str = "data"
    model: ModelConfig = field(default_factory=ModelConfig)
    out: str = "run"
    batch: int = 16
    patch: int = 128
    iterations: int = 200_000
    lr_initial: float = 2e-4
    lr_final: float = 1e-7
    lam: float = 0.1
    seed: int = 0
    ckpt_interval: int = 1000
    dtype: str = "float64"
    alpha: float = DEFAULT_ALPHA
    weighting: str = "binary"

    def __post_init__(self):
        if self.patch <= 0 or self.patch % 4:
            raise ConfigError(f"patch size must be a positive multiple of 4, got {self.patch}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.iterations < 0 or self.ckpt_interval < 0:
            raise ConfigError("iterations and checkpoint interval must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not self.lam >= 0 or not self.lr_initial > 0 or not self.lr_final >= 0:
            raise ConfigError("loss weight and learning rates must be non-negative")
        if self.weighting not in ("binary", "debevec_triangle", "robertson_gaussian"):
            raise ConfigError(f"unknown mask weighting {self.weighting!r}")

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_kv(self) -> dict[str, str]:
        out = {}
        for key, attr in _KEYS.items():
            v = getattr(self, attr)
            out[key] = repr(v) if isinstance(v, float) else str(v)
        out.update(self.model.to_kv())
        return out

    def dumps(self) -> str:
        return format_kv(self.to_kv())

    @classmethod
    def from_kv(cls, kv: dict[str, str], base_dir: Path | None = None) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        args = {}
        for key, val in kv.items():
            if key.startswith("model."):
                continue
            if key not in _KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            attr = _KEYS[key]
            try:
                args[attr] = int(val) if types[attr] == "int" else float(val) if types[attr] == "float" else val
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {val!r}") from exc
        if base_dir is not None:
            for attr in ("data", "out"):
                if attr in args and not Path(args[attr]).is_absolute():
                    args[attr] = str(Path(base_dir) / args[attr])
        return cls(model=ModelConfig.from_kv(kv), **args)


def load_config(path) -> TrainConfig:
    """Read a config file; relative paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return TrainConfig.from_kv(read_kv(path), base_dir=path.parent)
