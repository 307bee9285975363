"""Reconstruction branch, exposure-guidance branch and their fusion.

Topology (``C`` = ``channels``, ``c`` = ``egb_c``)::

    E ──head──► h0 ──► [rb block i] ──(+ beta_i * g_i)──► ... ──► tail ──(+ h0)──► out (3 ch)
    E*M ──egb head──► [egb block i] = g_i ───────────────┘

An RB block is x + conv(relu(conv(x))) with 3x3 C->C convolutions; an EGB
block is conv(relu(conv(g))) with 3x3 C->c then c->C. The 3x3 C->C tail
convolution with a global skip is what makes the 16-block model land on
1,220,995 parameters; c = 34 gives 1,849,907 for RB+EGB.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DimensionError
from .svc import HeadSpec, first_layer_apply

FUSIONS = ("egb_beta", "concat_input", "multiply_input", "none")


@dataclass(frozen=True)
class ModelConfig:
    rb_blocks: int = 16
    egb_blocks: int = 16
    channels: int = 64
    egb_c: int = 34
    rb_head: str = "opt_base"
    egb_head: str = "opt_base"
    fusion: str = "egb_beta"
    beta_init: float = 1.0

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.rb_blocks < 0 or self.egb_blocks < 0 or self.channels < 1 or self.egb_c < 1:
            raise ConfigError("block counts must be >= 0 and channel counts >= 1")
        HeadSpec.parse(self.rb_head)
        HeadSpec.parse(self.egb_head)
        if self.fusion == "egb_beta":
            if self.egb_blocks != self.rb_blocks or self.egb_blocks == 0:
                raise ConfigError("egb_beta fusion needs egb_blocks == rb_blocks > 0 (one beta per block)")
        elif self.egb_blocks != 0:
            raise ConfigError(f"fusion {self.fusion!r} runs without an EGB; set egb_blocks=0")
        if self.fusion in ("concat_input", "multiply_input") and self.rb_blocks != 25:
            raise ConfigError("input-level mask fusion variants use a 25-block RB")

    @property
    def has_egb(self) -> bool:
        return self.fusion == "egb_beta"

    @property
    def rb_in_channels(self) -> int:
        return 2 if self.fusion == "concat_input" else 1

    def to_kv(self) -> dict[str, str]:
        return {f"model.{k}": (repr(v) if isinstance(v, float) else str(v)) for k, v in asdict(self).items()}

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
        args = {}
        for key, val in kv.items():
            if not key.startswith("model."):
                continue
            name = key[len("model."):]
            if name not in known:
                raise ConfigError(f"unknown model key {key!r}")
            typ = known[name].type
            try:
                args[name] = int(val) if typ == "int" else float(val) if typ == "float" else val
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {val!r}") from exc
        return cls(**args)

    def replace(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def named_config(name: str, **overrides) -> ModelConfig:
    """Named architecture variants from the ablations (full-size defaults)."""
    rb = dict(egb_blocks=0, fusion="none")
    presets = {
        "rb": dict(rb, rb_head="opt_base"),
        "rb+svc": dict(rb, rb_head="svc5"),
        "rb+egb": dict(rb_head="opt_base", egb_head="opt_base"),
        "complete": dict(rb_head="svc5", egb_head="svc5"),
        "multiplication": dict(rb_blocks=25, egb_blocks=0, fusion="multiply_input"),
        "concatenation": dict(rb_blocks=25, egb_blocks=0, fusion="concat_input"),
    }
    for kind in ("opt_base", "opt_2_2", "opt_4_2", "opt_4_4", "opt_rggb", "svc_d5", "svc3", "svc5", "svc7"):
        presets.setdefault(kind, dict(rb, rb_head=kind))
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    args = {**presets[name], **overrides}
    if "rb_blocks" in overrides and args.get("fusion") == "egb_beta" and "egb_blocks" not in overrides:
        args["egb_blocks"] = overrides["rb_blocks"]
    return ModelConfig(**args)


# name -> (kind, shape args); kind "head" carries a HeadSpec
def layer_table(cfg: ModelConfig) -> list[tuple[str, object, int, int]]:
    """(prefix, HeadSpec or 3 for a 3x3 conv, C_in, C_out) for every conv layer, in init order."""
    c = cfg.channels
    layers = [("rb_head", HeadSpec.parse(cfg.rb_head), cfg.rb_in_channels, c)]
    for i in range(1, cfg.rb_blocks + 1):
        layers += [(f"rb_block_{i}_conv1", 3, c, c), (f"rb_block_{i}_conv2", 3, c, c)]
    layers += [("rb_tail", 3, c, c), ("rb_out", 3, c, 3)]
    if cfg.has_egb:
        layers.append(("egb_head", HeadSpec.parse(cfg.egb_head), 1, c))
        for i in range(1, cfg.egb_blocks + 1):
            layers += [(f"egb_block_{i}_conv1", 3, c, cfg.egb_c), (f"egb_block_{i}_conv2", 3, cfg.egb_c, c)]
    return layers


def _shapes(kind, cin, cout) -> dict[str, tuple[int, ...]]:
    if isinstance(kind, HeadSpec):
        return kind.param_shapes(cin, cout)
    return {"weight": (cout, cin, kind, kind), "bias": (cout,)}


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    shapes = OrderedDict()
    for prefix, kind, cin, cout in layer_table(cfg):
        for suffix, shape in _shapes(kind, cin, cout).items():
            shapes[f"{prefix}.{suffix}"] = shape
    if cfg.has_egb:
        for i in range(1, cfg.egb_blocks + 1):
            shapes[f"beta_{i}"] = ()
    return shapes


class ModelWeights:
    """Named parameter tensors plus the config that fixes their shapes."""

    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor]"):
        expected = param_shapes(config)
        if list(params) != list(expected):
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ConfigError(f"parameter set mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
        for name, shape in expected.items():
            if tuple(params[name].shape) != tuple(shape):
                raise ConfigError(f"{name}: shape {params[name].shape} != expected {shape}")
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data) for k, p in self.params.items())

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, OrderedDict(
            (k, Tensor(p.data, requires_grad=p.requires_grad)) for k, p in self.params.items()))

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(self.config, OrderedDict(
            (k, Tensor(p.data.astype(dtype), requires_grad=p.requires_grad)) for k, p in self.params.items()))


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float64) -> ModelWeights:
    """Initialize weights uniformly in +-sqrt(1 / fan_in), betas at ``beta_init``."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for prefix, kind, cin, cout in layer_table(config):
        fan_in = kind.fan_in(cin) if isinstance(kind, HeadSpec) else cin * kind * kind
        bound = np.sqrt(1.0 / fan_in)
        for suffix, shape in _shapes(kind, cin, cout).items():
            params[f"{prefix}.{suffix}"] = Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                                                  requires_grad=True)
    if config.has_egb:
        for i in range(1, config.egb_blocks + 1):
            params[f"beta_{i}"] = Tensor(np.array(config.beta_init, dtype=dtype), requires_grad=True)
    return ModelWeights(config, params)


def _conv3(x: Tensor, w: ModelWeights, prefix: str) -> Tensor:
    return ag.conv2d(x, w[f"{prefix}.weight"], w[f"{prefix}.bias"], stride=1, padding=1)


def _head(x: Tensor, w: ModelWeights, prefix: str, spec: str) -> Tensor:
    return first_layer_apply(HeadSpec.parse(spec), x, w[f"{prefix}.weight"], w[f"{prefix}.bias"])


def model_forward(weights: ModelWeights, e_norm, mask, config: ModelConfig | None = None,
                  return_egb: bool = False):
    """Predict normalized HDR RGB (B, 3, H, W) from Bayer radiance and mask.

    ``e_norm`` and ``mask`` are (B, 1, H, W) (or (H, W)) arrays/tensors whose
    top-left pixel is at phase (0, 0) of the 4x2 exposure/CFA pattern.
    With ``return_egb`` the last EGB block output is returned as well.
    """
    cfg = config or weights.config
    if cfg != weights.config:
        raise ConfigError("config does not match the weights")
    dtype = weights.dtype
    x = _as_nchw(e_norm, dtype)
    m = _as_nchw(mask, dtype)
    if x.shape[1] != 1 or m.shape != x.shape:
        raise DimensionError(f"expected single-channel radiance and matching mask, got {x.shape}, {m.shape}")
    if x.shape[2] % 4 or x.shape[3] % 2:
        raise DimensionError(f"input {x.shape[2]}x{x.shape[3]} is not aligned to the 4x2 exposure/CFA phase")

    if cfg.fusion == "multiply_input":
        rb_in = ag.mul(x, m)
    elif cfg.fusion == "concat_input":
        rb_in = ag.concat([x, m], axis=1)
    else:
        rb_in = x
    h0 = _head(rb_in, weights, "rb_head", cfg.rb_head)
    g = _head(ag.mul(x, m), weights, "egb_head", cfg.egb_head) if cfg.has_egb else None

    h = h0
    for i in range(1, cfg.rb_blocks + 1):
        r = _conv3(ag.relu(_conv3(h, weights, f"rb_block_{i}_conv1")), weights, f"rb_block_{i}_conv2")
        h = ag.add(h, r)
        if g is not None:
            g = _conv3(ag.relu(_conv3(g, weights, f"egb_block_{i}_conv1")), weights, f"egb_block_{i}_conv2")
            h = ag.add(h, ag.mul(weights[f"beta_{i}"], g))
    t = ag.add(_conv3(h, weights, "rb_tail"), h0)
    out = _conv3(t, weights, "rb_out")
    return (out, g) if return_egb else out


def _as_nchw(a, dtype) -> Tensor:
    if isinstance(a, Tensor):
        return a if a.dtype == dtype else Tensor(a.data.astype(dtype))
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    return Tensor(arr)


def count_params(config: ModelConfig) -> int:
    """Exact parameter count, biases and fusion scalars included."""
    return int(sum(int(np.prod(s)) for s in param_shapes(config).values()))


def estimate_flops(config: ModelConfig, h: int, w: int) -> int:
    """Convolution (weight MACs + bias adds) summed over every output element."""
    if h % 4 or w % 2:
        raise DimensionError(f"resolution {h}x{w} must be a multiple of (4, 2)")
    total = 0
    for _, kind, cin, cout in layer_table(config):
        if isinstance(kind, HeadSpec):
            # every first-layer variant emits exactly one output vector per full-res pixel
            total += round(kind.flops_per_pixel(cin, cout) * h * w)
        else:
            total += (cin * kind * kind + 1) * cout * h * w
    return total


def extract_betas(weights: ModelWeights) -> list[float]:
    if not weights.config.has_egb:
        raise ConfigError("model has no exposure-guidance branch (fusion != egb_beta)")
    return [float(weights[f"beta_{i}"].data) for i in range(1, weights.config.egb_blocks + 1)]
