"""
Composite blocks: cost-efficient attention (CEA), the multi-attention block
(MAB) and the feature fusion group (FFG) with its HFF / BFF / M-BFF fusion
topologies.

Blocks are plain functions of (input, parameter dict, config). Parameter
dicts use local dotted names (e.g. "body.0.weight", "attn.branch.1.bias");
the model module prefixes them into the network-wide map.

MAB wiring:
    x' = CEA(x)                          (when cea_enabled)
    f  = conv3 -> relu -> conv3 (x')     (body_convs convolutions)
    a  = conv1x1 C -> C/r (f)
    s  = relu(strided conv3 (a))
    b  = relu(sum_i dilated conv_i (s))
    u  = upsample_bilinear(b, H, W) + a
    out = f * sigmoid(conv1x1 C/r -> C (u))
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from src.core import ops
from src.core.errors import ConfigError, ShapeError
from src.core.ops import ConvSpec
from src.core.tensor import Tensor, default_dtype

logger = logging.getLogger(__name__)

FUSION_MODES = ("HFF", "BFF", "MBFF")

# smallest spatial extent a MAB accepts
MIN_EXTENT = 3

Params = Mapping[str, Tensor]


class ScalarGate(Tensor):
    """Trainable scalar multiplier (the lambda gates), stored as a (1,1,1,1) tensor"""

    def __init__(self, value: float = 0.5, *, name: str = "", meta: bool = False, dtype=None):
        if meta:
            super().__init__(None, shape=(1, 1, 1, 1), requires_grad=True, name=name, dtype=dtype)
        else:
            super().__init__(np.full((1, 1, 1, 1), value), requires_grad=True, name=name, dtype=dtype)

    @property
    def value(self) -> float:
        return self.item()

    def astype(self, dtype) -> "ScalarGate":
        if self.is_meta:
            return ScalarGate(name=self.name, meta=True, dtype=dtype)
        return ScalarGate(float(self.data.reshape(-1)[0]), name=self.name, dtype=dtype)


def normalize_fusion(mode: str) -> str:
    key = str(mode).upper().replace("-", "").replace("_", "")
    if key not in FUSION_MODES:
        raise ConfigError(f"Unknown fusion mode {mode!r}; expected one of HFF, BFF, MBFF")
    return key


@dataclass
class MabConfig:
    channels: int = 32
    reduction: int = 4
    attn_stride: int = 3
    dilations: List[int] = field(default_factory=lambda: [1, 2])
    branch_kernels: List[int] = field(default_factory=lambda: [3, 3])
    body_convs: int = 2
    cea_enabled: bool = True
    dw_kernel: int = 5

    def validate(self) -> "MabConfig":
        if self.channels < 1 or self.reduction < 1:
            raise ConfigError(f"MAB channels/reduction must be positive: {self.channels}/{self.reduction}")
        if self.channels % self.reduction:
            raise ConfigError(f"MAB channels {self.channels} not divisible by reduction {self.reduction}")
        if not self.dilations or len(self.dilations) != len(self.branch_kernels):
            raise ConfigError("dilations and branch_kernels must be non-empty and of equal length")
        if any(d < 1 for d in self.dilations):
            raise ConfigError(f"Dilations must be >= 1: {self.dilations}")
        if any(k < 1 or k % 2 == 0 for k in self.branch_kernels):
            raise ConfigError(f"Branch kernels must be positive odd sizes: {self.branch_kernels}")
        if self.attn_stride < 1:
            raise ConfigError(f"attn_stride must be >= 1, got {self.attn_stride}")
        if self.body_convs < 1:
            raise ConfigError(f"body_convs must be >= 1, got {self.body_convs}")
        if self.dw_kernel < 1 or self.dw_kernel % 2 == 0:
            raise ConfigError(f"dw_kernel must be a positive odd size, got {self.dw_kernel}")
        return self

    @property
    def reduced(self) -> int:
        return self.channels // self.reduction

    def layer_specs(self) -> Dict[str, ConvSpec]:
        """Local layer name -> ConvSpec, in execution order"""
        c, cr = self.channels, self.reduced
        specs: Dict[str, ConvSpec] = {}
        if self.cea_enabled:
            specs.update(cea_specs(c, self.dw_kernel))
        for i in range(self.body_convs):
            specs[f"body.{i}"] = ConvSpec.same(c, c, 3)
        specs["attn.reduce"] = ConvSpec.same(c, cr, 1)
        specs["attn.stride"] = ConvSpec(cr, cr, kernel=3, stride=self.attn_stride, padding=1)
        for i, (k, d) in enumerate(zip(self.branch_kernels, self.dilations)):
            specs[f"attn.branch.{i}"] = ConvSpec.same(cr, cr, k, dilation=d)
        specs["attn.expand"] = ConvSpec.same(cr, c, 1)
        return specs


@dataclass
class FfgConfig:
    m: int = 4
    fusion: str = "MBFF"
    channel_shuffle_enabled: bool = True
    shuffle_groups: int = 2
    lambda_init: float = 0.5

    def validate(self) -> "FfgConfig":
        self.fusion = normalize_fusion(self.fusion)
        if self.m < 1:
            raise ConfigError(f"FFG needs at least one MAB, got m={self.m}")
        if self.fusion in ("MBFF", "BFF") and self.m < 2:
            raise ConfigError(f"{self.fusion} fusion needs m >= 2, got m={self.m}")
        if self.fusion == "BFF" and self.m & (self.m - 1):
            raise ConfigError(f"BFF fusion needs m to be a power of two, got m={self.m}")
        if self.shuffle_groups < 1:
            raise ConfigError(f"shuffle_groups must be >= 1, got {self.shuffle_groups}")
        return self

    @property
    def num_reduces(self) -> int:
        return 1 if self.fusion == "HFF" else self.m - 1

    def fusion_specs(self, channels: int) -> Dict[str, ConvSpec]:
        width = self.m if self.fusion == "HFF" else 2
        return {f"fuse.{k}": ConvSpec.same(width * channels, channels, 1)
                for k in range(self.num_reduces)}

    def shuffle_groups_for_fusion(self) -> int:
        return self.m if self.fusion == "HFF" else self.shuffle_groups


# ------------------------------------------------------------ initialization

def init_conv_params(spec: ConvSpec, rng: Optional[np.random.Generator], *, meta: bool = False,
                     dtype=None) -> Dict[str, Tensor]:
    """Kaiming-style uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero bias"""
    dtype = dtype if dtype is not None else default_dtype()
    bias_shape = (1, spec.out_channels, 1, 1)
    if meta:
        params = {"weight": Tensor.meta(spec.weight_shape, requires_grad=True, dtype=dtype)}
        if spec.has_bias:
            params["bias"] = Tensor.meta(bias_shape, requires_grad=True, dtype=dtype)
        return params
    _, in_g, kh, kw = spec.weight_shape
    bound = float(np.sqrt(6.0 / (in_g * kh * kw)))
    weight = rng.uniform(-bound, bound, size=spec.weight_shape)
    params = {"weight": Tensor(weight, requires_grad=True, dtype=dtype)}
    if spec.has_bias:
        params["bias"] = Tensor.zeros(bias_shape, requires_grad=True, dtype=dtype)
    return params


def _init_layers(specs: Mapping[str, ConvSpec], rng, meta: bool, dtype) -> Dict[str, Tensor]:
    params: Dict[str, Tensor] = {}
    for layer, spec in specs.items():
        for kind, tensor in init_conv_params(spec, rng, meta=meta, dtype=dtype).items():
            params[f"{layer}.{kind}"] = tensor
    return params


def cea_specs(channels: int, dw_kernel: int = 5) -> Dict[str, ConvSpec]:
    return {
        "cea.pw": ConvSpec.same(channels, channels, 1),
        "cea.dw": ConvSpec.same(channels, channels, dw_kernel, groups=channels),
    }


def init_cea_params(channels: int, dw_kernel: int = 5, rng=None, *, meta: bool = False,
                    dtype=None) -> Dict[str, Tensor]:
    """Local names: pw.weight, pw.bias, dw.weight, dw.bias"""
    params = _init_layers(cea_specs(channels, dw_kernel), rng, meta, dtype)
    return {name[len("cea."):]: tensor for name, tensor in params.items()}


def init_mab_params(cfg: MabConfig, rng=None, *, meta: bool = False, dtype=None) -> Dict[str, Tensor]:
    return _init_layers(cfg.validate().layer_specs(), rng, meta, dtype)


def init_ffg_params(mab_cfg: MabConfig, ffg_cfg: FfgConfig, rng=None, *, meta: bool = False,
                    dtype=None) -> Dict[str, Tensor]:
    ffg_cfg.validate()
    params: Dict[str, Tensor] = {}
    for j in range(ffg_cfg.m):
        for name, tensor in init_mab_params(mab_cfg, rng, meta=meta, dtype=dtype).items():
            params[f"mab.{j}.{name}"] = tensor
    params.update(_init_layers(ffg_cfg.fusion_specs(mab_cfg.channels), rng, meta, dtype))
    for k in (1, 2):
        params[f"lambda.{k}"] = ScalarGate(ffg_cfg.lambda_init, meta=meta, dtype=dtype)
    return params


# ------------------------------------------------------------------- forward

def scope(params: Params, prefix: str) -> Dict[str, Tensor]:
    """Sub-dict of the entries under `prefix.`, with the prefix stripped"""
    head = prefix + "."
    return {name[len(head):]: tensor for name, tensor in params.items() if name.startswith(head)}


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def apply_conv(x: Tensor, params: Params, layer: str, spec: ConvSpec, prefix: str = "") -> Tensor:
    try:
        weight = params[f"{layer}.weight"]
    except KeyError:
        raise ConfigError(f"Missing parameter {_join(prefix, layer)}.weight") from None
    bias = params.get(f"{layer}.bias") if spec.has_bias else None
    if spec.has_bias and bias is None:
        raise ConfigError(f"Missing parameter {_join(prefix, layer)}.bias")
    return ops.conv2d(x, weight, bias, spec, name=_join(prefix, layer))


def cea_forward(x: Tensor, params: Params, dw_kernel: Optional[int] = None, prefix: str = "") -> Tensor:
    """y = x + dw_conv(pw_conv(x)); params use the local names of init_cea_params"""
    channels = x.shape[1]
    if dw_kernel is None:
        dw = params.get("dw.weight")
        dw_kernel = dw.shape[-1] if dw is not None else 5
    specs = cea_specs(channels, dw_kernel)
    if params.get("pw.weight") is not None and params["pw.weight"].shape[1] != channels:
        raise ShapeError(f"CEA {prefix}: input has {channels} channels, "
                         f"weights expect {params['pw.weight'].shape[1]}")
    local = {f"cea.{name}": tensor for name, tensor in params.items()}
    hidden = apply_conv(x, local, "cea.pw", specs["cea.pw"], prefix)
    refined = apply_conv(hidden, local, "cea.dw", specs["cea.dw"], prefix)
    return ops.add(x, refined)


def mab_forward(x: Tensor, params: Params, cfg: MabConfig, prefix: str = "") -> Tensor:
    _, channels, height, width = x.shape
    if channels != cfg.channels:
        raise ShapeError(f"MAB {prefix}: input has {channels} channels, config expects {cfg.channels}")
    if height < MIN_EXTENT or width < MIN_EXTENT:
        raise ShapeError(f"MAB {prefix}: spatial extent {height}x{width} below {MIN_EXTENT}x{MIN_EXTENT}")
    specs = cfg.layer_specs()

    feat = cea_forward(x, scope(params, "cea"), cfg.dw_kernel, prefix) if cfg.cea_enabled else x
    for i in range(cfg.body_convs):
        if i:
            feat = ops.relu(feat)
        feat = apply_conv(feat, params, f"body.{i}", specs[f"body.{i}"], prefix)

    reduced = apply_conv(feat, params, "attn.reduce", specs["attn.reduce"], prefix)
    strided = ops.relu(apply_conv(reduced, params, "attn.stride", specs["attn.stride"], prefix))
    branches = None
    for i in range(len(cfg.dilations)):
        out = apply_conv(strided, params, f"attn.branch.{i}", specs[f"attn.branch.{i}"], prefix)
        branches = out if branches is None else ops.add(branches, out)
    branches = ops.relu(branches)
    restored = ops.add(ops.upsample_bilinear(branches, height, width, name=_join(prefix, "attn.up")),
                       reduced)
    mask = ops.sigmoid(apply_conv(restored, params, "attn.expand", specs["attn.expand"], prefix))
    return ops.mul(feat, mask)


def fuse_features(features: Sequence[Tensor], params: Params, cfg: FfgConfig, prefix: str = "") -> Tensor:
    """Combine the MAB outputs of one FFG with the configured topology"""
    if len(features) != cfg.m:
        raise ShapeError(f"FFG {prefix}: expected {cfg.m} feature maps, got {len(features)}")
    channels = features[0].shape[1]
    specs = cfg.fusion_specs(channels)
    groups = cfg.shuffle_groups_for_fusion()

    def reduce(k: int, *parts: Tensor) -> Tensor:
        joined = ops.concat_channels(*parts)
        if cfg.channel_shuffle_enabled:
            joined = ops.channel_shuffle(joined, groups)
        return apply_conv(joined, params, f"fuse.{k}", specs[f"fuse.{k}"], prefix)

    if cfg.fusion == "HFF":
        return reduce(0, *features)
    if cfg.fusion == "MBFF":
        fused = features[0]
        for k, following in enumerate(features[1:]):
            fused = reduce(k, fused, following)
        return fused

    level = list(features)
    k = 0
    while len(level) > 1:
        merged = []
        for left, right in zip(level[0::2], level[1::2]):
            merged.append(reduce(k, left, right))
            k += 1
        level = merged
    return level[0]


def ffg_forward(x: Tensor, params: Params, mab_cfg: MabConfig, cfg: FfgConfig, prefix: str = "") -> Tensor:
    """output = lambda1 * x + lambda2 * fused(MAB chain)"""
    if x.shape[1] != mab_cfg.channels:
        raise ShapeError(f"FFG {prefix}: input has {x.shape[1]} channels, expected {mab_cfg.channels}")
    features = []
    current = x
    for j in range(cfg.m):
        current = mab_forward(current, scope(params, f"mab.{j}"), mab_cfg, _join(prefix, f"mab.{j}"))
        features.append(current)
    fused = fuse_features(features, params, cfg, prefix)
    try:
        gate_1, gate_2 = params["lambda.1"], params["lambda.2"]
    except KeyError:
        raise ConfigError(f"Missing lambda gates for FFG {prefix or '(root)'}") from None
    return ops.add(ops.scale(x, gate_1), ops.scale(fused, gate_2))
