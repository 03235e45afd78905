"""
Full network assembly: shallow feature extraction, the FFG chain and the
two-branch sub-pixel reconstruction with a bicubic skip.

    x_sfe = conv3(I_LR)
    x_dfe = FFG_n(... FFG_1(x_sfe))
    I_SR  = shuffle(l1 * conv5(x_dfe)) + shuffle(l2 * conv3(x_dfe)) + bicubic(I_LR)

Parameter names (also used as checkpoint keys):
    sfe.{weight,bias}
    ffg.{i}.mab.{j}.{cea.pw,cea.dw,body.k,attn.*}.{weight,bias}
    ffg.{i}.fuse.{k}.{weight,bias}   ffg.{i}.lambda.{1,2}
    recon.{k5,k3}.{weight,bias}      lambda0.{1,2}
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Tuple

import numpy as np

from src.core import ops
from src.core.blocks import (
    MIN_EXTENT,
    FfgConfig,
    MabConfig,
    ScalarGate,
    apply_conv,
    ffg_forward,
    init_conv_params,
    init_ffg_params,
    normalize_fusion,
    scope,
)
from src.core.errors import ConfigError, ShapeError
from src.core.ops import ConvSpec
from src.core.tensor import Tensor, default_dtype

logger = logging.getLogger(__name__)

SCALES = (2, 3, 4)
RECON_KERNELS = (5, 3)

# JSON config keys, in the order they are written
CONFIG_KEYS = (
    "scale", "n_ffg", "m_mab", "channels", "reduction", "attn_stride", "dilations",
    "branch_kernels", "body_convs", "cea_enabled", "dw_kernel", "fusion",
    "channel_shuffle", "shuffle_groups", "lambda_init", "colors",
)


@dataclass
class NetConfig:
    scale: int = 2
    n_ffg: int = 4
    channels: int = 32
    colors: int = 3
    mab: MabConfig = field(default_factory=MabConfig)
    ffg: FfgConfig = field(default_factory=FfgConfig)
    recon_kernels: Tuple[int, int] = RECON_KERNELS

    def validate(self) -> "NetConfig":
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale}")
        if self.n_ffg < 1:
            raise ConfigError(f"n_ffg must be >= 1, got {self.n_ffg}")
        if self.colors < 1:
            raise ConfigError(f"colors must be >= 1, got {self.colors}")
        if tuple(self.recon_kernels) != RECON_KERNELS:
            raise ConfigError(f"recon_kernels are fixed at {list(RECON_KERNELS)}, got {list(self.recon_kernels)}")
        if self.mab.channels != self.channels:
            raise ConfigError(f"MAB channels {self.mab.channels} differ from network channels {self.channels}")
        self.mab.validate()
        self.ffg.validate()
        return self

    @property
    def num_gates(self) -> int:
        return 2 * self.n_ffg + 2

    def sfe_spec(self) -> ConvSpec:
        return ConvSpec.same(self.colors, self.channels, 3)

    def recon_specs(self) -> Dict[str, ConvSpec]:
        out = self.colors * self.scale * self.scale
        return {f"recon.k{k}": ConvSpec.same(self.channels, out, k) for k in self.recon_kernels}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scale": self.scale,
            "n_ffg": self.n_ffg,
            "m_mab": self.ffg.m,
            "channels": self.channels,
            "reduction": self.mab.reduction,
            "attn_stride": self.mab.attn_stride,
            "dilations": list(self.mab.dilations),
            "branch_kernels": list(self.mab.branch_kernels),
            "body_convs": self.mab.body_convs,
            "cea_enabled": self.mab.cea_enabled,
            "dw_kernel": self.mab.dw_kernel,
            "fusion": self.ffg.fusion,
            "channel_shuffle": self.ffg.channel_shuffle_enabled,
            "shuffle_groups": self.ffg.shuffle_groups,
            "lambda_init": self.ffg.lambda_init,
            "colors": self.colors,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "NetConfig":
        """Build from the JSON key set; missing keys take the defaults"""
        if not isinstance(data, Mapping):
            raise ConfigError(f"Config must be a JSON object, got {type(data).__name__}")
        unknown = sorted(set(data) - set(CONFIG_KEYS) - {"recon_kernels"})
        if unknown:
            logger.warning(f"Ignoring unknown config keys: {unknown}")
        defaults_mab, defaults_ffg = MabConfig(), FfgConfig()

        def pick(key, default, kind):
            value = data.get(key, default)
            try:
                if kind is bool:
                    if not isinstance(value, bool):
                        raise TypeError(value)
                    return value
                if kind is list:
                    return [int(v) for v in value]
                if kind is int and (isinstance(value, bool) or float(value) != int(value)):
                    raise TypeError(value)
                return kind(value)
            except (TypeError, ValueError):
                raise ConfigError(f"Config key {key!r} has invalid value {value!r}") from None

        channels = pick("channels", 32, int)
        mab = MabConfig(
            channels=channels,
            reduction=pick("reduction", defaults_mab.reduction, int),
            attn_stride=pick("attn_stride", defaults_mab.attn_stride, int),
            dilations=pick("dilations", defaults_mab.dilations, list),
            branch_kernels=pick("branch_kernels", defaults_mab.branch_kernels, list),
            body_convs=pick("body_convs", defaults_mab.body_convs, int),
            cea_enabled=pick("cea_enabled", defaults_mab.cea_enabled, bool),
            dw_kernel=pick("dw_kernel", defaults_mab.dw_kernel, int),
        )
        ffg = FfgConfig(
            m=pick("m_mab", defaults_ffg.m, int),
            fusion=normalize_fusion(pick("fusion", defaults_ffg.fusion, str)),
            channel_shuffle_enabled=pick("channel_shuffle", defaults_ffg.channel_shuffle_enabled, bool),
            shuffle_groups=pick("shuffle_groups", defaults_ffg.shuffle_groups, int),
            lambda_init=pick("lambda_init", defaults_ffg.lambda_init, float),
        )
        cfg = cls(
            scale=pick("scale", 2, int),
            n_ffg=pick("n_ffg", 4, int),
            channels=channels,
            colors=pick("colors", 3, int),
            mab=mab,
            ffg=ffg,
            recon_kernels=tuple(pick("recon_kernels", list(RECON_KERNELS), list)),
        )
        return cfg.validate()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "NetConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Malformed config JSON: {e}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str) -> "NetConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from None
        return cls.from_json(text)


def maffsrn(scale: int = 2) -> NetConfig:
    """Base model: 4 FFGs of 4 MABs, 32 channels, M-BFF fusion"""
    return NetConfig(scale=scale).validate()


def maffsrn_l(scale: int = 2) -> NetConfig:
    """Large variant: 8 FFGs"""
    return NetConfig(scale=scale, n_ffg=8).validate()


def tiny(scale: int = 2, channels: int = 8) -> NetConfig:
    """One FFG of two MABs; used by gradient checks and the smoke run"""
    return NetConfig(scale=scale, n_ffg=1, channels=channels,
                     mab=MabConfig(channels=channels), ffg=FfgConfig(m=2)).validate()


class Network:
    """Named parameter map plus the config that shaped it"""

    def __init__(self, cfg: NetConfig, params: Mapping[str, Tensor]):
        self.cfg = cfg
        self.params: Dict[str, Tensor] = dict(params)
        for name, tensor in self.params.items():
            tensor.name = name

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.params.items())

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def gates(self) -> List[ScalarGate]:
        return [t for t in self.params.values() if isinstance(t, ScalarGate)]

    def num_params(self) -> int:
        return sum(t.size for t in self.params.values())

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    @property
    def is_meta(self) -> bool:
        return any(t.is_meta for t in self.params.values())

    def astype(self, dtype) -> "Network":
        return Network(self.cfg, {name: t.astype(dtype) for name, t in self.params.items()})

    def zero_(self) -> "Network":
        """Zero every conv weight and bias in place; gates keep their values"""
        for tensor in self.params.values():
            if not isinstance(tensor, ScalarGate) and not tensor.is_meta:
                tensor.data[...] = 0
        return self

    def zero_grad(self):
        for tensor in self.params.values():
            tensor.zero_grad()


def _param_table(cfg: NetConfig, rng, meta: bool, dtype) -> Dict[str, Tensor]:
    params: Dict[str, Tensor] = {}
    for kind, tensor in init_conv_params(cfg.sfe_spec(), rng, meta=meta, dtype=dtype).items():
        params[f"sfe.{kind}"] = tensor
    for i in range(cfg.n_ffg):
        for name, tensor in init_ffg_params(cfg.mab, cfg.ffg, rng, meta=meta, dtype=dtype).items():
            params[f"ffg.{i}.{name}"] = tensor
    for layer, spec in cfg.recon_specs().items():
        for kind, tensor in init_conv_params(spec, rng, meta=meta, dtype=dtype).items():
            params[f"{layer}.{kind}"] = tensor
    for k in (1, 2):
        params[f"lambda0.{k}"] = ScalarGate(cfg.ffg.lambda_init, meta=meta, dtype=dtype)
    return params


def build(cfg: NetConfig, seed: int = 0, *, meta: bool = False, dtype=None) -> Network:
    """Deterministic construction; parameters are drawn in name order from one seeded stream"""
    cfg.validate()
    dtype = dtype if dtype is not None else default_dtype()
    rng = None if meta else np.random.default_rng(seed)
    net = Network(cfg, _param_table(cfg, rng, meta, dtype))
    logger.debug(f"Built network x{cfg.scale}: {cfg.n_ffg} FFGs, {len(net)} tensors, "
                 f"{net.num_params()} parameters{' (meta)' if meta else ''}")
    return net


def expected_shapes(cfg: NetConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape of every parameter build(cfg) creates"""
    return {name: t.shape for name, t in build(cfg, meta=True).params.items()}


def forward(net: Network, lr: Tensor) -> Tensor:
    cfg = net.cfg
    n, colors, height, width = lr.shape
    if colors != cfg.colors:
        raise ShapeError(f"Input has {colors} color channels, network expects {cfg.colors}")
    if height < MIN_EXTENT or width < MIN_EXTENT:
        raise ShapeError(f"Input extent {height}x{width} below the {MIN_EXTENT}x{MIN_EXTENT} minimum")
    params = net.params

    feat = apply_conv(lr, params, "sfe", cfg.sfe_spec())
    for i in range(cfg.n_ffg):
        feat = ffg_forward(feat, scope(params, f"ffg.{i}"), cfg.mab, cfg.ffg, prefix=f"ffg.{i}")

    branches = []
    for (layer, spec), gate in zip(cfg.recon_specs().items(), ("lambda0.1", "lambda0.2")):
        out = ops.scale(apply_conv(feat, params, layer, spec), params[gate])
        branches.append(ops.pixel_shuffle(out, cfg.scale))
    upsampled = ops.resize_bicubic(lr, height * cfg.scale, width * cfg.scale, name="upsample")
    return ops.add(ops.add(branches[0], branches[1]), upsampled)


def image_to_tensor(pixels: np.ndarray, dtype=None) -> Tensor:
    """(H, W, C) uint8 -> (1, C, H, W) float tensor in [0, 1]"""
    array = np.asarray(pixels)
    if array.ndim == 2:
        array = array[:, :, None]
    if array.ndim != 3:
        raise ShapeError(f"Expected an (H, W, C) image array, got shape {array.shape}")
    dtype = np.dtype(dtype) if dtype is not None else default_dtype()
    data = array.transpose(2, 0, 1)[None].astype(dtype) / dtype.type(255)
    return Tensor(data, dtype=dtype)


def tensor_to_image(tensor: Tensor, index: int = 0) -> np.ndarray:
    """(N, C, H, W) in [0, 1] -> (H, W, C) uint8, clamped and rounded half away from zero"""
    data = tensor.numpy()[index].astype(np.float64) * 255.0
    quantized = np.floor(np.clip(data, 0.0, 255.0) + 0.5)
    return quantized.transpose(1, 2, 0).astype(np.uint8)
