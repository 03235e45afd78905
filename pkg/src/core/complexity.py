"""
Static cost accounting for a NetConfig.

Parameter counts are closed-form sums per module. Multi-adds, per-layer rows
and peak activation memory come from tracing the real forward pass on meta
tensors, so they follow whatever graph model.forward builds.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from src.core.blocks import MabConfig
from src.core.errors import ConfigError, ShapeError
from src.core.model import NetConfig, build, forward
from src.core.tensor import Tape, Tensor

logger = logging.getLogger(__name__)

CONVENTION = (
    "one multiply-accumulate per kernel tap of every convolution "
    "(K_h*K_w*C_in/groups*C_out*H_out*W_out); bias, activations, elementwise "
    "add/mul, sigmoid, shuffles and interpolation are not counted"
)

DEFAULT_HR = (720, 1280)


@dataclass
class LayerCost:
    name: str
    params: int
    multi_adds: int
    output_shape: Tuple[int, int, int, int]


@dataclass
class ComplexityReport:
    params: int
    multi_adds: int
    hr: Tuple[int, int]
    peak_activation_bytes: int
    convention: str = CONVENTION
    per_layer: List[LayerCost] = field(default_factory=list)


# -------------------------------------------------------- closed-form counts

def conv_params(k: int, c_in: int, c_out: int, groups: int = 1, bias: bool = True) -> int:
    return k * k * (c_in // groups) * c_out + (c_out if bias else 0)


def sfe_params(cfg: NetConfig) -> int:
    return conv_params(3, cfg.colors, cfg.channels)


def cea_params(channels: int, dw_kernel: int = 5) -> int:
    return conv_params(1, channels, channels) + conv_params(dw_kernel, channels, channels, groups=channels)


def mab_params(mab: MabConfig) -> int:
    c, cr = mab.channels, mab.channels // mab.reduction
    total = mab.body_convs * conv_params(3, c, c)
    if mab.cea_enabled:
        total += cea_params(c, mab.dw_kernel)
    total += conv_params(1, c, cr)
    total += conv_params(3, cr, cr)
    total += sum(conv_params(k, cr, cr) for k in mab.branch_kernels)
    total += conv_params(1, cr, c)
    return total


def fusion_params(cfg: NetConfig) -> int:
    c, m = cfg.channels, cfg.ffg.m
    if cfg.ffg.fusion == "HFF":
        return conv_params(1, m * c, c)
    return (m - 1) * conv_params(1, 2 * c, c)


def ffg_params(cfg: NetConfig, include_gates: bool = True) -> int:
    return cfg.ffg.m * mab_params(cfg.mab) + fusion_params(cfg) + (2 if include_gates else 0)


def recon_params(cfg: NetConfig) -> int:
    out = cfg.colors * cfg.scale * cfg.scale
    return sum(conv_params(k, cfg.channels, out) for k in cfg.recon_kernels)


def count_params(cfg: NetConfig, include_gates: bool = True) -> int:
    """Exact parameter count of build(cfg); gates add 2 per FFG plus 2 global"""
    cfg.validate()
    total = sfe_params(cfg) + cfg.n_ffg * ffg_params(cfg, include_gates) + recon_params(cfg)
    return total + (2 if include_gates else 0)


# ------------------------------------------------------------------- tracing

def lr_size(cfg: NetConfig, hr: Tuple[int, int]) -> Tuple[int, int]:
    height, width = (int(v) for v in hr)
    if height < 1 or width < 1:
        raise ConfigError(f"HR size must be positive, got {height}x{width}")
    if height % cfg.scale or width % cfg.scale:
        raise ConfigError(f"HR size {width}x{height} is not divisible by scale {cfg.scale}")
    return height // cfg.scale, width // cfg.scale


def trace_forward(cfg: NetConfig, input_shape: Sequence[int]) -> Tuple[Tape, Tensor]:
    """Run forward on meta tensors; returns the trace tape and the meta input"""
    net = build(cfg, meta=True)
    x = Tensor.meta(tuple(input_shape))
    with Tape(record_backward=False) as tape:
        forward(net, x)
    return tape, x


def count_multi_adds(cfg: NetConfig, hr: Tuple[int, int] = DEFAULT_HR) -> int:
    """Multiply-accumulates to produce one HR image of size hr = (height, width)"""
    cfg.validate()
    height, width = lr_size(cfg, hr)
    tape, _ = trace_forward(cfg, (1, cfg.colors, height, width))
    return sum(entry.multi_adds for entry in tape)


def peak_from_trace(tape: Tape, inputs: Sequence[Tensor]) -> int:
    """
    High-water mark in bytes of a recorded execution.

    Graph inputs are live from the start. Each op allocates its output, the
    peak is sampled, then every tensor whose last consumer was this op is
    freed. The final output is never freed. Parameters are not counted.
    """
    entries = tape.entries
    if not entries:
        return sum(t.nbytes for t in inputs)
    tracked: Dict[int, Tensor] = {id(t): t for t in inputs}
    last_use: Dict[int, int] = {id(t): -1 for t in inputs}
    for index, entry in enumerate(entries):
        tracked[id(entry.output)] = entry.output
        last_use[id(entry.output)] = index
    for index, entry in enumerate(entries):
        for t in entry.inputs:
            if id(t) in tracked:
                last_use[id(t)] = max(last_use[id(t)], index)
    final = id(entries[-1].output)

    frees: Dict[int, List[int]] = {}
    for key, index in last_use.items():
        if key != final:
            frees.setdefault(index, []).append(key)

    live = sum(t.nbytes for t in inputs)
    peak = live
    for key in frees.get(-1, []):
        live -= tracked[key].nbytes
    for index, entry in enumerate(entries):
        live += entry.output.nbytes
        peak = max(peak, live)
        for key in frees.get(index, []):
            live -= tracked[key].nbytes
    return peak


def peak_activation_memory(cfg: NetConfig, input_shape: Sequence[int]) -> int:
    """Forward-only, batch as given, 4 bytes per element"""
    cfg.validate()
    tape, x = trace_forward(cfg, input_shape)
    return peak_from_trace(tape, [x])


def layer_costs(tape: Tape) -> List[LayerCost]:
    """One row per parameterized op (convolutions and gate scalings)"""
    rows = []
    for entry in tape:
        weights = [t for t in entry.inputs[1:] if t.requires_grad and t.name]
        if entry.op == "conv2d":
            rows.append(LayerCost(entry.layer, sum(t.size for t in weights), entry.multi_adds,
                                  entry.output.shape))
        elif entry.op == "scale" and weights:
            rows.append(LayerCost(weights[0].name, 1, 0, entry.output.shape))
    return rows


def analyze(cfg: NetConfig, hr: Tuple[int, int] = DEFAULT_HR) -> ComplexityReport:
    cfg.validate()
    height, width = lr_size(cfg, hr)
    tape, x = trace_forward(cfg, (1, cfg.colors, height, width))
    rows = layer_costs(tape)
    params = count_params(cfg)
    traced = sum(row.params for row in rows)
    if traced != params:
        raise ShapeError(f"Traced parameter total {traced} disagrees with closed form {params}")
    report = ComplexityReport(
        params=params,
        multi_adds=sum(row.multi_adds for row in rows),
        hr=(int(hr[0]), int(hr[1])),
        peak_activation_bytes=peak_from_trace(tape, [x]),
        per_layer=rows,
    )
    logger.info(f"Analyzed x{cfg.scale} n_ffg={cfg.n_ffg}: {report.params} params, "
                f"{report.multi_adds / 1e9:.2f}G multi-adds at {hr[1]}x{hr[0]}")
    return report


def report_to_dict(report: ComplexityReport) -> dict:
    data = asdict(report)
    data["hr"] = {"height": report.hr[0], "width": report.hr[1]}
    data["per_layer"] = [
        {"name": row.name, "params": row.params, "multi_adds": row.multi_adds,
         "output_shape": list(row.output_shape)}
        for row in report.per_layer
    ]
    return data


def report_to_json(report: ComplexityReport, indent: Optional[int] = 2) -> str:
    return json.dumps(report_to_dict(report), indent=indent)
