"""Model configuration and parameter initialization.

The network follows a fixed layer table: a two-level feature pyramid
(16 then 32 channels, each level one stride-2 conv plus two stride-1
convs), a convolutional GRU over quarter-resolution features (update /
reset / candidate convs, 64 in, 32 out), and one densely connected
velocity network per resolution level whose final layer emits the three
displacement components. All kernels are 3x3x3 with padding 1.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError

PYRAMID_LAYERS = (
    ("pyr1", 1, 16, 2),
    ("pyr2", 16, 16, 1),
    ("pyr3", 16, 16, 1),
    ("pyr4", 16, 32, 2),
    ("pyr5", 32, 32, 1),
    ("pyr6", 32, 32, 1),
)

GRU_GATES = ("gru_update", "gru_reset", "gru_cand")

VN_QUARTER_WIDTHS = (64, 48, 32, 16)
VN_HALF_WIDTHS = (32, 16)

QUARTER_CHANNELS = 32
HALF_CHANNELS = 16
CONTEXT_CHANNELS = 32


@dataclass
class ModelConfig:
    levels: int = 1                # 1: quarter only; 2: quarter + half
    use_gru: bool = True           # False: context = fixed quarter features
    use_cost_volume: bool = True   # False: warped features replace it
    radius_quarter: int = 2
    radius_half: int = 1
    leaky_slope: float = 0.1
    head_init_scale: float = 1e-3
    dtype: str = "float32"

    def __post_init__(self):
        if self.levels not in (1, 2):
            raise ConfigError(f"levels must be 1 or 2, got {self.levels}")
        if self.radius_quarter < 1 or self.radius_half < 1:
            raise ConfigError("cost volume radii must be >= 1")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def field_fraction(self):
        return 0.5 if self.levels == 2 else 0.25


def cost_volume_channels(radius):
    return (2 * radius + 1) ** 3


def quarter_input_channels(cfg: ModelConfig) -> int:
    # [cost volume, displacement, fixed feature, context, warped feature]
    corr = cost_volume_channels(cfg.radius_quarter) if cfg.use_cost_volume \
        else 0
    return corr + 3 + QUARTER_CHANNELS + CONTEXT_CHANNELS + QUARTER_CHANNELS


def half_input_channels(cfg: ModelConfig) -> int:
    # [cost volume, carried vector, fixed feature, context]; without the
    # cost volume the warped moving features take its slot
    corr = cost_volume_channels(cfg.radius_half) if cfg.use_cost_volume \
        else HALF_CHANNELS
    return corr + 3 + HALF_CHANNELS + CONTEXT_CHANNELS


def _dense_layer_table(base, widths):
    # dense skips: layer k sees the block input plus all previous outputs
    return [(base + sum(widths[:k]), cout) for k, cout in enumerate(widths)]


def _init_conv(rng, name, cin, cout, dtype, scale=1.0):
    bound = np.sqrt(3.0 / (cin * 27))
    w = rng.uniform(-bound, bound, size=(cout, cin, 3, 3, 3)) * scale
    return {
        f"{name}.w": Tensor(w.astype(dtype), requires_grad=True, name=name),
        f"{name}.b": Tensor(np.zeros(cout, dtype=dtype), requires_grad=True,
                            name=name),
    }


def init_params(cfg: ModelConfig, seed: int) -> dict:
    """Fan-in scaled uniform conv weights, zero biases, near-zero final
    velocity layers so the initial registration stays close to identity."""
    rng = np.random.default_rng(seed)
    dtype = cfg.np_dtype
    params = {}
    for name, cin, cout, _ in PYRAMID_LAYERS:
        params.update(_init_conv(rng, name, cin, cout, dtype))
    if cfg.use_gru:
        for name in GRU_GATES:
            params.update(_init_conv(rng, name, 2 * CONTEXT_CHANNELS,
                                     CONTEXT_CHANNELS, dtype))
    for cin, cout in _dense_layer_table(quarter_input_channels(cfg),
                                        VN_QUARTER_WIDTHS):
        idx = len([k for k in params if k.startswith("vnq")]) // 2
        params.update(_init_conv(rng, f"vnq{idx}", cin, cout, dtype))
    params.update(_init_conv(rng, "vnq_head", VN_QUARTER_WIDTHS[-1], 3,
                             dtype, scale=cfg.head_init_scale))
    if cfg.levels == 2:
        for cin, cout in _dense_layer_table(half_input_channels(cfg),
                                            VN_HALF_WIDTHS):
            idx = len([k for k in params if k.startswith("vnh")]) // 2
            params.update(_init_conv(rng, f"vnh{idx}", cin, cout, dtype))
        params.update(_init_conv(rng, "vnh_head", VN_HALF_WIDTHS[-1], 3,
                                 dtype, scale=cfg.head_init_scale))
    return params


def parameter_count(params) -> int:
    return int(sum(t.data.size for t in params.values()))
