"""MS-CNN, WaveNet and Skip-WaveNet built on :mod:`snowlayers.gridcore`.

All three share a VGG-style trunk of five stages (3x3 convs with padding 1 and
ReLU, 2x2 max pooling between stages 1-4). Each active stage ``k`` feeds a
1x1 side convolution whose logit map lives at ``1 / 2**(k-1)`` of the input
resolution; it is upsampled by a bilinear-initialised transposed convolution
and centre-cropped back to the input size. A 1x1 "fuse" convolution combines
the upsampled side logits.

Wavelet variants concatenate three detail grids (H, V, D) onto a stage's final
feature map right before its side convolution:

* ``wavenet``: level ``k-1`` details of the input image, for stages 2-5.
* ``skipwavenet``: level-1 details of side logit ``k-1`` (stage resolution,
  pre-sigmoid), recomputed on every forward pass, for stages 2-5.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import gridcore as gc
from . import wavelet

VARIANTS = ("mscnn", "wavenet", "skipwavenet")
STAGES = 5
DEFAULT_CONVS = (2, 2, 3, 3, 3)


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "skipwavenet"
    wavelet: str = "haar"
    base_width: int = 4
    convs_per_stage: tuple = DEFAULT_CONVS
    active_side_outputs: tuple | None = None
    input_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "convs_per_stage", tuple(int(c) for c in self.convs_per_stage))
        if self.active_side_outputs is None:
            default = (1, 2, 3, 4) if self.variant == "mscnn" else (1, 2, 3, 4, 5)
            object.__setattr__(self, "active_side_outputs", default)
        else:
            object.__setattr__(self, "active_side_outputs", tuple(sorted(int(k) for k in self.active_side_outputs)))
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant: unknown {self.variant!r}; expected one of {list(VARIANTS)}")
        if self.base_width < 1:
            raise ValueError(f"base_width: must be >= 1, got {self.base_width}")
        if len(self.convs_per_stage) != STAGES or min(self.convs_per_stage) < 1:
            raise ValueError(f"convs_per_stage: need {STAGES} positive entries, got {self.convs_per_stage}")
        sides = self.active_side_outputs
        if not sides or len(set(sides)) != len(sides) or not set(sides) <= set(range(1, STAGES + 1)):
            raise ValueError(f"active_side_outputs: must be a non-empty subset of 1..5, got {sides}")
        if self.variant != "mscnn" and sides != (1, 2, 3, 4, 5):
            raise ValueError(f"active_side_outputs: {self.variant} requires all five side outputs, got {sides}")
        if self.input_channels < 1:
            raise ValueError(f"input_channels: must be >= 1, got {self.input_channels}")
        wavelet.filter_bank(self.wavelet)

    @property
    def channel_widths(self) -> tuple:
        w = self.base_width
        return (w, 2 * w, 4 * w, 8 * w, 8 * w)

    def side_in_channels(self, k: int) -> int:
        extra = 3 if self.variant != "mscnn" and k > 1 else 0
        return self.channel_widths[k - 1] + extra

    def to_dict(self) -> dict:
        d = asdict(self)
        d["convs_per_stage"] = list(self.convs_per_stage)
        d["active_side_outputs"] = list(self.active_side_outputs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardOutput:
    side_logits: list
    fuse_logit: gc.Node
    side_ids: tuple
    param_nodes: dict = field(default_factory=dict)
    stage_logits: dict = field(default_factory=dict)

    @property
    def side_activations(self) -> list[np.ndarray]:
        return [expit(n.value) for n in self.side_logits]

    @property
    def fuse_activation(self) -> np.ndarray:
        return expit(self.fuse_logit.value)


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    shapes = {}
    in_ch = config.input_channels
    for s, (n_convs, width) in enumerate(zip(config.convs_per_stage, config.channel_widths), start=1):
        for i in range(1, n_convs + 1):
            shapes[f"stage{s}.conv{i}.weight"] = (width, in_ch, 3, 3)
            shapes[f"stage{s}.conv{i}.bias"] = (width,)
            in_ch = width
    for k in config.active_side_outputs:
        shapes[f"side{k}.weight"] = (1, config.side_in_channels(k), 1, 1)
        shapes[f"side{k}.bias"] = (1,)
        if k > 1:
            size = 2 * 2 ** (k - 1)
            shapes[f"up{k}.weight"] = (1, 1, size, size)
    shapes["fuse.weight"] = (1, len(config.active_side_outputs), 1, 1)
    shapes["fuse.bias"] = (1,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """He-normal trunk, zero side convs, ``1/K`` fuse weights, bilinear upsampling kernels.

    Values are rounded to float32-representable numbers so a checkpoint of the
    initial state is exact.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("stage") and name.endswith("weight"):
            fan_in = shape[1] * shape[2] * shape[3]
            value = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name.startswith("up"):
            value = gc.bilinear_kernel(shape[2] // 2)
        elif name == "fuse.weight":
            value = np.full(shape, 1.0 / shape[1])
        else:
            value = np.zeros(shape)
        params[name] = value.astype(np.float32).astype(np.float64)
    return params


class Network:
    """Runs one architecture as a fresh graph per forward pass."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.bank = wavelet.filter_bank(config.wavelet)
        self._last = None

    def forward(self, params: dict, batch) -> ForwardOutput:
        cfg = self.config
        x = gc.as_grid(batch, "batch")
        n, c, rows, cols = x.shape
        if c != cfg.input_channels:
            raise gc.ShapeError(f"batch has {c} channels, model expects {cfg.input_channels}")
        if rows % 16 or cols % 16 or rows == 0 or cols == 0:
            raise gc.ShapeError(f"input dims must be positive multiples of 16, got {rows}x{cols}")
        missing = set(param_shapes(cfg)) - set(params)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        nodes = {name: gc.param(value, name) for name, value in params.items() if name in param_shapes(cfg)}

        image_details = {}
        if cfg.variant == "wavenet":
            for dec in wavelet.wavedec2(x, self.bank, levels=STAGES - 1):
                image_details[dec.level + 1] = gc.const(np.concatenate([dec.H, dec.V, dec.D], axis=1))

        h = gc.const(x)
        stage_logits, upsampled = {}, []
        for s in range(1, STAGES + 1):
            if s > 1:
                h = gc.maxpool2(h)
            for i in range(1, cfg.convs_per_stage[s - 1] + 1):
                h = gc.relu(gc.conv2d(h, nodes[f"stage{s}.conv{i}.weight"], nodes[f"stage{s}.conv{i}.bias"], pad=1))
            if s not in cfg.active_side_outputs:
                continue
            side_in = h
            if cfg.variant == "wavenet" and s > 1:
                side_in = gc.concat([h, image_details[s]])
            elif cfg.variant == "skipwavenet" and s > 1:
                side_in = gc.concat([h, gc.dwt_details(stage_logits[s - 1], self.bank)])
            logit = gc.conv2d(side_in, nodes[f"side{s}.weight"], nodes[f"side{s}.bias"])
            stage_logits[s] = logit
            if s > 1:
                logit = gc.crop_center(gc.tconv2d(logit, nodes[f"up{s}.weight"], 2 ** (s - 1)), rows, cols)
            upsampled.append(logit)

        fuse = gc.conv2d(gc.concat(upsampled), nodes["fuse.weight"], nodes["fuse.bias"])
        out = ForwardOutput(upsampled, fuse, cfg.active_side_outputs, nodes, stage_logits)
        self._last = out
        return out

    def backward(self, loss: gc.Node) -> dict[str, np.ndarray]:
        if self._last is None:
            raise RuntimeError("backward called before forward")
        return gc.backward(loss, self._last.param_nodes)

    def predict(self, params: dict, batch) -> np.ndarray:
        """Fuse-layer sigmoid activations, shape (batch, 1, rows, cols)."""
        return self.forward(params, batch).fuse_activation


def build_model(config: ModelConfig, seed: int = 0) -> tuple[Network, dict]:
    return Network(config), init_params(config, seed)
