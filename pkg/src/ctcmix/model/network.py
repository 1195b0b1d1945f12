"""Gated convolutional recurrent network for text lines.

The layer stack is data (a list of :class:`LayerSpec`) so presets can shrink
depths while keeping the topology.  Mixing depth ``k`` refers to the output of
the convolutional row with ordinal ``k``; ``k = 0`` is the preprocessed input.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import ops
from ..autodiff.recurrent import bidirectional_lstm
from ..autodiff.tensor import Tensor, no_grad
from ..ctc import Vocabulary
from ..errors import InvalidConfig, InvalidDepth, ShapeMismatch, TooNarrow
from ..mixup import MixPlan, mix_batch

LAYER_KINDS = ("tiling", "conv", "gated-conv", "max-pool", "blstm", "linear", "dropout", "output-projection")


@dataclass
class LayerSpec:
    kind: str
    in_depth: int
    out_depth: int
    filter: Tuple[int, int] = (1, 1)
    stride: Tuple[int, int] = (1, 1)
    ordinal: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidConfig(f"unknown layer kind {self.kind!r}")
        self.filter = tuple(int(v) for v in self.filter)
        self.stride = tuple(int(v) for v in self.stride)

    @property
    def padding(self) -> str:
        # stride-1 convolutions keep their size; strided ones do not pad
        return "same" if self.stride == (1, 1) else "valid"


def _stack(conv_depths: Sequence[int], decoder: int, strided: Sequence[Tuple[int, int]],
           pool: Tuple[int, int]) -> List[LayerSpec]:
    """Tiling, eight conv rows (rows 3, 5 and 7 gated), a pool, then two BLSTM + linear rows.

    ``strided`` gives the (filter == stride) shape of conv rows 2 and 6.
    """
    d = list(conv_depths)
    if len(d) != 8:
        raise InvalidConfig("the convolutional stack has eight rows")
    rows = [
        ("conv", 4, d[0], (3, 3), (1, 1)),
        ("conv", d[0], d[1], strided[0], strided[0]),
        ("gated-conv", d[1], d[2], (3, 3), (1, 1)),
        ("conv", d[2], d[3], (3, 3), (1, 1)),
        ("gated-conv", d[3], d[4], (3, 3), (1, 1)),
        ("conv", d[4], d[5], strided[1], strided[1]),
        ("gated-conv", d[5], d[6], (3, 3), (1, 1)),
        ("conv", d[6], d[7], (3, 3), (1, 1)),
    ]
    layers = [LayerSpec("tiling", 1, 4, (2, 2), (2, 2), name="tiling")]
    for i, (kind, a, b, f, s) in enumerate(rows, start=1):
        prefix = "gate" if kind == "gated-conv" else "conv"
        layers.append(LayerSpec(kind, a, b, f, s, ordinal=i, name=f"{prefix}{i}"))
    layers.append(LayerSpec("max-pool", d[7], d[7], pool, (1, 1), name="pool"))
    width = d[7]
    for r in (1, 2):
        layers.append(LayerSpec("dropout", width, width, name=f"drop_b{r}"))
        layers.append(LayerSpec("blstm", width, decoder, name=f"blstm{r}"))
        layers.append(LayerSpec("dropout", decoder, decoder, name=f"drop_l{r}"))
        layers.append(LayerSpec("linear", decoder, decoder, name=f"linear{r}"))
        width = decoder
    return layers


PRESETS = {
    "paper": dict(height=128, conv_depths=(8, 16, 16, 32, 32, 64, 64, 128), decoder=128,
                  strided=((4, 2), (4, 2)), pool=(4, 1)),
    # height 32 leaves 4 rows after the first strided conv, so the second
    # downsamples vertically by 2 and the pool window shrinks to match
    "tiny": dict(height=32, conv_depths=(4, 8, 8, 16, 16, 32, 32, 64), decoder=32,
                 strided=((4, 2), (2, 2)), pool=(2, 1)),
}


@dataclass
class NetworkConfig:
    alphabet: str
    preset: str = "tiny"
    height: int = 32
    layers: List[LayerSpec] = field(default_factory=list)
    dropout: float = 0.5
    conv_activation: str = "tanh"
    gate_activation: str = "sigmoid"

    @classmethod
    def from_preset(cls, preset: str, alphabet: str, **overrides) -> "NetworkConfig":
        try:
            p = PRESETS[preset]
        except KeyError:
            raise InvalidConfig(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}") from None
        layers = _stack(p["conv_depths"], p["decoder"], p["strided"], p["pool"])
        cfg = cls(alphabet=alphabet, preset=preset, height=p["height"], layers=layers, **overrides)
        cfg.validate()
        return cfg

    @property
    def vocabulary(self) -> Vocabulary:
        return Vocabulary(self.alphabet)

    @property
    def num_classes(self) -> int:
        return len(self.alphabet) + 1

    @property
    def ordinals(self) -> List[int]:
        return [l.ordinal for l in self.layers if l.ordinal is not None]

    def validate(self):
        Vocabulary(self.alphabet)
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout rate must lie in [0, 1)")
        for act in (self.conv_activation, self.gate_activation):
            if act not in ops.ACTIVATIONS:
                raise InvalidConfig(f"unknown activation {act!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_depth != b.in_depth:
                raise InvalidConfig(f"depth chain breaks between {a.name} ({a.out_depth}) and {b.name} ({b.in_depth})")
        ords = self.ordinals
        if ords != list(range(1, len(ords) + 1)):
            raise InvalidConfig(f"convolution ordinals must be consecutive from 1, got {ords}")
        for l in self.layers:
            if l.kind == "gated-conv" and l.in_depth != l.out_depth:
                raise InvalidConfig(f"{l.name}: gated convolutions preserve depth")
        h = self.height
        for l in self.layers:
            if l.kind == "tiling":
                if h % l.filter[0]:
                    raise InvalidConfig(f"height {h} not divisible by tiling {l.filter[0]}")
                h //= l.filter[0]
            elif l.kind in ("conv", "gated-conv") and l.padding == "valid":
                if h % l.stride[0] or h < l.filter[0]:
                    raise InvalidConfig(f"height {h} incompatible with {l.name} stride {l.stride}")
                h = (h - l.filter[0]) // l.stride[0] + 1
            elif l.kind == "max-pool":
                if h != l.filter[0]:
                    raise InvalidConfig(f"pool window {l.filter[0]} must equal remaining height {h}")
                h = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["layers"] = [LayerSpec(**l) for l in d.get("layers", [])]
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_json().encode("utf-8")).digest()


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _glorot(rng, shape, fan_in, fan_out) -> Tensor:
    b = glorot_bound(fan_in, fan_out)
    return Tensor(rng.uniform(-b, b, size=shape), requires_grad=True)


def build(config: NetworkConfig, rng: np.random.Generator) -> Dict[str, Tensor]:
    """Glorot-uniform weights, zero biases (including LSTM forget gates)."""
    config.validate()
    params: Dict[str, Tensor] = {}
    for l in config.layers:
        if l.kind in ("conv", "gated-conv"):
            kh, kw = l.filter
            params[f"{l.name}.weight"] = _glorot(rng, (l.out_depth, l.in_depth, kh, kw),
                                                 l.in_depth * kh * kw, l.out_depth * kh * kw)
            params[f"{l.name}.bias"] = Tensor(np.zeros(l.out_depth), requires_grad=True)
        elif l.kind == "blstm":
            if l.out_depth % 2:
                raise InvalidConfig(f"{l.name}: bidirectional output depth must be even")
            h = l.out_depth // 2
            for direction in ("fw", "bw"):
                params[f"{l.name}.{direction}.w_in"] = _glorot(rng, (l.in_depth, 4 * h), l.in_depth, 4 * h)
                params[f"{l.name}.{direction}.w_rec"] = _glorot(rng, (h, 4 * h), h, 4 * h)
                params[f"{l.name}.{direction}.bias"] = Tensor(np.zeros(4 * h), requires_grad=True)
        elif l.kind == "linear":
            params[f"{l.name}.weight"] = _glorot(rng, (l.in_depth, l.out_depth), l.in_depth, l.out_depth)
            params[f"{l.name}.bias"] = Tensor(np.zeros(l.out_depth), requires_grad=True)
    width = config.layers[-1].out_depth
    params["output.weight"] = _glorot(rng, (width, config.num_classes), width, config.num_classes)
    params["output.bias"] = Tensor(np.zeros(config.num_classes), requires_grad=True)
    return params


def gated_block(x: Tensor, weight: Tensor, bias: Tensor, activation: str = "sigmoid") -> Tensor:
    """x * act(conv(x)) with a depth-preserving same-padded convolution."""
    if weight.shape[0] != x.shape[1]:
        raise ShapeMismatch(f"gate produces {weight.shape[0]} maps for a {x.shape[1]}-deep input")
    gate = ops.ACTIVATIONS[activation](ops.conv2d(x, weight, bias, (1, 1), "same"))
    return ops.mul(x, gate)


class GatedConvRecognizer:
    """The recognition network: f(x) = g_k(h_k(x)) for every mixable depth k."""

    def __init__(self, config: NetworkConfig, params: Optional[Dict[str, Tensor]] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else build(config, np.random.default_rng(seed))

    @property
    def vocabulary(self) -> Vocabulary:
        return self.config.vocabulary

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def output_length(self, width: int) -> int:
        """Frames produced for an input of the given (padded) width."""
        w = int(width)
        for l in self.config.layers:
            if l.kind == "tiling":
                w //= l.filter[1]
            elif l.kind in ("conv", "gated-conv"):
                if l.padding == "valid":
                    w = (w - l.filter[1]) // l.stride[1] + 1 if w >= l.filter[1] else 0
            elif l.kind == "max-pool":
                w = (w - l.filter[1]) // l.stride[1] + 1 if w >= l.filter[1] else 0
            if w <= 0:
                raise TooNarrow(f"width {width} is narrower than one receptive field of {l.name}")
        return w

    def mix_depths(self) -> List[int]:
        return [0] + self.config.ordinals

    def forward(self, images, plan: Optional[MixPlan] = None, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Per-frame class scores (B, T, C+1) before the softmax.

        With a mixing plan the features after conv row ``plan.depth`` are
        interpolated across the batch before the remaining layers run.
        """
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeMismatch(f"expected (B, 1, H, W) images, got {x.shape}")
        if x.shape[2] != self.config.height:
            raise ShapeMismatch(f"expected height {self.config.height}, got {x.shape[2]}")
        return self.run_layers(x, plan, training, rng)

    def run_layers(self, x: Tensor, plan: Optional[MixPlan] = None, training: bool = False,
                   rng: Optional[np.random.Generator] = None, start: int = 0,
                   stop: Optional[int] = None, trace: Optional[Dict[int, Tensor]] = None) -> Tensor:
        """Apply layers ``start:stop`` to ``x``, then the output projection if ``stop`` is None.

        ``trace`` receives the input of every layer that runs (key = layer
        index, ``len(layers)`` for the projection), so a caller can restart
        from any layer with the earlier activations held fixed.
        """
        depth = plan.depth if plan is not None and plan.is_mixing else None
        if depth is not None and depth not in self.mix_depths():
            raise InvalidDepth(f"mixing depth {depth} not in {self.mix_depths()}")
        if training and rng is None:
            rng = np.random.default_rng()
        cfg, P = self.config, self.params
        conv_act = ops.ACTIVATIONS[cfg.conv_activation]
        if depth == 0 and start == 0:
            x = mix_batch(x, plan)
        for i in range(start, len(cfg.layers) if stop is None else stop):
            l = cfg.layers[i]
            if trace is not None:
                trace[i] = x
            if l.kind == "tiling":
                x = ops.space_to_depth(x, l.filter)
            elif l.kind == "conv":
                x = conv_act(ops.conv2d(x, P[f"{l.name}.weight"], P[f"{l.name}.bias"], l.stride, l.padding))
            elif l.kind == "gated-conv":
                x = gated_block(x, P[f"{l.name}.weight"], P[f"{l.name}.bias"], cfg.gate_activation)
            elif l.kind == "max-pool":
                x = ops.max_pool2d(x, l.filter, l.stride)
                B, D, H, W = x.shape
                if H != 1:
                    raise ShapeMismatch(f"pooled height is {H}, expected 1")
                x = ops.transpose(ops.reshape(x, (B, D, W)), (0, 2, 1))
            elif l.kind == "dropout":
                x = ops.dropout(x, cfg.dropout, training, rng)
            elif l.kind == "blstm":
                fw = [P[f"{l.name}.fw.{n}"] for n in ("w_in", "w_rec", "bias")]
                bw = [P[f"{l.name}.bw.{n}"] for n in ("w_in", "w_rec", "bias")]
                x = bidirectional_lstm(x, fw, bw)
            elif l.kind == "linear":
                x = ops.linear(x, P[f"{l.name}.weight"], P[f"{l.name}.bias"])
            if depth is not None and l.ordinal == depth:
                x = mix_batch(x, plan)
        if stop is not None:
            return x
        if trace is not None:
            trace[len(cfg.layers)] = x
        return ops.linear(x, P["output.weight"], P["output.bias"])

    def layer_of(self, name: str) -> int:
        """Index of the layer owning parameter ``name`` (the projection is ``len(layers)``)."""
        prefix = name.split(".", 1)[0]
        if prefix == "output":
            return len(self.config.layers)
        for i, l in enumerate(self.config.layers):
            if l.name == prefix:
                return i
        raise KeyError(name)

    def predict_proba(self, images) -> np.ndarray:
        """Per-frame class distributions (B, T, C+1), evaluation mode."""
        with no_grad():
            logits = self.forward(images, training=False)
        return ops.softmax_array(logits.data, axis=-1)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        if set(state) != set(self.params):
            raise ShapeMismatch("parameter names differ from the network layout")
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ShapeMismatch(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)
