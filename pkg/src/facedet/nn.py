"""Forward-pass-only CNN engine.

Convolution (with channel groups), ReLU, ceil-mode max pooling, across-channel
response normalization (exact or fast-exponential), image preprocessing, and
the stride-16 conv-feature stack. All layer functions are pure: float32 in,
float32 out, float64 accumulation inside, fixed reduction order, so repeated
runs are bit-identical at any worker count.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from importlib import resources
from time import perf_counter
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .errors import ConfigError, DimensionError, NumericError
from .tensor import validate_tensor3

# Per-channel RGB means subtracted during preprocessing. The pretrained
# weights this engine targets assume mean-centered RGB input.
CHANNEL_MEANS = np.array([123.68, 116.78, 103.94], dtype=np.float32)

CHANNEL_ORDER_KEY = "meta/channel_order_rgb"

PadSpec = Union[int, tuple[tuple[int, int], tuple[int, int]]]


def _norm_pad(pad: PadSpec) -> tuple[tuple[int, int], tuple[int, int]]:
    if isinstance(pad, int):
        if pad < 0:
            raise DimensionError(f"padding must be >= 0, got {pad}")
        return (pad, pad), (pad, pad)
    (pt, pb), (pl, pr) = pad
    if min(pt, pb, pl, pr) < 0:
        raise DimensionError(f"padding must be >= 0, got {pad}")
    return (pt, pb), (pl, pr)


def same_pads(n: int, kernel: int, stride: int) -> tuple[int, int]:
    """(begin, end) zero-padding so the output length is ceil(n / stride)."""
    out = -(-n // stride)
    total = max((out - 1) * stride + kernel - n, 0)
    return total // 2, total - total // 2


# ---------------------------------------------------------------------------
# layer kernels
# ---------------------------------------------------------------------------

def conv2d(
    inp: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    pad: PadSpec = 0,
    groups: int = 1,
) -> np.ndarray:
    """2-D convolution (cross-correlation) with channel groups.

    ``kernels`` has shape (out_channels, kh, kw, in_channels/groups); output
    channels are ordered group-major. Zero padding outside bounds.
    """
    x = np.asarray(inp)
    if x.ndim != 3:
        raise DimensionError(f"conv2d input must be rank 3, got rank {x.ndim}")
    k = np.asarray(kernels, dtype=np.float64)
    if k.ndim != 4:
        raise DimensionError(
            f"kernels must be rank 4 (out, kh, kw, in/groups), got rank {k.ndim}"
        )
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    out_ch, kh, kw, cg = k.shape
    h, w, cin = x.shape
    if groups < 1 or cin % groups or out_ch % groups:
        raise DimensionError(
            f"channel axis: {cin} in / {out_ch} out not divisible by groups={groups}"
        )
    if cg * groups != cin:
        raise DimensionError(
            f"channel axis: kernels carry {cg}x{groups} input channels, input has {cin}"
        )
    b = np.asarray(bias, dtype=np.float64).reshape(-1)
    if b.size != out_ch:
        raise DimensionError(f"bias axis: length {b.size}, expected {out_ch}")

    (pt, pb), (pl, pr) = _norm_pad(pad)
    hp, wp = h + pt + pb, w + pl + pr
    if hp < kh or wp < kw:
        raise DimensionError(
            f"spatial axis: kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    xp = np.zeros((hp, wp, cin), dtype=np.float64)
    xp[pt:pt + h, pl:pl + w, :] = x

    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    # (oh, ow, cin, kh, kw) view over the padded input
    sw = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
    og = out_ch // groups
    out = np.empty((oh, ow, out_ch), dtype=np.float64)
    for g in range(groups):
        cols = sw[:, :, g * cg:(g + 1) * cg, :, :].transpose(0, 1, 3, 4, 2)
        cols = np.ascontiguousarray(cols).reshape(oh * ow, kh * kw * cg)
        wmat = k[g * og:(g + 1) * og].reshape(og, kh * kw * cg)
        out[:, :, g * og:(g + 1) * og] = (cols @ wmat.T).reshape(oh, ow, og)
    out += b
    return out.astype(np.float32)


def relu(inp: np.ndarray) -> np.ndarray:
    x = np.asarray(inp, dtype=np.float32)
    return np.maximum(x, np.float32(0.0))


def maxpool2d(
    inp: np.ndarray, window: int, stride: int = 1, pad: PadSpec = 0
) -> np.ndarray:
    """Channelwise max pooling, ceil-mode output size.

    Output length per axis is ceil((n + pads - window)/stride) + 1; padded
    cells never participate in a max and every window must cover at least one
    real cell.
    """
    x = np.asarray(inp)
    if x.ndim != 3:
        raise DimensionError(f"maxpool2d input must be rank 3, got rank {x.ndim}")
    if window < 1:
        raise DimensionError(f"window must be >= 1, got {window}")
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    h, w, c = x.shape
    (pt, pb), (pl, pr) = _norm_pad(pad)
    if h + pt + pb < window or w + pl + pr < window:
        raise DimensionError(
            f"spatial axis: window {window} larger than padded input "
            f"{h + pt + pb}x{w + pl + pr}"
        )
    oh = -(-(h + pt + pb - window) // stride) + 1
    ow = -(-(w + pl + pr - window) // stride) + 1
    # extend so the last (ceil-mode) window fits; extension is -inf = excluded
    hp = max(h + pt + pb, (oh - 1) * stride + window)
    wp = max(w + pl + pr, (ow - 1) * stride + window)
    xp = np.full((hp, wp, c), -np.inf, dtype=np.float64)
    xp[pt:pt + h, pl:pl + w, :] = x
    sw = sliding_window_view(xp, (window, window), axis=(0, 1))[::stride, ::stride]
    out = sw.max(axis=(3, 4))
    if not np.all(np.isfinite(out)):
        raise DimensionError("pooling produced a window with no real cells")
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# fast exponential and response normalization
# ---------------------------------------------------------------------------

# e^y ~ the double whose high 32 bits are EXP_A*y + (1023*2^20 - 60801);
# the linear term rides the exponent field of the IEEE-754 layout and the
# spill into the mantissa interpolates between powers of two.
_EXP_A = 2.0**20 / math.log(2.0)
_EXP_BC = 1023 * 2**20 - 60801
_EXP_RANGE = 700.0


def fast_exp(y: float) -> float:
    """Approximate e^y via the exponent-field construction; |y| <= 700."""
    if not abs(y) <= _EXP_RANGE:
        raise NumericError(f"fast_exp argument out of range: {y!r}")
    hi = math.floor(_EXP_A * y + _EXP_BC)
    return struct.unpack("<d", struct.pack("<q", hi << 32))[0]


def fast_exp_array(y: np.ndarray) -> np.ndarray:
    """Vectorized fast_exp; same construction, same results elementwise."""
    v = np.asarray(y, dtype=np.float64)
    if not np.all(np.abs(v) <= _EXP_RANGE):
        raise NumericError("fast_exp argument out of range")
    hi = np.floor(_EXP_A * v + _EXP_BC).astype(np.int64)
    return (hi << 32).view(np.float64)


def lrn(
    inp: np.ndarray,
    n: int = 5,
    k: float = 2.0,
    alpha: float = 1e-4,
    beta: float = 0.75,
    mode: str = "exact",
) -> np.ndarray:
    """Across-channel normalization b = a / (k + (alpha/n) * sum a^2)^beta.

    The squared sum runs over the n//2 channel neighborhood, clipped at the
    channel boundary. ``fast`` mode computes the power via
    fast_exp(beta * ln(denominator)).
    """
    if n < 1 or n % 2 == 0:
        raise DimensionError(f"normalization depth must be odd >= 1, got {n}")
    if mode not in ("exact", "fast"):
        raise ConfigError(f"unknown lrn mode {mode!r}")
    a = np.asarray(inp, dtype=np.float64)
    if a.ndim != 3:
        raise DimensionError(f"lrn input must be rank 3, got rank {a.ndim}")
    c = a.shape[2]
    half = n // 2
    cs = np.concatenate(
        [np.zeros(a.shape[:2] + (1,)), np.cumsum(a * a, axis=2)], axis=2
    )
    ch = np.arange(c)
    lo = np.maximum(ch - half, 0)
    hi = np.minimum(ch + half + 1, c)
    sums = cs[:, :, hi] - cs[:, :, lo]
    base = k + (alpha / n) * sums
    if np.any(base <= 0.0):
        raise NumericError("normalization denominator <= 0")
    if mode == "exact":
        denom = base ** beta
    else:
        denom = fast_exp_array(beta * np.log(base))
    return (a / denom).astype(np.float32)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def resized_shape(h: int, w: int, target_long_side: int = 640) -> tuple[int, int]:
    """Output (rows, cols) after aspect-preserving resize of the long side."""
    if h < 1 or w < 1:
        raise DimensionError(f"zero-sized image: {h}x{w}")
    long_side = max(h, w)
    if long_side == target_long_side:
        return h, w
    scale = target_long_side / long_side
    if h >= w:
        return target_long_side, max(1, round(w * scale))
    return max(1, round(h * scale)), target_long_side


def load_image(path: str) -> np.ndarray:
    """Read an image file as an HxWx3 uint8 RGB array."""
    with Image.open(path) as pil:
        return np.asarray(pil.convert("RGB"))


def preprocess(image: np.ndarray, target_long_side: int = 640) -> np.ndarray:
    """Resize so the long side equals the target, float, subtract RGB means."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected HxWx3 RGB image, got shape {img.shape}")
    h, w = img.shape[:2]
    nh, nw = resized_shape(h, w, target_long_side)
    if (nh, nw) != (h, w):
        pil = Image.fromarray(np.ascontiguousarray(img, dtype=np.uint8))
        img = np.asarray(pil.resize((nw, nh), Image.BILINEAR))
    return img.astype(np.float32) - CHANNEL_MEANS


# ---------------------------------------------------------------------------
# network description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvLayer:
    kernel_h: int
    kernel_w: int
    in_channels: int
    out_channels: int
    stride: int = 1
    groups: int = 1
    pad: int | None = None  # None: dynamic padding keeping ceil(n/stride)
    weights: str = ""
    bias: str = ""
    kind: str = field(default="conv", init=False)

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ConfigError(f"conv stride must be >= 1, got {self.stride}")
        if self.pad is not None and self.pad < 0:
            raise ConfigError(f"conv padding must be >= 0, got {self.pad}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"conv channels {self.in_channels}->{self.out_channels} "
                f"not divisible by groups={self.groups}"
            )
        if not self.weights or not self.bias:
            raise ConfigError("conv layer needs weight and bias binding names")


@dataclass(frozen=True)
class ReluLayer:
    kind: str = field(default="relu", init=False)


@dataclass(frozen=True)
class MaxPoolLayer:
    window: int
    stride: int = 1
    pad: int | None = None
    kind: str = field(default="maxpool", init=False)

    def __post_init__(self) -> None:
        if self.window < 1 or self.stride < 1:
            raise ConfigError("maxpool window and stride must be >= 1")
        if self.pad is not None and self.pad < 0:
            raise ConfigError(f"maxpool padding must be >= 0, got {self.pad}")


@dataclass(frozen=True)
class LrnLayer:
    depth: int = 5
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75
    exp_mode: str = "exact"
    kind: str = field(default="lrn", init=False)

    def __post_init__(self) -> None:
        if self.depth < 1 or self.depth % 2 == 0:
            raise ConfigError(f"lrn depth must be odd >= 1, got {self.depth}")
        if self.exp_mode not in ("exact", "fast"):
            raise ConfigError(f"lrn exp_mode must be exact|fast, got {self.exp_mode!r}")


LayerSpec = Union[ConvLayer, ReluLayer, MaxPoolLayer, LrnLayer]


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]

    @property
    def total_stride(self) -> int:
        s = 1
        for layer in self.layers:
            if isinstance(layer, (ConvLayer, MaxPoolLayer)):
                s *= layer.stride
        return s

    @property
    def out_channels(self) -> int:
        for layer in reversed(self.layers):
            if isinstance(layer, ConvLayer):
                return layer.out_channels
        raise ConfigError("network has no convolution layers")


def default_network(lrn_mode: str = "exact") -> NetworkSpec:
    """The shipped conv-feature stack: total stride 16, 256 output channels."""
    return NetworkSpec(layers=(
        ConvLayer(11, 11, 3, 96, stride=4, weights="conv1/weights", bias="conv1/bias"),
        ReluLayer(),
        LrnLayer(exp_mode=lrn_mode),
        MaxPoolLayer(window=3, stride=2),
        ConvLayer(5, 5, 96, 256, groups=2, weights="conv2/weights", bias="conv2/bias"),
        ReluLayer(),
        LrnLayer(exp_mode=lrn_mode),
        MaxPoolLayer(window=3, stride=2),
        ConvLayer(3, 3, 256, 384, weights="conv3/weights", bias="conv3/bias"),
        ReluLayer(),
        ConvLayer(3, 3, 384, 384, groups=2, weights="conv4/weights", bias="conv4/bias"),
        ReluLayer(),
        ConvLayer(3, 3, 384, 256, groups=2, weights="conv5/weights", bias="conv5/bias"),
        ReluLayer(),
    ))


def network_to_json(net: NetworkSpec) -> str:
    out = []
    for layer in net.layers:
        if isinstance(layer, ConvLayer):
            out.append({
                "kind": "conv", "kernel": [layer.kernel_h, layer.kernel_w],
                "in_channels": layer.in_channels, "out_channels": layer.out_channels,
                "stride": layer.stride, "groups": layer.groups, "pad": layer.pad,
                "weights": layer.weights, "bias": layer.bias,
            })
        elif isinstance(layer, ReluLayer):
            out.append({"kind": "relu"})
        elif isinstance(layer, MaxPoolLayer):
            out.append({
                "kind": "maxpool", "window": layer.window,
                "stride": layer.stride, "pad": layer.pad,
            })
        else:
            out.append({
                "kind": "lrn", "depth": layer.depth, "k": layer.k,
                "alpha": layer.alpha, "beta": layer.beta, "exp_mode": layer.exp_mode,
            })
    return json.dumps({"layers": out}, indent=2)


def network_from_json(text: str) -> NetworkSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"network config is not valid JSON: {exc}") from exc
    layers: list[LayerSpec] = []
    for idx, entry in enumerate(doc.get("layers", [])):
        kind = entry.get("kind")
        try:
            if kind == "conv":
                kh, kw = entry["kernel"]
                layers.append(ConvLayer(
                    kh, kw, entry["in_channels"], entry["out_channels"],
                    stride=entry.get("stride", 1), groups=entry.get("groups", 1),
                    pad=entry.get("pad"), weights=entry["weights"], bias=entry["bias"],
                ))
            elif kind == "relu":
                layers.append(ReluLayer())
            elif kind == "maxpool":
                layers.append(MaxPoolLayer(
                    window=entry["window"], stride=entry.get("stride", 1),
                    pad=entry.get("pad"),
                ))
            elif kind == "lrn":
                layers.append(LrnLayer(
                    depth=entry.get("depth", 5), k=entry.get("k", 2.0),
                    alpha=entry.get("alpha", 1e-4), beta=entry.get("beta", 0.75),
                    exp_mode=entry.get("exp_mode", "exact"),
                ))
            else:
                raise ConfigError(f"layer {idx}: unknown kind {kind!r}")
        except KeyError as exc:
            raise ConfigError(f"layer {idx}: missing field {exc}") from exc
    if not layers:
        raise ConfigError("network config has no layers")
    return NetworkSpec(layers=tuple(layers))


def load_network(path: str | None = None) -> NetworkSpec:
    """Load a network JSON; without a path, the shipped default stack."""
    if path is None:
        text = resources.files("facedet.data").joinpath("alexnet_conv5.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    return network_from_json(text)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def _conv_binding(weights: dict[str, np.ndarray], layer: ConvLayer) -> tuple[np.ndarray, np.ndarray]:
    for name in (layer.weights, layer.bias):
        if name not in weights:
            raise ConfigError(f"missing weight binding {name!r}")
    w = weights[layer.weights]
    b = weights[layer.bias]
    expected = (layer.out_channels, layer.kernel_h, layer.kernel_w,
                layer.in_channels // layer.groups)
    if tuple(w.shape) != expected:
        raise ConfigError(
            f"binding {layer.weights!r}: shape {tuple(w.shape)}, expected {expected}"
        )
    if b.reshape(-1).shape != (layer.out_channels,):
        raise ConfigError(
            f"binding {layer.bias!r}: length {b.size}, expected {layer.out_channels}"
        )
    return w, b.reshape(-1)


def _layer_pads(layer, h: int, w: int) -> tuple[tuple[int, int], tuple[int, int]]:
    if isinstance(layer, ConvLayer):
        kh, kw = layer.kernel_h, layer.kernel_w
    else:
        kh = kw = layer.window
    if layer.pad is not None:
        return (layer.pad, layer.pad), (layer.pad, layer.pad)
    return same_pads(h, kh, layer.stride), same_pads(w, kw, layer.stride)


def apply_layer(layer: LayerSpec, weights: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    if isinstance(layer, ConvLayer):
        w, b = _conv_binding(weights, layer)
        pads = _layer_pads(layer, x.shape[0], x.shape[1])
        return conv2d(x, w, b, stride=layer.stride, pad=pads, groups=layer.groups)
    if isinstance(layer, ReluLayer):
        return relu(x)
    if isinstance(layer, MaxPoolLayer):
        pads = _layer_pads(layer, x.shape[0], x.shape[1])
        return maxpool2d(x, layer.window, stride=layer.stride, pad=pads)
    return lrn(x, n=layer.depth, k=layer.k, alpha=layer.alpha,
               beta=layer.beta, mode=layer.exp_mode)


def _check_channel_order(weights: dict[str, np.ndarray]) -> None:
    marker = weights.get(CHANNEL_ORDER_KEY)
    if marker is not None and float(np.ravel(marker)[0]) != 1.0:
        raise ConfigError(
            "weight store expects non-RGB channel order; engine input is RGB"
        )


def forward(net: NetworkSpec, weights: dict[str, np.ndarray],
            image: np.ndarray) -> np.ndarray:
    """Run the layer stack over a preprocessed image tensor."""
    x = validate_tensor3(image)
    _check_channel_order(weights)
    for layer in net.layers:
        x = apply_layer(layer, weights, x)
    return x


def timed_forward(net: NetworkSpec, weights: dict[str, np.ndarray],
                  image: np.ndarray) -> tuple[np.ndarray, list[tuple[str, float]]]:
    """forward() with per-layer wall times, for the bench command."""
    x = validate_tensor3(image)
    _check_channel_order(weights)
    times: list[tuple[str, float]] = []
    for layer in net.layers:
        t0 = perf_counter()
        x = apply_layer(layer, weights, x)
        times.append((layer.kind, perf_counter() - t0))
    return x, times


def random_weights(net: NetworkSpec, seed: int) -> dict[str, np.ndarray]:
    """Seeded He-normal weights for every conv layer; for synthetic runs."""
    rng = np.random.default_rng(seed)
    store: dict[str, np.ndarray] = {}
    for layer in net.layers:
        if not isinstance(layer, ConvLayer):
            continue
        cg = layer.in_channels // layer.groups
        fan_in = layer.kernel_h * layer.kernel_w * cg
        shape = (layer.out_channels, layer.kernel_h, layer.kernel_w, cg)
        store[layer.weights] = (
            rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
        ).astype(np.float32)
        store[layer.bias] = np.zeros(layer.out_channels, dtype=np.float32)
    store[CHANNEL_ORDER_KEY] = np.array([1.0], dtype=np.float32)
    return store
