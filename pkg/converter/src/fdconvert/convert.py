"""Torch checkpoint -> DFW weight export, plus a reference input/activation
pair for cross-framework validation.

The engine consumes kernels in (out, kh, kw, in/groups) layout; torch stores
(out, in/groups, kh, kw). This module owns that layout knowledge so the
engine stays free of torch coupling. All writes are atomic: a temp file in
the target directory is renamed into place only after a complete write.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from facedet.nn import (
    CHANNEL_MEANS,
    CHANNEL_ORDER_KEY,
    ConvLayer,
    LrnLayer,
    MaxPoolLayer,
    NetworkSpec,
    ReluLayer,
    load_network,
    same_pads,
)
from facedet.tensor import dfw_write


class ConversionError(Exception):
    pass


# torchvision-style checkpoints index conv layers inside a "features"
# sequential; plain conv1..conv5 naming is accepted as-is.
_TORCHVISION_ALIASES = {
    "conv1": "features.0", "conv2": "features.3", "conv3": "features.6",
    "conv4": "features.8", "conv5": "features.10",
}

REFERENCE_IMAGE_SIDE = 64
_REFERENCE_SEED = 424242


@dataclass
class ConversionReport:
    source: str
    shapes: dict[str, list[int]]
    channel_order: str
    sha256: str
    reference_files: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)


def _conv_layers(net: NetworkSpec) -> list[ConvLayer]:
    return [layer for layer in net.layers if isinstance(layer, ConvLayer)]


def _expected_torch_shape(layer: ConvLayer) -> tuple[int, ...]:
    return (layer.out_channels, layer.in_channels // layer.groups,
            layer.kernel_h, layer.kernel_w)


def load_source(
    checkpoint: str | None, seed: int = 0, net: NetworkSpec | None = None
) -> tuple[str, dict[str, torch.Tensor]]:
    """Return (source identity, conv{N}.weight/bias tensors in torch layout).

    With a checkpoint path the state dict is read from disk (conv1..conv5 or
    torchvision features.N key styles). Without one, a seeded deterministic
    initialization stands in, and the identity records that.
    """
    net = net or load_network()
    layers = _conv_layers(net)
    if checkpoint is None:
        torch.manual_seed(seed)
        state: dict[str, torch.Tensor] = {}
        for idx, layer in enumerate(layers, 1):
            fan_in = layer.kernel_h * layer.kernel_w * layer.in_channels // layer.groups
            w = torch.randn(_expected_torch_shape(layer), dtype=torch.float32)
            state[f"conv{idx}.weight"] = w * (2.0 / fan_in) ** 0.5
            state[f"conv{idx}.bias"] = torch.zeros(layer.out_channels)
        return f"seeded-init(seed={seed})", state

    try:
        raw = torch.load(checkpoint, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ConversionError(f"cannot read checkpoint {checkpoint!r}: {exc}") from exc
    if hasattr(raw, "state_dict"):
        raw = raw.state_dict()
    if not isinstance(raw, dict):
        raise ConversionError(f"checkpoint {checkpoint!r} is not a state dict")

    state = {}
    for idx, layer in enumerate(layers, 1):
        name = f"conv{idx}"
        for part in ("weight", "bias"):
            key = f"{name}.{part}"
            alias = f"{_TORCHVISION_ALIASES[name]}.{part}"
            if key in raw:
                state[key] = raw[key]
            elif alias in raw:
                state[key] = raw[alias]
            else:
                raise ConversionError(f"layer {name}: missing {part} "
                                      f"(looked for {key!r} and {alias!r})")
        got = tuple(state[f"{name}.weight"].shape)
        want = _expected_torch_shape(layer)
        if got != want:
            raise ConversionError(
                f"layer {name}: weight shape {got}, expected {want}"
            )
        if tuple(state[f"{name}.bias"].reshape(-1).shape) != (layer.out_channels,):
            raise ConversionError(
                f"layer {name}: bias length {state[f'{name}.bias'].numel()}, "
                f"expected {layer.out_channels}"
            )
    return os.path.basename(checkpoint), state


def _to_engine_store(
    state: dict[str, torch.Tensor], net: NetworkSpec
) -> dict[str, np.ndarray]:
    store: dict[str, np.ndarray] = {}
    for idx, layer in enumerate(_conv_layers(net), 1):
        w = state[f"conv{idx}.weight"].detach().to(torch.float32).numpy()
        b = state[f"conv{idx}.bias"].detach().to(torch.float32).numpy()
        # (out, in/g, kh, kw) -> (out, kh, kw, in/g)
        store[layer.weights] = np.ascontiguousarray(w.transpose(0, 2, 3, 1))
        store[layer.bias] = b.reshape(-1)
    store[CHANNEL_ORDER_KEY] = np.array([1.0], dtype=np.float32)
    return store


def _atomic_dfw_write(store: dict[str, np.ndarray], out_path: str) -> None:
    out_dir = os.path.dirname(os.path.abspath(out_path))
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".dfw.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            dfw_write(store, f)
        os.replace(tmp, out_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def convert(
    checkpoint: str | None, out_path: str, seed: int = 0,
    net: NetworkSpec | None = None,
) -> ConversionReport:
    """Export conv1-5 weights to a DFW file; returns the report."""
    net = net or load_network()
    source, state = load_source(checkpoint, seed=seed, net=net)
    store = _to_engine_store(state, net)
    _atomic_dfw_write(store, out_path)
    return ConversionReport(
        source=source,
        shapes={name: list(arr.shape) for name, arr in store.items()},
        channel_order="RGB",
        sha256=_sha256(out_path),
    )


# ---------------------------------------------------------------------------
# reference pair
# ---------------------------------------------------------------------------

def reference_image() -> np.ndarray:
    """Fixed 64x64 RGB test pattern; bit-identical across runs."""
    rng = np.random.default_rng(_REFERENCE_SEED)
    side = REFERENCE_IMAGE_SIDE
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / side
    img = np.stack([
        120 + 100 * np.sin(6.0 * yy + 2.0 * xx),
        120 + 100 * np.cos(4.0 * xx),
        120 + 100 * np.sin(3.0 * (xx + yy)),
    ], axis=2)
    img += rng.normal(0.0, 10.0, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def reference_conv5(
    state: dict[str, torch.Tensor], image: np.ndarray,
    net: NetworkSpec | None = None,
) -> np.ndarray:
    """Source-framework conv5 activations for a raw uint8 RGB image.

    Mirrors the engine's semantics: mean-subtracted input, dynamic padding
    that keeps output length at ceil(n/stride), zero pads for convolution,
    excluded pads for pooling, and float32 rounding between layers.
    """
    net = net or load_network()
    planes = image.astype(np.float64) - CHANNEL_MEANS.astype(np.float64)
    x = torch.from_numpy(planes).permute(2, 0, 1).unsqueeze(0)
    conv_idx = 0
    for layer in net.layers:
        if isinstance(layer, ConvLayer):
            conv_idx += 1
            h, w = x.shape[2], x.shape[3]
            if layer.pad is not None:
                pt = pb = pl = pr = layer.pad
            else:
                pt, pb = same_pads(h, layer.kernel_h, layer.stride)
                pl, pr = same_pads(w, layer.kernel_w, layer.stride)
            x = F.pad(x, (pl, pr, pt, pb), value=0.0)
            x = F.conv2d(
                x,
                state[f"conv{conv_idx}.weight"].to(torch.float64),
                state[f"conv{conv_idx}.bias"].to(torch.float64),
                stride=layer.stride, groups=layer.groups,
            )
        elif isinstance(layer, ReluLayer):
            x = F.relu(x)
        elif isinstance(layer, MaxPoolLayer):
            h, w = x.shape[2], x.shape[3]
            if layer.pad is not None:
                pt = pb = pl = pr = layer.pad
            else:
                pt, pb = same_pads(h, layer.window, layer.stride)
                pl, pr = same_pads(w, layer.window, layer.stride)
            x = F.pad(x, (pl, pr, pt, pb), value=float("-inf"))
            x = F.max_pool2d(x, layer.window, stride=layer.stride, ceil_mode=True)
        elif isinstance(layer, LrnLayer):
            x = F.local_response_norm(x, size=layer.depth, alpha=layer.alpha,
                                      beta=layer.beta, k=layer.k)
        # round like the engine, which emits float32 from every layer
        x = x.to(torch.float32).to(torch.float64)
    out = x.squeeze(0).permute(1, 2, 0).numpy().astype(np.float32)
    return out


def emit_reference(
    state: dict[str, torch.Tensor], out_dir: str,
    net: NetworkSpec | None = None,
) -> tuple[str, str]:
    """Write the reference image and its conv5 activations as DFW files."""
    os.makedirs(out_dir, exist_ok=True)
    img = reference_image()
    act = reference_conv5(state, img, net=net)
    image_path = os.path.join(out_dir, "reference_image.dfw")
    act_path = os.path.join(out_dir, "reference_conv5.dfw")
    _atomic_dfw_write({"image": img.astype(np.float32)}, image_path)
    _atomic_dfw_write({"conv5": act}, act_path)
    return image_path, act_path
