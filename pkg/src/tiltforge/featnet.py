"""A small convolutional feature extractor with hand-written backprop.

Layers are 3x3 same-padded convolutions, ReLUs and 2x2 average pools.  The
network maps a single-channel float image to named feature maps; the NST
losses (content MSE and Gram-matrix MSE) and their gradients with respect to
the input pixels are computed here.  Everything runs in float64.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ChecksumMismatch, FormatError, InconsistentChannels, MissingTarget, ShapeTooSmall, ValidationError

__all__ = [
    "LayerSpec",
    "FeatureNet",
    "Activations",
    "ImageGrad",
    "default_spec",
    "init_random",
    "forward",
    "gram",
    "style_content_loss",
    "save_weights",
    "load_weights",
]

KINDS = ("conv3x3", "relu", "pool2")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    in_channels: int = 0
    out_channels: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")


def default_spec() -> list:
    """conv32-relu-conv32-relu-pool-conv64-relu-conv64-relu-pool-conv128-relu."""
    plan = [(1, 32), (32, 32), "pool", (32, 64), (64, 64), "pool", (64, 128)]
    layers = []
    block, idx = 1, 1
    for item in plan:
        if item == "pool":
            layers.append(LayerSpec("pool2", f"pool{block}"))
            block, idx = block + 1, 1
            continue
        cin, cout = item
        layers.append(LayerSpec("conv3x3", f"conv{block}_{idx}", cin, cout))
        layers.append(LayerSpec("relu", f"relu{block}_{idx}"))
        idx += 1
    return layers


def _check_chain(layers) -> None:
    names = [l.name for l in layers]
    if len(set(names)) != len(names):
        raise ValidationError("layer names must be unique")
    channels = 1
    for layer in layers:
        if layer.kind == "conv3x3":
            if layer.in_channels != channels or layer.out_channels < 1:
                raise InconsistentChannels(
                    f"{layer.name} expects {layer.in_channels} input channels, previous layer gives {channels}"
                )
            channels = layer.out_channels


@dataclass(frozen=True, eq=False)
class FeatureNet:
    """Layer list, conv weights and the layers used by the NST losses.

    ``weights`` maps each conv layer name to ``(kernel, bias)`` with kernel
    shape ``(out, in, 3, 3)``.  ``style_layers`` maps layer names to loss
    weights that sum to one.
    """

    layers: tuple
    weights: dict
    content_layer: str | None = None
    style_layers: dict = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        _check_chain(layers)
        names = {l.name for l in layers}
        weights = {}
        for layer in layers:
            if layer.kind != "conv3x3":
                continue
            if layer.name not in self.weights:
                raise ValidationError(f"no weights for {layer.name}")
            k, b = self.weights[layer.name]
            # weights are float32 values so that the weight file is lossless
            k = np.asarray(k, dtype=np.float32).astype(np.float64)
            b = np.asarray(b, dtype=np.float32).astype(np.float64)
            if k.shape != (layer.out_channels, layer.in_channels, 3, 3) or b.shape != (layer.out_channels,):
                raise InconsistentChannels(f"weight shapes of {layer.name} do not match its spec")
            k.setflags(write=False)
            b.setflags(write=False)
            weights[layer.name] = (k, b)
        object.__setattr__(self, "weights", weights)
        if self.content_layer is not None and self.content_layer not in names:
            raise ValidationError(f"content layer {self.content_layer!r} is not in the network")
        missing = set(self.style_layers) - names
        if missing:
            raise ValidationError(f"style layers {sorted(missing)} are not in the network")
        if self.style_layers and not np.isclose(sum(self.style_layers.values()), 1.0):
            raise ValidationError("style layer weights must sum to 1")
        object.__setattr__(self, "style_layers", dict(self.style_layers))

    @property
    def n_pools(self) -> int:
        return sum(l.kind == "pool2" for l in self.layers)


@dataclass
class Activations:
    """Output of every layer (index 0 is the input) for one image."""

    names: list
    outputs: list

    def __getitem__(self, name):
        return self.outputs[self.names.index(name) + 1]


@dataclass
class ImageGrad:
    grad: np.ndarray


def _default_roles(layers):
    relus = [l.name for l in layers if l.kind == "relu"]
    if not relus:
        return None, {}
    return relus[-1], {n: 1.0 / len(relus) for n in relus}


def init_random(spec=None, seed: int = 0, content_layer=None, style_layers=None) -> FeatureNet:
    """He-initialised kernels ``N(0, 2 / (9 in))`` and zero biases.

    Without explicit roles the last ReLU is the content layer and every ReLU
    is a style layer with equal weight.
    """
    layers = tuple(default_spec() if spec is None else spec)
    _check_chain(layers)
    rng = np.random.default_rng(seed)
    weights = {}
    for layer in layers:
        if layer.kind == "conv3x3":
            std = np.sqrt(2.0 / (9 * layer.in_channels))
            k = rng.normal(0.0, std, size=(layer.out_channels, layer.in_channels, 3, 3))
            weights[layer.name] = (k, np.zeros(layer.out_channels))
    c_default, s_default = _default_roles(layers)
    return FeatureNet(
        layers,
        weights,
        c_default if content_layer is None else content_layer,
        s_default if style_layers is None else style_layers,
    )


def _windows(x):
    # (C, H, W) -> (C, H, W, 3, 3) views over the zero-padded input
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    return sliding_window_view(xp, (3, 3), axis=(1, 2))


def _conv(x, k, b):
    out = np.tensordot(k, _windows(x), axes=([1, 2, 3], [0, 3, 4]))
    return out + b[:, None, None]


def _conv_backward(g, k):
    # correlation with the spatially flipped, channel-transposed kernel
    kt = k[:, :, ::-1, ::-1]
    return np.tensordot(kt, _windows(g), axes=([0, 2, 3], [0, 3, 4]))


def _pool(x):
    C, H, W = x.shape
    h, w = H // 2, W // 2
    return x[:, : 2 * h, : 2 * w].reshape(C, h, 2, w, 2).mean(axis=(2, 4))


def _pool_backward(g, shape):
    out = np.zeros(shape)
    h, w = g.shape[1:]
    out[:, : 2 * h, : 2 * w] = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0
    return out


def forward(net: FeatureNet, image) -> Activations:
    """Run ``image`` (H x W) through the network, caching every output."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"expected a 2-D image, got shape {x.shape}")
    min_side = max(8, 2**net.n_pools)
    if min(x.shape) < min_side:
        raise ShapeTooSmall(f"image {x.shape} is smaller than {min_side}x{min_side}")
    x = x[None]
    outputs = [x]
    for layer in net.layers:
        if layer.kind == "conv3x3":
            x = _conv(x, *net.weights[layer.name])
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        else:
            x = _pool(x)
        outputs.append(x)
    return Activations([l.name for l in net.layers], outputs)


def backward(net: FeatureNet, acts: Activations, injected: dict) -> np.ndarray:
    """Backpropagate gradients ``injected[name]`` (w.r.t. layer outputs) to the image."""
    g = None
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        extra = injected.get(layer.name)
        if extra is not None:
            g = extra if g is None else g + extra
        if g is None:
            continue
        x_in = acts.outputs[i]
        if layer.kind == "conv3x3":
            g = _conv_backward(g, net.weights[layer.name][0])
        elif layer.kind == "relu":
            g = g * (x_in > 0)
        else:
            g = _pool_backward(g, x_in.shape)
    if g is None:
        return np.zeros(acts.outputs[0].shape[1:])
    return g[0]


def gram(features) -> np.ndarray:
    """Channel Gram matrix normalised by ``C * h * w``."""
    f = np.asarray(features, dtype=np.float64)
    C = f.shape[0]
    f = f.reshape(C, -1)
    return (f @ f.T) / (C * f.shape[1])


def content_target(net: FeatureNet, image) -> np.ndarray:
    return forward(net, image)[net.content_layer]


def style_targets(net: FeatureNet, image) -> dict:
    acts = forward(net, image)
    return {name: gram(acts[name]) for name in net.style_layers}


def loss_terms(net, image, content_targets, style_gram_targets, want_grad=True):
    """Return ``(content_loss, style_loss, d_content, d_style)``.

    The last two are image gradients of the unweighted terms, or ``None``.
    """
    acts = forward(net, image)
    lc = 0.0
    inj_c = {}
    if net.content_layer is not None:
        if content_targets is None:
            raise MissingTarget("no content target supplied")
        f = acts[net.content_layer]
        diff = f - content_targets
        lc = float(np.mean(diff**2))
        inj_c[net.content_layer] = 2.0 * diff / diff.size
    ls = 0.0
    inj_s = {}
    for name, w in net.style_layers.items():
        if style_gram_targets is None or name not in style_gram_targets:
            raise MissingTarget(f"no style target for {name}")
        f = acts[name]
        C = f.shape[0]
        F = f.reshape(C, -1)
        G = (F @ F.T) / (C * F.shape[1])
        dG = G - style_gram_targets[name]
        ls += w * float(np.mean(dG**2))
        # dL/dG = 2 w dG / C^2 and dG/dF contributes 2 dG F / (C M)
        dF = (2.0 * w / dG.size) * 2.0 * (dG @ F) / (C * F.shape[1])
        inj_s[name] = dF.reshape(f.shape)
    if not want_grad:
        return lc, ls, None, None
    return lc, ls, backward(net, acts, inj_c), backward(net, acts, inj_s)


def style_content_loss(net, image, content_targets, style_gram_targets, alpha, beta):
    """Weighted NST loss ``alpha L_content + beta L_style`` and its image gradient."""
    lc, ls, gc, gs = loss_terms(net, image, content_targets, style_gram_targets)
    return alpha * lc + beta * ls, ImageGrad(alpha * gc + beta * gs)


# weight file: b"FNW1", u32 layer count, then per layer
#   u8 kind, u32 name length, name bytes, and for conv layers
#   u32 in, u32 out, f32[out*in*9] kernel, f32[out] bias;
# then the roles: u32 content-name length + bytes (0 = none), u32 style count,
#   per style layer u32 name length + bytes + f64 weight;
# trailing u32 CRC32 of everything after the magic.
MAGIC = b"FNW1"


def save_weights(net: FeatureNet, path) -> None:
    buf = bytearray()
    buf += struct.pack("<I", len(net.layers))
    for layer in net.layers:
        name = layer.name.encode()
        buf += struct.pack("<BI", KINDS.index(layer.kind), len(name)) + name
        if layer.kind == "conv3x3":
            k, b = net.weights[layer.name]
            buf += struct.pack("<II", layer.in_channels, layer.out_channels)
            buf += np.ascontiguousarray(k, dtype="<f4").tobytes()
            buf += np.ascontiguousarray(b, dtype="<f4").tobytes()
    content = (net.content_layer or "").encode()
    buf += struct.pack("<I", len(content)) + content
    buf += struct.pack("<I", len(net.style_layers))
    for name, w in net.style_layers.items():
        nb = name.encode()
        buf += struct.pack("<I", len(nb)) + nb + struct.pack("<d", w)
    Path(path).write_bytes(MAGIC + bytes(buf) + struct.pack("<I", zlib.crc32(buf)))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("weight file ends prematurely")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode()
        except UnicodeDecodeError:
            raise FormatError("layer name is not valid UTF-8") from None


def load_weights(path) -> FeatureNet:
    """Read a network written by :func:`save_weights`."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError("not a feature-net weight file (bad magic)")
    r = _Reader(raw[4:])
    (n_layers,) = r.unpack("<I")
    layers, weights = [], {}
    for _ in range(n_layers):
        (kind,) = r.unpack("<B")
        if kind >= len(KINDS):
            raise FormatError(f"unknown layer kind code {kind}")
        name = r.string()
        if KINDS[kind] == "conv3x3":
            cin, cout = r.unpack("<II")
            k = np.frombuffer(r.take(4 * 9 * cin * cout), dtype="<f4").reshape(cout, cin, 3, 3)
            b = np.frombuffer(r.take(4 * cout), dtype="<f4")
            layers.append(LayerSpec("conv3x3", name, cin, cout))
            weights[name] = (k.astype(np.float64), b.astype(np.float64))
        else:
            layers.append(LayerSpec(KINDS[kind], name))
    content = r.string() or None
    (n_style,) = r.unpack("<I")
    style = {}
    for _ in range(n_style):
        name = r.string()
        (w,) = r.unpack("<d")
        style[name] = w
    payload_end = r.pos
    (crc,) = r.unpack("<I")
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after checksum")
    if zlib.crc32(r.data[:payload_end]) != crc:
        raise ChecksumMismatch("weight file checksum does not match its contents")
    _check_chain(layers)
    return FeatureNet(tuple(layers), weights, content, style)
