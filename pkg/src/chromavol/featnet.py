"""Minimal inference engine for a VGG-19-topology network.

Loads weights from the "VGWC" binary container (documented in `load_weights`),
produces multi-level feature pyramids for dense matching and FC6 descriptors
for retrieval.  Convolution is cross-correlation (no kernel flip), matching
the convention of mainstream pretrained weights.

The container must hold a prefix of the canonical VGG-19 sequence
(conv1_1 relu1_1 conv1_2 relu1_2 pool1 ... conv5_4 relu5_4 pool5 fc6);
exporter-produced files carry the full 16-conv stack plus fc6, while tiny
test containers may stop earlier.  Channel widths are data-driven so small
fixtures stay small; fc6, when present, must emit 4096 values and span the
full 7x7 spatial extent of pool5 at the fixed 224x224 descriptor input.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit

from .imgcore import GrayImage, RgbImage, luminance, resize_bilinear, srgb_to_lab

__all__ = [
    "LayerSpec",
    "WeightContainer",
    "FeatureMap",
    "FeaturePyramid",
    "Descriptor",
    "WeightFormatError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedBlockError",
    "TopologyError",
    "PYRAMID_LAYERS",
    "VGG19_SEQUENCE",
    "DESCRIPTOR_SIZE",
    "DESCRIPTOR_INPUT_SIZE",
    "fnv1a64",
    "load_weights",
    "save_weights",
    "container_bytes",
    "conv_forward",
    "relu_forward",
    "maxpool_forward",
    "fc_forward",
    "standardize",
    "destandardize",
    "extract_pyramid",
    "extract_descriptor",
]

KIND_CONV, KIND_RELU, KIND_MAXPOOL, KIND_FC = 0, 1, 2, 3
_KIND_NAMES = {KIND_CONV: "conv", KIND_RELU: "relu", KIND_MAXPOOL: "maxpool", KIND_FC: "fc"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}

_MAGIC = b"VGWC"
_VERSION = 1

DESCRIPTOR_SIZE = 4096
DESCRIPTOR_INPUT_SIZE = 224

# Matching levels, coarsest first.
PYRAMID_LAYERS = ("relu5_1", "relu4_1", "relu3_1", "relu2_1", "relu1_1")


def _vgg19_sequence():
    seq = []
    block_convs = (2, 2, 4, 4, 4)
    for b, n in enumerate(block_convs, start=1):
        for c in range(1, n + 1):
            seq.append((f"conv{b}_{c}", "conv"))
            seq.append((f"relu{b}_{c}", "relu"))
        seq.append((f"pool{b}", "maxpool"))
    seq.append(("fc6", "fc"))
    return tuple(seq)


VGG19_SEQUENCE = _vgg19_sequence()
_MIN_PREFIX = 2  # conv1_1 + relu1_1


class WeightFormatError(Exception):
    """Base class for weight container errors."""


class BadMagicError(WeightFormatError):
    pass


class UnsupportedVersionError(WeightFormatError):
    pass


class TruncatedBlockError(WeightFormatError):
    pass


class TopologyError(WeightFormatError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    out_channels: int = 0
    in_channels: int = 0
    kernel_h: int = 0
    kernel_w: int = 0

    @property
    def has_params(self):
        return self.kind in ("conv", "fc")


@dataclass(frozen=True)
class WeightContainer:
    layers: tuple
    params: dict = field(repr=False)  # name -> (weight (out,in,kh,kw) f32, bias (out,) f32)
    input_channels: int
    input_mean: np.ndarray = field(repr=False)
    input_std: np.ndarray = field(repr=False)

    def layer(self, name):
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def has_layer(self, name):
        return any(spec.name == name for spec in self.layers)

    @cached_property
    def fingerprint(self) -> int:
        """FNV-1a 64 over the canonical serialized bytes."""
        return fnv1a64(container_bytes(self))


@dataclass(frozen=True)
class FeatureMap:
    """Channel-major activation block, (channels, height, width) float64."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"FeatureMap needs (c, h, w) data, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("FeatureMap values must be finite")
        if arr is self.data:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


@dataclass(frozen=True)
class FeaturePyramid:
    """(layer name, FeatureMap) pairs ordered coarsest to finest."""

    levels: tuple
    original_size: tuple  # (width, height) before padding

    @property
    def layer_names(self):
        return tuple(name for name, _ in self.levels)

    def level(self, name):
        for lname, fm in self.levels:
            if lname == name:
                return fm
        raise KeyError(name)


@dataclass(frozen=True)
class Descriptor:
    """Unit-norm FC6 activation vector plus the fingerprint of its network."""

    values: np.ndarray = field(repr=False)
    fingerprint: int = 0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 1:
            raise ValueError("Descriptor values must be a flat vector")
        if not np.isfinite(arr).all():
            raise ValueError("Descriptor values must be finite")
        if arr is self.values:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


@njit(cache=True)
def _fnv1a64_kernel(data):
    h = np.uint64(0xCBF29CE484222325)
    prime = np.uint64(0x100000001B3)
    for i in range(data.shape[0]):
        h = (h ^ np.uint64(data[i])) * prime
    return h


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    return int(_fnv1a64_kernel(np.frombuffer(data, dtype=np.uint8)))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedBlockError(f"truncated block while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what):
        return self.take(1, what)[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, what):
        return struct.unpack("<f", self.take(4, what))[0]

    def f32_block(self, count, what):
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def _validate_topology(layers, params, input_channels):
    if len(layers) < _MIN_PREFIX:
        raise TopologyError("container must hold at least conv1_1 + relu1_1")
    if len(layers) > len(VGG19_SEQUENCE):
        raise TopologyError("container has more layers than the VGG-19-to-fc6 sequence")
    prev_out = input_channels
    for i, spec in enumerate(layers):
        want_name, want_kind = VGG19_SEQUENCE[i]
        if spec.name != want_name or spec.kind != want_kind:
            raise TopologyError(
                f"layer {i}: expected {want_kind} '{want_name}', got {spec.kind} '{spec.name}'"
            )
        if spec.kind == "conv":
            if (spec.kernel_h, spec.kernel_w) != (3, 3):
                raise TopologyError(f"{spec.name}: conv kernels must be 3x3")
            if spec.in_channels != prev_out:
                raise TopologyError(
                    f"{spec.name}: in_channels {spec.in_channels} != {prev_out} from previous layer"
                )
            prev_out = spec.out_channels
        elif spec.kind == "fc":
            if (spec.kernel_h, spec.kernel_w) != (7, 7):
                raise TopologyError(f"{spec.name}: fc kernel must span the 7x7 pool5 extent")
            if spec.in_channels != prev_out:
                raise TopologyError(
                    f"{spec.name}: in_channels {spec.in_channels} != {prev_out} from previous layer"
                )
            if spec.out_channels != DESCRIPTOR_SIZE:
                raise TopologyError(f"{spec.name}: out_channels must be {DESCRIPTOR_SIZE}")
        if spec.has_params:
            w, b = params[spec.name]
            if w.shape != (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w):
                raise TopologyError(f"{spec.name}: weight block shape mismatch")
            if b.shape != (spec.out_channels,):
                raise TopologyError(f"{spec.name}: bias block shape mismatch")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise TopologyError(f"{spec.name}: non-finite weights")


def _parse(data: bytes) -> WeightContainer:
    r = _Reader(data)
    if r.take(4, "magic") != _MAGIC:
        raise BadMagicError("bad magic (not a VGWC container)")
    version = r.u32("version")
    if version != _VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    input_channels = r.u8("input_channels")
    if input_channels not in (1, 3):
        raise TopologyError(f"input_channels must be 1 or 3, got {input_channels}")
    mean = np.empty(input_channels, dtype=np.float32)
    std = np.empty(input_channels, dtype=np.float32)
    for c in range(input_channels):
        mean[c] = r.f32("input mean")
        std[c] = r.f32("input std")
    if not np.isfinite(mean).all() or not np.isfinite(std).all() or (std <= 0).any():
        raise TopologyError("input mean/std must be finite with std > 0")
    layer_count = r.u32("layer_count")
    layers = []
    params = {}
    for i in range(layer_count):
        name_len = r.u16(f"layer {i} name length")
        name = r.take(name_len, f"layer {i} name").decode("utf-8")
        kind_code = r.u8(f"layer {name} kind")
        if kind_code not in _KIND_NAMES:
            raise TopologyError(f"layer {name}: unknown kind code {kind_code}")
        kind = _KIND_NAMES[kind_code]
        if kind in ("conv", "fc"):
            out_c = r.u32(f"{name} out_channels")
            in_c = r.u32(f"{name} in_channels")
            kh = r.u32(f"{name} kernel_h")
            kw = r.u32(f"{name} kernel_w")
            w = r.f32_block(out_c * in_c * kh * kw, f"{name} weights").reshape(out_c, in_c, kh, kw)
            b = r.f32_block(out_c, f"{name} biases")
            layers.append(LayerSpec(name, kind, out_c, in_c, kh, kw))
            params[name] = (w, b)
        else:
            layers.append(LayerSpec(name, kind))
    if r.pos != len(data):
        raise TruncatedBlockError(f"{len(data) - r.pos} trailing bytes after last layer")
    _validate_topology(layers, params, input_channels)
    mean.flags.writeable = False
    std.flags.writeable = False
    return WeightContainer(tuple(layers), params, input_channels, mean, std)


def load_weights(path) -> WeightContainer:
    """Load and fully validate a VGWC weight container.

    Binary layout (little-endian, no padding): magic "VGWC", u32 version=1,
    u8 input_channels, per channel f32 mean + f32 std, u32 layer_count, then
    per layer u16 name length + UTF-8 name, u8 kind (0=conv, 1=relu,
    2=maxpool, 3=fc) and, for conv/fc, four u32 dims (out, in, kh, kw)
    followed by out*in*kh*kw f32 weights and out f32 biases.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    container = _parse(data)
    # the format has no encoding slack, so the file bytes are already canonical
    container.__dict__["fingerprint"] = fnv1a64(data)
    return container


def container_bytes(container: WeightContainer) -> bytes:
    """Serialize a container to canonical VGWC bytes."""
    out = io.BytesIO()
    out.write(_MAGIC)
    out.write(struct.pack("<I", _VERSION))
    out.write(struct.pack("<B", container.input_channels))
    for c in range(container.input_channels):
        out.write(struct.pack("<f", float(container.input_mean[c])))
        out.write(struct.pack("<f", float(container.input_std[c])))
    out.write(struct.pack("<I", len(container.layers)))
    for spec in container.layers:
        name_bytes = spec.name.encode("utf-8")
        out.write(struct.pack("<H", len(name_bytes)))
        out.write(name_bytes)
        out.write(struct.pack("<B", _KIND_CODES[spec.kind]))
        if spec.has_params:
            w, b = container.params[spec.name]
            out.write(
                struct.pack(
                    "<IIII", spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w
                )
            )
            out.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            out.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return out.getvalue()


def save_weights(container: WeightContainer, path):
    """Write the canonical VGWC serialization (plumbing for fixtures/tools)."""
    with open(path, "wb") as fh:
        fh.write(container_bytes(container))


def conv_forward(x: FeatureMap, weight: np.ndarray, bias: np.ndarray) -> FeatureMap:
    """3x3 stride-1 zero-pad-1 cross-correlation plus bias."""
    w = np.asarray(weight, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ValueError(f"conv kernel must be (out, in, 3, 3), got {w.shape}")
    if x.channels != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.channels}, kernel expects {w.shape[1]}")
    c_out = w.shape[0]
    h, wd = x.height, x.width
    xpad = np.zeros((x.channels, h + 2, wd + 2), dtype=np.float64)
    xpad[:, 1:-1, 1:-1] = x.data
    out = np.broadcast_to(b[:, None], (c_out, h * wd)).copy()
    for ky in range(3):
        for kx in range(3):
            window = xpad[:, ky : ky + h, kx : kx + wd].reshape(x.channels, h * wd)
            out += w[:, :, ky, kx] @ window
    return FeatureMap(out.reshape(c_out, h, wd))


def relu_forward(x: FeatureMap) -> FeatureMap:
    return FeatureMap(np.maximum(x.data, 0.0))


def maxpool_forward(x: FeatureMap) -> FeatureMap:
    """2x2 stride-2 max pooling; requires even spatial dims."""
    if x.height % 2 or x.width % 2:
        raise ValueError(f"maxpool needs even dims, got {x.height}x{x.width}")
    d = x.data.reshape(x.channels, x.height // 2, 2, x.width // 2, 2)
    return FeatureMap(d.max(axis=(2, 4)))


def fc_forward(x: FeatureMap, weight: np.ndarray, bias: np.ndarray) -> FeatureMap:
    """Fully connected layer over the whole spatial extent; output is (out, 1, 1)."""
    w = np.asarray(weight, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    if x.data.shape != w.shape[1:]:
        raise ValueError(f"fc expects input shape {w.shape[1:]}, got {x.data.shape}")
    out = w.reshape(w.shape[0], -1) @ x.data.reshape(-1) + b
    return FeatureMap(out[:, None, None])


def standardize(x: np.ndarray, mean, std) -> np.ndarray:
    """(v - mean) / std per channel on a (c, h, w) block."""
    m = np.asarray(mean, dtype=np.float64)[:, None, None]
    s = np.asarray(std, dtype=np.float64)[:, None, None]
    return (x - m) / s

def destandardize(x: np.ndarray, mean, std) -> np.ndarray:
    m = np.asarray(mean, dtype=np.float64)[:, None, None]
    s = np.asarray(std, dtype=np.float64)[:, None, None]
    return x * s + m


def _input_block(img, container: WeightContainer) -> np.ndarray:
    """Image -> standardized (c, h, w) network input."""
    if isinstance(img, GrayImage):
        plane = img.data
        if container.input_channels == 1:
            block = plane[None, :, :]
        else:
            block = np.repeat(plane[None, :, :], 3, axis=0)
    elif isinstance(img, RgbImage):
        if container.input_channels == 3:
            block = np.moveaxis(img.data.astype(np.float64) / 255.0, -1, 0)
        else:
            block = luminance(srgb_to_lab(img)).data[None, :, :]
    else:
        raise TypeError(f"cannot feed {type(img).__name__} to the network")
    return standardize(block, container.input_mean, container.input_std)


def _run_layers(container: WeightContainer, x: FeatureMap, stop_after=None, capture=()):
    captured = {}
    for spec in container.layers:
        if spec.kind == "conv":
            w, b = container.params[spec.name]
            x = conv_forward(x, w, b)
        elif spec.kind == "relu":
            x = relu_forward(x)
        elif spec.kind == "maxpool":
            x = maxpool_forward(x)
        else:
            w, b = container.params[spec.name]
            x = fc_forward(x, w, b)
        if spec.name in capture:
            captured[spec.name] = x
        if spec.name == stop_after:
            break
    return x, captured


def extract_pyramid(img: GrayImage, container: WeightContainer, original_size=None) -> FeaturePyramid:
    """Run the conv stack once and capture the matching levels.

    The input must already be padded to a multiple of 16 (pad_replicate) so
    every pool halves cleanly; `original_size` records the pre-padding
    (width, height) for cropping correspondence fields back.
    """
    if img.width % 16 or img.height % 16:
        raise ValueError(f"pyramid input dims must be multiples of 16, got {img.width}x{img.height}")
    present = [name for name in PYRAMID_LAYERS if container.has_layer(name)]
    if "relu1_1" not in present:
        raise TopologyError("container lacks relu1_1; cannot build a pyramid")
    x = FeatureMap(_input_block(img, container))
    _, captured = _run_layers(container, x, stop_after=present[0], capture=set(present))
    levels = tuple((name, captured[name]) for name in present)
    if original_size is None:
        original_size = (img.width, img.height)
    return FeaturePyramid(levels, tuple(original_size))


def extract_descriptor(img, container: WeightContainer) -> Descriptor:
    """Fixed 224x224 forward pass through the full stack plus fc6, L2-normalized."""
    if not container.has_layer("fc6"):
        raise TopologyError("container lacks fc6; cannot extract a descriptor")
    resized = resize_bilinear(img, DESCRIPTOR_INPUT_SIZE, DESCRIPTOR_INPUT_SIZE)
    x = FeatureMap(_input_block(resized, container))
    out, _ = _run_layers(container, x, stop_after="fc6")
    vec = out.data.reshape(-1)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError("fc6 output is the zero vector; cannot normalize")
    return Descriptor((vec / norm).astype(np.float32), container.fingerprint)
