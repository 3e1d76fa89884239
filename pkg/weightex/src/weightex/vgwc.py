"""Self-contained VGWC container writer/reader.

Deliberately independent of the consuming library: the exporter must prove
that files it writes obey the byte format, so this module reimplements the
layout from scratch.

Layout (little-endian, no padding): magic "VGWC", u32 version=1,
u8 input_channels, per input channel f32 mean + f32 std, u32 layer_count,
then per layer u16 name length + UTF-8 name, u8 kind (0=conv, 1=relu,
2=maxpool, 3=fc) and, for conv/fc, four u32 dims (out, in, kh, kw) followed
by out*in*kh*kw f32 weights and out f32 biases.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"VGWC"
VERSION = 1

KIND_CODES = {"conv": 0, "relu": 1, "maxpool": 2, "fc": 3}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}

CONV_NAMES = tuple(
    f"conv{b}_{c}"
    for b, n in enumerate((2, 2, 4, 4, 4), start=1)
    for c in range(1, n + 1)
)


def vgg19_sequence():
    """Canonical layer (name, kind) pairs through fc6."""
    seq = []
    for b, n in enumerate((2, 2, 4, 4, 4), start=1):
        for c in range(1, n + 1):
            seq.append((f"conv{b}_{c}", "conv"))
            seq.append((f"relu{b}_{c}", "relu"))
        seq.append((f"pool{b}", "maxpool"))
    seq.append(("fc6", "fc"))
    return tuple(seq)


VGG19_SEQUENCE = vgg19_sequence()


class VgwcFormatError(Exception):
    """Container bytes violate the VGWC layout or topology."""


def checksum(data: bytes) -> str:
    import hashlib

    return hashlib.sha256(data).hexdigest()


def serialize(input_channels, mean, std, params) -> bytes:
    """params: dict vgwc-name -> (weight (out,in,kh,kw) f32, bias f32) for
    every conv plus fc6; relu/pool layers are implied by the sequence."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<B", input_channels)
    for c in range(input_channels):
        out += struct.pack("<ff", float(mean[c]), float(std[c]))
    out += struct.pack("<I", len(VGG19_SEQUENCE))
    for name, kind in VGG19_SEQUENCE:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw))
        out += raw
        out += struct.pack("<B", KIND_CODES[kind])
        if kind in ("conv", "fc"):
            w, b = params[name]
            w = np.ascontiguousarray(w, dtype="<f4")
            b = np.ascontiguousarray(b, dtype="<f4")
            out += struct.pack("<IIII", *w.shape)
            out += w.tobytes()
            out += b.tobytes()
    return bytes(out)


def parse(data: bytes):
    """Parse and validate; returns (input_channels, mean, std, layers) where
    layers is a list of (name, kind, weight|None, bias|None)."""
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise VgwcFormatError(f"truncated while reading {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise VgwcFormatError("bad magic")
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != VERSION:
        raise VgwcFormatError(f"unsupported version {version}")
    input_channels = take(1, "input_channels")[0]
    if input_channels not in (1, 3):
        raise VgwcFormatError(f"input_channels must be 1 or 3, got {input_channels}")
    mean = np.empty(input_channels, dtype=np.float32)
    std = np.empty(input_channels, dtype=np.float32)
    for c in range(input_channels):
        mean[c], std[c] = struct.unpack("<ff", take(8, "input stats"))
    count = struct.unpack("<I", take(4, "layer count"))[0]
    layers = []
    for i in range(count):
        nlen = struct.unpack("<H", take(2, f"layer {i} name length"))[0]
        name = take(nlen, f"layer {i} name").decode("utf-8")
        kind_code = take(1, f"{name} kind")[0]
        if kind_code not in KIND_NAMES:
            raise VgwcFormatError(f"{name}: unknown kind {kind_code}")
        kind = KIND_NAMES[kind_code]
        if kind in ("conv", "fc"):
            o, ic, kh, kw = struct.unpack("<IIII", take(16, f"{name} dims"))
            w = np.frombuffer(take(4 * o * ic * kh * kw, f"{name} weights"), dtype="<f4")
            b = np.frombuffer(take(4 * o, f"{name} biases"), dtype="<f4")
            layers.append((name, kind, w.reshape(o, ic, kh, kw), b))
        else:
            layers.append((name, kind, None, None))
    if pos != len(data):
        raise VgwcFormatError(f"{len(data) - pos} trailing bytes")
    return input_channels, mean, std, layers


def check_topology(input_channels, layers):
    """Full-sequence shape checks; raises VgwcFormatError on violation."""
    if len(layers) != len(VGG19_SEQUENCE):
        raise VgwcFormatError(
            f"expected {len(VGG19_SEQUENCE)} layers (16 convs + fc6), got {len(layers)}"
        )
    prev_out = input_channels
    for (name, kind, w, b), (want_name, want_kind) in zip(layers, VGG19_SEQUENCE):
        if name != want_name or kind != want_kind:
            raise VgwcFormatError(f"layer {name}/{kind} does not match {want_name}/{want_kind}")
        if kind == "conv":
            if w.shape[2:] != (3, 3):
                raise VgwcFormatError(f"{name}: kernel {w.shape[2:]} is not 3x3")
            if w.shape[1] != prev_out:
                raise VgwcFormatError(f"{name}: in_channels {w.shape[1]} != {prev_out}")
            if b.shape != (w.shape[0],):
                raise VgwcFormatError(f"{name}: bias length mismatch")
            prev_out = w.shape[0]
        elif kind == "fc":
            if w.shape[1:] != (prev_out, 7, 7):
                raise VgwcFormatError(f"{name}: expected ({prev_out}, 7, 7) kernel, got {w.shape[1:]}")
            if w.shape[0] != 4096:
                raise VgwcFormatError(f"{name}: out_channels {w.shape[0]} != 4096")
        if kind in ("conv", "fc") and not (
            np.isfinite(w).all() and np.isfinite(b).all()
        ):
            raise VgwcFormatError(f"{name}: non-finite values")
