"""Reference-image recommendation over FC6 descriptors.

The index is a brute-force table of unit-norm descriptors (the corpus is at
most a few thousand cryosection slices, so no approximate structure is
warranted).  Every index carries the FNV-1a fingerprint of the weight
container that produced it; queries from a different network are rejected
because descriptors from different networks live in incomparable spaces.
Reference images are embedded from their luminance plane, matching how the
grayscale targets are embedded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .featnet import DESCRIPTOR_SIZE, Descriptor, WeightContainer, extract_descriptor
from .imgcore import GrayImage, RgbImage, load_image, luminance, srgb_to_lab

__all__ = [
    "IndexEntry",
    "DescriptorIndex",
    "IndexFormatError",
    "FingerprintMismatchError",
    "IndexBuildError",
    "DEFAULT_TOP_K",
    "cosine_similarity",
    "build_index",
    "query",
    "save_index",
    "load_index",
]

_MAGIC = b"VPIX"
_VERSION = 1

DEFAULT_TOP_K = 3


class IndexFormatError(Exception):
    """Index file violates the VPIX layout."""


class FingerprintMismatchError(Exception):
    """Descriptor and index come from different weight containers."""


class IndexBuildError(Exception):
    """One or more corpus images failed to embed."""

    def __init__(self, failures):
        self.failures = list(failures)
        lines = "; ".join(f"{p}: {e}" for p, e in self.failures)
        super().__init__(f"failed to embed {len(self.failures)} image(s): {lines}")


@dataclass(frozen=True)
class IndexEntry:
    path: str
    descriptor: Descriptor

    def __post_init__(self):
        norm = float(np.linalg.norm(self.descriptor.values, ord=2))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"descriptor for {self.path} is not unit norm ({norm})")


@dataclass(frozen=True)
class DescriptorIndex:
    entries: tuple
    fingerprint: int

    def __post_init__(self):
        if not self.entries:
            raise ValueError("index must contain at least one entry")
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("index contains duplicate paths")
        if not self.fingerprint:
            raise ValueError("index fingerprint must be non-empty")

    def __len__(self):
        return len(self.entries)


def cosine_similarity(f1: Descriptor, f2: Descriptor) -> float:
    """dot(f1, f2) / (|f1| * |f2|); descriptors are unit norm so the division
    is defensive."""
    v1 = f1.values.astype(np.float64)
    v2 = f2.values.astype(np.float64)
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(v1 @ v2 / (n1 * n2))


def _to_luminance(img):
    if isinstance(img, RgbImage):
        return luminance(srgb_to_lab(img))
    return img


def build_index(paths, container: WeightContainer) -> DescriptorIndex:
    """Embed every corpus image (luminance plane) and record the container
    fingerprint."""
    paths = [str(p) for p in paths]
    if not paths:
        raise ValueError("reference corpus is empty")
    if len(set(paths)) != len(paths):
        raise ValueError("duplicate paths in reference corpus")
    entries = []
    failures = []
    for path in paths:
        try:
            img = _to_luminance(load_image(path))
            entries.append(IndexEntry(path, extract_descriptor(img, container)))
        except Exception as exc:  # collected, reported together with paths
            failures.append((path, exc))
    if failures:
        raise IndexBuildError(failures)
    return DescriptorIndex(tuple(entries), container.fingerprint)


def query(index: DescriptorIndex, target: Descriptor, k: int = DEFAULT_TOP_K):
    """Top-k entries by descending cosine score; ties keep index order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if target.fingerprint and target.fingerprint != index.fingerprint:
        raise FingerprintMismatchError(
            f"target descriptor fingerprint {target.fingerprint:#x} does not match "
            f"index fingerprint {index.fingerprint:#x}"
        )
    scores = np.array([cosine_similarity(e.descriptor, target) for e in index.entries])
    order = np.argsort(-scores, kind="stable")
    return [(index.entries[i].path, float(scores[i])) for i in order[: min(k, len(index))]]


def save_index(index: DescriptorIndex, path):
    """VPIX layout: magic, u32 version=1, u64 fingerprint, u32 entry_count,
    per entry u16 path length + UTF-8 path + 4096 little-endian f32 values."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", index.fingerprint))
        fh.write(struct.pack("<I", len(index.entries)))
        for entry in index.entries:
            raw = entry.path.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.ascontiguousarray(entry.descriptor.values, dtype="<f4").tobytes())


def load_index(path) -> DescriptorIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise IndexFormatError(f"truncated index file while reading {what}")
        out = data[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != _MAGIC:
        raise IndexFormatError("bad magic (not a VPIX index)")
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != _VERSION:
        raise IndexFormatError(f"unsupported index version {version}")
    fingerprint = struct.unpack("<Q", take(8, "fingerprint"))[0]
    count = struct.unpack("<I", take(4, "entry count"))[0]
    entries = []
    for i in range(count):
        plen = struct.unpack("<H", take(2, f"entry {i} path length"))[0]
        epath = take(plen, f"entry {i} path").decode("utf-8")
        vec = np.frombuffer(take(4 * DESCRIPTOR_SIZE, f"entry {i} descriptor"), dtype="<f4")
        entries.append(IndexEntry(epath, Descriptor(vec.astype(np.float32), fingerprint)))
    if pos != len(data):
        raise IndexFormatError(f"{len(data) - pos} trailing bytes after last entry")
    return DescriptorIndex(tuple(entries), fingerprint)
