"""Post-export verification with an independent reader and forward pass.

Everything here re-derives results from the container bytes alone: parsing,
topology checks, and a from-scratch numpy forward pass that turns a probe
image into an FC6 descriptor.  The report records content checksums so CI
can detect any drift between exports.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .vgwc import VgwcFormatError, check_topology, checksum, parse


def _load_probe_gray(path) -> np.ndarray:
    """Probe PNG as a [0, 1] gray plane (RGB probes use Rec. 601 luma)."""
    with Image.open(path) as im:
        im.load()
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        if im.mode == "RGB":
            rgb = np.asarray(im, dtype=np.float64) / 255.0
            return rgb @ np.array([0.299, 0.587, 0.114])
        raise VgwcFormatError(f"probe must be an 8-bit L or RGB PNG, got mode {im.mode}")


def _resize_bilinear(plane: np.ndarray, size: int) -> np.ndarray:
    h, w = plane.shape

    def coords(n):
        if size == 1:
            return np.array([(n - 1) / 2.0])
        return np.arange(size) * (n - 1) / (size - 1)

    xs, ys = coords(w), coords(h)
    x0 = np.floor(xs).astype(int).clip(0, w - 1)
    y0 = np.floor(ys).astype(int).clip(0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = xs - x0, ys - y0
    rows = plane[:, x0] * (1 - fx) + plane[:, x1] * fx
    return rows[y0, :] * (1 - fy)[:, None] + rows[y1, :] * fy[:, None]


def _conv3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    c_in, h, wd = x.shape
    pad = np.zeros((c_in, h + 2, wd + 2))
    pad[:, 1:-1, 1:-1] = x
    out = np.broadcast_to(b[:, None].astype(np.float64), (w.shape[0], h * wd)).copy()
    w64 = w.astype(np.float64)
    for ky in range(3):
        for kx in range(3):
            out += w64[:, :, ky, kx] @ pad[:, ky : ky + h, kx : kx + wd].reshape(c_in, -1)
    return out.reshape(w.shape[0], h, wd)


def compute_descriptor(input_channels, mean, std, layers, probe: np.ndarray) -> np.ndarray:
    """224x224 forward pass through the parsed container; unit-norm output."""
    plane = _resize_bilinear(probe, 224)
    if input_channels == 1:
        x = plane[None]
    else:
        x = np.repeat(plane[None], 3, axis=0)
    x = (x - np.asarray(mean, dtype=np.float64)[:, None, None]) / np.asarray(
        std, dtype=np.float64
    )[:, None, None]
    for name, kind, w, b in layers:
        if kind == "conv":
            x = _conv3(x, w, b)
        elif kind == "relu":
            x = np.maximum(x, 0.0)
        elif kind == "maxpool":
            c, h, wd = x.shape
            x = x.reshape(c, h // 2, 2, wd // 2, 2).max(axis=(2, 4))
        else:
            x = w.astype(np.float64).reshape(w.shape[0], -1) @ x.reshape(-1) + b.astype(
                np.float64
            )
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        raise VgwcFormatError("probe descriptor is the zero vector")
    return (x / norm).astype(np.float32)


def verify_export(vgwc_path, probe_path) -> dict:
    """Load with the independent reader, run shape checks, embed the probe.

    Returns a report dict (CI-consumable); report["ok"] is False with the
    failing check recorded instead of raising, so CI can archive failures.
    """
    checks = []

    def check(name, fn):
        try:
            value = fn()
            checks.append({"name": name, "ok": True})
            return value
        except Exception as exc:
            checks.append({"name": name, "ok": False, "error": str(exc)})
            return None

    with open(vgwc_path, "rb") as fh:
        data = fh.read()
    report = {
        "container": str(vgwc_path),
        "probe": str(probe_path),
        "file_sha256": checksum(data),
        "checks": checks,
    }
    parsed = check("parse", lambda: parse(data))
    if parsed is not None:
        input_channels, mean, std, layers = parsed
        check("topology", lambda: check_topology(input_channels, layers))
        report["input_channels"] = input_channels
        report["conv_layers"] = sum(1 for _, kind, _, _ in layers if kind == "conv")
        descriptor = check(
            "probe_descriptor",
            lambda: compute_descriptor(
                input_channels, mean, std, layers, _load_probe_gray(probe_path)
            ),
        )
        if descriptor is not None:
            norm = float(np.linalg.norm(descriptor))
            check("descriptor_finite", lambda: _require(np.isfinite(descriptor).all(),
                                                        "descriptor has non-finite values"))
            check("descriptor_unit_norm", lambda: _require(abs(norm - 1.0) <= 1e-6,
                                                           f"descriptor norm {norm}"))
            report["descriptor_sha256"] = checksum(descriptor.tobytes())
            report["descriptor_norm"] = norm
    report["ok"] = all(c["ok"] for c in checks)
    return report


def _require(cond, message):
    if not cond:
        raise VgwcFormatError(message)
