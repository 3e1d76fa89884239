"""Checkpoint loading, gray-input adaptation, and VGWC export."""

from __future__ import annotations

import os

import numpy as np

from .manifest import ExportManifest, ManifestError, load_manifest
from .vgwc import CONV_NAMES, serialize

# Rec. 601 luminance weights: the standard gray conversion applied when
# feeding gray images through RGB-trained networks.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ExportError(Exception):
    """Source checkpoint missing layers or carrying wrong shapes."""


def _load_torch_state_dict(path):
    import torch

    state = torch.load(path, map_location="cpu", weights_only=True)
    if hasattr(state, "state_dict"):
        state = state.state_dict()
    return {k: v.detach().cpu().numpy() for k, v in state.items()}


def _load_npz(path):
    with np.load(path) as archive:
        return {k: archive[k] for k in archive.files}


def load_source(manifest: ExportManifest) -> dict:
    if not os.path.isfile(manifest.source):
        raise ExportError(f"source checkpoint not found: {manifest.source}")
    if manifest.source_format == "torch_state_dict":
        return _load_torch_state_dict(manifest.source)
    return _load_npz(manifest.source)


def _fetch(state, prefix, suffix):
    key = f"{prefix}.{suffix}"
    if key not in state:
        raise ExportError(f"missing layer parameter '{key}' in source checkpoint")
    return np.asarray(state[key], dtype=np.float64)


def collect_params(manifest: ExportManifest, state: dict) -> dict:
    """vgwc name -> (weight (out,in,kh,kw) float32, bias float32), validated."""
    source_for = manifest.source_for
    params = {}
    prev_out = 3
    for name in CONV_NAMES:
        w = _fetch(state, source_for[name], "weight")
        b = _fetch(state, source_for[name], "bias")
        if w.ndim != 4 or w.shape[2:] != (3, 3):
            raise ExportError(f"{name}: expected (out, in, 3, 3) conv weights, got {w.shape}")
        if w.shape[1] != prev_out:
            raise ExportError(f"{name}: in_channels {w.shape[1]} != {prev_out}")
        if b.shape != (w.shape[0],):
            raise ExportError(f"{name}: bias shape {b.shape} mismatches {w.shape[0]} filters")
        params[name] = (w.astype(np.float32), b.astype(np.float32))
        prev_out = w.shape[0]
    w = _fetch(state, source_for["fc6"], "weight")
    b = _fetch(state, source_for["fc6"], "bias")
    if w.ndim == 2:
        if w.shape[1] != prev_out * 49:
            raise ExportError(
                f"fc6: flat weights {w.shape} do not match {prev_out} channels x 7x7"
            )
        w = w.reshape(w.shape[0], prev_out, 7, 7)
    if w.shape[1:] != (prev_out, 7, 7):
        raise ExportError(f"fc6: expected (out, {prev_out}, 7, 7), got {w.shape}")
    if w.shape[0] != 4096:
        raise ExportError(f"fc6: expected 4096 outputs, got {w.shape[0]}")
    if b.shape != (4096,):
        raise ExportError(f"fc6: bias shape {b.shape} != (4096,)")
    params["fc6"] = (w.astype(np.float32), b.astype(np.float32))
    return params


def gray_adapt_conv1(weight: np.ndarray, mean, std):
    """Collapse conv1_1 RGB slices into one gray input channel.

    The gray network must reproduce the RGB network's response when the RGB
    network sees the gray plane replicated across its three inputs.  With
    per-channel standardization (v - m_c) / s_c, that response is
    sum_c W_c / s_c applied to (v - m); a plain luminance-weighted slice sum
    only matches it when the channel stds are inversely proportional to the
    luminance weights, so the collapse compensates by std explicitly.  The
    embedded gray statistics are the luminance-weighted combinations of the
    source statistics; with equal channel stds the kernel reduces to the
    plain slice sum.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if not np.allclose(mean, mean[0], atol=1e-9):
        raise ExportError(
            "gray_adapt requires equal per-channel input means (use scalar luminance "
            "statistics, e.g. mean [m, m, m]): unequal means cannot be folded into the "
            "collapsed kernel exactly at image borders"
        )
    lam = np.asarray(LUMA_WEIGHTS)
    gray_mean = float(lam @ mean)
    gray_std = float(lam @ std)
    w64 = weight.astype(np.float64)
    collapsed = gray_std * np.tensordot(1.0 / std, w64, axes=([0], [1]))[:, None, :, :]
    return collapsed.astype(np.float32), gray_mean, gray_std


def export_weights(manifest, output=None) -> str:
    """Convert the manifest's source checkpoint into a VGWC file."""
    if not isinstance(manifest, ExportManifest):
        manifest = load_manifest(manifest)
    out_path = output or manifest.output
    if not out_path:
        raise ManifestError("no output path (set manifest 'output' or pass one)")
    state = load_source(manifest)
    params = collect_params(manifest, state)
    if manifest.gray_adapt:
        w1, b1 = params["conv1_1"]
        collapsed, gray_mean, gray_std = gray_adapt_conv1(
            w1, manifest.input_mean, manifest.input_std
        )
        params["conv1_1"] = (collapsed, b1)
        data = serialize(1, [gray_mean], [gray_std], params)
    else:
        data = serialize(3, manifest.input_mean, manifest.input_std, params)
    tmp = f"{out_path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, out_path)
    except OSError as exc:
        raise ExportError(f"cannot write container to {out_path}: {exc}") from exc
    return str(out_path)
