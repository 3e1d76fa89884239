"""Synthetic reduced-width VGG-19 checkpoints for exporter tests."""

import json

import numpy as np
import torch


def vgg19_conv_widths(base=4):
    widths = []
    mult = 1
    for n in (2, 2, 4, 4, 4):
        widths.extend([base * mult] * n)
        if mult < 8:
            mult *= 2
    return widths


TORCHVISION_CONV_INDICES = (0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34)


def synth_state_dict(seed=0, base=4):
    """Reduced-width VGG-19 state dict with torchvision parameter names."""
    rng = np.random.Generator(np.random.PCG64(seed))
    state = {}
    prev = 3
    for idx, width in zip(TORCHVISION_CONV_INDICES, vgg19_conv_widths(base)):
        w = rng.normal(0.0, np.sqrt(2.0 / (prev * 9)), size=(width, prev, 3, 3))
        b = rng.normal(0.0, 0.01, size=width)
        state[f"features.{idx}.weight"] = torch.from_numpy(w.astype(np.float32))
        state[f"features.{idx}.bias"] = torch.from_numpy(b.astype(np.float32))
        prev = width
    w = rng.normal(0.0, np.sqrt(2.0 / (prev * 49)), size=(4096, prev * 49))
    b = rng.normal(0.0, 0.01, size=4096)
    state["classifier.0.weight"] = torch.from_numpy(w.astype(np.float32))
    state["classifier.0.bias"] = torch.from_numpy(b.astype(np.float32))
    return state


def write_manifest(path, **fields):
    with open(path, "w") as fh:
        json.dump(fields, fh, indent=2)
    return str(path)
