"""Export manifest: JSON description of one conversion job."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .vgwc import CONV_NAMES

VGWC_PARAM_NAMES = CONV_NAMES + ("fc6",)

# torchvision vgg19 parameter prefixes
TORCHVISION_VGG19_MAP = {
    "features.0": "conv1_1",
    "features.2": "conv1_2",
    "features.5": "conv2_1",
    "features.7": "conv2_2",
    "features.10": "conv3_1",
    "features.12": "conv3_2",
    "features.14": "conv3_3",
    "features.16": "conv3_4",
    "features.19": "conv4_1",
    "features.21": "conv4_2",
    "features.23": "conv4_3",
    "features.25": "conv4_4",
    "features.28": "conv5_1",
    "features.30": "conv5_2",
    "features.32": "conv5_3",
    "features.34": "conv5_4",
    "classifier.0": "fc6",
}

SOURCE_FORMATS = ("torch_state_dict", "npz")


class ManifestError(Exception):
    """Manifest is malformed or incomplete."""


@dataclass(frozen=True)
class ExportManifest:
    source: str
    source_format: str = "torch_state_dict"
    layer_map: dict = field(default_factory=lambda: dict(TORCHVISION_VGG19_MAP))
    input_mean: tuple = (0.485, 0.456, 0.406)
    input_std: tuple = (0.229, 0.224, 0.225)
    gray_adapt: bool = False
    output: str | None = None

    def __post_init__(self):
        if self.source_format not in SOURCE_FORMATS:
            raise ManifestError(
                f"source_format must be one of {SOURCE_FORMATS}, got {self.source_format!r}"
            )
        targets = list(self.layer_map.values())
        missing = set(VGWC_PARAM_NAMES) - set(targets)
        if missing:
            raise ManifestError(f"layer_map leaves layers unmapped: {sorted(missing)}")
        extra = set(targets) - set(VGWC_PARAM_NAMES)
        if extra:
            raise ManifestError(f"layer_map maps unknown layers: {sorted(extra)}")
        if len(targets) != len(set(targets)):
            dupes = sorted({t for t in targets if targets.count(t) > 1})
            raise ManifestError(f"layer_map maps layers more than once: {dupes}")
        mean = tuple(float(v) for v in self.input_mean)
        std = tuple(float(v) for v in self.input_std)
        if len(mean) != 3 or len(std) != 3:
            raise ManifestError("input_mean and input_std must carry three RGB values")
        if any(s <= 0 for s in std):
            raise ManifestError("input_std values must be positive")
        object.__setattr__(self, "input_mean", mean)
        object.__setattr__(self, "input_std", std)
        object.__setattr__(self, "layer_map", dict(self.layer_map))

    @property
    def source_for(self) -> dict:
        """vgwc name -> source prefix (inverse of layer_map)."""
        return {v: k for k, v in self.layer_map.items()}


def load_manifest(path) -> ExportManifest:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ManifestError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError("manifest root must be a JSON object")
    known = {
        "source",
        "source_format",
        "layer_map",
        "input_mean",
        "input_std",
        "gray_adapt",
        "output",
    }
    unknown = set(raw) - known
    if unknown:
        raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
    if "source" not in raw:
        raise ManifestError("manifest must name a source checkpoint")
    kwargs = dict(raw)
    kwargs.setdefault("layer_map", dict(TORCHVISION_VGG19_MAP))
    return ExportManifest(**kwargs)
