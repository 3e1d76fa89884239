"""weightex: convert distributed VGG-19 checkpoints to VGWC containers."""

from .exporter import ExportError, export_weights, gray_adapt_conv1, LUMA_WEIGHTS
from .manifest import ExportManifest, ManifestError, TORCHVISION_VGG19_MAP, load_manifest
from .verify import verify_export
from .vgwc import VgwcFormatError

__version__ = "0.1.0"

__all__ = [
    "ExportError",
    "ExportManifest",
    "ManifestError",
    "TORCHVISION_VGG19_MAP",
    "VgwcFormatError",
    "LUMA_WEIGHTS",
    "export_weights",
    "gray_adapt_conv1",
    "load_manifest",
    "verify_export",
    "__version__",
]
