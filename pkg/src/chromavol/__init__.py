"""chromavol: reference-based colorization of slice stacks + RGBA volume rendering."""

from . import analogy, cli, featnet, filters, imgcore, retrieval, volren

__version__ = "0.1.0"

__all__ = ["analogy", "cli", "featnet", "filters", "imgcore", "retrieval", "volren", "__version__"]
