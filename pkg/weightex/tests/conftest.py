import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from wx_fixtures import synth_state_dict, write_manifest  # noqa: E402


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "vgg19_tiny.pth"
    torch.save(synth_state_dict(seed=3), path)
    return str(path)


@pytest.fixture(scope="session")
def stats():
    # equal means (gray_adapt requirement), unequal stds (exercises the
    # std-compensated collapse)
    return {"input_mean": [0.45, 0.45, 0.45], "input_std": [0.229, 0.224, 0.225]}


@pytest.fixture
def manifest_file(tmp_path, checkpoint, stats):
    def build(**overrides):
        fields = {
            "source": checkpoint,
            "source_format": "torch_state_dict",
            "output": str(tmp_path / "out.vgwc"),
            **stats,
            **overrides,
        }
        return write_manifest(tmp_path / "manifest.json", **fields)

    return build
