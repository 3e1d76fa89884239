"""Acceptance: exporter round trip against the consuming library.

The exported container must load in the consumer (all 16 conv layers + fc6,
shapes correct), the gray-adapted conv1_1 must match the RGB path on an
achromatic probe within 1e-5, and re-export must be byte-identical.
"""

import numpy as np
import torch

from chromavol.featnet import FeatureMap, conv_forward, load_weights, standardize
from chromavol.imgcore import GrayImage

from weightex import export_weights


def report(text):
    print(f"\nACCEPTANCE 11 PASS: {text}")


def conv1_response(container, gray_plane):
    """conv1_1 output for a [0,1] gray plane via the consumer's own pieces."""
    if container.input_channels == 1:
        block = gray_plane[None]
    else:
        block = np.repeat(gray_plane[None], 3, axis=0)
    x = FeatureMap(standardize(block, container.input_mean, container.input_std))
    w, b = container.params["conv1_1"]
    return conv_forward(x, w, b).data


def test_c11_exporter_round_trip(manifest_file, checkpoint, tmp_path):
    rgb_path = export_weights(manifest_file(), output=str(tmp_path / "rgb.vgwc"))
    gray_path = export_weights(
        manifest_file(gray_adapt=True), output=str(tmp_path / "gray.vgwc")
    )

    # loads in the consuming library with full topology
    rgb = load_weights(rgb_path)
    gray = load_weights(gray_path)
    for cont, channels in ((rgb, 3), (gray, 1)):
        assert sum(1 for l in cont.layers if l.kind == "conv") == 16
        assert cont.has_layer("fc6")
        assert cont.input_channels == channels
    state = torch.load(checkpoint, map_location="cpu", weights_only=True)
    for name, key in (("conv1_1", "features.0"), ("conv5_4", "features.34")):
        w, _ = rgb.params[name]
        assert w.shape == tuple(state[f"{key}.weight"].shape)
    fc6_w, _ = rgb.params["fc6"]
    assert fc6_w.shape == (4096, state["features.34.weight"].shape[0], 7, 7)
    # every f32 bit pattern survives the round trip
    assert np.array_equal(
        rgb.params["conv4_2"][0].view(np.uint32),
        state["features.21.weight"].numpy().view(np.uint32),
    )

    # gray-adapted conv1_1 matches the RGB path on an achromatic probe
    rng = np.random.Generator(np.random.PCG64(11))
    probe = GrayImage(rng.uniform(0, 1, size=(32, 32)))
    rgb_resp = conv1_response(rgb, probe.data)
    gray_resp = conv1_response(gray, probe.data)
    err = np.abs(rgb_resp - gray_resp).max()
    assert err <= 1e-5, f"gray-adapted conv1_1 deviates by {err:.2e} > 1e-5"

    # re-export is byte-identical
    again = export_weights(manifest_file(), output=str(tmp_path / "rgb2.vgwc"))
    assert open(rgb_path, "rb").read() == open(again, "rb").read()
    gray_again = export_weights(
        manifest_file(gray_adapt=True), output=str(tmp_path / "gray2.vgwc")
    )
    assert open(gray_path, "rb").read() == open(gray_again, "rb").read()
    report(
        f"featnet loads 16 convs + fc6 (RGB and gray); achromatic conv1_1 match {err:.1e} "
        f"(<=1e-5); re-export byte-identical"
    )
