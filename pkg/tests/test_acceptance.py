"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run `pytest tests/test_acceptance.py -v -s` for the per-criterion pass lines.
"""

import json
import os
import time

import numpy as np

from chromavol import imgcore, featnet, analogy, filters, retrieval, volren
from chromavol.cli import cmd_colorize, load_config, main
from chromavol.filters import FilterChoice, FgsParams, GuidedParams, WlsParams, DtParams
from chromavol.volren import Camera, RenderParams, Volume, _render_kernel

from reference_impls import (
    conv3x3_naive,
    exhaustive_nnf,
    fgs_row_dense,
    guided_filter_bruteforce,
    wls_dense,
)
from synthetic import make_checkerboard_pair, pipeline_workspace, write_config, write_tiny_weights
from vgwc_fixture import make_tiny_container


def report(n, text):
    print(f"\nACCEPTANCE {n:02d} PASS: {text}")


def test_c01_color_round_trip():
    start = time.time()
    grid = np.linspace(0, 255, 17).round().astype(np.uint8)
    r, g, b = np.meshgrid(grid, grid, grid, indexing="ij")
    img = imgcore.RgbImage(np.stack([r, g, b], axis=-1).reshape(17, 17 * 17, 3))
    back = imgcore.lab_to_srgb(imgcore.srgb_to_lab(img))
    err = np.abs(back.data.astype(int) - img.data.astype(int)).max()
    elapsed = time.time() - start
    assert err <= 1, f"round-trip error {err} > 1/255"
    assert elapsed < 1.0, f"round trip took {elapsed:.2f}s >= 1s"
    report(1, f"sRGB->Lab->sRGB 17^3 grid max error {err}/255 in {elapsed * 1000:.0f} ms")


def test_c02_convolution_oracle():
    rng = np.random.Generator(np.random.PCG64(2))
    x = rng.normal(size=(3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    got = featnet.conv_forward(featnet.FeatureMap(x), w, b).data
    want = conv3x3_naive(x, w, b)
    rel = (np.abs(got - want) / np.maximum(np.abs(want), 1e-12)).max()
    assert rel <= 1e-5, f"conv relative error {rel:.2e} > 1e-5"

    # full tiny-network pyramid vs an independent naive forward pass
    cont = make_tiny_container(seed=5, base=2, input_channels=1, stop_after="relu5_1")
    img = imgcore.GrayImage(rng.uniform(0, 1, size=(16, 16)))
    pyr = featnet.extract_pyramid(img, cont)
    act = (img.data[None] - float(cont.input_mean[0])) / float(cont.input_std[0])
    captured = {}
    for spec in cont.layers:
        if spec.kind == "conv":
            wgt, bias = cont.params[spec.name]
            act = conv3x3_naive(act, wgt.astype(np.float64), bias.astype(np.float64))
        elif spec.kind == "relu":
            act = np.maximum(act, 0.0)
        elif spec.kind == "maxpool":
            c, h, wd = act.shape
            act = act.reshape(c, h // 2, 2, wd // 2, 2).max(axis=(2, 4))
        if spec.name in featnet.PYRAMID_LAYERS:
            captured[spec.name] = act
        if spec.name == "relu5_1":
            break
    worst = 0.0
    for name, fm in pyr.levels:
        worst = max(worst, np.abs(fm.data - captured[name]).max())
    assert worst <= 1e-5, f"pyramid vs naive oracle error {worst:.2e} > 1e-5"
    report(2, f"conv rel err {rel:.1e}; full tiny pyramid vs naive oracle {worst:.1e}")


def test_c03_patchmatch_optimality_gap():
    start = time.time()
    rng = np.random.Generator(np.random.PCG64(3))
    A = analogy.normalize_features(featnet.FeatureMap(rng.normal(size=(8, 32, 32))))
    B = analogy.normalize_features(featnet.FeatureMap(rng.normal(size=(8, 32, 32))))
    nnf = analogy.nnf_init_random((32, 32), (32, 32), seed=3, patch_radius=1)
    out = analogy.nnf_iterate(nnf, A, B, iterations=5)
    _, _, oracle = exhaustive_nnf(
        np.moveaxis(A.data, 0, -1), np.moveaxis(B.data, 0, -1), 1
    )
    below = int(np.sum(out.distances < oracle - 1e-9))
    ratio = out.distances.mean() / oracle.mean()
    elapsed = time.time() - start
    assert below == 0, f"{below} pixels beat the exhaustive optimum"
    assert ratio <= 1.05, f"mean distance ratio {ratio:.4f} > 1.05"
    assert elapsed < 10.0, f"took {elapsed:.1f}s >= 10s"
    report(3, f"mean ratio {ratio:.4f} <= 1.05, no pixel below optimum, {elapsed:.1f}s")


def test_c04_translation_recovery():
    cont = make_tiny_container(seed=7, base=4, input_channels=1)
    rng = np.random.Generator(np.random.PCG64(31337))
    big = rng.uniform(0, 1, size=(80, 80))
    target = imgcore.GrayImage(big[3:67, 5:69])  # T(x,y) = R(x+5, y+3)
    reference = imgcore.GrayImage(big[0:64, 0:64])
    pt = featnet.extract_pyramid(target, cont)
    pr = featnet.extract_pyramid(reference, cont)
    _, phi = analogy.match_bidirectional(pt, pr, analogy.AnalogyParams(seed=55))
    m = 8
    xs = slice(m, 64 - m - 5)
    ys = slice(m, 64 - m - 3)
    off = phi.offsets[ys, xs]
    frac = np.mean((off[..., 0] == 5) & (off[..., 1] == 3))
    # the exhaustive oracle confirms (5,3) is the unique interior minimizer
    A = np.moveaxis(analogy.normalize_features(pt.level("relu1_1")).data, 0, -1)
    B = np.moveaxis(analogy.normalize_features(pr.level("relu1_1")).data, 0, -1)
    tx, ty, _ = exhaustive_nnf(A, B, 2)
    ux = (tx - np.arange(64)[None, :])[ys, xs]
    uy = (ty - np.arange(64)[:, None])[ys, xs]
    unique = np.mean((ux == 5) & (uy == 3))
    assert unique == 1.0, f"oracle says (5,3) not unique everywhere ({unique:.3f})"
    assert frac >= 0.9, f"only {frac:.3f} of interior offsets recovered (5,3)"
    report(4, f"{frac * 100:.1f}% interior offsets exactly (5,3) (oracle-unique minimizer)")


def test_c05_filter_solver_oracles():
    rng = np.random.Generator(np.random.PCG64(5))
    # FGS horizontal pass vs dense tridiagonal solve, every width <= 64
    from chromavol.filters import _solve_tridiagonal_rows, fgs_pass_weights

    worst_fgs = 0.0
    for width in range(2, 65):
        src = rng.uniform(0, 100, size=(3, width))
        g255 = rng.uniform(0, 255, size=(3, width))
        lam = rng.uniform(0.5, 40.0)
        got = _solve_tridiagonal_rows(src, fgs_pass_weights(g255, 200.0), lam)
        for row in range(3):
            want = fgs_row_dense(src[row], g255[row], lam, 200.0)
            worst_fgs = max(worst_fgs, np.abs(got[row] - want).max())
    assert worst_fgs <= 1e-6, f"FGS pass vs dense solve {worst_fgs:.2e} > 1e-6"

    src = rng.uniform(0, 100, size=(6, 6))
    guide = imgcore.GrayImage(rng.uniform(0, 1, size=(6, 6)))
    assert np.array_equal(filters.fgs(src, guide, FgsParams(lam=0.0)), src), "lam=0 not identity"
    const = np.full((6, 6), 7.0)
    dev = np.abs(filters.fgs(const, guide, FgsParams()) - 7.0).max()
    assert dev <= 1e-6, f"constant invariance {dev:.2e} > 1e-6"

    # WLS full 2D 8x8 vs dense solve
    src = rng.uniform(0, 100, size=(8, 8))
    g01 = rng.uniform(0, 1, size=(8, 8))
    p = WlsParams()
    err_wls = np.abs(
        filters.wls(src, imgcore.GrayImage(g01), p) - wls_dense(src, g01, p.lam, p.alpha, p.epsilon)
    ).max()
    assert err_wls <= 1e-5, f"WLS vs dense solve {err_wls:.2e} > 1e-5"

    # Guided filter vs sliding-window brute force
    src = rng.uniform(0, 100, size=(8, 8))
    g01 = rng.uniform(0, 1, size=(8, 8))
    err_gf = np.abs(
        filters.guided_filter(src, imgcore.GrayImage(g01), GuidedParams(radius=2, epsilon=2.0))
        - guided_filter_bruteforce(src, g01 * 255.0, 2, 2.0)
    ).max()
    assert err_gf <= 1e-8, f"guided filter vs brute force {err_gf:.2e} > 1e-8"
    report(
        5,
        f"FGS pass {worst_fgs:.1e} (<=1e-6), WLS dense {err_wls:.1e} (<=1e-5), "
        f"GF window {err_gf:.1e} (<=1e-8)",
    )


def test_c06_eq1_identity_all_filters():
    rng = np.random.Generator(np.random.PCG64(6))
    choices = [
        FilterChoice("fgs", FgsParams()),
        FilterChoice("wls", WlsParams()),
        FilterChoice("gf", GuidedParams()),
        FilterChoice("dt", DtParams()),
    ]
    worst = 0.0
    for i in range(20):
        L = rng.uniform(0, 100, size=(32, 32))
        t = imgcore.LabImage(L, np.zeros_like(L), np.zeros_like(L))
        for choice in choices:
            out = filters.colorize(t, t, choice)
            worst = max(
                worst,
                np.abs(out.L - t.L).max(),
                np.abs(out.a).max(),
                np.abs(out.b).max(),
            )
    assert worst <= 1e-4, f"colorize(T, T) deviation {worst:.2e} > 1e-4"
    report(6, f"colorize(T,T,f)=T on 20 fixtures x 4 filters, worst {worst:.1e} (<=1e-4)")


def test_c07_gamma_round_trip():
    rng = np.random.Generator(np.random.PCG64(7))
    v = rng.uniform(0, 1, size=(64,))
    enc = imgcore.gamma_map_plane(v, imgcore.GammaParams(0.5))
    dec = imgcore.gamma_map_plane(enc, imgcore.GammaParams(2.0))
    err = np.abs(dec - v).max()
    assert err <= 1e-6, f"gamma encode/decode error {err:.2e} > 1e-6"

    L = rng.uniform(0, 100, size=(24, 24))
    t = imgcore.LabImage(L, np.zeros_like(L), np.zeros_like(L))
    out = filters.colorize_with_gamma(t, t, FilterChoice("fgs", FgsParams()))
    err2 = max(np.abs(out.L - t.L).max(), np.abs(out.a).max(), np.abs(out.b).max())
    assert err2 <= 1e-6, f"colorize_with_gamma identity error {err2:.2e} > 1e-6"
    report(7, f"gamma round trip {err:.1e}, gamma colorize identity {err2:.1e} (<=1e-6)")


def test_c08_retrieval(tmp_path):
    rng = np.random.Generator(np.random.PCG64(8))
    cont = make_tiny_container(seed=7, base=2, input_channels=1)
    paths = []
    for i in range(50):
        img = imgcore.GrayImage(rng.uniform(0, 1, size=(20, 20)))
        path = tmp_path / f"corpus_{i:03d}.png"
        imgcore.save_image(img, path)
        paths.append(str(path))
    index = retrieval.build_index(paths, cont)
    assert len(index) == 50
    probe = featnet.extract_descriptor(imgcore.load_image(paths[17]), cont)
    ranked = retrieval.query(index, probe)  # default k
    assert len(ranked) == retrieval.DEFAULT_TOP_K == 3
    assert ranked[0][0] == paths[17]
    assert abs(ranked[0][1] - 1.0) <= 1e-6

    disk = tmp_path / "corpus.vpix"
    retrieval.save_index(index, disk)
    back = retrieval.load_index(disk)
    assert back.fingerprint == index.fingerprint
    lossless = all(
        a.path == b.path and np.array_equal(a.descriptor.values, b.descriptor.values)
        for a, b in zip(back.entries, index.entries)
    )
    assert lossless, "index round trip not lossless"
    report(8, f"self-query first (score {ranked[0][1]:.8f}), k=3 default, disk round trip lossless")


def test_c09_renderer():
    vox = np.zeros((2, 1, 1, 4))
    vox[0, 0, 0] = [1.0, 0.0, 0.0, 0.5]
    vox[1, 0, 0] = [0.0, 0.0, 1.0, 0.5]
    slab = Volume(vox)
    cam = Camera(
        eye=(0.5, 0.5, -5.0), look_at=(0.5, 0.5, 1.0), up=(0.0, 1.0, 0.0),
        projection="orthographic", width=0.5, image_width=1, image_height=1,
    )

    def float_render(volume, params, background=(0.0, 0.0, 0.0)):
        r, u, f = cam.basis()
        return _render_kernel(
            volume.voxels, 1.0, 1.0, 1.0, np.asarray(cam.eye), r, u, f,
            True, 0.25, 0.25, 1, 1,
            params.step, params.opacity_scale, params.opacity_correction,
            params.early_termination_threshold, np.asarray(background),
        )[0, 0]

    p = RenderParams(step=1.0, opacity_correction=False)
    over_black = float_render(slab, p)
    over_white = float_render(slab, p, background=(1.0, 1.0, 1.0))
    assert np.array_equal(over_black, [0.5, 0.0, 0.25]), f"C = {over_black} != (0.5, 0, 0.25)"
    acc = 1.0 - over_white[1]  # green channel carries only (1-A)*bg
    assert acc == 0.75, f"A = {acc} != 0.75"

    empty = Volume(np.zeros((3, 3, 3, 4)))
    bg = RenderParams(background=(0.2, 0.4, 0.6))
    got = float_render(empty, bg, background=(0.2, 0.4, 0.6))
    assert np.array_equal(got, [0.2, 0.4, 0.6]), "empty volume != background"

    # transverse sections recover assembled slices
    rng = np.random.Generator(np.random.PCG64(9))
    slices = [
        imgcore.RgbImage(rng.integers(0, 256, size=(6, 5, 3)).astype(np.uint8)) for _ in range(4)
    ]
    vol = volren.assemble_volume(slices)
    sect_err = max(
        np.abs(
            volren.extract_section(vol, "transverse", k).data.astype(int)
            - slices[k].data.astype(int)
        ).max()
        for k in range(4)
    )
    assert sect_err <= 1, f"transverse section error {sect_err} > 1/255"

    # step halving on the slab case (thick slabs isolate opacity correction)
    thick = np.zeros((8, 1, 1, 4))
    thick[:4, 0, 0] = [1.0, 0.0, 0.0, 0.25]
    thick[4:, 0, 0] = [0.0, 0.0, 1.0, 0.25]
    tvol = Volume(thick)
    f1 = float_render(tvol, RenderParams(step=1.0, early_termination_threshold=1.0))
    f2 = float_render(tvol, RenderParams(step=0.5, early_termination_threshold=1.0))
    step_dev = np.abs(f1 - f2).max()
    assert step_dev < 0.01, f"step halving changed slab case by {step_dev:.4f} >= 1%"
    report(
        9,
        f"two-slab C=(0.5,0,0.25) A=0.75 exact; empty=background; section err {sect_err}/255; "
        f"step-halving dev {step_dev:.2e} (<1%)",
    )


def test_c10_end_to_end_smoke(tmp_path):
    ws = pipeline_workspace(tmp_path, n_slices=8, n_refs=4, size=64)

    def run_pipeline():
        start = time.time()
        assert main(["build-index", "--config", ws["config"]]) == 0
        assert main(["recommend", "--config", ws["config"], "--target", ws["targets"][0]]) == 0
        assert main(["colorize-stack", "--config", ws["config"]]) == 0
        assert main(["render", "--config", ws["config"]]) == 0
        return time.time() - start

    def snapshot():
        blobs = {}
        for root, _, files in os.walk(ws["out_dir"]):
            for name in files:
                path = os.path.join(root, name)
                with open(path, "rb") as fh:
                    blobs[os.path.relpath(path, ws["out_dir"])] = fh.read()
        return blobs

    t1 = run_pipeline()
    first = snapshot()
    assert t1 < 60.0, f"pipeline took {t1:.1f}s >= 60s"
    t2 = run_pipeline()
    second = snapshot()
    assert t2 < 60.0, f"second run took {t2:.1f}s >= 60s"
    assert set(first) == set(second), "artifact sets differ between runs"
    diff = [name for name in first if first[name] != second[name]]
    assert not diff, f"artifacts not byte-identical across runs: {diff}"
    assert len([n for n in first if n.startswith("colorized" + os.sep)]) == 8
    report_json = json.loads(first["colorize_stack_report.json"].decode())
    assert len(report_json["slices"]) == 8 and not report_json["failures"]

    # checkerboard chroma recovery through the single-image CLI path
    target, ref, (exp_a, exp_b), _ = make_checkerboard_pair()
    t_path = tmp_path / "checker_gray.png"
    r_path = tmp_path / "checker_color.png"
    imgcore.save_image(target, t_path)
    imgcore.save_image(ref, r_path)
    cfg = load_config(ws["config"])
    out = cmd_colorize(cfg, str(t_path), str(r_path),
                       out_path=str(tmp_path / "checker_colorized.png"))
    lab = imgcore.srgb_to_lab(imgcore.load_image(out))
    frac = float((np.hypot(lab.a - exp_a, lab.b - exp_b) < 10.0).mean())
    assert frac > 0.9, f"checkerboard chroma recovery only {frac:.3f}"
    report(
        10,
        f"pipeline x2 ({t1:.1f}s, {t2:.1f}s < 60s), {len(first)} artifacts byte-identical, "
        f"checkerboard recovery {frac * 100:.1f}% (>90%)",
    )
