"""Command-line pipeline: build-index, recommend, colorize, colorize-stack, render.

All state lives in a single JSON config (print a template with
`chromavol --print-defaults`); subcommands take `--config` plus targeted
overrides.  Slices are processed in lexicographic filename order, so stack
files need zero-padded numerals — volume assembly depends on that order.
Every subcommand is deterministic given (config, seed): reruns produce
byte-identical artifacts.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from . import analogy, featnet, filters, imgcore, retrieval, volren

__all__ = [
    "ConfigError",
    "DEFAULT_CONFIG",
    "load_config",
    "collect_pngs",
    "colorize_pair",
    "cmd_build_index",
    "cmd_recommend",
    "cmd_colorize",
    "cmd_colorize_stack",
    "cmd_render",
    "main",
]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    """Invalid or incomplete pipeline configuration."""


# Filter defaults carry the published comparison parameters; gamma encoding
# defaults to on with the 1/2 / 2 exponent pair.
DEFAULT_CONFIG = {
    "seed": 0,
    "weights": "weights.vgwc",
    "reference_dir": "references",
    "target_dir": "targets",
    "output_dir": "out",
    "index_path": None,
    "fixed_reference": None,
    "retrieval": {"k": 3},
    "filter": {
        "kind": "fgs",
        "fgs": {"lam": 32.0, "sigma_r": 200.0, "iterations": 3},
        "wls": {"lam": 0.2, "alpha": 1.8, "epsilon": 1e-4},
        "gf": {"radius": 16, "epsilon": 2.0},
        "dt": {"sigma_s": 8.0, "sigma_r": 200.0, "iterations": 3},
    },
    "gamma": True,
    "analogy": {
        "levels": list(analogy.DEFAULT_LEVELS),
        "patch_radii": list(analogy.DEFAULT_PATCH_RADII),
        "iterations": 5,
    },
    "render": {
        "spacing": [1.0, 1.0, 1.0],
        "step": 0.5,
        "opacity_scale": 1.0,
        "background": [0.0, 0.0, 0.0],
        "early_termination_threshold": 0.99,
        "opacity_correction": True,
        "alpha_source": "colorized",
        "cameras": [
            {
                "eye": [32.0, -160.0, 16.0],
                "look_at": [32.0, 32.0, 16.0],
                "up": [0.0, 0.0, 1.0],
                "projection": "orthographic",
                "width": 96.0,
                "image_width": 256,
                "image_height": 256,
            }
        ],
        "sections": {"transverse": [], "coronal": [], "sagittal": []},
    },
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path) -> dict:
    """Read a JSON config, fill defaults, and check basic shape."""
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(user) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "seed" not in user:
        raise ConfigError("config must set 'seed' (mandatory for reproducibility)")
    cfg = _merge(DEFAULT_CONFIG, user)
    if cfg["filter"]["kind"] not in ("fgs", "wls", "gf", "dt"):
        raise ConfigError(f"filter.kind must be fgs|wls|gf|dt, got {cfg['filter']['kind']!r}")
    if cfg["render"]["alpha_source"] not in ("colorized", "gray"):
        raise ConfigError("render.alpha_source must be 'colorized' or 'gray'")
    return cfg


def _filter_choice(cfg) -> filters.FilterChoice:
    kind = cfg["filter"]["kind"]
    p = cfg["filter"][kind]
    if kind == "fgs":
        params = filters.FgsParams(p["lam"], p["sigma_r"], int(p["iterations"]))
    elif kind == "wls":
        params = filters.WlsParams(p["lam"], p["alpha"], p["epsilon"])
    elif kind == "gf":
        params = filters.GuidedParams(int(p["radius"]), p["epsilon"])
    else:
        params = filters.DtParams(p["sigma_s"], p["sigma_r"], int(p["iterations"]))
    return filters.FilterChoice(kind, params)


def _analogy_params(cfg) -> analogy.AnalogyParams:
    a = cfg["analogy"]
    return analogy.AnalogyParams(
        levels=tuple(a["levels"]),
        patch_radii=tuple(int(r) for r in a["patch_radii"]),
        iterations=int(a["iterations"]),
        seed=int(cfg["seed"]),
    )


def _index_path(cfg) -> str:
    return cfg["index_path"] or os.path.join(cfg["output_dir"], "reference.vpix")


def _require_file(path, what):
    if not path or not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")


def _require_dir(path, what):
    if not path or not os.path.isdir(path):
        raise ConfigError(f"{what} not found: {path}")


def collect_pngs(directory):
    """PNG paths in lexicographic filename order (stack order contract)."""
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".png"))
    return [os.path.join(directory, n) for n in names]


def _progress(msg):
    print(msg, file=sys.stderr, flush=True)


def _write_report(report, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_build_index(cfg) -> str:
    """Embed the reference corpus and write the descriptor index."""
    _require_file(cfg["weights"], "weight container")
    _require_dir(cfg["reference_dir"], "reference corpus directory")
    container = featnet.load_weights(cfg["weights"])
    paths = collect_pngs(cfg["reference_dir"])
    if not paths:
        raise ValueError(f"no PNG references in {cfg['reference_dir']}")
    entries = []
    failures = []
    for i, path in enumerate(paths):
        _progress(f"[build-index] {i + 1}/{len(paths)} {path}")
        try:
            img = retrieval._to_luminance(imgcore.load_image(path))
            entries.append(
                retrieval.IndexEntry(path, featnet.extract_descriptor(img, container))
            )
        except Exception as exc:
            failures.append((path, exc))
    if failures:
        raise retrieval.IndexBuildError(failures)
    index = retrieval.DescriptorIndex(tuple(entries), container.fingerprint)
    out = _index_path(cfg)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    retrieval.save_index(index, out)
    _progress(f"[build-index] wrote {len(entries)} entries to {out}")
    return out


def cmd_recommend(cfg, target_path, k=None, report_path=None) -> dict:
    """Rank references for one target; prints scores and writes a JSON report."""
    _require_file(cfg["weights"], "weight container")
    _require_file(target_path, "target image")
    index_path = _index_path(cfg)
    _require_file(index_path, "descriptor index (run build-index first)")
    k = int(k if k is not None else cfg["retrieval"]["k"])
    container = featnet.load_weights(cfg["weights"])
    index = retrieval.load_index(index_path)
    target = retrieval._to_luminance(imgcore.load_image(target_path))
    descriptor = featnet.extract_descriptor(target, container)
    ranked = retrieval.query(index, descriptor, k)
    for rank, (path, score) in enumerate(ranked, start=1):
        print(f"{rank}. {path}  score={score:.6f}")
    report = {
        "target": str(target_path),
        "k": k,
        "results": [{"path": p, "score": s} for p, s in ranked],
    }
    if report_path is None:
        stem = os.path.splitext(os.path.basename(target_path))[0]
        report_path = os.path.join(cfg["output_dir"], f"recommend_{stem}.json")
    _write_report(report, report_path)
    return report


def _load_target_gray(path) -> imgcore.GrayImage:
    img = imgcore.load_image(path)
    if isinstance(img, imgcore.RgbImage):
        return imgcore.luminance(imgcore.srgb_to_lab(img))
    return img


def _load_reference_lab(path) -> imgcore.LabImage:
    img = imgcore.load_image(path)
    if isinstance(img, imgcore.GrayImage):
        return imgcore.gray_to_lab(img)
    return imgcore.srgb_to_lab(img)


def colorize_pair(container, target: imgcore.GrayImage, reference_lab: imgcore.LabImage,
                  params: analogy.AnalogyParams, choice: filters.FilterChoice, gamma: bool):
    """Single-image pipeline: features, bidirectional match, warp, colorize.

    Returns (colorized LabImage, warped-reference LabImage).
    """
    ref_lum = imgcore.luminance(reference_lab)
    padded_t, orig_t = imgcore.pad_replicate(target, 16)
    padded_r, orig_r = imgcore.pad_replicate(ref_lum, 16)
    pyr_t = featnet.extract_pyramid(padded_t, container, original_size=orig_t)
    pyr_r = featnet.extract_pyramid(padded_r, container, original_size=orig_r)
    _, phi_r_to_t = analogy.match_bidirectional(pyr_t, pyr_r, params)
    warped = analogy.reconstruct(reference_lab, phi_r_to_t, params.patch_radii[-1])
    target_lab = imgcore.gray_to_lab(target)
    if gamma:
        result = filters.colorize_with_gamma(target_lab, warped, choice)
    else:
        result = filters.colorize(target_lab, warped, choice)
    return result, warped


def cmd_colorize(cfg, target_path, reference_path, out_path=None, dump_intermediate=False) -> str:
    """Colorize one target against one reference and save the PNG."""
    _require_file(cfg["weights"], "weight container")
    _require_file(target_path, "target image")
    _require_file(reference_path, "reference image")

    def stage(name, fn):
        try:
            return fn()
        except (ConfigError, KeyboardInterrupt):
            raise
        except Exception as exc:
            exc.args = (f"[{name}] {exc}",)
            raise

    container = stage("load-weights", lambda: featnet.load_weights(cfg["weights"]))
    target = stage("load-target", lambda: _load_target_gray(target_path))
    reference = stage("load-reference", lambda: _load_reference_lab(reference_path))
    result, warped = stage(
        "colorize",
        lambda: colorize_pair(
            container, target, reference, _analogy_params(cfg), _filter_choice(cfg), cfg["gamma"]
        ),
    )
    if out_path is None:
        stem = os.path.splitext(os.path.basename(target_path))[0]
        out_path = os.path.join(cfg["output_dir"], f"{stem}_colorized.png")
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    stage("save", lambda: imgcore.save_image(result, out_path))
    if dump_intermediate:
        warped_path = os.path.splitext(out_path)[0] + "_warped.png"
        stage("save", lambda: imgcore.save_image(warped, warped_path))
    return out_path


def cmd_colorize_stack(cfg) -> dict:
    """Colorize every slice in the target stack, choosing references by
    retrieval (or the fixed override); partial failures keep finished slices."""
    _require_file(cfg["weights"], "weight container")
    _require_dir(cfg["target_dir"], "target stack directory")
    container = featnet.load_weights(cfg["weights"])
    targets = collect_pngs(cfg["target_dir"])
    if not targets:
        raise ValueError(f"no PNG targets in {cfg['target_dir']}")

    fixed_reference = cfg["fixed_reference"]
    index = None
    if fixed_reference:
        _require_file(fixed_reference, "fixed reference image")
    else:
        index_path = _index_path(cfg)
        _require_file(index_path, "descriptor index (run build-index first)")
        index = retrieval.load_index(index_path)

    out_dir = os.path.join(cfg["output_dir"], "colorized")
    os.makedirs(out_dir, exist_ok=True)
    params = _analogy_params(cfg)
    choice = _filter_choice(cfg)
    slices = []
    failures = []
    for i, target_path in enumerate(targets):
        name = os.path.basename(target_path)
        _progress(f"[colorize-stack] {i + 1}/{len(targets)} {name}")
        try:
            target = _load_target_gray(target_path)
            if fixed_reference:
                ref_path, score = fixed_reference, None
            else:
                descriptor = featnet.extract_descriptor(target, container)
                ref_path, score = retrieval.query(index, descriptor, 1)[0]
            reference = _load_reference_lab(ref_path)
            result, _ = colorize_pair(container, target, reference, params, choice, cfg["gamma"])
            out_path = os.path.join(out_dir, name)
            imgcore.save_image(result, out_path)
            slices.append(
                {"slice": name, "reference": ref_path, "score": score, "output": out_path}
            )
        except Exception as exc:
            failures.append({"slice": name, "error": f"{type(exc).__name__}: {exc}"})
    report = {"slices": slices, "failures": failures}
    _write_report(report, os.path.join(cfg["output_dir"], "colorize_stack_report.json"))
    if failures:
        raise RuntimeError(
            f"{len(failures)} slice(s) failed; partial outputs kept in {out_dir}"
        )
    return report


def _camera_from_json(spec) -> volren.Camera:
    return volren.Camera(
        eye=tuple(spec["eye"]),
        look_at=tuple(spec["look_at"]),
        up=tuple(spec.get("up", (0.0, 0.0, 1.0))),
        projection=spec.get("projection", "orthographic"),
        width=float(spec.get("width", 1.0)),
        vfov_degrees=float(spec.get("vfov_degrees", 45.0)),
        image_width=int(spec.get("image_width", 256)),
        image_height=int(spec.get("image_height", 256)),
    )


def _load_stack_slices(stack_dir):
    paths = collect_pngs(stack_dir)
    if not paths:
        raise ValueError(f"no PNG slices in {stack_dir}")
    return paths, [imgcore.load_image(p) for p in paths]


def cmd_render(cfg, stack_dir=None) -> list:
    """Assemble the colorized (or raw gray) stack and render views + sections."""
    rcfg = cfg["render"]
    stack_dir = stack_dir or os.path.join(cfg["output_dir"], "colorized")
    _require_dir(stack_dir, "slice stack directory")
    _, slices = _load_stack_slices(stack_dir)
    volume = volren.assemble_volume(slices, tuple(rcfg["spacing"]))
    if rcfg["alpha_source"] == "gray":
        # opacity from the original monochromatic stack instead of colorized L
        _require_dir(cfg["target_dir"], "target stack directory (alpha_source=gray)")
        _, gray_slices = _load_stack_slices(cfg["target_dir"])
        if len(gray_slices) != volume.nz:
            raise ValueError("gray stack depth differs from rendered stack")
        vox = volume.voxels.copy()
        for k, sl in enumerate(gray_slices):
            if not isinstance(sl, imgcore.GrayImage):
                sl = imgcore.luminance(imgcore.srgb_to_lab(sl))
            if sl.data.shape != vox.shape[1:3]:
                raise ValueError(f"gray slice {k} dims differ from volume")
            vox[k, :, :, 3] = sl.data
        volume = volren.Volume(vox, volume.spacing)
    params = volren.RenderParams(
        step=rcfg["step"],
        opacity_scale=rcfg["opacity_scale"],
        background=tuple(rcfg["background"]),
        early_termination_threshold=rcfg["early_termination_threshold"],
        opacity_correction=rcfg["opacity_correction"],
    )
    out_dir = os.path.join(cfg["output_dir"], "render")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for i, cam_spec in enumerate(rcfg["cameras"]):
        cam = _camera_from_json(cam_spec)
        image = volren.raycast(volume, cam, params)
        path = os.path.join(out_dir, f"view_{i:02d}.png")
        imgcore.save_image(image, path)
        written.append(path)
        _progress(f"[render] wrote {path}")
    for axis in volren.AXES:
        for k in rcfg["sections"].get(axis, []):
            section = volren.extract_section(volume, axis, int(k))
            path = os.path.join(out_dir, f"section_{axis}_{int(k):04d}.png")
            imgcore.save_image(section, path)
            written.append(path)
            _progress(f"[render] wrote {path}")
    return written


def _apply_overrides(cfg, args):
    if getattr(args, "weights", None):
        cfg["weights"] = args.weights
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "filter", None):
        cfg["filter"]["kind"] = args.filter
    if getattr(args, "no_gamma", False):
        cfg["gamma"] = False
    if getattr(args, "reference", None):
        cfg["fixed_reference"] = args.reference
    if getattr(args, "out", None):
        cfg["output_dir"] = args.out
    return cfg


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="chromavol",
        description="Colorize monochromatic slice stacks from colored references "
        "and render the result as an RGBA volume.",
    )
    parser.add_argument(
        "--print-defaults", action="store_true", help="print the default config JSON and exit"
    )
    sub = parser.add_subparsers(dest="command")

    def common(p, k_flag=False):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--weights", help="override weight container path")
        p.add_argument("--seed", type=int, help="override seed")
        p.add_argument("--filter", choices=("fgs", "wls", "gf", "dt"), help="override filter kind")
        p.add_argument("--no-gamma", action="store_true", help="disable gamma encoding")
        p.add_argument("--reference", help="fixed reference image (skips retrieval)")
        p.add_argument("--out", help="override output directory")
        if k_flag:
            p.add_argument("--k", type=int, help="override retrieval k")

    common(sub.add_parser("build-index", help="embed the reference corpus"))
    p = sub.add_parser("recommend", help="rank references for a target image")
    common(p, k_flag=True)
    p.add_argument("--target", required=True)
    p = sub.add_parser("colorize", help="colorize one target against one reference")
    common(p)
    p.add_argument("--target", required=True)
    p.add_argument("--output", help="output PNG path")
    p.add_argument("--dump-intermediate", action="store_true", help="also save the warped reference")
    common(sub.add_parser("colorize-stack", help="colorize the whole target stack"))
    p = sub.add_parser("render", help="assemble the stack and render views/sections")
    common(p)
    p.add_argument("--stack", help="slice directory (default: <output_dir>/colorized)")
    return parser


_DATA_ERRORS = (
    FileNotFoundError,
    imgcore.ImageLoadError,
    featnet.WeightFormatError,
    retrieval.IndexFormatError,
    retrieval.FingerprintMismatchError,
    retrieval.IndexBuildError,
    ValueError,
    IndexError,
    KeyError,
    TypeError,
    RuntimeError,
)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.print_defaults:
        print(json.dumps(DEFAULT_CONFIG, indent=2, sort_keys=True))
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "build-index":
            cmd_build_index(cfg)
        elif args.command == "recommend":
            cmd_recommend(cfg, args.target, k=args.k)
        elif args.command == "colorize":
            if not cfg["fixed_reference"]:
                raise ConfigError("colorize needs --reference (or fixed_reference in config)")
            cmd_colorize(
                cfg,
                args.target,
                cfg["fixed_reference"],
                out_path=args.output,
                dump_intermediate=args.dump_intermediate,
            )
        elif args.command == "colorize-stack":
            cmd_colorize_stack(cfg)
        elif args.command == "render":
            cmd_render(cfg, stack_dir=args.stack)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except filters.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything else is an internal failure
        print(f"internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
