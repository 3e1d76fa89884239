"""Image containers, CIE Lab conversion, gamma mapping, resampling and PNG I/O.

All pixel arithmetic is double precision; 8-bit quantization happens only at
the file boundary.  Lab conversions use the D65 white point (2 degree
observer) and the IEC 61966-2-1 piecewise sRGB transfer function.  Gray
planes are normalized luminance: a GrayImage value v corresponds to Lab
lightness L = 100*v.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

__all__ = [
    "RgbImage",
    "GrayImage",
    "LabImage",
    "GammaParams",
    "ImageLoadError",
    "UnsupportedDepthError",
    "CorruptImageError",
    "srgb_to_lab",
    "lab_to_srgb",
    "luminance",
    "gray_to_lab",
    "gamma_map",
    "gamma_map_plane",
    "resize_bilinear",
    "pad_replicate",
    "load_image",
    "save_image",
]


class ImageLoadError(Exception):
    """Base class for image file errors; carries the offending path."""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{message}: {self.path}")


class UnsupportedDepthError(ImageLoadError):
    """PNG has a bit depth or pixel mode outside 8-bit gray/truecolor."""


class CorruptImageError(ImageLoadError):
    """File exists but is not a decodable PNG stream."""


def _frozen(arr, dtype):
    out = np.ascontiguousarray(arr, dtype=dtype)
    if out is arr:
        out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class RgbImage:
    """8-bit sRGB image, interleaved (height, width, 3) uint8."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _frozen(self.data, np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"RgbImage needs (h, w, 3) uint8 data, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class GrayImage:
    """Scalar plane (height, width) float64, nominal range [0, 1]."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _frozen(self.data, np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"GrayImage needs (h, w) data, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("GrayImage values must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class LabImage:
    """CIE Lab image as three (height, width) float64 planes."""

    L: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)

    def __post_init__(self):
        L = _frozen(self.L, np.float64)
        a = _frozen(self.a, np.float64)
        b = _frozen(self.b, np.float64)
        if L.ndim != 2 or L.shape[0] < 1 or L.shape[1] < 1:
            raise ValueError(f"LabImage needs (h, w) planes, got shape {L.shape}")
        if a.shape != L.shape or b.shape != L.shape:
            raise ValueError("LabImage planes must share dimensions")
        for plane, name in ((L, "L"), (a, "a"), (b, "b")):
            if not np.isfinite(plane).all():
                raise ValueError(f"LabImage {name} plane must be finite")
        if L.min() < -1e-9 or L.max() > 100 + 1e-9:
            raise ValueError("LabImage L plane must lie in [0, 100]")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def width(self):
        return self.L.shape[1]

    @property
    def height(self):
        return self.L.shape[0]


@dataclass(frozen=True)
class GammaParams:
    """Power-law parameters: v -> alpha * v**gamma on the [0, 1] scale."""

    gamma: float
    alpha: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


# sRGB <-> XYZ (D65, 2 degree observer), IEC 61966-2-1 primaries.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_LAB_DELTA = 6.0 / 29.0


def _srgb_decode(c):
    """Piecewise sRGB transfer: encoded [0,1] -> linear [0,1]."""
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _srgb_encode(c):
    c = np.maximum(c, 0.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _lab_f(t):
    d3 = _LAB_DELTA**3
    return np.where(t > d3, np.cbrt(t), t / (3 * _LAB_DELTA**2) + 4.0 / 29.0)


def _lab_f_inv(ft):
    return np.where(ft > _LAB_DELTA, ft**3, 3 * _LAB_DELTA**2 * (ft - 4.0 / 29.0))


def srgb_to_lab(img: RgbImage) -> LabImage:
    """Convert 8-bit sRGB to CIE Lab (D65)."""
    rgb = img.data.astype(np.float64) / 255.0
    lin = _srgb_decode(rgb)
    xyz = lin @ _RGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE_D65)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    # Quantized sRGB white lands a hair above 100; the type owns [0, 100].
    return LabImage(np.clip(L, 0.0, 100.0), a, b)


def lab_to_srgb(img: LabImage) -> RgbImage:
    """Convert Lab back to 8-bit sRGB; out-of-gamut values clamp per channel."""
    fy = (img.L + 16.0) / 116.0
    fx = fy + img.a / 500.0
    fz = fy - img.b / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1) * _WHITE_D65
    lin = xyz @ _XYZ_TO_RGB.T
    enc = _srgb_encode(np.clip(lin, 0.0, None))
    out = np.clip(np.rint(enc * 255.0), 0, 255).astype(np.uint8)
    return RgbImage(out)


def luminance(img: LabImage) -> GrayImage:
    """L plane rescaled to [0, 1]."""
    return GrayImage(img.L / 100.0)


def gray_to_lab(img: GrayImage) -> LabImage:
    """Embed a normalized-luminance plane as Lab with zero chroma (L = 100*v)."""
    L = np.clip(img.data, 0.0, 1.0) * 100.0
    zero = np.zeros_like(L)
    return LabImage(L, zero, zero)


def gamma_map_plane(plane: np.ndarray, params: GammaParams) -> np.ndarray:
    """Elementwise alpha * v**gamma on a [0, 1] plane, clamped back to [0, 1].

    Negative inputs are rejected: the power law is undefined there, and a
    negative value signals the caller passed a signed chroma plane.
    """
    arr = np.asarray(plane, dtype=np.float64)
    if arr.size and arr.min() < 0:
        raise ValueError("gamma_map input contains negative values (signed chroma plane?)")
    if arr.size and arr.max() > 1.0 + 1e-9:
        raise ValueError("gamma_map input exceeds 1.0; rescale to [0, 1] first")
    return np.clip(params.alpha * np.power(arr, params.gamma), 0.0, 1.0)


def gamma_map(plane, params: GammaParams):
    """gamma_map_plane lifted to GrayImage; plain arrays pass through."""
    if isinstance(plane, GrayImage):
        return GrayImage(gamma_map_plane(plane.data, params))
    return gamma_map_plane(plane, params)


def _resample_axis_coords(src_n, dst_n):
    """Edge-aligned source coordinates for each destination index."""
    if dst_n == 1:
        return np.array([(src_n - 1) / 2.0])
    return np.arange(dst_n) * (src_n - 1) / (dst_n - 1)


def _resize_plane(plane, w, h):
    sh, sw = plane.shape
    xs = _resample_axis_coords(sw, w)
    ys = _resample_axis_coords(sh, h)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, sw - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    fx = xs - x0
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, sh - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fy = ys - y0
    rows = plane[:, x0] * (1 - fx) + plane[:, x1] * fx
    out = rows[y0, :] * (1 - fy)[:, None] + rows[y1, :] * fy[:, None]
    return out


def resize_bilinear(img, w: int, h: int):
    """Separable bilinear resampling with edge-aligned corners."""
    if w < 1 or h < 1:
        raise ValueError(f"target dimensions must be >= 1, got {w}x{h}")
    if isinstance(img, GrayImage):
        return GrayImage(_resize_plane(img.data, w, h))
    if isinstance(img, LabImage):
        return LabImage(
            _resize_plane(img.L, w, h),
            _resize_plane(img.a, w, h),
            _resize_plane(img.b, w, h),
        )
    if isinstance(img, RgbImage):
        planes = [_resize_plane(img.data[..., c].astype(np.float64), w, h) for c in range(3)]
        out = np.clip(np.rint(np.stack(planes, axis=-1)), 0, 255).astype(np.uint8)
        return RgbImage(out)
    raise TypeError(f"cannot resize {type(img).__name__}")


def _pad_plane(plane, ph, pw):
    return np.pad(plane, ((0, ph), (0, pw)), mode="edge")


def pad_replicate(img, multiple: int):
    """Pad right/bottom by edge replication to the next multiple.

    Returns (padded image, (orig_width, orig_height)) so features computed on
    the padded grid can be cropped back.
    """
    if multiple < 1:
        raise ValueError(f"multiple must be >= 1, got {multiple}")
    if isinstance(img, GrayImage):
        h, w = img.data.shape
    elif isinstance(img, LabImage):
        h, w = img.L.shape
    elif isinstance(img, RgbImage):
        h, w = img.data.shape[:2]
    else:
        raise TypeError(f"cannot pad {type(img).__name__}")
    pw = (-w) % multiple
    ph = (-h) % multiple
    if pw == 0 and ph == 0:
        return img, (w, h)
    if isinstance(img, GrayImage):
        padded = GrayImage(_pad_plane(img.data, ph, pw))
    elif isinstance(img, LabImage):
        padded = LabImage(
            _pad_plane(img.L, ph, pw), _pad_plane(img.a, ph, pw), _pad_plane(img.b, ph, pw)
        )
    else:
        padded = RgbImage(np.pad(img.data, ((0, ph), (0, pw), (0, 0)), mode="edge"))
    return padded, (w, h)


def load_image(path):
    """Read an 8-bit PNG: grayscale -> GrayImage, truecolor -> RgbImage."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"missing image file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
                return GrayImage(arr.astype(np.float64) / 255.0)
            if mode == "RGB":
                return RgbImage(np.asarray(im, dtype=np.uint8))
            raise UnsupportedDepthError(
                path, f"unsupported bit depth or pixel mode '{mode}' (need 8-bit L or RGB)"
            )
    except UnidentifiedImageError as exc:
        raise CorruptImageError(path, "corrupt or non-PNG image stream") from exc
    except OSError as exc:
        raise CorruptImageError(path, f"corrupt image stream ({exc})") from exc


def save_image(img, path):
    """Write a lossless 8-bit PNG."""
    if isinstance(img, GrayImage):
        arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
        pil = Image.fromarray(arr, mode="L")
    elif isinstance(img, RgbImage):
        pil = Image.fromarray(img.data, mode="RGB")
    elif isinstance(img, LabImage):
        pil = Image.fromarray(lab_to_srgb(img).data, mode="RGB")
    else:
        raise TypeError(f"cannot save {type(img).__name__}")
    pil.save(path, format="PNG")
