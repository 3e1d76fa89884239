"""RGBA volume assembly and CPU ray casting.

A volume is built from an ordered slice stack; each voxel's color comes
from the slice's sRGB rendering and its opacity directly from the Lab
lightness (alpha = L/100), so no opacity transfer function is involved.
Rendering is emission-absorption front-to-back compositing with optional
step-size opacity correction, all in double precision on the CPU, which
keeps results deterministic and testable at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .imgcore import GrayImage, LabImage, RgbImage, gray_to_lab, lab_to_srgb, srgb_to_lab

__all__ = [
    "Volume",
    "Camera",
    "RenderParams",
    "AXES",
    "assemble_volume",
    "trilinear_sample",
    "raycast",
    "extract_section",
]

AXES = ("transverse", "coronal", "sagittal")


@dataclass(frozen=True)
class Volume:
    """RGBA voxel grid; voxels indexed (z, y, x, 4), all components in [0, 1]."""

    voxels: np.ndarray = field(repr=False)
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        v = np.ascontiguousarray(self.voxels, dtype=np.float64)
        if v.ndim != 4 or v.shape[3] != 4 or min(v.shape[:3]) < 1:
            raise ValueError(f"Volume needs (nz, ny, nx, 4) voxels, got {v.shape}")
        if not np.isfinite(v).all() or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("voxel components must be finite and in [0, 1]")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three positive reals, got {self.spacing}")
        if v is self.voxels:
            v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "voxels", v)
        object.__setattr__(self, "spacing", spacing)

    @property
    def nx(self):
        return self.voxels.shape[2]

    @property
    def ny(self):
        return self.voxels.shape[1]

    @property
    def nz(self):
        return self.voxels.shape[0]


@dataclass(frozen=True)
class Camera:
    """Pinhole or orthographic camera; `projection` is "orthographic" with
    `width` in world units or "perspective" with `vfov_degrees`."""

    eye: tuple
    look_at: tuple
    up: tuple = (0.0, 0.0, 1.0)
    projection: str = "orthographic"
    width: float = 1.0
    vfov_degrees: float = 45.0
    image_width: int = 256
    image_height: int = 256

    def __post_init__(self):
        eye = tuple(float(v) for v in self.eye)
        look_at = tuple(float(v) for v in self.look_at)
        up = np.asarray(self.up, dtype=np.float64)
        forward = np.asarray(look_at) - np.asarray(eye)
        if np.linalg.norm(forward) == 0.0:
            raise ValueError("camera eye and look_at coincide")
        if np.linalg.norm(up) == 0.0:
            raise ValueError("camera up vector is zero")
        f = forward / np.linalg.norm(forward)
        u = up / np.linalg.norm(up)
        if np.linalg.norm(np.cross(f, u)) < 1e-9:
            raise ValueError("camera up vector is parallel to the view direction")
        if self.projection not in ("orthographic", "perspective"):
            raise ValueError(f"unknown projection '{self.projection}'")
        if self.projection == "orthographic" and self.width <= 0:
            raise ValueError("orthographic width must be positive")
        if self.projection == "perspective" and not 0 < self.vfov_degrees < 180:
            raise ValueError("perspective vfov must be in (0, 180) degrees")
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image dims must be >= 1")
        object.__setattr__(self, "eye", eye)
        object.__setattr__(self, "look_at", look_at)
        object.__setattr__(self, "up", tuple(float(v) for v in (u[0], u[1], u[2])))

    def basis(self):
        """Right-handed view basis (right, up, forward), unit vectors."""
        f = np.asarray(self.look_at) - np.asarray(self.eye)
        f /= np.linalg.norm(f)
        r = np.cross(f, np.asarray(self.up))
        r /= np.linalg.norm(r)
        u = np.cross(r, f)
        return r, u, f


@dataclass(frozen=True)
class RenderParams:
    step: float = 0.5  # sampling distance in voxel units
    opacity_scale: float = 1.0
    background: tuple = (0.0, 0.0, 0.0)
    early_termination_threshold: float = 0.99
    opacity_correction: bool = True

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.opacity_scale < 0:
            raise ValueError("opacity_scale must be >= 0")
        if not 0 < self.early_termination_threshold <= 1:
            raise ValueError("early_termination_threshold must be in (0, 1]")
        bg = tuple(float(c) for c in self.background)
        if len(bg) != 3:
            raise ValueError("background must be an RGB triple")
        object.__setattr__(self, "background", bg)


def assemble_volume(stack, spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Stack slices into an RGBA grid; alpha is the voxel's lightness L/100."""
    slices = list(stack)
    if not slices:
        raise ValueError("slice stack is empty")
    dims = None
    voxels = []
    for i, sl in enumerate(slices):
        if isinstance(sl, GrayImage):
            sl = gray_to_lab(sl)
        if isinstance(sl, LabImage):
            lab = sl
            rgb = lab_to_srgb(lab).data.astype(np.float64) / 255.0
        elif isinstance(sl, RgbImage):
            lab = srgb_to_lab(sl)
            rgb = sl.data.astype(np.float64) / 255.0
        else:
            raise TypeError(f"slice {i}: cannot assemble {type(sl).__name__}")
        if dims is None:
            dims = (lab.width, lab.height)
        elif (lab.width, lab.height) != dims:
            raise ValueError(
                f"slice {i} dims {lab.width}x{lab.height} differ from first slice {dims[0]}x{dims[1]}"
            )
        alpha = lab.L / 100.0
        voxels.append(np.concatenate([rgb, alpha[..., None]], axis=-1))
    return Volume(np.stack(voxels, axis=0), spacing)


@njit(cache=True, inline="always")
def _trilinear(vox, px, py, pz):
    nz, ny, nx = vox.shape[0], vox.shape[1], vox.shape[2]
    if (
        px < -0.5 or px > nx - 0.5
        or py < -0.5 or py > ny - 0.5
        or pz < -0.5 or pz > nz - 0.5
    ):
        return 0.0, 0.0, 0.0, 0.0
    x0 = int(np.floor(px))
    y0 = int(np.floor(py))
    z0 = int(np.floor(pz))
    fx = px - x0
    fy = py - y0
    fz = pz - z0
    x0c = min(max(x0, 0), nx - 1)
    y0c = min(max(y0, 0), ny - 1)
    z0c = min(max(z0, 0), nz - 1)
    x1c = min(x0 + 1, nx - 1)
    y1c = min(y0 + 1, ny - 1)
    z1c = min(z0 + 1, nz - 1)
    r = g = b = a = 0.0
    for c in range(4):
        c000 = vox[z0c, y0c, x0c, c]
        c001 = vox[z0c, y0c, x1c, c]
        c010 = vox[z0c, y1c, x0c, c]
        c011 = vox[z0c, y1c, x1c, c]
        c100 = vox[z1c, y0c, x0c, c]
        c101 = vox[z1c, y0c, x1c, c]
        c110 = vox[z1c, y1c, x0c, c]
        c111 = vox[z1c, y1c, x1c, c]
        c00 = c000 * (1 - fx) + c001 * fx
        c01 = c010 * (1 - fx) + c011 * fx
        c10 = c100 * (1 - fx) + c101 * fx
        c11 = c110 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c01 * fy
        c1 = c10 * (1 - fy) + c11 * fy
        val = c0 * (1 - fz) + c1 * fz
        if c == 0:
            r = val
        elif c == 1:
            g = val
        elif c == 2:
            b = val
        else:
            a = val
    return r, g, b, a


def trilinear_sample(volume: Volume, point):
    """RGBA at a continuous voxel-space point (voxel centers at integers);
    points outside the volume return fully transparent black."""
    px, py, pz = (float(v) for v in point)
    return _trilinear(volume.voxels, px, py, pz)


@njit(cache=True)
def _render_kernel(
    vox, sx, sy, sz,
    eye, right, up, forward,
    ortho, half_w, half_h,
    img_w, img_h,
    step_vox, opacity_scale, correct, threshold, bg,
):
    out = np.zeros((img_h, img_w, 3))
    ext_x = vox.shape[2] * sx
    ext_y = vox.shape[1] * sy
    ext_z = vox.shape[0] * sz
    step_world = step_vox * min(sx, min(sy, sz))
    for j in range(img_h):
        v = 1.0 - 2.0 * (j + 0.5) / img_h  # +1 top row, -1 bottom
        for i in range(img_w):
            u = 2.0 * (i + 0.5) / img_w - 1.0
            if ortho:
                ox = eye[0] + right[0] * u * half_w + up[0] * v * half_h
                oy = eye[1] + right[1] * u * half_w + up[1] * v * half_h
                oz = eye[2] + right[2] * u * half_w + up[2] * v * half_h
                dx, dy, dz = forward[0], forward[1], forward[2]
            else:
                ox, oy, oz = eye[0], eye[1], eye[2]
                dx = forward[0] + right[0] * u * half_w + up[0] * v * half_h
                dy = forward[1] + right[1] * u * half_w + up[1] * v * half_h
                dz = forward[2] + right[2] * u * half_w + up[2] * v * half_h
                norm = np.sqrt(dx * dx + dy * dy + dz * dz)
                dx, dy, dz = dx / norm, dy / norm, dz / norm
            # slab intersection with the volume AABB [0, extent] per axis
            t0 = -np.inf
            t1 = np.inf
            ok = True
            for axis in range(3):
                o = ox if axis == 0 else (oy if axis == 1 else oz)
                d = dx if axis == 0 else (dy if axis == 1 else dz)
                ext = ext_x if axis == 0 else (ext_y if axis == 1 else ext_z)
                if abs(d) < 1e-12:
                    if o < 0.0 or o > ext:
                        ok = False
                        break
                else:
                    ta = (0.0 - o) / d
                    tb = (ext - o) / d
                    if ta > tb:
                        ta, tb = tb, ta
                    if ta > t0:
                        t0 = ta
                    if tb < t1:
                        t1 = tb
            cr = cg = cb = acc_a = 0.0
            if ok:
                t0 = max(t0, 0.0)
                if t1 > t0:
                    n_steps = int(np.ceil((t1 - t0) / step_world))
                    for s in range(n_steps):
                        t = t0 + (s + 0.5) * step_world
                        if t >= t1:
                            break
                        px = (ox + dx * t) / sx - 0.5
                        py = (oy + dy * t) / sy - 0.5
                        pz = (oz + dz * t) / sz - 0.5
                        r, g, b, a = _trilinear(vox, px, py, pz)
                        alpha = a * opacity_scale
                        if alpha > 1.0:
                            alpha = 1.0
                        if correct:
                            alpha = 1.0 - (1.0 - alpha) ** step_vox
                        if alpha > 0.0:
                            wgt = (1.0 - acc_a) * alpha
                            cr += wgt * r
                            cg += wgt * g
                            cb += wgt * b
                            acc_a += wgt
                            if acc_a >= threshold:
                                break
            cr += (1.0 - acc_a) * bg[0]
            cg += (1.0 - acc_a) * bg[1]
            cb += (1.0 - acc_a) * bg[2]
            out[j, i, 0] = cr
            out[j, i, 1] = cg
            out[j, i, 2] = cb
    return out


def raycast(volume: Volume, camera: Camera, params: RenderParams = RenderParams()) -> RgbImage:
    """Front-to-back compositing along eye rays with early termination."""
    r, u, f = camera.basis()
    aspect = camera.image_width / camera.image_height
    if camera.projection == "orthographic":
        half_w = camera.width / 2.0
        half_h = half_w / aspect
        ortho = True
    else:
        half_h = np.tan(np.radians(camera.vfov_degrees) / 2.0)
        half_w = half_h * aspect
        ortho = False
    out = _render_kernel(
        volume.voxels,
        volume.spacing[0], volume.spacing[1], volume.spacing[2],
        np.asarray(camera.eye), r, u, f,
        ortho, half_w, half_h,
        camera.image_width, camera.image_height,
        params.step, params.opacity_scale, params.opacity_correction,
        params.early_termination_threshold, np.asarray(params.background),
    )
    return RgbImage(np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8))


def extract_section(volume: Volume, axis: str, index: int) -> RgbImage:
    """Axis-aligned RGB cut plane; transverse is the original slice plane."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got '{axis}'")
    if axis == "transverse":
        limit = volume.nz
    elif axis == "coronal":
        limit = volume.ny
    else:
        limit = volume.nx
    if not 0 <= index < limit:
        raise IndexError(f"{axis} index {index} out of range [0, {limit})")
    if axis == "transverse":
        rgb = volume.voxels[index, :, :, :3]
    elif axis == "coronal":
        rgb = volume.voxels[:, index, :, :3]  # rows=z, cols=x
    else:
        rgb = volume.voxels[:, :, index, :3]  # rows=z, cols=y
    return RgbImage(np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8))
