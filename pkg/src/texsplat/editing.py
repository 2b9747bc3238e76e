"""Appearance editing: occlusion-aware texture painting and procedural retexturing.

Painting casts an edited RGBA image back onto the texture maps from the camera
it was painted in. Each pixel ray deposits its color onto the bilinear
footprint of every sufficiently close (in depth) primitive it crosses, weighted
by the interpolation weight times the ray's transmittance at the hit. Per
texel, the deposited color and the original color are then blended by the
accumulated edit weight. Only texels are modified; geometry, opacity, and SH
residuals are untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .atlas import bilinear_taps, texel_centers
from .geometry import PARALLEL_EPS, T_NEAR
from .renderer import ALPHA_CUTOFF, ALPHA_MAX, TRANSMITTANCE_FLOOR, Camera, render, sort_primitives, _pixel_window
from .scene import Scene

DEPTH_TOLERANCE = 1e-2  # in normalized (t - near) / (far - near) units


@dataclass
class EditImage:
    """An edited view: RGBA pixels plus the camera they were painted in."""

    rgba: np.ndarray
    camera: Camera

    def __post_init__(self):
        self.rgba = np.asarray(self.rgba, dtype=np.float64)
        if self.rgba.ndim != 3 or self.rgba.shape[2] != 4:
            raise ValueError(f"edit image must be (H, W, 4), got {self.rgba.shape}")
        if not np.isfinite(self.rgba).all():
            raise ValueError("edit image contains non-finite values")
        if self.rgba.shape[:2] != (self.camera.height, self.camera.width):
            raise ValueError(
                f"edit image size {self.rgba.shape[:2]} does not match camera "
                f"({self.camera.height}, {self.camera.width})"
            )


def paint(scene: Scene, edit: EditImage, depth_tol: float = DEPTH_TOLERANCE):
    """Transfer an edited view onto the texture maps, gated by median depth.

    A hit only receives paint when its normalized depth lies within
    ``depth_tol`` of the pixel's median depth, so primitives hidden behind the
    visible surface keep their texels bit for bit. Texels that receive no edit
    weight at all are untouched.
    """
    if scene.atlas is None:
        raise ValueError("paint requires a textured scene")
    camera = edit.camera
    depth = render(scene, camera).median_depth.reshape(-1)
    inv_range = 1.0 / (camera.far - camera.near)
    depth_norm = (depth - camera.near) * inv_range

    origin, dirs = camera.rays()
    flat_dirs = dirs.reshape(-1, 3)
    order = sort_primitives(scene, camera)
    edit_rgb = edit.rgba[..., :3].reshape(-1, 3)
    edit_a = edit.rgba[..., 3].reshape(-1)
    opacities = expit(scene.opacity_logits)

    total = scene.atlas.total
    w_edit = np.zeros(total)
    w_keep = np.zeros(total)
    painted = np.zeros((total, 3))

    trans = np.ones(flat_dirs.shape[0])
    done = np.zeros(flat_dirs.shape[0], dtype=bool)
    rho = scene.atlas.texel_size

    for i in order:
        window = _pixel_window(scene, int(i), camera)
        if window is not None and window.size == 0:
            continue
        sel = window
        d = flat_dirs if sel is None else flat_dirs[sel]
        live = ~done if sel is None else ~done[sel]
        if not live.any():
            continue

        normal = scene.rotations[i, :, 2]
        denom = d @ normal
        numer = float(normal @ (scene.positions[i] - origin))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = numer / denom
        valid = live & (np.abs(denom) >= PARALLEL_EPS) & (t > T_NEAR)
        if not valid.any():
            continue
        hit = np.flatnonzero(valid)
        pix = hit if sel is None else sel[hit]
        t_hit = t[hit]
        points = origin + t_hit[:, None] * d[hit]
        local = points - scene.positions[i]
        a = local @ scene.rotations[i, :, 0] / scene.scales[i, 0]
        b = local @ scene.rotations[i, :, 1] / scene.scales[i, 1]
        alpha = opacities[i] * np.exp(-0.5 * (a * a + b * b))
        keep = alpha >= ALPHA_CUTOFF
        if not keep.any():
            continue
        pix = pix[keep]
        t_hit = t_hit[keep]
        a = a[keep]
        b = b[keep]
        alpha = np.minimum(alpha[keep], ALPHA_MAX)

        t_norm = (t_hit - camera.near) * inv_range
        gated = np.abs(t_norm - depth_norm[pix]) <= depth_tol
        if gated.any():
            gp = pix[gated]
            width = int(scene.atlas.dims[i, 0])
            height = int(scene.atlas.dims[i, 1])
            u = (a[gated] * scene.scales[i, 0]) / rho + (width - 1) / 2.0
            v = (b[gated] * scene.scales[i, 1]) / rho + (height - 1) / 2.0
            idx, w = bilinear_taps(u, v, width, height)
            idx = idx + int(scene.atlas.prefix[i])
            omega = w * trans[gp][:, None]
            ea = edit_a[gp][:, None]
            np.add.at(w_edit, idx, ea * omega)
            np.add.at(w_keep, idx, (1.0 - ea) * omega)
            np.add.at(painted, idx, (ea * omega)[..., None] * edit_rgb[gp][:, None, :])

        t_after = trans[pix] * (1.0 - alpha)
        trans[pix] = t_after
        done[pix] |= t_after < TRANSMITTANCE_FLOOR

    touched = w_edit > 0
    blend = w_edit[touched] + w_keep[touched]
    scene.atlas.texels[touched] = (
        painted[touched] + w_keep[touched, None] * scene.atlas.texels[touched]
    ) / blend[:, None]
    scene.atlas.validate()


def retexture(scene: Scene, texture_fn: Callable[[np.ndarray], np.ndarray],
              zero_sh: bool = False):
    """Set every texel to the texture function evaluated at its world center.

    ``texture_fn`` maps (..., 3) world points to (..., 3) RGB. Pass
    ``zero_sh=True`` to also clear the view-dependent residuals, leaving the
    procedural colors unmodulated.
    """
    if scene.atlas is None:
        raise ValueError("retexture requires a textured scene")
    centers = texel_centers(scene)
    colors = np.asarray(texture_fn(centers), dtype=np.float64)
    if colors.shape != centers.shape:
        raise ValueError(
            f"texture function returned shape {colors.shape}, expected {centers.shape}"
        )
    scene.atlas.texels[:] = colors
    if zero_sh:
        scene.sh_residual[:] = 0.0
    scene.atlas.validate()


def builtin_circles(p: np.ndarray) -> np.ndarray:
    """Concentric red/blue rings around every integer lattice point."""
    p = np.asarray(p, dtype=np.float64)
    d = np.linalg.norm(p - np.rint(p), axis=-1)
    s = np.sin(d)
    return np.stack([0.5 * (s + 1.0), np.zeros_like(s), 0.5 * (1.0 - s)], axis=-1)


def builtin_stripes(p: np.ndarray) -> np.ndarray:
    """Axis-aligned sinusoidal color stripes."""
    p = np.asarray(p, dtype=np.float64)
    return 0.5 * (np.sin(p) + 1.0)


PATTERNS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "circles": builtin_circles,
    "stripes": builtin_stripes,
}
