"""Forward renderer: per-view depth ordering, ray casting, and alpha compositing.

Rendering walks the primitives front to back in mean-depth order. For every
pixel ray it intersects each primitive's plane, evaluates the Gaussian alpha at
the hit, shades the hit from the texture map plus the view-dependent SH
residual, and composites. Hits with alpha below 1/255 are skipped and a pixel
stops once its transmittance falls below 1e-4; both cutoffs bound the deviation
from an uncut reference well below visual precision.

The per-pixel computation is pure, so the output is independent of how pixels
are scheduled; the implementation vectorizes over pixels one primitive at a
time and restricts each primitive to a conservative screen-space window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .atlas import bilinear_taps, sample_bilinear, world_to_uv
from .geometry import PARALLEL_EPS, SH_C0, T_NEAR, Ray, eval_sh, sh_basis
from .scene import Scene

ALPHA_CUTOFF = 1.0 / 255.0
TRANSMITTANCE_FLOOR = 1e-4
MEDIAN_OPACITY = 0.5
# Guard against fp-saturated opacity (sigmoid rounding to 1), which would make
# the downstream-transmittance term in the gradient divide by zero.
ALPHA_MAX = 1.0 - 1e-12
# Texture maps span 3 sigma; the 1/255 cutoff ellipse reaches ~3.33 sigma, so a
# 3.5-sigma rectangle bounds every hit the renderer can accept.
WINDOW_SIGMAS = 3.5


@dataclass
class Camera:
    """Pinhole camera. Internally the camera looks down +z with y toward
    increasing image rows; ``camera_to_world`` maps camera to world coordinates."""

    camera_to_world: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.camera_to_world = np.asarray(self.camera_to_world, dtype=np.float64).reshape(4, 4)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("camera planes must satisfy 0 < near < far")

    @classmethod
    def from_fov(cls, camera_to_world, fov_x: float, width: int, height: int,
                 near: float = 0.01, far: float = 100.0) -> "Camera":
        """Build intrinsics from a horizontal field-of-view angle in radians."""
        fx = 0.5 * width / np.tan(0.5 * fov_x)
        return cls(camera_to_world=camera_to_world, fx=fx, fy=fx,
                   cx=width / 2.0, cy=height / 2.0,
                   width=width, height=height, near=near, far=far)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), **kwargs) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise ValueError("up vector is parallel to the view direction")
        right = right / norm
        down = np.cross(forward, right)
        c2w = np.eye(4)
        c2w[:3, 0] = right
        c2w[:3, 1] = down
        c2w[:3, 2] = forward
        c2w[:3, 3] = eye
        return cls.from_fov(c2w, **kwargs)

    @property
    def position(self) -> np.ndarray:
        return self.camera_to_world[:3, 3]

    @property
    def rotation(self) -> np.ndarray:
        return self.camera_to_world[:3, :3]

    def pixel_directions(self) -> np.ndarray:
        """Unit world-space directions through all pixel centers, shape (H, W, 3)."""
        j = np.arange(self.width) + 0.5
        i = np.arange(self.height) + 0.5
        x = (j - self.cx) / self.fx
        y = (i - self.cy) / self.fy
        dirs = np.empty((self.height, self.width, 3))
        dirs[..., 0] = x[None, :]
        dirs[..., 1] = y[:, None]
        dirs[..., 2] = 1.0
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return dirs @ self.rotation.T

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.position.copy(), self.pixel_directions()


@dataclass
class RenderOutput:
    """Rendered color, accumulated opacity, and median depth per pixel.

    ``color`` is linear and unclamped (clamp only when writing image files).
    ``median_depth`` is the ray parameter of the first hit at which accumulated
    opacity exceeds one half, or +inf where that never happens.
    """

    color: np.ndarray
    alpha: np.ndarray
    median_depth: np.ndarray


def sort_primitives(scene: Scene, camera: Camera) -> np.ndarray:
    """Indices of primitives sorted by ascending camera-space depth of the mean.

    Primitives behind the near plane are dropped. Equal depths keep their
    original index order, so the ordering is deterministic.
    """
    rel = scene.positions - camera.position
    depth = rel @ camera.rotation[:, 2]
    keep = np.flatnonzero(depth > camera.near)
    order = keep[np.argsort(depth[keep], kind="stable")]
    return order


def shade(scene: Scene, index: int, x: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Color of one primitive at plane point x seen from ``direction``:
    interpolated texture (or the base color while untextured) plus SH residual."""
    g = scene.primitive(index)
    if scene.atlas is not None:
        base = sample_bilinear(scene.atlas, g, world_to_uv(g, x, scene.atlas.texel_size))
    else:
        if scene.sh_dc is None:
            raise ValueError("scene has neither textures nor base-color coefficients")
        base = scene.sh_dc[index] * SH_C0 + 0.5
    return base + eval_sh(g.sh_residual, direction)


@dataclass
class TapeRecord:
    """Per-primitive forward state kept for the hand-written backward pass."""

    prim: int
    pixels: np.ndarray      # flat pixel indices hit, (m,)
    alpha: np.ndarray       # (m,)
    trans: np.ndarray       # transmittance before this primitive, (m,)
    rgb: np.ndarray         # shaded color at the hits, (m, 3)
    tex_idx: np.ndarray     # absolute atlas rows of the 4 bilinear taps, (m, 4)
    tex_w: np.ndarray       # bilinear weights, (m, 4)
    gauss: np.ndarray       # Gaussian falloff (alpha / opacity), (m,)
    clamped: np.ndarray     # True where the saturation guard clipped alpha, (m,)


def composite_rays(scene: Scene, order: np.ndarray, origin: np.ndarray,
                   dirs: np.ndarray, background: np.ndarray,
                   camera: Camera | None = None,
                   tape: list | None = None):
    """Composite a batch of rays front to back.

    ``dirs`` is (p, 3) of unit directions sharing one origin. Returns
    (color (p, 3), transmittance (p,), median_depth (p,)). When ``camera`` is
    given, each primitive is evaluated only inside a conservative screen-space
    window around its support, which does not change the result. When ``tape``
    is a list, per-primitive forward state is appended for the backward pass.
    """
    p = dirs.shape[0]
    dtype = scene.positions.dtype
    color = np.zeros((p, 3), dtype=dtype)
    trans = np.ones(p, dtype=dtype)
    median = np.full(p, np.inf, dtype=dtype)
    found_median = np.zeros(p, dtype=bool)
    done = np.zeros(p, dtype=bool)

    degree = scene.sh_degree
    basis = sh_basis(dirs, degree) if degree > 0 else None
    textured = scene.atlas is not None
    if not textured:
        if scene.sh_dc is None:
            raise ValueError("scene has neither textures nor base-color coefficients")
        base_colors = scene.sh_dc * SH_C0 + 0.5
    opacities = expit(scene.opacity_logits)

    for i in order:
        window = _pixel_window(scene, int(i), camera)
        if window is None:
            sel = None
            d = dirs
            live = ~done
        else:
            if window.size == 0:
                continue
            sel = window
            d = dirs[sel]
            live = ~done[sel]
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
        gauss = np.exp(-0.5 * (a * a + b * b))
        alpha_raw = opacities[i] * gauss
        keep = alpha_raw >= ALPHA_CUTOFF
        if not keep.any():
            continue
        pix = pix[keep]
        t_hit = t_hit[keep]
        gauss = gauss[keep]
        clamped = alpha_raw[keep] > ALPHA_MAX
        alpha = np.minimum(alpha_raw[keep], ALPHA_MAX)

        if textured:
            rho = scene.atlas.texel_size
            width = int(scene.atlas.dims[i, 0])
            height = int(scene.atlas.dims[i, 1])
            u = (a[keep] * scene.scales[i, 0]) / rho + (width - 1) / 2.0
            v = (b[keep] * scene.scales[i, 1]) / rho + (height - 1) / 2.0
            idx, w = bilinear_taps(u, v, width, height)
            idx = idx + int(scene.atlas.prefix[i])
            rgb = np.einsum("mk,mkc->mc", w, scene.atlas.texels[idx])
        else:
            idx = w = None
            rgb = np.broadcast_to(base_colors[i], (pix.size, 3)).copy()
        if degree > 0:
            rgb = rgb + basis[pix] @ scene.sh_residual[i]

        t_before = trans[pix]
        color[pix] += (t_before * alpha)[:, None] * rgb
        t_after = t_before * (1.0 - alpha)
        crossed = ~found_median[pix] & (1.0 - t_after > MEDIAN_OPACITY)
        median[pix[crossed]] = t_hit[crossed]
        found_median[pix] |= crossed
        trans[pix] = t_after
        done[pix] |= t_after < TRANSMITTANCE_FLOOR

        if tape is not None:
            tape.append(TapeRecord(
                prim=int(i), pixels=pix, alpha=alpha, trans=t_before, rgb=rgb,
                tex_idx=idx, tex_w=w, gauss=gauss, clamped=clamped,
            ))

    color += trans[:, None] * np.asarray(background, dtype=dtype)
    return color, trans, median


def composite_ray(scene: Scene, order: np.ndarray, ray: Ray,
                  background: np.ndarray | None = None):
    """Composite a single ray; returns (rgb, accumulated alpha, median depth)."""
    if background is None:
        background = scene.background
    direction = np.asarray(ray.direction, dtype=np.float64).reshape(1, 3)
    color, trans, median = composite_rays(scene, order, ray.origin, direction, background)
    return color[0], float(1.0 - trans[0]), float(median[0])


def render(scene: Scene, camera: Camera) -> RenderOutput:
    """Render all pixel-center rays of a camera. Deterministic: identical
    inputs produce bit-identical buffers."""
    origin, dirs = camera.rays()
    order = sort_primitives(scene, camera)
    flat = dirs.reshape(-1, 3)
    color, trans, median = composite_rays(
        scene, order, origin, flat, scene.background, camera=camera
    )
    h, w = camera.height, camera.width
    return RenderOutput(
        color=color.reshape(h, w, 3),
        alpha=(1.0 - trans).reshape(h, w),
        median_depth=median.reshape(h, w),
    )


def _pixel_window(scene: Scene, index: int, camera: Camera | None) -> np.ndarray | None:
    """Flat pixel indices of a conservative window around one primitive.

    Projects the corners of the 3.5-sigma support rectangle; any ray outside
    their screen bounding box can only hit below the alpha cutoff. Returns None
    when no window applies (no camera, or a corner behind the camera)."""
    if camera is None:
        return None
    center = scene.positions[index]
    e1 = WINDOW_SIGMAS * scene.scales[index, 0] * scene.rotations[index, :, 0]
    e2 = WINDOW_SIGMAS * scene.scales[index, 1] * scene.rotations[index, :, 1]
    corners = np.stack([center + e1 + e2, center + e1 - e2,
                        center - e1 + e2, center - e1 - e2])
    cam = (corners - camera.position) @ camera.rotation
    if (cam[:, 2] <= camera.near).any():
        return None
    px = camera.fx * cam[:, 0] / cam[:, 2] + camera.cx - 0.5
    py = camera.fy * cam[:, 1] / cam[:, 2] + camera.cy - 0.5
    j0 = max(int(np.floor(px.min())), 0)
    j1 = min(int(np.ceil(px.max())), camera.width - 1)
    i0 = max(int(np.floor(py.min())), 0)
    i1 = min(int(np.ceil(py.max())), camera.height - 1)
    if j0 > j1 or i0 > i1:
        return np.empty(0, dtype=np.int64)
    rows = np.arange(i0, i1 + 1, dtype=np.int64)
    cols = np.arange(j0, j1 + 1, dtype=np.int64)
    return (rows[:, None] * camera.width + cols[None, :]).ravel()
