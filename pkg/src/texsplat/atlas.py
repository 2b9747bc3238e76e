"""Jagged per-primitive texture storage and the mapping between world space and texels.

Every primitive owns a small U x V RGB map whose texels are squares of a single
global world-space edge length (the texel size). All maps are flattened and
concatenated into one (total, 3) array indexed through exclusive prefix sums,
so map ``i`` occupies rows ``prefix[i]:prefix[i+1]``. Within a map, texel
(u, v) sits at flat position ``v * U + u``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import SH_C0, TexturedGaussian

# Texture maps span +-3 standard deviations of the Gaussian in each axis.
SUPPORT_SIGMAS = 6.0
# Relative tolerance of the texel-budget search.
BUDGET_REL_TOL = 1e-3
BUDGET_MAX_BISECTIONS = 200
BUDGET_BRACKET = 16.0   # search interval [rho0 / 16, rho0 * 16]

# Snap ceil() at representable boundaries so e.g. 6 * 0.1 / 0.1 allocates 6, not 7.
_CEIL_SNAP = 1e-12


class UV(NamedTuple):
    """Continuous texture coordinates; valid support is [0, U) x [0, V)."""

    u: float
    v: float


class TexelBudgetError(RuntimeError):
    """Raised when no texel size meets the budget tolerance inside the bracket."""

    def __init__(self, message: str, nearest_total: int, nearest_texel_size: float):
        super().__init__(message)
        self.nearest_total = nearest_total
        self.nearest_texel_size = nearest_texel_size


@dataclass
class TextureAtlas:
    """Flattened per-primitive texture maps plus their jagged layout.

    texels:     (total, 3) RGB rows, linear color, unclamped while optimizing
    dims:       (n, 2) integer map sizes (width U, height V) per primitive
    prefix:     (n + 1,) exclusive prefix sums of U * V; prefix[n] == total
    texel_size: world-space edge length of one square texel
    """

    texels: np.ndarray
    dims: np.ndarray
    prefix: np.ndarray
    texel_size: float

    def __post_init__(self):
        self.texels = np.asarray(self.texels, dtype=np.float64).reshape(-1, 3)
        self.dims = np.asarray(self.dims, dtype=np.int64).reshape(-1, 2)
        self.prefix = np.asarray(self.prefix, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.prefix[-1])

    @property
    def count(self) -> int:
        return self.dims.shape[0]

    def map_view(self, index: int) -> np.ndarray:
        """Texture map of one primitive as a (V, U, 3) view into the flat store."""
        u, v = self.dims[index]
        block = self.texels[self.prefix[index]:self.prefix[index + 1]]
        return block.reshape(int(v), int(u), 3)

    def validate(self):
        sizes = self.dims[:, 0] * self.dims[:, 1]
        expected = np.concatenate([[0], np.cumsum(sizes)])
        if self.prefix.shape != expected.shape or (self.prefix != expected).any():
            raise ValueError("atlas prefix sums are inconsistent with map dimensions")
        if self.texels.shape[0] != self.total:
            raise ValueError("atlas texel array length does not match prefix sums")
        if (self.dims < 1).any():
            raise ValueError("texture dimensions must be at least 1")
        if not self.texel_size > 0:
            raise ValueError("texel size must be positive")

    @classmethod
    def allocate(cls, scales: np.ndarray, texel_size: float, fill: float = 0.5) -> "TextureAtlas":
        """Build an atlas sized from primitive scales, filled with a constant color."""
        dims = dims_for_scales(scales, texel_size)
        sizes = dims[:, 0] * dims[:, 1]
        prefix = np.concatenate([[0], np.cumsum(sizes)])
        texels = np.full((int(prefix[-1]), 3), float(fill))
        atlas = cls(texels=texels, dims=dims, prefix=prefix, texel_size=float(texel_size))
        atlas.validate()
        return atlas


def allocate_dims(s1: float, s2: float, texel_size: float) -> tuple[int, int]:
    """Texture dimensions covering +-3 sigma: ceil(6 s / texel_size), at least 1."""
    if not (s1 > 0 and s2 > 0 and texel_size > 0):
        raise ValueError("scales and texel size must be positive")
    dims = dims_for_scales(np.array([[s1, s2]]), texel_size)[0]
    return int(dims[0]), int(dims[1])


def dims_for_scales(scales: np.ndarray, texel_size: float) -> np.ndarray:
    """Vectorized map dimensions for an (n, 2) array of scales."""
    scales = np.asarray(scales, dtype=np.float64).reshape(-1, 2)
    q = SUPPORT_SIGMAS * scales / float(texel_size)
    dims = np.ceil(q * (1.0 - _CEIL_SNAP)).astype(np.int64)
    return np.maximum(dims, 1)


def world_to_uv(g: TexturedGaussian, x: np.ndarray, texel_size: float) -> UV:
    """Map plane point(s) to continuous texture coordinates.

    The map is centered on the primitive: the mean lands at the texture center
    ((U - 1) / 2, (V - 1) / 2) and one texel step corresponds to a displacement
    of one texel size along r1 (for u) or r2 (for v).
    """
    x = np.asarray(x, dtype=np.float64)
    d = x - g.position
    u = (d @ g.r1) / texel_size + (g.tex_width - 1) / 2.0
    v = (d @ g.r2) / texel_size + (g.tex_height - 1) / 2.0
    return UV(u, v)


def uv_to_world(g: TexturedGaussian, u: int, v: int, texel_size: float) -> np.ndarray:
    """World-space center of integer texel (u, v); exact inverse of world_to_uv."""
    if not (0 <= u < g.tex_width and 0 <= v < g.tex_height):
        raise ValueError(
            f"texel ({u}, {v}) outside map of size {g.tex_width} x {g.tex_height}"
        )
    du = texel_size * (u - (g.tex_width - 1) / 2.0)
    dv = texel_size * (v - (g.tex_height - 1) / 2.0)
    return g.position + du * g.r1 + dv * g.r2


def bilinear_taps(u: np.ndarray, v: np.ndarray, width: int, height: int):
    """Clamped bilinear footprint: 4 flat texel indices and weights per query.

    Coordinates are clamped to [0, width - 1] x [0, height - 1] first, which
    realizes constant extrapolation outside the map. Returns (idx, w), each of
    shape (..., 4); weights sum to 1.
    """
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, width - 1.0)
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, height - 1.0)
    u0 = np.clip(np.floor(u), 0, max(width - 2, 0))
    v0 = np.clip(np.floor(v), 0, max(height - 2, 0))
    fu = u - u0
    fv = v - v0
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    idx = np.stack(
        [v0 * width + u0, v0 * width + u1, v1 * width + u0, v1 * width + u1], axis=-1
    )
    w = np.stack(
        [(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=-1
    )
    return idx, w


def sample_bilinear(atlas: TextureAtlas, g: TexturedGaussian, uv: UV) -> np.ndarray:
    """Bilinearly interpolated texture color with constant extrapolation."""
    idx, w = bilinear_taps(uv[0], uv[1], g.tex_width, g.tex_height)
    block = atlas.texels[g.tex_offset:g.tex_offset + g.tex_width * g.tex_height]
    return np.einsum("...k,...kc->...c", w, block[idx])


def solve_texel_size(scales: np.ndarray, budget: int) -> float:
    """Find a texel size whose total allocation is within 0.1% of the budget.

    The search starts from the continuous estimate rho0 = sqrt(total Gaussian
    area / budget), where each primitive covers 36 * s1 * s2 of world area, and
    bisects on rho (the total texel count is monotone non-increasing in rho).
    Raises TexelBudgetError with the nearest achievable total if the integer
    dimension rounding makes the budget unattainable within the bracket.
    """
    scales = np.asarray(scales, dtype=np.float64).reshape(-1, 2)
    n = scales.shape[0]
    if n == 0:
        raise ValueError("cannot size texels for an empty primitive list")
    if (scales <= 0).any():
        raise ValueError("all scales must be positive")
    if budget < n:
        raise ValueError(f"budget {budget} is below one texel per primitive ({n})")

    def total(rho: float) -> int:
        dims = dims_for_scales(scales, rho)
        return int((dims[:, 0] * dims[:, 1]).sum())

    area = float((SUPPORT_SIGMAS ** 2 * scales[:, 0] * scales[:, 1]).sum())
    rho0 = np.sqrt(area / budget)
    tol = BUDGET_REL_TOL * budget

    best_rho, best_total = rho0, total(rho0)
    if abs(best_total - budget) <= tol:
        return float(rho0)

    lo, hi = rho0 / BUDGET_BRACKET, rho0 * BUDGET_BRACKET
    for candidate in (lo, hi):
        t = total(candidate)
        if abs(t - budget) < abs(best_total - budget):
            best_rho, best_total = candidate, t
    if total(lo) < budget - tol or total(hi) > budget + tol:
        raise TexelBudgetError(
            f"budget {budget} unattainable within texel-size bracket "
            f"[{lo:.6g}, {hi:.6g}]; nearest achievable total is {best_total} "
            f"at texel size {best_rho:.6g}",
            nearest_total=best_total,
            nearest_texel_size=float(best_rho),
        )

    for _ in range(BUDGET_MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        t = total(mid)
        if abs(t - budget) < abs(best_total - budget):
            best_rho, best_total = mid, t
        if abs(t - budget) <= tol:
            return float(mid)
        if t > budget:
            lo = mid
        else:
            hi = mid
    raise TexelBudgetError(
        f"no texel size within {BUDGET_REL_TOL:.1%} of budget {budget} after "
        f"{BUDGET_MAX_BISECTIONS} bisections (integer dimensions quantize the "
        f"total); nearest achievable total is {best_total} at texel size {best_rho:.6g}",
        nearest_total=best_total,
        nearest_texel_size=float(best_rho),
    )


def texel_size_for_budget(scales: np.ndarray, budget: int, strict: bool = False) -> float:
    """Texel size for a budget; budget 0 disables texturing via 1x1 maps.

    When the integer dimensions make the exact budget unattainable and
    ``strict`` is False, the nearest achievable size is returned instead of
    raising (uniform scale sets quantize the total coarsely).
    """
    scales = np.asarray(scales, dtype=np.float64).reshape(-1, 2)
    if budget == 0:
        return float(SUPPORT_SIGMAS * scales.max())
    try:
        return solve_texel_size(scales, budget)
    except TexelBudgetError as err:
        if strict:
            raise
        return err.nearest_texel_size


def texel_centers(scene) -> np.ndarray:
    """World-space centers of every texel in the scene's atlas, in flat order."""
    atlas = _require_atlas(scene)
    out = np.empty((atlas.total, 3))
    rho = atlas.texel_size
    for i in range(scene.n):
        width, height = (int(d) for d in atlas.dims[i])
        u = np.arange(width) - (width - 1) / 2.0
        v = np.arange(height) - (height - 1) / 2.0
        r1 = scene.rotations[i, :, 0]
        r2 = scene.rotations[i, :, 1]
        centers = (
            scene.positions[i]
            + rho * v[:, None, None] * r2
            + rho * u[None, :, None] * r1
        )
        out[atlas.prefix[i]:atlas.prefix[i + 1]] = centers.reshape(-1, 3)
    return out


def reinit_resample(scene, budget: int | None = None, texel_size: float | None = None) -> TextureAtlas:
    """Reallocate texture maps for the current scales and carry appearance over.

    The new texel size comes from ``texel_size`` if given, otherwise from the
    budget search (``budget`` defaults to the current total). Every new texel is
    filled by bilinearly sampling the old map at the corresponding location, so
    the appearance is preserved up to resampling error; if the size and all
    dimensions are unchanged the texels are copied bit for bit.
    """
    old = _require_atlas(scene)
    if texel_size is None:
        texel_size = texel_size_for_budget(scene.scales, old.total if budget is None else budget)
    new = TextureAtlas.allocate(scene.scales, texel_size, fill=0.0)
    ratio = new.texel_size / old.texel_size
    for i in range(scene.n):
        wn, hn = (int(d) for d in new.dims[i])
        wo, ho = (int(d) for d in old.dims[i])
        u_new, v_new = np.meshgrid(np.arange(wn), np.arange(hn), indexing="xy")
        u_old = (u_new - (wn - 1) / 2.0) * ratio + (wo - 1) / 2.0
        v_old = (v_new - (hn - 1) / 2.0) * ratio + (ho - 1) / 2.0
        idx, w = bilinear_taps(u_old.ravel(), v_old.ravel(), wo, ho)
        block = old.texels[old.prefix[i]:old.prefix[i + 1]]
        new.texels[new.prefix[i]:new.prefix[i + 1]] = np.einsum(
            "qk,qkc->qc", w, block[idx]
        )
    new.validate()
    scene.atlas = new
    return new


def init_from_sh0(scene):
    """Fill every texel from the primitive's base-color SH coefficient.

    Uses the standard affine map color = c0 * SH_C0 + 0.5 per channel, then
    drops the consumed base coefficients from the scene. Rendering before and
    after is identical because a constant map interpolates to itself.
    """
    atlas = _require_atlas(scene)
    if scene.sh_dc is None:
        raise ValueError("scene carries no base-color SH coefficients to initialize from")
    colors = scene.sh_dc * SH_C0 + 0.5
    reps = (atlas.prefix[1:] - atlas.prefix[:-1]).astype(np.int64)
    atlas.texels[:] = np.repeat(colors, reps, axis=0)
    scene.sh_dc = None
    atlas.validate()


def _require_atlas(scene) -> TextureAtlas:
    if scene.atlas is None:
        raise ValueError("scene has no texture atlas; allocate one first")
    return scene.atlas
