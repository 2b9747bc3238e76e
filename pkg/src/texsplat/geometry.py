"""Planar Gaussian primitives: ray intersection, alpha falloff, spherical harmonics.

A primitive is a 2D Gaussian living on a plane in 3D space. Its local frame is
given by the columns of a rotation matrix: ``r1`` and ``r2`` span the plane
(scaled by ``s1`` and ``s2``) and ``r3`` is the plane normal. Rendering never
projects the primitive; rays are intersected with the plane exactly and the
Gaussian is evaluated at the hit point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# Real spherical-harmonics constants, splatting convention.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_SH_DEGREE = 3
# Number of view-dependent (degree >= 1) coefficients per channel, by degree.
RESIDUAL_COUNTS = (0, 3, 8, 15)

PARALLEL_EPS = 1e-9  # |n.d| below this counts as a grazing / parallel ray
T_NEAR = 1e-4        # hits closer than this along the ray are self-intersections


def degree_for_residual_count(count: int) -> int:
    """Map a per-channel residual coefficient count back to an SH degree."""
    if count not in RESIDUAL_COUNTS:
        raise ValueError(
            f"invalid residual coefficient count {count}; expected one of {RESIDUAL_COUNTS}"
        )
    return RESIDUAL_COUNTS.index(count)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the view-dependent SH basis (degrees 1..degree) at unit directions.

    The constant degree-0 term is excluded; it is carried by the texture map.
    ``dirs`` has shape (..., 3); the result has shape (..., RESIDUAL_COUNTS[degree]).
    """
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_SH_DEGREE}], got {degree}")
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    terms = []
    if degree >= 1:
        terms += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        terms += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        terms += [
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[4] * x * (4.0 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3.0 * yy),
        ]
    if not terms:
        return np.zeros(dirs.shape[:-1] + (0,))
    return np.stack(terms, axis=-1)


def eval_sh(coeffs: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """View-dependent RGB from residual SH coefficients at one or more directions.

    ``coeffs`` is (k, 3) with k in {0, 3, 8, 15}, or the equivalent flat vector
    of length 3k. The result may be negative: it is a residual added on top of
    the texture color.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim == 1:
        if coeffs.size % 3 != 0:
            raise ValueError(f"flat SH coefficient vector length {coeffs.size} is not a multiple of 3")
        coeffs = coeffs.reshape(-1, 3)
    if coeffs.ndim != 2 or coeffs.shape[1] != 3:
        raise ValueError(f"SH coefficients must have shape (k, 3), got {coeffs.shape}")
    degree = degree_for_residual_count(coeffs.shape[0])
    if degree == 0:
        direction = np.asarray(direction, dtype=np.float64)
        return np.zeros(direction.shape[:-1] + (3,))
    basis = sh_basis(direction, degree)
    return basis @ coeffs


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) (w, x, y, z) to rotation matrix; shape (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3))
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def rotmat_to_quat(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    rot = np.asarray(rot, dtype=np.float64)
    m00, m01, m02 = rot[0]
    m10, m11, m12 = rot[1]
    m20, m21, m22 = rot[2]
    trace = m00 + m11 + m22
    if trace > 0:
        s = 0.5 / np.sqrt(trace + 1.0)
        q = np.array([0.25 / s, (m21 - m12) * s, (m02 - m20) * s, (m10 - m01) * s])
    elif m00 > m11 and m00 > m22:
        s = 2.0 * np.sqrt(1.0 + m00 - m11 - m22)
        q = np.array([(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s])
    elif m11 > m22:
        s = 2.0 * np.sqrt(1.0 + m11 - m00 - m22)
        q = np.array([(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + m22 - m00 - m11)
        q = np.array([(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of quaternions in (w, x, y, z) order; broadcasts."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


@dataclass
class TexturedGaussian:
    """One planar Gaussian primitive plus its texture-map descriptor.

    ``rotation`` columns are [r1, r2, n]: the two in-plane axes and the normal.
    ``tex_offset`` indexes the first texel of this primitive's map in the flat
    atlas; the map is ``tex_width`` x ``tex_height`` texels, flattened row by
    row along the v axis.
    """

    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity_logit: float
    sh_residual: np.ndarray
    tex_width: int = 1
    tex_height: int = 1
    tex_offset: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.sh_residual = np.asarray(self.sh_residual, dtype=np.float64).reshape(-1, 3)

    @property
    def opacity(self) -> float:
        return float(expit(self.opacity_logit))

    @property
    def r1(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def r2(self) -> np.ndarray:
        return self.rotation[:, 1]

    @property
    def normal(self) -> np.ndarray:
        return self.rotation[:, 2]

    def validate(self, atlas_size: int | None = None):
        gram = self.rotation.T @ self.rotation
        if np.abs(gram - np.eye(3)).max() >= 1e-6:
            raise ValueError("rotation columns are not orthonormal")
        if not (self.scale[0] > 0 and self.scale[1] > 0):
            raise ValueError("scales must be positive")
        if self.tex_width < 1 or self.tex_height < 1:
            raise ValueError("texture dimensions must be at least 1")
        if atlas_size is not None:
            if self.tex_offset + self.tex_width * self.tex_height > atlas_size:
                raise ValueError("texture map extends past the end of the atlas")


@dataclass
class Ray:
    """A ray with unit direction. Components may be scalars or broadcastable arrays."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)

    def validate(self):
        norms = np.linalg.norm(self.direction, axis=-1)
        if np.abs(norms - 1.0).max() >= 1e-9:
            raise ValueError("ray direction is not unit length")


@dataclass
class Intersection:
    """A ray-primitive hit: parameter t, world point, and Gaussian alpha there."""

    t: float
    point: np.ndarray
    alpha: float


def intersect(ray: Ray, g: TexturedGaussian,
              parallel_eps: float = PARALLEL_EPS,
              t_near: float = T_NEAR) -> Intersection | None:
    """Exact ray-plane intersection with the primitive's supporting plane.

    Returns None (a miss) for grazing rays (|n.d| < parallel_eps) and for hits
    at or behind t_near, which guards against self-intersections.
    """
    n = g.normal
    denom = float(n @ ray.direction)
    if abs(denom) < parallel_eps:
        return None
    t = float(n @ (g.position - ray.origin)) / denom
    if t <= t_near:
        return None
    point = ray.origin + t * ray.direction
    return Intersection(t=t, point=point, alpha=float(eval_alpha(g, point)))


def eval_alpha(g: TexturedGaussian, x: np.ndarray) -> np.ndarray:
    """Gaussian opacity at plane point(s) x: o * exp(-((a^2 + b^2) / 2)).

    a and b are the displacements from the mean along r1 and r2 in units of the
    respective scales. x has shape (..., 3); the result broadcasts accordingly.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x - g.position
    a = d @ g.r1 / g.scale[0]
    b = d @ g.r2 / g.scale[1]
    return g.opacity * np.exp(-0.5 * (a * a + b * b))
