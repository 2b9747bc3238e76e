"""Scene container: primitive arrays, the shared texture atlas, and background."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .atlas import TextureAtlas
from .geometry import (
    RESIDUAL_COUNTS,
    TexturedGaussian,
    quat_to_rotmat,
    rotmat_to_quat,
)


@dataclass
class Scene:
    """All primitives of one model, stored as wide arrays.

    Geometry lives in quaternion form for persistence; rotation matrices are
    derived once on construction and treated as read-only. ``sh_dc`` holds the
    imported base-color coefficients until they are baked into the texture maps,
    after which it is None.
    """

    positions: np.ndarray            # (n, 3)
    quats: np.ndarray                # (n, 4) wxyz, unit to within 1e-6
    scales: np.ndarray               # (n, 2) positive tangent-axis scales
    opacity_logits: np.ndarray       # (n,)
    sh_residual: np.ndarray          # (n, k, 3); k matches sh_degree
    sh_degree: int = 0
    sh_dc: np.ndarray | None = None  # (n, 3) or None once baked
    atlas: TextureAtlas | None = None
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotations: np.ndarray = field(init=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 2)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.sh_residual = np.asarray(self.sh_residual, dtype=np.float64).reshape(
            n, RESIDUAL_COUNTS[self.sh_degree], 3
        )
        if self.sh_dc is not None:
            self.sh_dc = np.asarray(self.sh_dc, dtype=np.float64).reshape(n, 3)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        norms = np.linalg.norm(self.quats, axis=1, keepdims=True)
        self.rotations = quat_to_rotmat(self.quats / norms)

    @classmethod
    def from_rotations(cls, positions, rotations, scales, opacity_logits,
                       sh_residual, **kwargs) -> "Scene":
        """Build a scene from rotation matrices; quaternions are derived."""
        rotations = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
        quats = np.stack([rotmat_to_quat(r) for r in rotations])
        return cls(positions=positions, quats=quats, scales=scales,
                   opacity_logits=opacity_logits, sh_residual=sh_residual, **kwargs)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def total_texels(self) -> int:
        return 0 if self.atlas is None else self.atlas.total

    def primitive(self, index: int) -> TexturedGaussian:
        """Assemble a single-primitive view (copies nothing heavy)."""
        g = TexturedGaussian(
            position=self.positions[index],
            rotation=self.rotations[index],
            scale=self.scales[index],
            opacity_logit=float(self.opacity_logits[index]),
            sh_residual=self.sh_residual[index],
        )
        if self.atlas is not None:
            g.tex_width = int(self.atlas.dims[index, 0])
            g.tex_height = int(self.atlas.dims[index, 1])
            g.tex_offset = int(self.atlas.prefix[index])
        return g

    def validate(self):
        if self.n:
            norms = np.linalg.norm(self.quats, axis=1)
            if np.abs(norms - 1.0).max() >= 1e-6:
                raise ValueError("quaternions are not unit length")
        if (self.scales <= 0).any():
            raise ValueError("scales must be positive")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions contain non-finite values")
        if self.atlas is not None:
            self.atlas.validate()
            if self.atlas.count != self.n:
                raise ValueError("atlas primitive count does not match the scene")

    def copy(self) -> "Scene":
        return copy.deepcopy(self)
