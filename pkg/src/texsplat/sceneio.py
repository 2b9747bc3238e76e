"""Persistence and ingestion: scene files, splat PLYs, datasets, synthetic scenes.

Native scene format ("GSTX", version 1, little-endian throughout):

    magic       4 bytes  b"GSTX"
    version     u32
    n           u32      primitive count
    sh_degree   u32
    texel_size  f64
    background  f64 x 3
    total       u64      texel count, must equal the sum of U * V
    records     n x (pos f64x3, quat f64x4 wxyz, scale f64x2, opacity f64,
                     sh f64x3k, U u32, V u32)
    texels      f32 x (3 * total)

Texels are quantized to 32-bit floats on disk; all other fields round-trip
bit-exactly. Cameras use the Blender-style transforms convention on disk
(camera looks down -z, y up) and are converted to the internal +z convention
once at load.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .atlas import TextureAtlas, dims_for_scales
from .geometry import RESIDUAL_COUNTS, SH_C0, quat_to_rotmat
from .renderer import Camera, render
from .scene import Scene

MAGIC = b"GSTX"
FORMAT_VERSION = 1

# Flip the y and z axes: OpenGL-style cameras look down -z with y up, the
# internal convention looks down +z with y toward increasing rows.
_GL_FLIP = np.diag([1.0, -1.0, -1.0])

BACKGROUNDS = {
    "white": np.ones(3),
    "black": np.zeros(3),
}


class SceneFormatError(ValueError):
    """A native scene file failed validation."""


class PlyFormatError(ValueError):
    """A splat PLY failed validation."""


class DatasetError(ValueError):
    """A dataset manifest or its images failed validation."""


# ---------------------------------------------------------------------------
# Native scene format


def save_scene(scene: Scene, path):
    if scene.atlas is None:
        raise SceneFormatError("cannot save a scene without an allocated texture atlas")
    scene.validate()
    atlas = scene.atlas
    k = RESIDUAL_COUNTS[scene.sh_degree]
    header = MAGIC + struct.pack(
        "<IIId3dQ",
        FORMAT_VERSION,
        scene.n,
        scene.sh_degree,
        float(atlas.texel_size),
        *scene.background.tolist(),
        atlas.total,
    )
    rec = np.dtype([
        ("pos", "<f8", 3), ("quat", "<f8", 4), ("scale", "<f8", 2),
        ("opacity", "<f8"), ("sh", "<f8", (k, 3)),
        ("U", "<u4"), ("V", "<u4"),
    ])
    records = np.zeros(scene.n, dtype=rec)
    records["pos"] = scene.positions
    records["quat"] = scene.quats
    records["scale"] = scene.scales
    records["opacity"] = scene.opacity_logits
    if k:
        records["sh"] = scene.sh_residual
    records["U"] = atlas.dims[:, 0]
    records["V"] = atlas.dims[:, 1]
    texels = atlas.texels.astype("<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(records.tobytes())
        f.write(texels.tobytes())


def load_scene(path) -> Scene:
    data = Path(path).read_bytes()
    head_fmt = "<IIId3dQ"
    head_size = len(MAGIC) + struct.calcsize(head_fmt)
    if len(data) < head_size:
        raise SceneFormatError("truncated scene file: header incomplete")
    if data[:4] != MAGIC:
        raise SceneFormatError("not a scene file (bad magic)")
    version, n, degree, rho, bg0, bg1, bg2, total = struct.unpack_from(head_fmt, data, 4)
    if version != FORMAT_VERSION:
        raise SceneFormatError(f"unsupported scene file version {version}")
    if degree > len(RESIDUAL_COUNTS) - 1:
        raise SceneFormatError(f"unsupported SH degree {degree}")
    k = RESIDUAL_COUNTS[degree]
    rec = np.dtype([
        ("pos", "<f8", 3), ("quat", "<f8", 4), ("scale", "<f8", 2),
        ("opacity", "<f8"), ("sh", "<f8", (k, 3)), ("U", "<u4"), ("V", "<u4"),
    ])
    rec_bytes = rec.itemsize * n
    tex_bytes = 12 * total
    if len(data) != head_size + rec_bytes + tex_bytes:
        raise SceneFormatError(
            f"truncated scene file: expected {head_size + rec_bytes + tex_bytes} bytes, "
            f"got {len(data)}"
        )
    records = np.frombuffer(data, dtype=rec, count=n, offset=head_size)
    dims = np.stack([records["U"], records["V"]], axis=1).astype(np.int64)
    if int((dims[:, 0] * dims[:, 1]).sum()) != total:
        raise SceneFormatError("texel count mismatch: header total != sum of map sizes")
    quats = np.array(records["quat"], dtype=np.float64)
    if n and np.abs(np.linalg.norm(quats, axis=1) - 1.0).max() >= 1e-6:
        raise SceneFormatError("quaternion not unit length")
    texels = np.frombuffer(
        data, dtype="<f4", count=3 * total, offset=head_size + rec_bytes
    ).astype(np.float64).reshape(-1, 3)
    prefix = np.concatenate([[0], np.cumsum(dims[:, 0] * dims[:, 1])]).astype(np.int64)
    atlas = TextureAtlas(texels=texels, dims=dims, prefix=prefix, texel_size=rho)
    scene = Scene(
        positions=np.array(records["pos"], dtype=np.float64).reshape(n, 3),
        quats=quats.reshape(n, 4),
        scales=np.array(records["scale"], dtype=np.float64).reshape(n, 2),
        opacity_logits=np.array(records["opacity"], dtype=np.float64).reshape(n),
        sh_residual=np.array(records["sh"], dtype=np.float64).reshape(n, k, 3),
        sh_degree=degree,
        atlas=atlas,
        background=np.array([bg0, bg1, bg2]),
    )
    scene.validate()
    return scene


# ---------------------------------------------------------------------------
# Splat PLY import / export

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header\n")
    if end < 0:
        raise PlyFormatError("missing end_header")
    header = data[:end].decode("latin-1").splitlines()
    offset = end + len(b"end_header\n")
    if not header or header[0].strip() != "ply":
        raise PlyFormatError("not a PLY file")
    fmt = next((line for line in header if line.startswith("format")), "")
    if "binary_little_endian" not in fmt:
        raise PlyFormatError("only binary_little_endian PLY files are supported")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header[1:]:
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise PlyFormatError("list properties are not supported on vertices")
            if parts[1] not in _PLY_TYPES:
                raise PlyFormatError(f"unsupported property type {parts[1]}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if count is None:
        raise PlyFormatError("no vertex element")
    return count, props, offset


def import_splat_ply(path) -> Scene:
    """Load an untextured splat model from a binary PLY.

    Scales are stored as logs and exponentiated here; opacity stays a logit.
    The quaternion (w, x, y, z) is normalized unless already unit to within
    1e-6, in which case it is kept bit for bit so that export followed by
    re-import is the identity. Base colors (f_dc_*) are retained for texture
    initialization; f_rest_* become the view-dependent residual. Texture
    dimensions remain unset until allocation.
    """
    data = Path(path).read_bytes()
    count, props, offset = _parse_ply_header(data)
    dtype = np.dtype([(name, kind) for name, kind in props])
    if len(data) < offset + dtype.itemsize * count:
        raise PlyFormatError("truncated PLY: vertex data incomplete")
    table = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    names = {name for name, _ in props}

    required = ["x", "y", "z", "scale_0", "scale_1", "opacity",
                "rot_0", "rot_1", "rot_2", "rot_3", "f_dc_0", "f_dc_1", "f_dc_2"]
    for name in required:
        if name not in names:
            raise PlyFormatError(f"missing vertex property {name}")
    rest_count = 0
    while f"f_rest_{rest_count}" in names:
        rest_count += 1
    if rest_count % 3 != 0 or rest_count // 3 not in RESIDUAL_COUNTS:
        raise PlyFormatError(f"unsupported f_rest property count {rest_count}")
    degree = RESIDUAL_COUNTS.index(rest_count // 3)

    def column(name: str) -> np.ndarray:
        col = np.asarray(table[name], dtype=np.float64)
        if not np.isfinite(col).all():
            raise PlyFormatError(f"non-finite values in property {name}")
        return col

    positions = np.stack([column("x"), column("y"), column("z")], axis=1)
    scales = np.exp(np.stack([column("scale_0"), column("scale_1")], axis=1))
    quats = np.stack([column(f"rot_{i}") for i in range(4)], axis=1)
    norms = np.linalg.norm(quats, axis=1)
    if (norms < 1e-12).any():
        raise PlyFormatError("zero-length quaternion in property rot_0..rot_3")
    fix = np.abs(norms - 1.0) >= 1e-6
    if fix.any():
        quats[fix] = (quats[fix] / norms[fix, None]).astype(np.float32)
    dc = np.stack([column(f"f_dc_{i}") for i in range(3)], axis=1)
    if rest_count:
        rest = np.stack([column(f"f_rest_{i}") for i in range(rest_count)], axis=1)
        # File layout is channel-major: all R coefficients, then G, then B.
        residual = rest.reshape(count, 3, rest_count // 3).transpose(0, 2, 1)
    else:
        residual = np.zeros((count, 0, 3))

    scene = Scene(
        positions=positions, quats=quats, scales=scales,
        opacity_logits=column("opacity"), sh_residual=residual,
        sh_degree=degree, sh_dc=dc,
    )
    scene.validate()
    return scene


def export_splat_ply(scene: Scene, path):
    """Write an untextured splat PLY in the conventional property layout.

    For a textured scene the base color is recovered from each map's mean
    texel; otherwise the retained f_dc coefficients are written directly.
    """
    if scene.sh_dc is not None:
        dc = scene.sh_dc
    elif scene.atlas is not None:
        means = np.stack([scene.atlas.map_view(i).mean(axis=(0, 1)) for i in range(scene.n)]) \
            if scene.n else np.zeros((0, 3))
        dc = (means - 0.5) / SH_C0
    else:
        raise SceneFormatError("scene has neither base colors nor textures to export")
    k = RESIDUAL_COUNTS[scene.sh_degree]
    names = (["x", "y", "z", "nx", "ny", "nz"]
             + [f"f_dc_{i}" for i in range(3)]
             + [f"f_rest_{i}" for i in range(3 * k)]
             + ["opacity", "scale_0", "scale_1"]
             + [f"rot_{i}" for i in range(4)])
    dtype = np.dtype([(name, "<f4") for name in names])
    out = np.zeros(scene.n, dtype=dtype)
    for axis, name in enumerate(["x", "y", "z"]):
        out[name] = scene.positions[:, axis]
    for i in range(3):
        out[f"f_dc_{i}"] = dc[:, i]
    rest = scene.sh_residual.transpose(0, 2, 1).reshape(scene.n, 3 * k)
    for i in range(3 * k):
        out[f"f_rest_{i}"] = rest[:, i]
    out["opacity"] = scene.opacity_logits
    out["scale_0"] = np.log(scene.scales[:, 0])
    out["scale_1"] = np.log(scene.scales[:, 1])
    for i in range(4):
        out[f"rot_{i}"] = scene.quats[:, i]
    header = "\n".join(
        ["ply", "format binary_little_endian 1.0", f"element vertex {scene.n}"]
        + [f"property float {name}" for name in names]
        + ["end_header", ""]
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(out.tobytes())


# ---------------------------------------------------------------------------
# Images


def read_image(path) -> np.ndarray:
    """Load an 8-bit image as float64 in [0, 1]; RGBA stays 4-channel."""
    with Image.open(path) as img:
        if img.mode not in ("RGB", "RGBA"):
            img = img.convert("RGBA" if "A" in img.mode else "RGB")
        return np.asarray(img, dtype=np.float64) / 255.0


def write_image(path, image: np.ndarray):
    """Write a float image (values clamped to [0, 1]) as an 8-bit PNG."""
    image = np.nan_to_num(image, nan=0.0, posinf=1.0, neginf=0.0)
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)


def write_depth_png(path, depth: np.ndarray, near: float, far: float):
    """Write a depth map as 16-bit grayscale, linearly mapping near..far."""
    norm = (depth - near) / (far - near)
    norm = np.where(np.isfinite(norm), np.clip(norm, 0.0, 1.0), 1.0)
    data = np.round(norm * 65535.0).astype(np.uint16)
    Image.fromarray(data).save(path)


# ---------------------------------------------------------------------------
# Datasets (Blender-style transforms manifests)


@dataclass
class DatasetManifest:
    """Posed images: cameras, float images in [0, 1], and their names."""

    cameras: list[Camera]
    images: list[np.ndarray]
    names: list[str]
    background: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __len__(self) -> int:
        return len(self.cameras)


def camera_from_gl(transform: np.ndarray, fov_x: float, width: int, height: int,
                   near: float = 0.01, far: float = 100.0) -> Camera:
    """Convert an OpenGL-convention camera-to-world matrix into a Camera."""
    transform = np.asarray(transform, dtype=np.float64).reshape(4, 4)
    c2w = transform.copy()
    c2w[:3, :3] = transform[:3, :3] @ _GL_FLIP
    return Camera.from_fov(c2w, fov_x=fov_x, width=width, height=height,
                           near=near, far=far)


def camera_to_gl(camera: Camera) -> np.ndarray:
    out = camera.camera_to_world.copy()
    out[:3, :3] = camera.camera_to_world[:3, :3] @ _GL_FLIP
    return out


def load_dataset(path, background: str | np.ndarray = "white") -> DatasetManifest:
    """Load a transforms manifest and its frames.

    ``background`` selects how RGBA frames are flattened: "white" or "black"
    composite over that color, "from-alpha" keeps the stored RGB untouched.
    A sibling meta.json (written by the synthetic generator) can override the
    background and the camera near/far planes.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    manifest = json.loads(path.read_text())
    near, far = 0.01, 100.0
    meta_path = path.parent / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        near = float(meta.get("near", near))
        far = float(meta.get("far", far))
        if "background" in meta and isinstance(background, str) and background != "from-alpha":
            background = np.asarray(meta["background"], dtype=np.float64)

    if isinstance(background, str):
        if background == "from-alpha":
            bg_color = None
        elif background in BACKGROUNDS:
            bg_color = BACKGROUNDS[background]
        else:
            raise DatasetError(f"unknown background policy {background!r}")
    else:
        bg_color = np.asarray(background, dtype=np.float64).reshape(3)

    fov_x = float(manifest["camera_angle_x"])
    cameras, images, names = [], [], []
    size = None
    for frame in manifest["frames"]:
        file_path = Path(frame["file_path"])
        if not file_path.suffix:
            file_path = file_path.with_suffix(".png")
        full = path.parent / file_path
        if not full.exists():
            raise DatasetError(f"missing frame image: {full}")
        img = read_image(full)
        if img.ndim == 3 and img.shape[2] == 4:
            if bg_color is None:
                img = img[..., :3]
            else:
                a = img[..., 3:4]
                img = img[..., :3] * a + bg_color * (1.0 - a)
        if size is None:
            size = img.shape[:2]
        elif img.shape[:2] != size:
            raise DatasetError(
                f"frame {full} has size {img.shape[:2]}, expected {size}"
            )
        h, w = img.shape[:2]
        cameras.append(camera_from_gl(frame["transform_matrix"], fov_x, w, h,
                                      near=near, far=far))
        images.append(img)
        names.append(file_path.stem)
    return DatasetManifest(
        cameras=cameras, images=images, names=names,
        background=np.ones(3) if bg_color is None else bg_color,
    )


def write_manifest(path, cameras: list[Camera], names: list[str]):
    frames = [
        {
            "file_path": name,
            "transform_matrix": camera_to_gl(cam).tolist(),
        }
        for cam, name in zip(cameras, names)
    ]
    fov_x = 2.0 * math.atan(0.5 * cameras[0].width / cameras[0].fx)
    payload = {"camera_angle_x": fov_x, "frames": frames}
    Path(path).write_text(json.dumps(payload, indent=1))


def load_split(root) -> tuple[DatasetManifest, DatasetManifest | None]:
    """Load transforms_train.json (and transforms_test.json if present) from a directory."""
    root = Path(root)
    train_path = root / "transforms_train.json"
    if not train_path.exists():
        raise DatasetError(f"no transforms_train.json under {root}")
    train = load_dataset(train_path)
    test_path = root / "transforms_test.json"
    test = load_dataset(test_path) if test_path.exists() else None
    return train, test


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass
class SynthConfig:
    """Knobs for synthetic ground-truth scenes and their rendered datasets."""

    count: int = 1
    view_count: int = 10
    heldout_count: int = 2
    image_size: int = 128
    fov_deg: float = 50.0
    extent: float = 1.0
    camera_distance: float = 3.2    # multiples of extent
    max_tilt_deg: float = 35.0
    texture: np.ndarray | None = None   # defaults to the checkerboard + glyph
    gt_texels: int = 200_000
    sh_degree: int = 1
    sh_amplitude: float = 0.02
    opacity_logit: float = 12.0
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    # random-kind knobs: primitive size range (relative to extent) and the
    # value range of the random texels
    random_scale_range: tuple[float, float] = (0.08, 0.35)
    random_texel_range: tuple[float, float] = (0.0, 1.0)


def checkerboard_glyph_texture(size: int = 256, cells: int = 8) -> np.ndarray:
    """Default ground-truth texture: a checkerboard with a hand-drawn glyph.

    Values stay inside [0.2, 0.85] so a few hundred optimizer steps can reach
    them from a mid-gray start.
    """
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cell = size // cells
    checker = ((xx // cell) + (yy // cell)) % 2
    light = np.array([0.80, 0.76, 0.70])
    dark = np.array([0.25, 0.30, 0.38])
    img = np.where(checker[..., None] == 0, light, dark)

    u = (xx + 0.5) / size * 2.0 - 1.0
    v = (yy + 0.5) / size * 2.0 - 1.0
    ring = np.abs(np.hypot(u, v) - 0.62) < 0.10
    bar = (np.abs(u + v) < 0.12) & (np.hypot(u, v) < 0.62)
    tick = (np.abs(u - 0.05) < 0.08) & (v > -0.45) & (v < 0.1)
    glyph = ring | bar | tick
    img[glyph] = np.array([0.72, 0.22, 0.25])
    return img


def sample_image_bilinear(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Clamped bilinear lookup of an (H, W, 3) image at pixel coordinates."""
    h, w = image.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x), 0, max(w - 2, 0)).astype(np.int64)
    y0 = np.clip(np.floor(y), 0, max(h - 2, 0)).astype(np.int64)
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return (
        image[y0, x0] * ((1 - fx) * (1 - fy))[..., None]
        + image[y0, x1] * (fx * (1 - fy))[..., None]
        + image[y1, x0] * ((1 - fx) * fy)[..., None]
        + image[y1, x1] * (fx * fy)[..., None]
    )


def _f32(a: np.ndarray) -> np.ndarray:
    """Quantize to float32 values (kept in float64) so files round-trip bitwise."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _ring_cameras(cfg: SynthConfig, seed: int, full_sphere: bool) -> list[Camera]:
    rng = np.random.default_rng(seed + 1)
    dist = cfg.camera_distance * cfg.extent
    fov = math.radians(cfg.fov_deg)
    cams = []
    for k in range(cfg.view_count):
        az = 2.0 * math.pi * k / cfg.view_count
        if full_sphere:
            tilt = math.radians(20.0 + 140.0 * ((k * 7) % cfg.view_count) / cfg.view_count)
        else:
            tilt = math.radians(cfg.max_tilt_deg * (0.35 + 0.65 * ((k * 3) % cfg.view_count) / cfg.view_count))
        eye = dist * np.array([
            math.sin(tilt) * math.cos(az),
            math.sin(tilt) * math.sin(az),
            math.cos(tilt),
        ])
        target = rng.normal(0.0, 1e-3, 3) * cfg.extent
        cams.append(Camera.look_at(
            eye, target, fov_x=fov, width=cfg.image_size, height=cfg.image_size,
            near=0.05, far=4.0 * dist,
        ))
    return cams


def _fill_from_image(scene: Scene, image: np.ndarray, extent: float):
    """Fill every texel by sampling an image spread over [-extent, extent]^2 in xy."""
    from .atlas import texel_centers

    centers = texel_centers(scene)
    h, w = image.shape[:2]
    px = (centers[:, 0] + extent) / (2.0 * extent) * w - 0.5
    py = (centers[:, 1] + extent) / (2.0 * extent) * h - 0.5
    scene.atlas.texels[:] = _f32(sample_image_bilinear(image, px, py))


def _synthetic_layout(kind: str, cfg: SynthConfig, rng: np.random.Generator):
    """Primitive geometry for one synthetic kind; all values float32-exact."""
    if kind == "plane":
        n = 1
        positions = np.zeros((1, 3))
        quats = np.array([[1.0, 0.0, 0.0, 0.0]])
        scales = _f32(np.full((1, 2), cfg.extent / 3.0))
    elif kind == "grid":
        side = math.isqrt(cfg.count)
        if side * side != cfg.count:
            raise ValueError(f"grid count must be a perfect square, got {cfg.count}")
        n = cfg.count
        spacing = 2.0 * cfg.extent / side
        line = -cfg.extent + spacing * (np.arange(side) + 0.5)
        gx, gy = np.meshgrid(line, line, indexing="xy")
        positions = _f32(np.stack([gx.ravel(), gy.ravel(), np.zeros(n)], axis=1))
        quats = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        scales = _f32(np.full((n, 2), 0.8 * spacing))
    elif kind == "random":
        n = cfg.count
        lo, hi = cfg.random_scale_range
        positions = _f32(rng.uniform(-cfg.extent, cfg.extent, (n, 3)))
        raw = rng.normal(0.0, 1.0, (n, 4))
        quats = _f32(raw / np.linalg.norm(raw, axis=1, keepdims=True))
        scales = _f32(np.exp(rng.uniform(np.log(lo), np.log(hi), (n, 2))) * cfg.extent)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if kind == "random":
        logits = _f32(rng.uniform(-1.0, 3.0, n))
    else:
        logits = np.full(n, float(np.float32(cfg.opacity_logit)))
    return positions, quats, scales, logits


def make_synthetic(kind: str, cfg: SynthConfig, seed: int = 0) -> tuple[Scene, DatasetManifest]:
    """Build a textured ground-truth scene and render a posed dataset from it.

    Kinds: "plane" (one primitive), "grid" (count primitives tiling the plane,
    count must be a perfect square), "random" (scattered primitives with random
    texels). Deterministic for a fixed seed; the returned images are exactly
    the renders of the returned scene through the returned cameras.
    """
    rng = np.random.default_rng(seed)
    k_res = RESIDUAL_COUNTS[cfg.sh_degree]
    background = np.asarray(cfg.background, dtype=np.float64)
    positions, quats, scales, logits = _synthetic_layout(kind, cfg, rng)
    n = positions.shape[0]
    residual = _f32(rng.normal(0.0, cfg.sh_amplitude, (n, k_res, 3))) if k_res else np.zeros((n, 0, 3))

    scene = Scene(
        positions=positions, quats=quats, scales=scales, opacity_logits=logits,
        sh_residual=residual, sh_degree=cfg.sh_degree, background=background,
    )
    area = float((36.0 * scales[:, 0] * scales[:, 1]).sum())
    rho = float(np.float32(math.sqrt(area / cfg.gt_texels)))
    scene.atlas = TextureAtlas.allocate(scene.scales, rho)
    if kind == "random":
        t_lo, t_hi = cfg.random_texel_range
        scene.atlas.texels[:] = _f32(rng.uniform(t_lo, t_hi, (scene.atlas.total, 3)))
    else:
        texture = cfg.texture if cfg.texture is not None else checkerboard_glyph_texture()
        _fill_from_image(scene, texture, cfg.extent)
    scene.validate()

    cameras = _ring_cameras(cfg, seed, full_sphere=(kind == "random"))
    images = [np.clip(render(scene, cam).color, 0.0, 1.0) for cam in cameras]
    names = [f"r_{k}" for k in range(len(cameras))]
    manifest = DatasetManifest(cameras=cameras, images=images, names=names,
                               background=background.copy())
    return scene, manifest


def fit_scene_for_grid(cfg: SynthConfig, seed: int = 0) -> Scene:
    """Untextured grid scene to fit against a dataset: gray base color, zero residuals.

    Every sweep cell starts from this same seed-derived state, so cells are
    comparable; only the primitive count and texel budget vary.
    """
    rng = np.random.default_rng(seed)
    positions, quats, scales, logits = _synthetic_layout("grid", cfg, rng)
    n = positions.shape[0]
    k_res = RESIDUAL_COUNTS[cfg.sh_degree]
    return Scene(
        positions=positions, quats=quats, scales=scales, opacity_logits=logits,
        sh_residual=np.zeros((n, k_res, 3)), sh_degree=cfg.sh_degree,
        sh_dc=np.zeros((n, 3)), background=np.asarray(cfg.background, dtype=np.float64),
    )


def strip_textures(scene: Scene) -> Scene:
    """Untextured copy of a textured scene, the analog of a first-stage model.

    The base color per primitive is the inverse affine map of the mean texel;
    everything else is carried over unchanged.
    """
    if scene.atlas is None:
        raise ValueError("scene is already untextured")
    means = np.stack([scene.atlas.map_view(i).mean(axis=(0, 1)) for i in range(scene.n)])
    out = Scene(
        positions=scene.positions.copy(), quats=scene.quats.copy(),
        scales=scene.scales.copy(), opacity_logits=scene.opacity_logits.copy(),
        sh_residual=scene.sh_residual.copy(), sh_degree=scene.sh_degree,
        sh_dc=_f32((means - 0.5) / SH_C0), background=scene.background.copy(),
    )
    return out


def write_dataset(root, manifest: DatasetManifest, train_count: int,
                  meta: dict | None = None):
    """Write PNG frames plus train/test transforms manifests (and meta.json)."""
    root = Path(root)
    (root / "train").mkdir(parents=True, exist_ok=True)
    (root / "test").mkdir(parents=True, exist_ok=True)
    splits = {
        "train": range(train_count),
        "test": range(train_count, len(manifest)),
    }
    for split, indices in splits.items():
        names = []
        cams = []
        for idx in indices:
            name = f"./{split}/{manifest.names[idx]}"
            write_image(root / split / f"{manifest.names[idx]}.png", manifest.images[idx])
            names.append(name)
            cams.append(manifest.cameras[idx])
        if cams:
            write_manifest(root / f"transforms_{split}.json", cams, names)
    if meta is not None:
        (root / "meta.json").write_text(json.dumps(meta, indent=1))
