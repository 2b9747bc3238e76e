"""Textured 2D Gaussian splatting: surfel-like primitives with per-primitive
texture maps, an exact ray-cast renderer, analytic-gradient photometric
optimization, and occlusion-aware texture editing."""

from .atlas import (
    TexelBudgetError,
    TextureAtlas,
    UV,
    allocate_dims,
    init_from_sh0,
    reinit_resample,
    sample_bilinear,
    solve_texel_size,
    texel_size_for_budget,
    uv_to_world,
    world_to_uv,
)
from .editing import EditImage, builtin_circles, builtin_stripes, paint, retexture
from .geometry import (
    Intersection,
    Ray,
    TexturedGaussian,
    eval_alpha,
    eval_sh,
    intersect,
)
from .metrics import psnr, ssim
from .optim import (
    GradientBuffer,
    LossReport,
    OptimizeConfig,
    adam_step,
    backward,
    loss,
    optimize,
)
from .renderer import Camera, RenderOutput, composite_ray, render, shade, sort_primitives
from .scene import Scene
from .sceneio import (
    DatasetManifest,
    SynthConfig,
    export_splat_ply,
    import_splat_ply,
    load_dataset,
    load_scene,
    make_synthetic,
    save_scene,
)

__version__ = "0.1.0"

__all__ = [
    "Camera", "DatasetManifest", "EditImage", "GradientBuffer", "Intersection",
    "LossReport", "OptimizeConfig", "Ray", "RenderOutput", "Scene", "SynthConfig",
    "TexelBudgetError", "TextureAtlas", "TexturedGaussian", "UV",
    "adam_step", "allocate_dims", "backward", "builtin_circles", "builtin_stripes",
    "composite_ray", "eval_alpha", "eval_sh", "export_splat_ply", "import_splat_ply",
    "init_from_sh0", "intersect", "load_dataset", "load_scene", "loss",
    "make_synthetic", "optimize", "paint", "psnr", "reinit_resample", "render",
    "retexture", "sample_bilinear", "save_scene", "shade", "solve_texel_size",
    "sort_primitives", "ssim", "texel_size_for_budget", "uv_to_world", "world_to_uv",
]
