import numpy as np
import pytest

from texsplat.atlas import TextureAtlas, init_from_sh0, texel_size_for_budget
from texsplat.optim import OptimizeConfig, optimize
from texsplat.scene import Scene
from texsplat.sceneio import SynthConfig, make_synthetic, strip_textures


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(0.0, 1.0, 4)
    q /= np.linalg.norm(q)
    from texsplat.geometry import quat_to_rotmat

    return quat_to_rotmat(q)


def random_scene(seed: int, count: int = 8, image_size: int = 32,
                 view_count: int = 2, gt_texels: int = 200,
                 sh_degree: int = 1):
    """Small random textured scene plus its rendered views."""
    cfg = SynthConfig(count=count, view_count=view_count, heldout_count=0,
                      image_size=image_size, gt_texels=gt_texels,
                      sh_degree=sh_degree, background=(0.0, 0.0, 0.0))
    return make_synthetic("random", cfg, seed=seed)


def plane_setup(seed: int = 0, image_size: int = 128, view_count: int = 10,
                heldout: int = 2):
    """Ground-truth plane scene with train/held-out split."""
    cfg = SynthConfig(view_count=view_count, heldout_count=heldout,
                      image_size=image_size)
    gt, manifest = make_synthetic("plane", cfg, seed=seed)
    split = len(manifest) - heldout
    return gt, manifest, split


def fitted_scene_from(gt, budget: int):
    """Untextured copy of a ground-truth scene, allocated and initialized."""
    scene = strip_textures(gt)
    rho = texel_size_for_budget(scene.scales, budget)
    scene.atlas = TextureAtlas.allocate(scene.scales, rho)
    init_from_sh0(scene)
    return scene
