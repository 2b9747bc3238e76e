import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from texsplat.geometry import (
    Intersection,
    Ray,
    TexturedGaussian,
    eval_alpha,
    eval_sh,
    intersect,
    quat_multiply,
    quat_to_rotmat,
    rotmat_to_quat,
    sh_basis,
)


def make_gaussian(position=(0.0, 0.0, 2.0), rotation=None, scale=(1.0, 1.0),
                  opacity_logit=100.0, sh=()):
    rotation = np.eye(3) if rotation is None else rotation
    return TexturedGaussian(
        position=position, rotation=rotation, scale=scale,
        opacity_logit=opacity_logit,
        sh_residual=np.zeros((0, 3)) if not len(sh) else sh,
    )


unit_vectors = st.builds(
    lambda v: v / np.linalg.norm(v),
    st.tuples(*([st.floats(-1, 1)] * 3)).map(np.array).filter(
        lambda v: np.linalg.norm(v) > 1e-3
    ),
)


class TestIntersect:
    def test_axis_aligned_plane(self):
        ray = Ray(origin=[0, 0, 0], direction=[0, 0, 1])
        hit = intersect(ray, make_gaussian(position=(0, 0, 2)))
        assert hit is not None
        assert hit.t == pytest.approx(2.0)
        np.testing.assert_allclose(hit.point, [0, 0, 2])

    def test_oblique_ray(self):
        # direct evaluation of t = n.(mu - o) / n.d
        ray = Ray(origin=[0, 0, 0], direction=[0, 0.6, 0.8])
        hit = intersect(ray, make_gaussian(position=(0, 0, 1)))
        assert hit.t == pytest.approx(1.25, abs=1e-12)
        np.testing.assert_allclose(hit.point, [0, 0.75, 1.0], atol=1e-12)

    def test_parallel_ray_misses(self):
        ray = Ray(origin=[0, 0, 0], direction=[1, 0, 0])
        assert intersect(ray, make_gaussian(position=(0, 0, 2))) is None

    def test_behind_origin_misses(self):
        ray = Ray(origin=[0, 0, 0], direction=[0, 0, 1])
        assert intersect(ray, make_gaussian(position=(0, 0, -2))) is None

    def test_hit_point_on_plane(self, rng):
        for _ in range(50):
            from conftest import random_rotation

            g = make_gaussian(position=rng.normal(0, 1, 3),
                              rotation=random_rotation(rng),
                              scale=rng.uniform(0.1, 2.0, 2))
            d = rng.normal(0, 1, 3)
            d /= np.linalg.norm(d)
            ray = Ray(origin=rng.normal(0, 1, 3), direction=d)
            hit = intersect(ray, g)
            if hit is None:
                continue
            offset = abs(g.normal @ (hit.point - g.position))
            assert offset < 1e-6 * max(1.0, np.linalg.norm(hit.point))
            np.testing.assert_allclose(hit.point, ray.origin + hit.t * d, atol=1e-12)


class TestEvalAlpha:
    def test_peak_at_mean(self):
        g = make_gaussian(opacity_logit=0.3)
        assert eval_alpha(g, g.position) == pytest.approx(g.opacity)

    def test_one_sigma(self):
        g = make_gaussian(opacity_logit=1e9)  # opacity -> 1
        x = g.position + g.scale[0] * g.r1
        assert eval_alpha(g, x) == pytest.approx(np.exp(-0.5), rel=1e-12)

    def test_three_sigma_corner_below_cutoff(self):
        g = make_gaussian(opacity_logit=1e9)
        x = g.position + 3 * g.scale[0] * g.r1 + 3 * g.scale[1] * g.r2
        value = eval_alpha(g, x)
        assert value == pytest.approx(np.exp(-9.0), rel=1e-12)
        assert value < 1.0 / 255.0

    def test_bounded_by_opacity(self, rng):
        g = make_gaussian(opacity_logit=0.7, scale=(0.5, 1.5))
        pts = rng.normal(0, 2, (200, 3))
        values = eval_alpha(g, pts)
        assert (values <= g.opacity + 1e-15).all()
        assert eval_alpha(g, g.position) == pytest.approx(g.opacity)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 31))
    def test_rigid_invariance(self, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(0, 1, 4)
        q /= np.linalg.norm(q)
        rot0 = quat_to_rotmat(q)
        g = make_gaussian(position=rng.normal(0, 1, 3), rotation=rot0,
                          scale=rng.uniform(0.2, 2.0, 2), opacity_logit=0.4)
        x = g.position + rng.normal(0, 1.5, 3)

        qr = rng.normal(0, 1, 4)
        qr /= np.linalg.norm(qr)
        rigid = quat_to_rotmat(qr)
        shift = rng.normal(0, 3, 3)
        g2 = make_gaussian(position=rigid @ g.position + shift,
                           rotation=rigid @ g.rotation,
                           scale=g.scale, opacity_logit=0.4)
        x2 = rigid @ x + shift
        a1 = float(eval_alpha(g, x))
        a2 = float(eval_alpha(g2, x2))
        assert a2 == pytest.approx(a1, rel=1e-9)


class TestEvalSh:
    def test_empty_coeffs(self):
        assert np.array_equal(eval_sh(np.zeros((0, 3)), np.array([0, 0, 1.0])),
                              np.zeros(3))

    def test_zero_coeffs(self, rng):
        d = rng.normal(0, 1, 3)
        d /= np.linalg.norm(d)
        np.testing.assert_array_equal(eval_sh(np.zeros((8, 3)), d), np.zeros(3))

    def test_against_table(self, rng):
        for k in (3, 8, 15):
            coeffs = rng.normal(0, 1, (k, 3))
            d = rng.normal(0, 1, 3)
            d /= np.linalg.norm(d)
            padded = np.vstack([coeffs, np.zeros((15 - k, 3))])
            np.testing.assert_allclose(
                eval_sh(coeffs, d),
                oracles.sh_residual_reference(padded, d),
                atol=1e-12,
            )

    def test_degree1_axis_direction(self):
        # coefficient rows follow (1,-1), (1,0), (1,1); at +z only (1,0) responds
        coeffs = np.zeros((3, 3))
        coeffs[0] = [1.0, 0, 0]
        value = eval_sh(coeffs, np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(value, [0.0, 0.0, 0.0], atol=1e-15)
        coeffs = np.zeros((3, 3))
        coeffs[1] = [1.0, 0, 0]
        value = eval_sh(coeffs, np.array([0.0, 0.0, 1.0]))
        assert value[0] == pytest.approx(0.4886025119029199)

    def test_rejects_bad_length(self):
        with pytest.raises(ValueError):
            eval_sh(np.zeros((5, 3)), np.array([0, 0, 1.0]))
        with pytest.raises(ValueError):
            eval_sh(np.zeros(7), np.array([0, 0, 1.0]))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), a=st.floats(-3, 3), b=st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        c1 = rng.normal(0, 1, (8, 3))
        c2 = rng.normal(0, 1, (8, 3))
        d = rng.normal(0, 1, 3)
        d /= np.linalg.norm(d)
        lhs = eval_sh(a * c1 + b * c2, d)
        rhs = a * eval_sh(c1, d) + b * eval_sh(c2, d)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(d=unit_vectors)
    def test_addition_theorem(self, d):
        # For an orthonormal real basis, sum_m Y_lm^2 = (2l+1) / (4 pi).
        basis = sh_basis(d, 3)
        slices = {1: slice(0, 3), 2: slice(3, 8), 3: slice(8, 15)}
        for degree, sl in slices.items():
            total = float((basis[sl] ** 2).sum())
            assert total == pytest.approx((2 * degree + 1) / (4 * np.pi), rel=1e-9)


class TestQuaternions:
    def test_identity(self):
        np.testing.assert_allclose(quat_to_rotmat(np.array([1.0, 0, 0, 0])), np.eye(3))

    def test_round_trip(self, rng):
        for _ in range(100):
            q = rng.normal(0, 1, 4)
            q /= np.linalg.norm(q)
            if q[0] < 0:
                q = -q
            rot = quat_to_rotmat(q)
            np.testing.assert_allclose(rotmat_to_quat(rot), q, atol=1e-12)
            np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)

    def test_multiply_matches_matrix_product(self, rng):
        qa = rng.normal(0, 1, 4)
        qa /= np.linalg.norm(qa)
        qb = rng.normal(0, 1, 4)
        qb /= np.linalg.norm(qb)
        np.testing.assert_allclose(
            quat_to_rotmat(quat_multiply(qa, qb)),
            quat_to_rotmat(qa) @ quat_to_rotmat(qb),
            atol=1e-12,
        )


class TestValidation:
    def test_bad_rotation_rejected(self):
        g = make_gaussian(rotation=np.eye(3) * 1.01)
        with pytest.raises(ValueError, match="orthonormal"):
            g.validate()

    def test_bad_scale_rejected(self):
        g = make_gaussian(scale=(0.0, 1.0))
        with pytest.raises(ValueError, match="positive"):
            g.validate()

    def test_atlas_bounds(self):
        g = make_gaussian()
        g.tex_width, g.tex_height, g.tex_offset = 4, 4, 10
        with pytest.raises(ValueError, match="atlas"):
            g.validate(atlas_size=20)

    def test_ray_unit_check(self):
        with pytest.raises(ValueError, match="unit"):
            Ray(origin=[0, 0, 0], direction=[0, 0, 2.0]).validate()
