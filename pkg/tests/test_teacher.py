import numpy as np
import pytest

from smerf.scene import Ray
from smerf.teacher import (
    AnalyticScene,
    AnalyticTeacher,
    Box,
    Specular,
    Sphere,
    teacher_patch,
    teacher_query,
)


def one_box_scene(density=8.0, specular=None):
    return AnalyticScene(
        primitives=[
            Box(center=[0.0, 0.0, 0.0], size=[0.5, 0.5, 0.5], density=density,
                albedo=[0.8, 0.2, 0.1], specular=specular)
        ],
        background=[0.6, 0.7, 0.9],
        near=0.05,
        far=3.0,
    )


def fine_quadrature_weights(scene, ray, boundaries, samples_per_interval=10_000):
    """Independent oracle: dense midpoint compositing of the density field."""

    def density_at(pts):
        total = np.zeros(pts.shape[0])
        for p in scene.primitives:
            if isinstance(p, Box):
                lo = p.center - p.size / 2
                hi = p.center + p.size / 2
                inside = np.all((pts > lo) & (pts < hi), axis=1)
            else:
                inside = np.linalg.norm(pts - p.center, axis=1) < p.radius
            total += p.density * inside
        return total

    weights = []
    log_t = 0.0
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        ts = np.linspace(a, b, samples_per_interval + 1)
        mids = (ts[:-1] + ts[1:]) / 2
        dt = (b - a) / samples_per_interval
        sig = density_at(ray.origin[None] + mids[:, None] * ray.direction[None])
        tau = sig * dt
        t_start = np.exp(log_t)
        log_t -= tau.sum()
        weights.append(t_start - np.exp(log_t))
    return np.array(weights)


class TestTeacherQuery:
    def test_miss_returns_background(self):
        scene = one_box_scene()
        ray = Ray(origin=[0, 0, -2], direction=[0, 0, -1])
        resp = teacher_query(ray, scene)
        np.testing.assert_allclose(resp.color, scene.background)
        np.testing.assert_allclose(resp.intervals.weights, 0.0)

    def test_opaque_box_saturates(self):
        scene = one_box_scene(density=100.0)
        ray = Ray(origin=[0, 0, -2], direction=[0, 0, 1])
        resp = teacher_query(ray, scene)
        assert resp.intervals.weights.sum() == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(resp.color, [0.8, 0.2, 0.1], atol=1e-6)

    def test_weights_match_fine_quadrature(self):
        scene = AnalyticScene(
            primitives=[
                Box(center=[0, 0, 0], size=[0.5, 0.5, 0.5], density=6.0, albedo=[0.8, 0.2, 0.1]),
                Sphere(center=[0.3, 0.2, 0.4], radius=0.25, density=4.0, albedo=[0.1, 0.6, 0.3]),
            ],
            background=[1.0, 1.0, 1.0],
            near=0.05,
            far=3.0,
        )
        rng = np.random.default_rng(0)
        for _ in range(5):
            o = rng.uniform(-1, 1, size=3) * np.array([1, 1, 0]) - np.array([0, 0, 1.5])
            d = np.array([0.1, 0.1, 1.0]) + rng.normal(scale=0.2, size=3)
            d /= np.linalg.norm(d)
            ray = Ray(origin=o, direction=d)
            resp = teacher_query(ray, scene)
            ref = fine_quadrature_weights(scene, ray, resp.intervals.boundaries)
            np.testing.assert_allclose(resp.intervals.weights, ref, atol=1e-4)

    def test_self_compositing_reproduces_color(self):
        scene = one_box_scene(density=5.0, specular=Specular(color=[0.2, 0.2, 0.2], light=[0, 0, -1]))
        rng = np.random.default_rng(1)
        for _ in range(10):
            o = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), -1.5])
            d = np.array([rng.normal(scale=0.3), rng.normal(scale=0.3), 1.0])
            d /= np.linalg.norm(d)
            resp = teacher_query(Ray(origin=o, direction=d), scene)
            t_end = 1.0 - resp.intervals.weights.sum()
            recomposed = (
                resp.intervals.weights[:, None] * resp.interval_colors
            ).sum(axis=0) + t_end * scene.background
            np.testing.assert_allclose(recomposed, resp.color, atol=1e-3)

    def test_weights_sum_below_one(self):
        scene = one_box_scene(density=50.0)
        rng = np.random.default_rng(2)
        for _ in range(30):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            resp = teacher_query(Ray(origin=rng.uniform(-1, 1, 3), direction=d), scene)
            assert resp.intervals.weights.sum() <= 1.0 + 1e-9

    def test_specular_varies_with_direction(self):
        spec = Specular(color=[0.3, 0.3, 0.3], light=[0, 0, -1], power=4.0)
        scene = one_box_scene(density=200.0, specular=spec)
        head_on = teacher_query(Ray(origin=[0, 0, -2], direction=[0, 0, 1]), scene)
        d = np.array([0.6, 0.0, 1.0])
        d /= np.linalg.norm(d)
        oblique = teacher_query(Ray(origin=[-1.2, 0, -2], direction=d), scene)
        assert head_on.color[2] > oblique.color[2]


class TestTeacherPatch:
    def test_batches_match_single(self):
        scene = one_box_scene()
        rays = []
        for r in range(3):
            for c in range(3):
                d = np.array([0.02 * c, 0.02 * r, 1.0])
                d /= np.linalg.norm(d)
                rays.append(Ray(origin=np.array([0.0, 0.0, -2.0]), direction=d))
        colors, responses = teacher_patch(rays, scene)
        assert colors.shape == (3, 3, 3)
        for i, ray in enumerate(rays):
            single = teacher_query(ray, scene)
            np.testing.assert_allclose(responses[i].color, single.color)
            np.testing.assert_allclose(
                responses[i].intervals.weights, single.intervals.weights
            )

    def test_wrong_count_rejected(self):
        scene = one_box_scene()
        with pytest.raises(ValueError):
            teacher_patch([Ray(origin=[0, 0, 0], direction=[0, 0, 1])] * 4, scene)


class TestOracleInterface:
    def test_analytic_provider(self):
        teacher = AnalyticTeacher(one_box_scene(), num_intervals=16)
        resp = teacher.query(Ray(origin=[0, 0, -2], direction=[0, 0, 1]))
        assert resp.intervals.weights.shape == (16,)
        assert resp.intervals.boundaries.shape == (17,)
