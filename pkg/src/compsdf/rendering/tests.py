import math

import numpy as np
import torch
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from compsdf.common.testing import central_difference, random_scene, relative_error, tiny_field, two_box_scene
from compsdf.dataio.schema import Camera, SceneNormalization
from compsdf.rendering.rays import RayBundle, make_samples, sample_pdf, sample_ray, stratified_depths
from compsdf.rendering.renderer import AnalyticDensity, VolumeRenderer, bundle_from_world, render_image
from compsdf.rendering.volume import (
    OpacityVariant, composite, density_from_sdf, render_object_opacity, variant_opacity,
)


def single_ray(origin, direction, near, far) -> RayBundle:
    return RayBundle(
        origins=torch.tensor([origin], dtype=torch.float64),
        directions=torch.tensor([direction], dtype=torch.float64),
        near=torch.tensor([near], dtype=torch.float64),
        far=torch.tensor([far], dtype=torch.float64),
    )


class DensityTestCase(SimpleTestCase):
    def test_examples(self):
        sdf = torch.tensor([0.0, -0.1], dtype=torch.float64)
        sigma = density_from_sdf(sdf, 0.1)
        self.assertAlmostEqual(float(sigma[0]), 5.0, places=12)
        self.assertAlmostEqual(float(sigma[1]), 10.0 - 5.0 * math.exp(-1.0), places=12)

    def test_limits_and_monotonicity(self):
        sdf = torch.linspace(-5.0, 5.0, 10001, dtype=torch.float64)
        sigma = density_from_sdf(sdf, 0.1)
        self.assertTrue(bool((sigma[1:] <= sigma[:-1]).all()))
        self.assertLess(float(sigma[-1]), 1e-12)
        self.assertAlmostEqual(float(sigma[0]), 10.0, places=9)
        self.assertTrue(bool((sigma >= 0).all()))

    def test_derivative_is_continuous_at_zero(self):
        sdf = torch.tensor([-1e-12, 0.0, 1e-12], dtype=torch.float64, requires_grad=True)
        grad, = torch.autograd.grad(density_from_sdf(sdf, 0.1).sum(), sdf)
        expected = -0.5 / 0.1 ** 2
        for value in grad.tolist():
            self.assertAlmostEqual(value, expected, places=6)

    def test_large_distances_stay_finite(self):
        sdf = torch.tensor([-1e6, 1e6], dtype=torch.float64, requires_grad=True)
        sigma = density_from_sdf(sdf, 1e-3)
        grad, = torch.autograd.grad(sigma.sum(), sdf)
        self.assertTrue(bool(torch.isfinite(sigma).all()))
        self.assertTrue(bool(torch.isfinite(grad).all()))


class SamplingTestCase(SimpleTestCase):
    def setUp(self):
        self.scene = two_box_scene()
        self.density = AnalyticDensity(self.scene, beta=0.01)

    def test_stratified_only(self):
        bundle = single_ray((-1.8, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0, 3.8)
        samples = sample_ray(bundle, 16, 0, None, seed=3)
        _t, edges = stratified_depths(bundle, 16, None)
        self.assertEqual(samples.t.shape, (1, 16))
        self.assertTrue(bool((samples.t[0] >= edges[0, :-1]).all()))
        self.assertTrue(bool((samples.t[0] < edges[0, 1:]).all()))

    def test_samples_are_sorted_and_inside_bounds(self):
        rng = np.random.default_rng(0)
        directions = rng.normal(size=(64, 3))
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        bundle = self.density.bundle(rng.uniform(-0.9, 0.9, size=(64, 3)), directions)
        samples = sample_ray(bundle, 32, 32, self.density.scene_sigma, seed=1)
        self.assertTrue(bool((samples.t[:, 1:] > samples.t[:, :-1]).all()))
        self.assertTrue(bool((samples.deltas > 0).all()))
        self.assertTrue(bool((samples.t >= bundle.near[:, None]).all()))
        self.assertTrue(bool((samples.t <= bundle.far[:, None]).all()))
        span = bundle.far - bundle.near
        self.assertTrue(bool((samples.deltas.sum(dim=-1) <= span + samples.deltas[:, -1] + 1e-12).all()))

    def test_same_seed_same_samples(self):
        bundle = single_ray((-1.8, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0, 3.8)
        first = sample_ray(bundle, 32, 32, self.density.scene_sigma, seed=7)
        second = sample_ray(bundle, 32, 32, self.density.scene_sigma, seed=7)
        other = sample_ray(bundle, 32, 32, self.density.scene_sigma, seed=8)
        self.assertTrue(torch.equal(first.t, second.t))
        self.assertFalse(torch.equal(first.t, other.t))

    def test_ray_stream_does_not_depend_on_batch(self):
        rng = np.random.default_rng(1)
        directions = rng.normal(size=(10, 3))
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        bundle = self.density.bundle(rng.uniform(-0.5, 0.5, size=(10, 3)), directions)
        whole = sample_ray(bundle, 16, 16, self.density.scene_sigma, seed=5, ray_ids=np.arange(10))
        part = sample_ray(bundle.subset(slice(4, 7)), 16, 16, self.density.scene_sigma, seed=5, ray_ids=np.arange(4, 7))
        self.assertTrue(torch.equal(whole.t[4:7], part.t))

    def test_fine_samples_concentrate_at_surface(self):
        bundle = single_ray((-1.8, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0, 3.8)
        n_coarse, n_fine = 64, 64
        uniforms_free = sample_ray(bundle, n_coarse, 0, None, seed=2)
        coarse_weights = self.density.render(uniforms_free).weights[0]
        _t, edges = stratified_depths(bundle, n_coarse, None)
        top = torch.argsort(coarse_weights, descending=True)[:n_coarse // 5]

        merged = sample_ray(bundle, n_coarse, n_fine, self.density.scene_sigma, seed=2)
        fine = merged.t[0][~torch.isin(merged.t[0], uniforms_free.t[0])]
        self.assertEqual(fine.numel(), n_fine)
        bins = torch.searchsorted(edges[0], fine, right=True) - 1
        share = float(torch.isin(bins, top).double().mean())
        self.assertGreaterEqual(share, 0.8)

    def test_zero_weights_fall_back_to_uniform(self):
        edges = torch.linspace(0.0, 1.0, 9, dtype=torch.float64)[None]
        uniforms = torch.linspace(0.0, 0.999, 1000, dtype=torch.float64)[None]
        samples = sample_pdf(edges, torch.zeros(1, 8, dtype=torch.float64), uniforms)
        torch.testing.assert_close(samples, uniforms)

    def test_requires_two_coarse_samples(self):
        bundle = single_ray((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0, 1.0)
        with self.assertRaises(ValidationError):
            sample_ray(bundle, 1, 0, None, seed=0)


class CompositeTestCase(SimpleTestCase):
    def test_constant_density_converges(self):
        bundle = single_ray((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0, 0.5)
        samples = make_samples(bundle, stratified_depths(bundle, 4096, None)[0])
        outputs = composite(samples, torch.full_like(samples.t, 2.0))
        self.assertLess(abs(float(outputs.opacity[0]) - (1.0 - math.exp(-1.0))), 1e-4)

    def test_vacuum(self):
        bundle = single_ray((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0, 1.0)
        samples = make_samples(bundle, stratified_depths(bundle, 32, None)[0])
        colors = torch.rand(1, 32, 3, dtype=torch.float64)
        outputs = composite(samples, torch.zeros_like(samples.t), colors=colors)
        self.assertEqual(float(outputs.opacity[0]), 0.0)
        self.assertEqual(outputs.color.abs().sum().item(), 0.0)

    def test_opaque_surface_shows_its_color(self):
        scene = two_box_scene()
        density = AnalyticDensity(scene, beta=1e-3)
        bundle = single_ray((-1.8, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0, 3.8)
        samples = density.samples(bundle, 4096, perturb=False)
        sigma = density.scene_sigma(samples.points.reshape(-1, 3)).reshape(samples.t.shape)
        color = torch.tensor([0.3, 0.6, 0.9], dtype=torch.float64)
        outputs = composite(samples, sigma, colors=color.expand(1, 4096, 3))
        self.assertGreater(float(outputs.opacity[0]), 0.999)
        torch.testing.assert_close(outputs.color[0], color, atol=1e-3, rtol=0)
        # Передняя грань первой коробки на x = -0.75.
        self.assertAlmostEqual(float(outputs.depth[0]), 1.05, delta=0.01)

    def test_negative_density_rejected(self):
        bundle = single_ray((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0, 1.0)
        samples = make_samples(bundle, stratified_depths(bundle, 4, None)[0])
        with self.assertRaises(ValidationError):
            composite(samples, -torch.ones_like(samples.t))


class ObjectOpacityTestCase(SimpleTestCase):
    def setUp(self):
        self.density = AnalyticDensity(two_box_scene(with_far_sphere=True), beta=1e-3)
        self.bundle = single_ray((-1.8, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0, 3.8)
        self.samples = self.density.samples(self.bundle, 1024, seed=0)

    def test_front_object_absorbs_the_ray(self):
        opacity = self.density.render(self.samples).object_opacity[0]
        self.assertGreater(float(opacity[1]), 0.99)
        self.assertLess(float(opacity[2]), 0.01)
        self.assertLess(float(opacity[3]), 1e-6)

    def test_per_object_transmittance_ignores_occlusion(self):
        e1 = self.density.variant_opacity(self.samples, OpacityVariant.E1)[0]
        aware = self.density.variant_opacity(self.samples, OpacityVariant.OCCLUSION_AWARE)[0]
        self.assertGreater(float(e1[2]), 0.99)
        self.assertLess(float(aware[2]), 0.01)

    def test_semantic_variant_is_bounded(self):
        semantic = self.density.variant_opacity(self.samples, 'semantic')
        self.assertTrue(bool((semantic >= 0).all()) and bool((semantic <= 1).all()))
        self.assertGreater(float(semantic[0, 1]), 0.9)

    def test_semantic_variant_needs_sdf(self):
        sigma = torch.ones(1, 1024, 2, dtype=torch.float64)
        with self.assertRaises(ValidationError):
            variant_opacity(self.samples, sigma, OpacityVariant.SEMANTIC)

    def test_single_object_equals_scene(self):
        sigma = density_from_sdf(torch.randn(8, 64, 1, dtype=torch.float64), 0.05)
        bundle = RayBundle(
            torch.zeros(8, 3, dtype=torch.float64),
            torch.tensor([[1.0, 0.0, 0.0]] * 8, dtype=torch.float64),
            torch.zeros(8, dtype=torch.float64),
            torch.ones(8, dtype=torch.float64),
        )
        samples = make_samples(bundle, stratified_depths(bundle, 64, None)[0])
        outputs = composite(samples, object_sigma=sigma)
        self.assertTrue(torch.equal(outputs.object_opacity[:, 0], outputs.opacity))
        e1 = variant_opacity(samples, sigma, OpacityVariant.E1)
        torch.testing.assert_close(e1, outputs.object_opacity, atol=1e-12, rtol=0)

    def test_standalone_matches_composite(self):
        outputs = self.density.render(self.samples)
        sigma = self.density.object_sigma(self.samples.points.reshape(-1, 3)).reshape(1, 1024, -1)
        standalone = render_object_opacity(self.samples, sigma, outputs.transmittance)
        torch.testing.assert_close(standalone, outputs.object_opacity, atol=1e-12, rtol=0)

    def test_random_scenes_keep_opacity_order(self):
        rng = np.random.default_rng(2024)
        for _index in range(5):
            density = AnalyticDensity(random_scene(rng), beta=float(rng.uniform(1e-3, 0.1)))
            directions = rng.normal(size=(2000, 3))
            directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
            bundle = density.bundle(rng.uniform(-0.9, 0.9, size=(2000, 3)), directions)
            outputs = density.render(density.samples(bundle, 64, seed=int(rng.integers(1 << 30))))
            scene = outputs.opacity
            objects = outputs.object_opacity
            self.assertTrue(bool((objects >= 0).all()))
            self.assertTrue(bool((objects <= scene[:, None]).all()))
            self.assertTrue(bool((scene <= 1).all()))
            self.assertLessEqual(float((outputs.weights.sum(dim=-1) - scene).abs().max()), 1e-12)

    def test_quadrature_converges_monotonically(self):
        density = AnalyticDensity(two_box_scene(), beta=0.05)
        rng = np.random.default_rng(5)
        origins = np.column_stack([np.full(32, -1.8), rng.uniform(-0.3, 0.3, size=(32, 2))])
        directions = np.tile([1.0, 0.0, 0.0], (32, 1))
        bundle = density.bundle(origins, directions)

        def opacity(n: int) -> torch.Tensor:
            return density.render(density.samples(bundle, n, perturb=False)).object_opacity

        differences = [float((opacity(n) - opacity(4 * n)).abs().mean()) for n in (64, 128, 256, 512)]
        for coarse, fine in zip(differences, differences[1:]):
            self.assertLess(fine, coarse)


class VolumeRendererTestCase(SimpleTestCase):
    def setUp(self):
        self.field = tiny_field(num_objects=3)
        self.renderer = VolumeRenderer(self.field, n_coarse=8, n_fine=8)
        rng = np.random.default_rng(0)
        directions = rng.normal(size=(6, 3))
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        self.bundle, _valid = bundle_from_world(
            rng.uniform(-0.5, 0.5, size=(6, 3)), directions, SceneNormalization((0.0, 0.0, 0.0), 0.5),
            dtype=torch.float64,
        )
        self.samples = self.renderer.sample(self.bundle, seed=0)

    def _objective(self) -> torch.Tensor:
        outputs = self.renderer.render_samples(self.bundle, self.samples, create_graph=True)
        return (
            outputs.color.sum() + outputs.depth.sum() + outputs.normal.sum()
            + outputs.opacity.sum() + outputs.object_opacity.sum()
        )

    def test_outputs(self):
        outputs = self.renderer.render_samples(self.bundle, self.samples)
        self.assertEqual(outputs.color.shape, (6, 3))
        self.assertEqual(outputs.object_opacity.shape, (6, 3))
        self.assertTrue(bool((outputs.object_opacity <= outputs.opacity[:, None]).all()))

    def test_gradients_match_finite_differences(self):
        self.field.zero_grad()
        self._objective().backward()
        checks = [
            (self.field.log_beta, ()),
            (self.field.sdf_layers[0].weight, (3, 1)),
            (self.field.sdf_layers[-1].bias, (1,)),
            (self.field.color_layers[0].weight, (2, 5)),
            (self.field.encoding.grid.tables[0], (62, 1)),
        ]
        for tensor, index in checks:
            analytic = float(tensor.grad[index])
            numeric = central_difference(self._objective, tensor, index)
            self.assertLess(relative_error(analytic, numeric), 1e-4, msg=f'{tensor.shape} {index}')


class RenderImageTestCase(SimpleTestCase):
    def test_image_layout_and_misses(self):
        field = tiny_field(num_objects=2)
        renderer = VolumeRenderer(field, n_coarse=4, n_fine=0)
        # Камера снаружи куба смотрит от него: ни один луч не попадает.
        camera = Camera(
            fx=4.0, fy=4.0, cx=2.0, cy=2.0, width=4, height=3,
            c2w=((1.0, 0.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0), (0.0, 0.0, 1.0, 5.0), (0.0, 0.0, 0.0, 1.0)),
        )
        image = render_image(renderer, camera, SceneNormalization((0.0, 0.0, 0.0), 0.25), seed=0)
        self.assertEqual(image.rgb.shape, (3, 4, 3))
        self.assertEqual(image.object_opacity.shape, (3, 4, 2))
        self.assertEqual(float(np.abs(image.depth).sum()), 0.0)

        looking_in = Camera(
            fx=4.0, fy=4.0, cx=2.0, cy=2.0, width=4, height=3,
            c2w=((1.0, 0.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0), (0.0, 0.0, 1.0, -1.0), (0.0, 0.0, 0.0, 1.0)),
        )
        image = render_image(renderer, looking_in, SceneNormalization((0.0, 0.0, 0.0), 0.25), seed=0, chunk=5)
        self.assertTrue(bool((image.depth > 0).all()))
        self.assertTrue(bool(((image.rgb >= 0) & (image.rgb <= 1)).all()))
