import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from compsdf.common.testing import two_box_scene
from compsdf.geometry.primitives import AnalyticScene, Primitive, PrimitiveKind


def sphere_scene(radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> AnalyticScene:
    return AnalyticScene.from_dict({
        'bounds': [[-4.0] * 3, [4.0] * 3],
        'primitives': [{'kind': 'sphere', 'center': list(center), 'radius': radius}],
    })


class EvalSdfTestCase(SimpleTestCase):
    def test_sphere_examples(self):
        scene = sphere_scene()
        values = scene.eval_sdf(np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])).scene
        self.assertEqual(values[0], -1.0)
        self.assertAlmostEqual(values[1], math.sqrt(3) - 1, places=12)

    def test_scene_value_is_channel_minimum(self):
        scene = two_box_scene(with_far_sphere=True)
        points = np.random.default_rng(0).uniform(-2.0, 2.0, size=(1000, 3))
        sdf = scene.eval_sdf(points)
        self.assertTrue(np.array_equal(sdf.scene, sdf.objects.min(axis=-1)))

    def test_box_distance(self):
        box = Primitive(PrimitiveKind.BOX, (0.0, 0.0, 0.0), 1, half_extents=(1.0, 1.0, 1.0))
        self.assertEqual(box.distance(np.array([0.0, 0.0, 2.0])), 1.0)
        self.assertEqual(box.distance(np.array([0.0, 0.0, 0.5])), -0.5)
        self.assertAlmostEqual(float(box.distance(np.array([2.0, 2.0, 0.0]))), math.sqrt(2), places=12)

    def test_plane_distance(self):
        plane = Primitive(PrimitiveKind.PLANE, (0.0, 0.0, 1.0), 1, normal=(0.0, 0.0, 1.0), offset=0.5)
        self.assertEqual(plane.distance(np.array([3.0, -2.0, 2.0])), 0.5)

    def test_background_is_positive_inside(self):
        scene = two_box_scene()
        sdf = scene.eval_sdf(np.array([[0.0, 0.9, 0.0]])).objects
        self.assertAlmostEqual(float(sdf[0, 0]), 0.1, places=12)

    def test_sign_matches_containment(self):
        rng = np.random.default_rng(1)
        scene = AnalyticScene.from_dict({
            'bounds': [[-1.0] * 3, [1.0] * 3],
            'primitives': [
                {'kind': 'sphere', 'center': [0.3, 0.0, 0.0], 'radius': 0.4},
                {'kind': 'box', 'center': [-0.4, 0.2, 0.0], 'half_extents': [0.2, 0.3, 0.4]},
            ],
        })
        points = rng.uniform(-1.0, 1.0, size=(10000, 3))
        self.assertTrue(np.array_equal(scene.eval_sdf(points).scene < 0, scene.contains(points)))


class AnalyticGradientTestCase(SimpleTestCase):
    def test_examples(self):
        sphere = sphere_scene()
        grad = sphere.analytic_gradient(np.array([[2.0, 0.0, 0.0], [2.0, 2.0, 2.0] / np.sqrt(3)]))
        np.testing.assert_allclose(grad.scene[0], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(grad.scene[1], np.ones(3) / np.sqrt(3), atol=1e-15)

        box = Primitive(PrimitiveKind.BOX, (0.0, 0.0, 0.0), 0, half_extents=(1.0, 1.0, 1.0))
        grad, flags = box.gradient(np.array([0.0, 0.0, 2.0]))
        np.testing.assert_array_equal(grad, [0.0, 0.0, 1.0])
        self.assertFalse(flags)

    def test_unit_norm_everywhere(self):
        rng = np.random.default_rng(2)
        points = rng.uniform(-3.0, 3.0, size=(10000, 3))
        primitives = [
            Primitive(PrimitiveKind.SPHERE, (0.1, 0.2, 0.3), 0, radius=1.0),
            Primitive(PrimitiveKind.BOX, (0.0, 0.0, 0.0), 0, half_extents=(1.0, 0.5, 0.7)),
            Primitive(PrimitiveKind.BOX, (0.0, 0.0, 0.0), 0, half_extents=(1.0, 0.5, 0.7), inverted=True),
            Primitive(PrimitiveKind.PLANE, (0.0, 0.0, 0.0), 0, normal=(0.0, 0.6, 0.8)),
        ]
        for primitive in primitives:
            grad, flags = primitive.gradient(points)
            norms = np.linalg.norm(grad[~flags], axis=-1)
            self.assertLessEqual(float(np.abs(norms - 1.0).max()), 1e-12, msg=primitive.kind)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        scene = two_box_scene(with_far_sphere=True)
        points = rng.uniform(-1.5, 1.5, size=(200, 3)) * [1.0, 0.6, 0.6]
        grad = scene.analytic_gradient(points)
        eps = 1e-6
        numeric = np.stack([
            (scene.eval_sdf(points + eps * e).objects - scene.eval_sdf(points - eps * e).objects) / (2 * eps)
            for e in np.eye(3)
        ], axis=-1)
        keep = ~grad.flags
        np.testing.assert_allclose(grad.objects[keep], numeric[keep], atol=1e-5)

    def test_flags_box_edges_and_equidistant_points(self):
        box = Primitive(PrimitiveKind.BOX, (0.0, 0.0, 0.0), 0, half_extents=(1.0, 1.0, 1.0))
        _grad, flags = box.gradient(np.array([[0.5, 0.5, 0.0], [0.5, 0.0, 0.0]]))
        np.testing.assert_array_equal(flags, [True, False])

        scene = two_box_scene()
        gradient = scene.analytic_gradient(np.array([[0.0, 0.0, 0.0], [-0.2, 0.0, 0.0]]))
        np.testing.assert_array_equal(gradient.scene_flags, [True, False])


class SphereTraceTestCase(SimpleTestCase):
    def test_hits_sphere(self):
        scene = sphere_scene()
        result = scene.sphere_trace(np.array([[-3.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
        self.assertTrue(result.hit[0])
        self.assertAlmostEqual(float(result.t[0]), 2.0, delta=1e-5)
        self.assertEqual(result.object_id[0], 0)

    def test_miss(self):
        scene = sphere_scene()
        result = scene.sphere_trace(np.array([[-3.0, 0.0, 0.0]]), np.array([[-1.0, 0.0, 0.0]]))
        self.assertFalse(result.hit[0])
        self.assertEqual(result.object_id[0], -1)
        self.assertTrue(np.isinf(result.t[0]))
        self.assertFalse(result.exhausted[0])

    def test_nearer_box_wins(self):
        scene = two_box_scene()
        result = scene.sphere_trace(np.array([[-1.8, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
        self.assertEqual(result.object_id[0], 1)
        self.assertAlmostEqual(float(result.t[0]), 1.05, delta=2e-5)

    def test_depth_matches_closed_form(self):
        rng = np.random.default_rng(4)
        scene = sphere_scene(radius=0.8, center=(0.2, -0.1, 0.0))
        targets = rng.uniform(-0.3, 0.3, size=(200, 3)) + [0.2, -0.1, 0.0]
        origins = np.tile([-3.0, 0.0, 0.0], (200, 1))
        directions = targets - origins
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        result = scene.sphere_trace(origins, directions)

        offset = origins - np.array([0.2, -0.1, 0.0])
        b = np.sum(offset * directions, axis=-1)
        c = np.sum(offset * offset, axis=-1) - 0.64
        expected = -b - np.sqrt(b * b - c)
        self.assertTrue(result.hit.all())
        self.assertLessEqual(float(np.abs(result.t - expected).max()), 2e-5)

    def test_exhausted_budget(self):
        scene = sphere_scene()
        # Касательный луч: шаги сжимаются у поверхности.
        result = scene.sphere_trace(np.array([[-3.0, 1.0 + 1e-3, 0.0]]), np.array([[1.0, 0.0, 0.0]]), max_steps=2)
        self.assertFalse(result.hit[0])
        self.assertTrue(result.exhausted[0])

    def test_validation(self):
        scene = sphere_scene()
        with self.assertRaises(ValidationError):
            scene.sphere_trace(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]]), max_steps=0)
        with self.assertRaises(ValidationError):
            scene.sphere_trace(np.zeros((1, 3)), np.array([[2.0, 0.0, 0.0]]))


class SceneConfigTestCase(SimpleTestCase):
    def test_channels_follow_file_order(self):
        scene = two_box_scene(with_far_sphere=True)
        self.assertEqual(scene.num_objects, 4)
        self.assertEqual(scene.background_channel, 0)
        self.assertTrue(scene.primitives[0].inverted)
        self.assertEqual(scene.primitives[3].kind, PrimitiveKind.SPHERE)

    def test_toml_round_trip(self):
        scene = two_box_scene(with_far_sphere=True)
        text = '\n'.join([
            'bounds = [[-2.0, -1.0, -1.0], [2.0, 1.0, 1.0]]',
            '[background]',
            '[[primitives]]',
            'kind = "box"',
            'center = [-0.5, 0.0, 0.0]',
            'half_extents = [0.25, 0.25, 0.25]',
            'albedo = [0.8, 0.2, 0.2]',
            '[[primitives]]',
            'kind = "box"',
            'center = [0.5, 0.0, 0.0]',
            'half_extents = [0.25, 0.25, 0.25]',
            'albedo = [0.2, 0.2, 0.8]',
            '[[primitives]]',
            'kind = "sphere"',
            'center = [1.5, 0.7, 0.7]',
            'radius = 0.1',
        ])
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'scene.toml'
            path.write_text(text)
            loaded = AnalyticScene.from_toml(path)
        self.assertEqual(loaded, scene)
        self.assertEqual(AnalyticScene.from_dict(scene.to_dict()), scene)

    def test_rejects_invalid_scenes(self):
        cases = [
            {'bounds': [[-1.0] * 3, [1.0] * 3], 'primitives': [{'kind': 'sphere', 'radius': -1.0}]},
            {'bounds': [[-1.0] * 3, [1.0] * 3], 'primitives': [{'kind': 'sphere', 'center': [0.9, 0, 0], 'radius': 0.5}]},
            {'bounds': [[-1.0] * 3, [1.0] * 3], 'primitives': [{'kind': 'torus'}]},
            {'bounds': [[-1.0] * 3, [1.0] * 3], 'primitives': [{'kind': 'box', 'half_extents': [1, 0, 1]}]},
            {'bounds': [[-1.0] * 3, [1.0] * 3], 'primitives': [{'kind': 'plane', 'normal': [1, 1, 0]}]},
            {'bounds': [[-1.0] * 3, [1.0] * 3], 'lights': []},
            {'primitives': []},
        ]
        for data in cases:
            with self.subTest(data=data), self.assertRaises(ValidationError):
                AnalyticScene.from_dict(data)
