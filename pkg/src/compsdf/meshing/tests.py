import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from scipy import stats
from scipy.spatial import cKDTree

from compsdf.common.testing import tiny_field
from compsdf.dataio.schema import SceneNormalization
from compsdf.geometry.primitives import AnalyticScene
from compsdf.meshing.extraction import (
    SdfLattice,
    channel_overlap,
    evaluate_lattice,
    extract_mesh,
    mesh_from_lattice,
    parse_channel,
)
from compsdf.meshing.mesh import Mesh, sample_surface, sample_surface_points


def spheres_scene(*spheres) -> AnalyticScene:
    return AnalyticScene.from_dict({
        'bounds': [[-1.5] * 3, [1.5] * 3],
        'primitives': [{'kind': 'sphere', 'center': list(center), 'radius': radius} for center, radius in spheres],
    })


class ExtractMeshTestCase(SimpleTestCase):
    def test_unit_sphere(self):
        scene = spheres_scene(((0.0, 0.0, 0.0), 1.0))
        mesh = extract_mesh(scene, 'scene', resolution=128, threads=2)
        h = 3.0 * 1.1 / 127
        radii = np.linalg.norm(mesh.vertices, axis=-1)
        self.assertGreaterEqual(radii.min(), 1.0 - 2 * h)
        self.assertLessEqual(radii.max(), 1.0 + 2 * h)

        exact = np.random.default_rng(0).normal(size=(50000, 3))
        exact /= np.linalg.norm(exact, axis=-1, keepdims=True)
        samples = sample_surface_points(mesh, 50000, seed=0)
        chamfer = 0.5 * (cKDTree(samples).query(exact)[0].mean() + cKDTree(exact).query(samples)[0].mean())
        self.assertLess(chamfer, h)

    def test_closed_surface_is_watertight(self):
        scene = spheres_scene(((0.1, -0.2, 0.0), 0.7))
        mesh = extract_mesh(scene, 0, resolution=48, threads=1)
        edges = np.sort(np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]]), axis=1)
        _unique, counts = np.unique(edges, axis=0, return_counts=True)
        self.assertTrue(np.all(counts == 2))
        self.assertTrue(mesh.to_trimesh().is_watertight)

    def test_constant_positive_field_is_empty(self):
        lattice = SdfLattice(values=np.ones((8, 8, 8, 1)), lower=np.zeros(3), spacing=np.ones(3))
        with self.assertLogs('compsdf.meshing.extraction', level='WARNING'):
            mesh = mesh_from_lattice(lattice, 'scene')
        self.assertTrue(mesh.is_empty)

    def test_scene_mesh_is_union_of_channels(self):
        scene = spheres_scene(((-0.7, 0.0, 0.0), 0.5), ((0.7, 0.2, 0.0), 0.4))
        lattice = evaluate_lattice(scene, 64, threads=2)
        h = float(lattice.spacing.max())
        whole = mesh_from_lattice(lattice, 'scene').vertices
        parts = np.concatenate([mesh_from_lattice(lattice, k).vertices for k in range(2)])
        hausdorff = max(cKDTree(parts).query(whole)[0].max(), cKDTree(whole).query(parts)[0].max())
        self.assertLess(hausdorff, 2 * h)

    def test_object_channel(self):
        scene = spheres_scene(((-0.7, 0.0, 0.0), 0.5), ((0.7, 0.2, 0.0), 0.4))
        mesh = extract_mesh(scene, 1, resolution=64, threads=1)
        self.assertEqual(mesh.object_id, 1)
        center = np.mean(mesh.vertices, axis=0)
        np.testing.assert_allclose(center, [0.7, 0.2, 0.0], atol=0.02)

    def test_field_source(self):
        field = tiny_field(num_objects=3)
        normalization = SceneNormalization(center=(0.0, 0.0, 0.0), scale=0.25)
        mesh = extract_mesh(field, 1, resolution=16, normalization=normalization, threads=1)
        self.assertFalse(mesh.is_empty)
        # Начальная сфера объекта лежит внутри куба нормализации.
        self.assertLess(np.abs(mesh.vertices).max(), 2.0)
        with self.assertRaises(ValidationError):
            extract_mesh(field, 1, resolution=16)

    def test_validation(self):
        scene = spheres_scene(((0.0, 0.0, 0.0), 1.0))
        with self.assertRaises(ValidationError):
            extract_mesh(scene, 'scene', resolution=4)
        with self.assertRaises(ValidationError):
            extract_mesh(scene, 3, resolution=8)
        self.assertEqual(parse_channel('scene'), 'scene')
        self.assertEqual(parse_channel('obj:2'), 2)
        for text in ('obj', 'obj:x', 'object:1'):
            with self.subTest(text=text), self.assertRaises(ValidationError):
                parse_channel(text)


class ChannelOverlapTestCase(SimpleTestCase):
    def test_disjoint_and_overlapping(self):
        disjoint = evaluate_lattice(spheres_scene(((-0.7, 0, 0), 0.5), ((0.7, 0, 0), 0.5)), 32, threads=1)
        self.assertEqual(channel_overlap(disjoint, background_channel=None), {0: 0.0, 1: 0.0})

        overlapping = evaluate_lattice(spheres_scene(((-0.3, 0, 0), 0.5), ((0.3, 0, 0), 0.5)), 32, threads=1)
        overlap = channel_overlap(overlapping, background_channel=None)
        self.assertGreater(overlap[0], 0.05)
        self.assertAlmostEqual(overlap[0], overlap[1], places=6)

    def test_background_is_ignored(self):
        values = -np.ones((8, 8, 8, 2))
        lattice = SdfLattice(values=values, lower=np.zeros(3), spacing=np.ones(3))
        self.assertEqual(channel_overlap(lattice), {1: 0.0})


class MeshTestCase(SimpleTestCase):
    def setUp(self):
        # Два треугольника с площадями 1:3.
        self.mesh = Mesh(
            vertices=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                               [0.0, 0.0, 1.0], [3.0, 0.0, 1.0], [0.0, 2.0, 1.0]]),
            triangles=np.array([[0, 1, 2], [3, 4, 5]]),
        )

    def test_area_weighted_sampling(self):
        np.testing.assert_allclose(self.mesh.triangle_areas(), [0.5, 1.5])
        _points, faces = sample_surface(self.mesh, 4000, seed=3)
        observed = np.bincount(faces, minlength=2)
        _statistic, p_value = stats.chisquare(observed, [1000, 3000])
        self.assertGreater(p_value, 1e-3)

    def test_samples_lie_on_triangles(self):
        points, faces = sample_surface(self.mesh, 1000, seed=4)
        np.testing.assert_allclose(points[faces == 0, 2], 0.0, atol=1e-9)
        np.testing.assert_allclose(points[faces == 1, 2], 1.0, atol=1e-9)

    def test_fixed_seed(self):
        np.testing.assert_array_equal(sample_surface_points(self.mesh, 100, 7), sample_surface_points(self.mesh, 100, 7))
        with self.assertRaises(ValidationError):
            sample_surface_points(Mesh.empty(), 10, 0)

    def test_degenerate_triangles_are_dropped(self):
        mesh = Mesh(
            vertices=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 0.0, 0.0]]),
            triangles=np.array([[0, 1, 2], [0, 1, 3]]),
        )
        cleaned = mesh.without_degenerate()
        self.assertEqual(cleaned.triangles.shape, (1, 3))
        self.assertEqual(cleaned.vertices.shape, (3, 3))

    def test_file_round_trip(self):
        with tempfile.TemporaryDirectory() as directory:
            for name in ('mesh.ply', 'mesh.obj'):
                path = self.mesh.save(Path(directory) / name)
                loaded = Mesh.load(path)
                np.testing.assert_allclose(loaded.vertices, self.mesh.vertices)
                np.testing.assert_array_equal(loaded.triangles, self.mesh.triangles)
            ply = (Path(directory) / 'mesh.ply').read_bytes()
            self.assertIn(b'binary_little_endian', ply[:200])
            with self.assertRaises(ValidationError):
                self.mesh.save(Path(directory) / 'mesh.stl')
