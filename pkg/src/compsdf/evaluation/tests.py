import numpy as np
import trimesh
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from scipy.spatial.distance import cdist

from compsdf.evaluation.metrics import compute_metrics, evaluate_meshes
from compsdf.meshing.mesh import Mesh


def plane_grid(z: float, count: int = 40) -> np.ndarray:
    xs = np.linspace(0.0, 1.0, count)
    x, y = np.meshgrid(xs, xs, indexing='ij')
    return np.stack([x.ravel(), y.ravel(), np.full(x.size, z)], axis=-1)


class ComputeMetricsTestCase(SimpleTestCase):
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        gt, pred = rng.uniform(-1, 1, size=(300, 3)), rng.uniform(-1, 1, size=(200, 3))
        for norm, metric in ((1, 'cityblock'), (2, 'euclidean')):
            with self.subTest(norm=norm):
                distances = cdist(gt, pred, metric=metric)
                accuracy, completeness = distances.min(axis=1).mean(), distances.min(axis=0).mean()
                precision = (distances.min(axis=1) < 0.2).mean()
                recall = (distances.min(axis=0) < 0.2).mean()
                report = compute_metrics(gt, pred, tau=0.2, norm=norm, workers=1)
                self.assertAlmostEqual(report.accuracy, accuracy, delta=1e-12)
                self.assertAlmostEqual(report.completeness, completeness, delta=1e-12)
                self.assertAlmostEqual(report.chamfer_l1, 0.5 * (accuracy + completeness), delta=1e-12)
                self.assertAlmostEqual(report.precision, precision, delta=1e-12)
                self.assertAlmostEqual(report.recall, recall, delta=1e-12)
                self.assertAlmostEqual(
                    report.f_score, 2 * precision * recall / (precision + recall), delta=1e-12,
                )

    def test_identical_clouds(self):
        points = np.random.default_rng(1).normal(size=(500, 3))
        report = compute_metrics(points, points)
        self.assertEqual(report.chamfer_l1, 0.0)
        self.assertEqual((report.precision, report.recall, report.f_score), (1.0, 1.0, 1.0))

    def test_shifted_plane(self):
        gt = plane_grid(0.0)
        near = compute_metrics(gt, plane_grid(0.03))
        self.assertAlmostEqual(near.chamfer_l1, 0.03, delta=1e-12)
        self.assertEqual((near.precision, near.recall, near.f_score), (1.0, 1.0, 1.0))

        far = compute_metrics(gt, plane_grid(0.10))
        self.assertAlmostEqual(far.chamfer_l1, 0.10, delta=1e-12)
        self.assertEqual((far.precision, far.recall, far.f_score), (0.0, 0.0, 0.0))

    def test_swapping_clouds(self):
        rng = np.random.default_rng(2)
        gt, pred = rng.uniform(size=(150, 3)), rng.uniform(size=(250, 3))
        forward, backward = compute_metrics(gt, pred, tau=0.1), compute_metrics(pred, gt, tau=0.1)
        self.assertAlmostEqual(forward.accuracy, backward.completeness, delta=1e-12)
        self.assertAlmostEqual(forward.precision, backward.recall, delta=1e-12)
        self.assertAlmostEqual(forward.chamfer_l1, backward.chamfer_l1, delta=1e-12)
        self.assertAlmostEqual(forward.f_score, backward.f_score, delta=1e-12)

    def test_threshold_is_monotone(self):
        rng = np.random.default_rng(3)
        gt, pred = rng.uniform(size=(200, 3)), rng.uniform(size=(200, 3))
        reports = [compute_metrics(gt, pred, tau=tau) for tau in (0.02, 0.05, 0.1, 0.3)]
        for smaller, larger in zip(reports, reports[1:]):
            self.assertLessEqual(smaller.precision, larger.precision)
            self.assertLessEqual(smaller.recall, larger.recall)

    def test_validation(self):
        points = np.zeros((4, 3))
        cases = (
            ((np.zeros((0, 3)), points), {}),
            ((points, np.zeros((0, 3))), {}),
            ((points, points), {'norm': 3}),
            ((points, points), {'tau': 0.0}),
        )
        for args, kwargs in cases:
            with self.subTest(kwargs=kwargs), self.assertRaises(ValidationError):
                compute_metrics(*args, **kwargs)


class EvaluateMeshesTestCase(SimpleTestCase):
    def setUp(self):
        box = trimesh.creation.box(extents=(1.0, 1.0, 1.0))
        self.mesh = Mesh(np.asarray(box.vertices, dtype=np.float64), np.asarray(box.faces, dtype=np.int64))

    def test_same_mesh(self):
        report = evaluate_meshes(self.mesh, self.mesh, count=20000, seed=4)
        self.assertEqual((report.chamfer_l1, report.f_score), (0.0, 1.0))

    def test_slightly_moved_mesh(self):
        moved = Mesh(self.mesh.vertices + 1e-3, self.mesh.triangles)
        report = evaluate_meshes(self.mesh, moved, count=20000, seed=4)
        self.assertLess(report.chamfer_l1, 0.02)
        self.assertGreater(report.f_score, 0.99)

    def test_scaled_mesh_scores_lower(self):
        larger = Mesh(self.mesh.vertices * 1.5, self.mesh.triangles)
        report = evaluate_meshes(self.mesh, larger, count=20000, seed=4)
        self.assertGreater(report.chamfer_l1, 0.2)
        self.assertLess(report.f_score, 0.1)

    def test_empty_mesh(self):
        with self.assertRaises(ValidationError):
            evaluate_meshes(self.mesh, Mesh.empty())
