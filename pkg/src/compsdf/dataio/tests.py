import tempfile
from pathlib import Path

import imageio.v3 as iio
import numpy as np
import torch
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from compsdf.common.testing import two_box_scene
from compsdf.dataio.baker import bake_dataset, bake_frame, look_at, orbit_cameras
from compsdf.dataio.io import load_dataset, validate, write_dataset
from compsdf.dataio.schema import Camera, SceneNormalization
from compsdf.geometry.primitives import AnalyticScene
from compsdf.training.losses import solve_depth_scale_shift


def unit_sphere_scene() -> AnalyticScene:
    return AnalyticScene.from_dict({
        'bounds': [[-4.0] * 3, [4.0] * 3],
        'primitives': [{'kind': 'sphere', 'center': [0.0, 0.0, 0.0], 'radius': 1.0}],
    })


def camera_at(position, target, size: int = 65, focal: float = 60.0) -> Camera:
    c2w = look_at(np.asarray(position, dtype=np.float64), np.asarray(target, dtype=np.float64))
    return Camera(
        fx=focal, fy=focal, cx=size / 2, cy=size / 2, width=size, height=size,
        c2w=tuple(tuple(float(v) for v in row) for row in c2w),
    )


class SceneNormalizationTestCase(SimpleTestCase):
    def test_bounds_map_inside_unit_cube(self):
        normalization = SceneNormalization.for_bounds([-2.0, -1.0, -1.0], [2.0, 1.0, 1.0])
        corners = np.array([[-2.0, -1.0, -1.0], [2.0, 1.0, 1.0]])
        unit = normalization.to_unit(corners)
        self.assertTrue(np.all(unit > 0.0) and np.all(unit < 1.0))
        np.testing.assert_allclose(normalization.to_unit(np.zeros(3)), [0.5, 0.5, 0.5])
        np.testing.assert_allclose(normalization.from_unit(unit), corners)

    def test_rejects_non_positive_scale(self):
        with self.assertRaises(ValidationError):
            SceneNormalization.from_dict({'center': [0, 0, 0], 'scale': 0.0})


class CameraTestCase(SimpleTestCase):
    def test_centre_pixel_looks_at_target(self):
        camera = camera_at([-3.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        camera.clean()
        origins, directions = camera.pixel_rays(np.array([32 * 65 + 32]))
        np.testing.assert_allclose(origins[0], [-3.0, 0.0, 0.0])
        np.testing.assert_allclose(directions[0], [1.0, 0.0, 0.0], atol=1e-12)

    def test_image_rows_go_down(self):
        camera = camera_at([-3.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        _origins, directions = camera.pixel_rays(np.array([0, 64 * 65]))
        self.assertGreater(directions[0, 2], 0.0)
        self.assertLess(directions[1, 2], 0.0)

    def test_frame_conversion_round_trip(self):
        camera = orbit_cameras(two_box_scene(), 5)[3]
        vectors = np.random.default_rng(0).normal(size=(10, 3))
        np.testing.assert_allclose(camera.to_world_frame(camera.to_camera_frame(vectors)), vectors, atol=1e-12)
        np.testing.assert_allclose(camera.to_camera_frame(camera.rotation[:, 2]), [0.0, 0.0, 1.0], atol=1e-12)

    def test_rejects_invalid_cameras(self):
        good = camera_at([-3.0, 0.0, 0.0], [0.0, 0.0, 0.0]).as_dict()
        skewed = {**good, 'c2w': [[1.0, 0.1, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0, 0, 0, 1]]}
        for data in ({**good, 'fx': 0.0}, skewed, {key: value for key, value in good.items() if key != 'cy'}):
            with self.subTest(data=data), self.assertRaises(ValidationError):
                Camera.from_dict(data)
        self.assertEqual(Camera.from_dict(good), Camera.from_dict(good))

    def test_orbit_cameras_stay_inside_bounds(self):
        scene = two_box_scene()
        cameras = orbit_cameras(scene, 8, width=16, height=16)
        self.assertEqual(len(cameras), 8)
        for camera in cameras:
            self.assertTrue(np.all(camera.position > scene.bounds[0]) and np.all(camera.position < scene.bounds[1]))
            _origins, directions = camera.pixel_rays(np.array([8 * 16 + 8]))
            towards = scene.center - camera.position
            cosine = directions[0] @ towards / np.linalg.norm(towards)
            self.assertGreater(cosine, 0.99)


class BakeTestCase(SimpleTestCase):
    def test_sphere_silhouette_depth(self):
        frame = bake_frame(unit_sphere_scene(), camera_at([-3.0, 0.0, 0.0], [0.0, 0.0, 0.0]))
        self.assertEqual(frame.mask[32, 32], 0)
        self.assertAlmostEqual(float(frame.depth[32, 32]), 2.0, delta=1.1e-5)
        np.testing.assert_allclose(frame.normal[32, 32], [0.0, 0.0, -1.0], atol=1e-5)

    def test_miss_pixels_are_invalid(self):
        frame = bake_frame(unit_sphere_scene(), camera_at([-3.0, 0.0, 0.0], [0.0, 0.0, 0.0]))
        self.assertEqual(frame.depth[0, 0], 0.0)
        np.testing.assert_array_equal(frame.rgb[0, 0], [0, 0, 0])
        np.testing.assert_array_equal(frame.normal[0, 0], [0.0, 0.0, 0.0])

    def test_background_pixel(self):
        scene = two_box_scene()
        frame = bake_frame(scene, camera_at([-1.8, 0.0, 0.5], [0.0, 0.0, 0.5]))
        self.assertEqual(frame.mask[32, 32], 0)
        self.assertAlmostEqual(float(frame.depth[32, 32]), 3.8, delta=1.1e-5)

    def test_mask_and_normals_follow_the_analytic_scene(self):
        scene = two_box_scene(with_far_sphere=True)
        camera = orbit_cameras(scene, 4, width=24, height=24)[0]
        frame = bake_frame(scene, camera)
        pixel_ids = np.arange(24 * 24)
        origins, directions = camera.pixel_rays(pixel_ids)
        trace = scene.sphere_trace(origins, directions)
        hit = trace.hit
        points = origins[hit] + trace.t[hit, None] * directions[hit]
        gradient = scene.analytic_gradient(points)
        expected = np.argmin(scene.eval_sdf(points).objects, axis=-1)
        np.testing.assert_array_equal(frame.mask.reshape(-1)[hit], expected)
        keep = ~gradient.scene_flags
        world = camera.to_world_frame(frame.normal.reshape(-1, 3)[hit].astype(np.float64))
        np.testing.assert_allclose(world[keep], gradient.scene[keep], atol=1e-6)
        self.assertGreater(len(np.unique(frame.mask)), 2)

    def test_camera_without_geometry_fails(self):
        with self.assertRaises(ValidationError) as cm:
            bake_frame(unit_sphere_scene(), camera_at([-3.0, 0.0, 0.0], [-6.0, 0.0, 0.0], size=9))
        self.assertEqual(cm.exception.code, 'no_geometry')

    def test_dataset_needs_background(self):
        scene = unit_sphere_scene()
        with self.assertRaises(ValidationError) as cm:
            bake_dataset(scene, [camera_at([-3.0, 0.0, 0.0], [0.0, 0.0, 0.0], size=9)], threads=1)
        self.assertEqual(cm.exception.code, 'background')

    def test_planted_depth_corruption_is_recovered(self):
        scene = two_box_scene()
        cameras = orbit_cameras(scene, 3, width=32, height=32)
        clean = bake_dataset(scene, cameras, seed=5, threads=2)
        noisy = bake_dataset(scene, cameras, seed=5, depth_noise=True, threads=2)
        self.assertIsNone(clean.meta['depth_corruption'])
        for frame, corrupted, planted in zip(clean.frames, noisy.frames, noisy.meta['depth_corruption']):
            valid = frame.valid
            alignment = solve_depth_scale_shift(
                torch.from_numpy(corrupted.depth[valid].astype(np.float64)),
                torch.from_numpy(frame.depth[valid].astype(np.float64)),
            )
            self.assertAlmostEqual(float(alignment.scale[0]), 1.0 / planted['scale'], delta=1e-6)
            self.assertAlmostEqual(float(alignment.shift[0]), -planted['shift'] / planted['scale'], delta=1e-6)

    def test_bake_is_deterministic(self):
        scene = two_box_scene()
        cameras = orbit_cameras(scene, 2, width=16, height=16)
        first = bake_dataset(scene, cameras, seed=1, depth_noise=True, threads=1)
        second = bake_dataset(scene, cameras, seed=1, depth_noise=True, threads=2)
        for a, b in zip(first.frames, second.frames):
            np.testing.assert_array_equal(a.rgb, b.rgb)
            np.testing.assert_array_equal(a.depth, b.depth)
        self.assertEqual(first.meta, second.meta)


class DatasetIoTestCase(SimpleTestCase):
    def setUp(self):
        scene = two_box_scene()
        self.dataset = bake_dataset(scene, orbit_cameras(scene, 3, width=16, height=12), seed=2, threads=1)

    def test_round_trip(self):
        with tempfile.TemporaryDirectory() as directory:
            write_dataset(directory, self.dataset)
            loaded = load_dataset(directory)
        self.assertEqual(loaded.num_objects, self.dataset.num_objects)
        self.assertEqual(loaded.normalization, self.dataset.normalization)
        for original, read in zip(self.dataset.frames, loaded.frames):
            np.testing.assert_array_equal(read.rgb, original.rgb)
            np.testing.assert_array_equal(read.mask, original.mask)
            np.testing.assert_array_equal(read.depth, original.depth)
            np.testing.assert_array_equal(read.normal, original.normal)
            self.assertEqual(read.camera, original.camera)

    def test_files_are_byte_identical(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            write_dataset(first, self.dataset)
            write_dataset(second, self.dataset)
            names = sorted(p.relative_to(first) for p in Path(first).rglob('*') if p.is_file())
            self.assertEqual(names, sorted(p.relative_to(second) for p in Path(second).rglob('*') if p.is_file()))
            for name in names:
                self.assertEqual((Path(first) / name).read_bytes(), (Path(second) / name).read_bytes(), msg=name)

    def test_out_of_range_mask_is_reported(self):
        with tempfile.TemporaryDirectory() as directory:
            write_dataset(directory, self.dataset)
            path = Path(directory) / 'mask' / '0001.png'
            mask = np.asarray(iio.imread(path)).copy()
            mask[3, 4] = self.dataset.num_objects
            iio.imwrite(path, mask.astype(np.uint16))

            report = validate(directory)
            self.assertEqual(len(report.violations), 1)
            self.assertEqual((report.violations[0].frame, report.violations[0].code), (1, 'mask_range'))
            with self.assertRaises(ValidationError):
                load_dataset(directory)
            self.assertEqual(len(load_dataset(directory, strict=False)), 2)

    def test_missing_file_is_reported(self):
        with tempfile.TemporaryDirectory() as directory:
            write_dataset(directory, self.dataset)
            (Path(directory) / 'depth' / '0002.bin').unlink()
            report = validate(directory)
        self.assertEqual([(v.frame, v.code) for v in report.violations], [(2, 'missing_file')])

    def test_empty_directory(self):
        with tempfile.TemporaryDirectory() as directory:
            report = validate(directory)
            with self.assertRaises(ValidationError) as cm:
                load_dataset(directory)
        self.assertEqual([v.code for v in report.violations], ['no_frames'])
        self.assertIn('no_frames', [error.code for error in cm.exception.error_list])
