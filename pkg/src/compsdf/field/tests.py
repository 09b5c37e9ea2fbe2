import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
import torch
from django.conf import settings
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from compsdf.common.exceptions import FieldError
from compsdf.common.testing import TINY_GRID, central_difference, relative_error, tiny_field
from compsdf.dataio.schema import SceneNormalization
from compsdf.field.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from compsdf.field.encoding import GridConfig, HashGrid, PointEncoding, hash_index, level_resolutions
from compsdf.field.network import CompositionalField, ModelConfig
from compsdf.training.config import RunConfig

CONFIGS_DIR = Path(settings.BASE_DIR).parent / 'configs'

DESK_GRID = GridConfig(levels=8, base_resolution=16, finest_resolution=256, table_size=2 ** 16)


def trilinear_oracle(grid: HashGrid, point: np.ndarray) -> np.ndarray:
    features = []
    for level, resolution in enumerate(grid.resolutions):
        table = grid.tables[level].detach().numpy()
        scaled = point * resolution
        cell = np.clip(np.floor(scaled).astype(int), 0, resolution - 1)
        local = scaled - cell
        value = np.zeros(table.shape[1])
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    weight = (
                        (local[0] if dx else 1 - local[0])
                        * (local[1] if dy else 1 - local[1])
                        * (local[2] if dz else 1 - local[2])
                    )
                    vertex = torch.tensor([[cell[0] + dx, cell[1] + dy, cell[2] + dz]])
                    value += weight * table[int(grid.vertex_index(level, vertex)[0])]
        features.append(value)
    return np.concatenate(features)


class LevelResolutionsTestCase(SimpleTestCase):
    def test_default_levels(self):
        resolutions = level_resolutions(GridConfig())
        self.assertEqual(len(resolutions), 16)
        self.assertEqual(resolutions[:3], [16, 22, 30])
        self.assertEqual(resolutions[-1], 2048)
        self.assertEqual(resolutions, sorted(resolutions))

    def test_two_levels(self):
        self.assertEqual(level_resolutions(GridConfig(levels=2, base_resolution=8, finest_resolution=100)), [8, 100])

    def test_valid_configs(self):
        self.assertEqual(GridConfig().primes, (1, 2654435761, 805459861))
        for config in (GridConfig(), TINY_GRID, DESK_GRID):
            with self.subTest(config=config):
                config.clean()
                self.assertEqual(len(HashGrid(config).tables), config.levels)
        GridConfig(use_grid=False).clean()
        RunConfig.from_toml(CONFIGS_DIR / 'desk.toml').grid.clean()

    def test_invalid_configs(self):
        cases = [
            {'levels': 1},
            {'base_resolution': 64, 'finest_resolution': 32},
            {'table_size': 1000},
            {'primes': (1, 2654435760, 805459861)},
            {'primes': (3, 2654435761, 805459861)},
            {'primes': (1, 2654435761, 1)},
            {'primes': (1, 2654435761, 2 ** 32 + 1)},
        ]
        for values in cases:
            with self.subTest(values=values), self.assertRaises(ValidationError):
                GridConfig(**values).clean()


class HashIndexTestCase(SimpleTestCase):
    def test_examples(self):
        config = GridConfig()
        cells = torch.tensor([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
        self.assertEqual(hash_index(cells, config).tolist(), [0, 1, 2654435761 % 2 ** 19])
        self.assertEqual(2654435761 % 2 ** 19, 489905)

    def test_matches_wrapping_arithmetic(self):
        config = GridConfig()
        cells = np.random.default_rng(0).integers(0, 4096, size=(1000, 3))
        expected = [
            (x ^ (y * config.primes[1]) % 2 ** 32 ^ (z * config.primes[2]) % 2 ** 32) % config.table_size
            for x, y, z in cells.tolist()
        ]
        self.assertEqual(hash_index(torch.from_numpy(cells), config).tolist(), expected)


class EncodingTestCase(SimpleTestCase):
    def setUp(self):
        self.grid = HashGrid(TINY_GRID, generator=torch.Generator().manual_seed(0)).double()
        with torch.no_grad():
            for table in self.grid.tables:
                table.uniform_(-1.0, 1.0)

    def test_dense_and_hashed_levels(self):
        self.assertEqual(self.grid.resolutions, [4, 8, 16, 32])
        self.assertEqual(self.grid.dense, [True, True, False, False])

    def test_vertex_returns_stored_feature(self):
        level = 1
        vertex = torch.tensor([[3, 5, 2]])
        point = vertex.double() / self.grid.resolutions[level]
        features = self.grid(point).reshape(len(self.grid.resolutions), -1)
        stored = self.grid.tables[level][self.grid.vertex_index(level, vertex)][0]
        torch.testing.assert_close(features[level], stored, atol=1e-15, rtol=0)

    def test_cell_centre_is_corner_mean(self):
        level = 2
        resolution = self.grid.resolutions[level]
        cell = torch.tensor([5, 6, 7])
        point = ((cell.double() + 0.5) / resolution)[None]
        corners = cell[None] + torch.tensor([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)])
        expected = self.grid.tables[level][self.grid.vertex_index(level, corners)].mean(dim=0)
        features = self.grid(point).reshape(len(self.grid.resolutions), -1)
        torch.testing.assert_close(features[level], expected, atol=1e-14, rtol=0)

    def test_matches_trilinear_oracle(self):
        points = np.random.default_rng(1).random((50, 3))
        features = self.grid(torch.from_numpy(points)).detach().numpy()
        for point, feature in zip(points, features):
            np.testing.assert_allclose(feature, trilinear_oracle(self.grid, point), atol=1e-12, rtol=0)

    def test_continuous_across_cell_boundaries(self):
        rng = np.random.default_rng(2)
        resolution = self.grid.resolutions[-1]
        for _index in range(100):
            start = rng.random(3)
            axis = int(rng.integers(3))
            boundary = np.floor(start[axis] * resolution + 1) / resolution
            if boundary >= 1.0:
                continue
            before, after = start.copy(), start.copy()
            before[axis] = boundary - 1e-12
            after[axis] = boundary + 1e-12
            values = self.grid(torch.from_numpy(np.stack([before, after]))).detach()
            self.assertLess(float((values[0] - values[1]).abs().max()), 1e-9)

    def test_out_of_cube_points_are_clamped(self):
        encoding = PointEncoding(TINY_GRID).double()
        inside = encoding(torch.tensor([[1.0, 0.5, 0.0]], dtype=torch.float64))
        outside = encoding(torch.tensor([[1.5, 0.5, -0.2]], dtype=torch.float64))
        torch.testing.assert_close(inside, outside)
        self.assertEqual(encoding.out_of_bounds, 1)
        self.assertEqual(encoding.out_dim, 3 + 6 * TINY_GRID.frequency_bands + 4 * 2)

    def test_plain_mlp_variant(self):
        config = GridConfig(use_grid=False, frequency_bands=6)
        field = CompositionalField(2, config, ModelConfig(hidden_dim=16, geometry_feature_dim=4))
        self.assertIsNone(field.encoding.grid)
        self.assertEqual(field.encoding.out_dim, 39)
        self.assertEqual([group['name'] for group in field.parameter_groups(1e-2, 5e-4)], ['mlp'])


class FieldForwardTestCase(SimpleTestCase):
    def test_scene_sdf_is_minimum(self):
        field = tiny_field(num_objects=4)
        points = torch.rand(500, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        output = field(points)
        self.assertTrue(torch.equal(output.scene_sdf, output.sdf.min(dim=-1).values))
        self.assertEqual(output.geometry_feature.shape, (500, 8))

    def test_deterministic(self):
        field = tiny_field()
        points = torch.rand(20, 3, dtype=torch.float64)
        first, second = field(points), field(points.clone())
        self.assertTrue(torch.equal(first.sdf, second.sdf))
        self.assertTrue(torch.equal(field(points[:1]).sdf, field(points[:1].clone()).sdf))

    def test_same_seed_same_parameters(self):
        first = CompositionalField(2, TINY_GRID, ModelConfig(hidden_dim=16), seed=5)
        second = CompositionalField(2, TINY_GRID, ModelConfig(hidden_dim=16), seed=5)
        for a, b in zip(first.parameters(), second.parameters()):
            self.assertTrue(torch.equal(a, b))

    def test_non_finite_activation_names_layer(self):
        field = tiny_field()
        with torch.no_grad():
            field.sdf_layers[0].weight[0, 0] = float('nan')
        with self.assertRaises(FieldError) as context:
            field(torch.full((3, 3), 0.5, dtype=torch.float64))
        self.assertEqual(context.exception.layer, 'sdf.0')

    def test_geometric_init(self):
        field = CompositionalField(3, DESK_GRID, ModelConfig(), background_channel=0, seed=0)
        origin = torch.full((1, 3), 0.5)
        sdf = field(origin).sdf[0]
        self.assertGreater(float(sdf[0]), 0.0)
        for channel in (1, 2):
            self.assertAlmostEqual(float(sdf[channel]), -0.225, delta=0.05)

        directions = torch.randn(2000, 3, generator=torch.Generator().manual_seed(1))
        directions = directions / directions.norm(dim=-1, keepdim=True)
        on_sphere = (0.9 * directions + 1.0) / 2.0
        background = field(on_sphere).sdf[:, 0]
        self.assertLess(float(background.abs().mean()), 0.05)

    def test_geometric_init_has_unit_gradient(self):
        field = CompositionalField(3, DESK_GRID, ModelConfig(), background_channel=0, seed=0)
        points = torch.rand(2000, 3, generator=torch.Generator().manual_seed(2))
        # Вне окрестности центра, где ‖p - 0.5‖ не дифференцируема.
        points = points[(points - 0.5).norm(dim=-1) > 0.1]
        norms = field.spatial_gradient(points).objects.norm(dim=-1).mean(dim=0)
        for channel, norm in enumerate(norms.tolist()):
            with self.subTest(channel=channel):
                self.assertAlmostEqual(norm, 1.0, delta=0.1)

    def test_object_radius_defaults_to_half(self):
        self.assertEqual(ModelConfig(background_radius=0.9).resolved_object_radius, 0.45)
        with self.assertRaises(ValidationError):
            ModelConfig(background_radius=0.6, object_radius=0.7).clean()

    def test_beta_stays_positive(self):
        field = tiny_field()
        with torch.no_grad():
            field.log_beta.fill_(-50.0)
        self.assertGreater(float(field.beta), 0.0)


class ColorTestCase(SimpleTestCase):
    def setUp(self):
        self.field = tiny_field()
        generator = torch.Generator().manual_seed(3)
        self.points = torch.rand(16, 3, dtype=torch.float64, generator=generator)
        views = torch.randn(16, 3, dtype=torch.float64, generator=generator)
        self.views = views / views.norm(dim=-1, keepdim=True)
        self.normals = -self.views
        self.feature = torch.randn(16, 8, dtype=torch.float64, generator=generator) * 5

    def _objective(self) -> torch.Tensor:
        return self.field.color(self.points, self.views, self.normals, self.feature).sum()

    def test_range_and_determinism(self):
        first = self.field.color(self.points, self.views, self.normals, self.feature)
        second = self.field.color(self.points, self.views, self.normals, self.feature)
        self.assertTrue(bool(((first >= 0) & (first <= 1)).all()))
        self.assertTrue(torch.equal(first, second))

    def test_parameter_gradient(self):
        self.field.zero_grad()
        self._objective().backward()
        for layer in self.field.color_layers:
            for tensor, index in ((layer.weight, (0, 1)), (layer.bias, (0,))):
                numeric = central_difference(self._objective, tensor, index)
                self.assertLess(relative_error(float(tensor.grad[index]), numeric), 1e-4)


class SpatialGradientTestCase(SimpleTestCase):
    def setUp(self):
        self.field = tiny_field(num_objects=3)

    def _interior_points(self, count: int, margin: float) -> torch.Tensor:
        """Points farther than ``margin`` (in cell units) from every cell boundary of every level."""
        rng = np.random.default_rng(4)
        candidates = rng.uniform(0.05, 0.95, size=(count * 50, 3))
        keep = np.ones(len(candidates), dtype=bool)
        for resolution in self.field.encoding.grid.resolutions:
            fraction = candidates * resolution % 1.0
            keep &= np.all((fraction > margin * resolution) & (fraction < 1 - margin * resolution), axis=-1)
        return torch.from_numpy(candidates[keep][:count])

    def test_analytic_matches_central_differences(self):
        points = self._interior_points(100, margin=2e-4)
        self.assertEqual(points.shape[0], 100)
        analytic = self.field.spatial_gradient(points).objects
        central = self.field.spatial_gradient(points, mode='central', eps=1e-4).objects
        error = (analytic - central).norm(dim=-1) / central.norm(dim=-1).clamp_min(1e-8)
        self.assertLess(float(error.max()), 1e-3)

    def test_scene_gradient_follows_argmin(self):
        points = torch.rand(50, 3, dtype=torch.float64)
        gradient = self.field.spatial_gradient(points)
        channel = gradient.output.scene_channel
        torch.testing.assert_close(gradient.scene, gradient.objects[torch.arange(50), channel])

    def test_encoding_path_silent_with_zero_input_weights(self):
        field = tiny_field(num_objects=2)
        points = torch.rand(20, 3, dtype=torch.float64)
        before = field.spatial_gradient(points).objects
        with torch.no_grad():
            for table in field.encoding.grid.tables:
                table.normal_()
        after = field.spatial_gradient(points).objects
        torch.testing.assert_close(before, after, atol=0, rtol=0)

    def test_rejects_bad_arguments(self):
        points = torch.rand(2, 3, dtype=torch.float64)
        with self.assertRaises(ValidationError):
            self.field.spatial_gradient(points, mode='central', eps=0.0)
        with self.assertRaises(ValidationError):
            self.field.spatial_gradient(points, mode='forward')


class CheckpointTestCase(SimpleTestCase):
    def test_round_trip_is_bitwise(self):
        field = CompositionalField(3, TINY_GRID, ModelConfig(hidden_dim=16, geometry_feature_dim=4), seed=2)
        optimizer = torch.optim.Adam(field.parameter_groups(1e-2, 5e-4))
        field(torch.rand(8, 3)).scene_sdf.sum().backward()
        optimizer.step()
        normalization = SceneNormalization((0.1, 0.2, 0.3), 0.25)
        points = torch.rand(64, 3)
        with tempfile.TemporaryDirectory() as directory:
            path = save_checkpoint(
                Path(directory) / 'ckpt.bin', field, iteration=7, normalization=normalization, optimizer=optimizer,
            )
            self.assertEqual(path.read_bytes()[:8], MAGIC)
            loaded = load_checkpoint(path)

        self.assertEqual(loaded.iteration, 7)
        self.assertEqual(loaded.normalization, normalization)
        self.assertTrue(torch.equal(field(points).sdf, loaded.field(points).sdf))
        self.assertTrue(torch.equal(field.beta, loaded.field.beta))

        restored = torch.optim.Adam(loaded.field.parameter_groups(1e-2, 5e-4))
        restored.load_state_dict(loaded.optimizer_state)
        expected = optimizer.state_dict()['state']
        for index, state in restored.state_dict()['state'].items():
            self.assertTrue(torch.equal(state['exp_avg'], expected[index]['exp_avg']))
            self.assertEqual(float(state['step']), float(expected[index]['step']))

    def test_load_skips_initialization(self):
        field = tiny_field(seed=3)
        points = torch.rand(32, 3, dtype=torch.float64)
        with tempfile.TemporaryDirectory() as directory:
            path = save_checkpoint(Path(directory) / 'ckpt.bin', field)
            with mock.patch.object(CompositionalField, 'geometric_init', side_effect=AssertionError):
                loaded = load_checkpoint(path)
        self.assertEqual(loaded.field.model_config, field.model_config)
        self.assertTrue(torch.equal(field(points).sdf, loaded.field(points).sdf))

    def test_same_field_same_bytes(self):
        with tempfile.TemporaryDirectory() as directory:
            first = save_checkpoint(Path(directory) / 'a.bin', tiny_field(seed=1))
            second = save_checkpoint(Path(directory) / 'b.bin', tiny_field(seed=1))
            self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_rejects_foreign_and_truncated_files(self):
        with tempfile.TemporaryDirectory() as directory:
            foreign = Path(directory) / 'foreign.bin'
            foreign.write_bytes(b'PK\x03\x04' + bytes(40))
            with self.assertRaises(ValidationError):
                load_checkpoint(foreign)

            path = save_checkpoint(Path(directory) / 'ckpt.bin', tiny_field())
            path.write_bytes(path.read_bytes()[:-16])
            with self.assertRaises(ValidationError):
                load_checkpoint(path)
