import dataclasses
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch
from django.conf import settings
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from compsdf.common.exceptions import TrainingError
from compsdf.common.testing import (
    TINY_GRID,
    TINY_MODEL,
    central_difference,
    relative_error,
    separate_channels,
    two_box_scene,
)
from compsdf.dataio.baker import bake_dataset, orbit_cameras
from compsdf.evaluation.metrics import evaluate_meshes
from compsdf.field.checkpoint import load_checkpoint
from compsdf.field.network import CompositionalField
from compsdf.geometry.primitives import AnalyticScene
from compsdf.meshing.extraction import channel_overlap, evaluate_lattice, extract_mesh
from compsdf.training.config import RunConfig, TrainConfig
from compsdf.training.losses import (
    LossComponents,
    LossWeights,
    RayBatchTargets,
    loss_depth,
    loss_distinction,
    loss_distinction_direct,
    loss_eikonal,
    loss_normal,
    loss_opacity,
    loss_rec,
    loss_total,
    solve_depth_scale_shift,
)
from compsdf.training.trainer import Trainer

CONFIGS_DIR = Path(settings.BASE_DIR).parent / 'configs'


def targets_for(color=None, object_opacity=None, count: int = 1) -> RayBatchTargets:
    return RayBatchTargets(
        color=torch.zeros(count, 3, dtype=torch.float64) if color is None else torch.as_tensor(color, dtype=torch.float64),
        object_opacity=(
            torch.zeros(count, 2, dtype=torch.float64) if object_opacity is None
            else torch.as_tensor(object_opacity, dtype=torch.float64)
        ),
        depth=torch.zeros(count, dtype=torch.float64),
        normal=torch.zeros(count, 3, dtype=torch.float64),
        image_ids=torch.zeros(count, dtype=torch.long),
        valid=torch.ones(count, dtype=torch.bool),
    )


def tiny_run_config(**train) -> RunConfig:
    values = {
        'iterations': 4,
        'rays_per_batch': 16,
        'n_coarse': 8,
        'n_fine': 4,
        'distinction_points': 16,
        'eikonal_points': 8,
        'checkpoint_interval': 2,
        'log_interval': 1,
        'seed': 3,
        'threads': 1,
        **train,
    }
    return RunConfig(train=TrainConfig(**values), grid=TINY_GRID, model=TINY_MODEL)


def tiny_dataset():
    scene = two_box_scene()
    return bake_dataset(scene, orbit_cameras(scene, 3, width=8, height=8), seed=0, threads=1)


class LossExamplesTestCase(SimpleTestCase):
    def test_rec(self):
        self.assertEqual(float(loss_rec(torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64), targets_for())), 1.0)
        color = torch.rand(5, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        self.assertEqual(float(loss_rec(color, targets_for(color=color, count=5))), 0.0)
        single = loss_rec(color[:1], targets_for(count=1))
        double = loss_rec(color[:1].repeat(2, 1), targets_for(count=2))
        self.assertAlmostEqual(float(double), 2 * float(single), delta=1e-12)
        with self.assertRaises(ValidationError):
            loss_rec(torch.zeros(0, 3), targets_for(count=0))

    def test_opacity(self):
        predicted = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
        self.assertAlmostEqual(float(loss_opacity(predicted, targets_for(object_opacity=[[1.0, 0.0]]))), 0.5)
        skewed = torch.tensor([[0.9, 0.2]], dtype=torch.float64)
        forward = loss_opacity(skewed, targets_for(object_opacity=[[1.0, 0.0]]))
        swapped = loss_opacity(skewed.flip(-1), targets_for(object_opacity=[[0.0, 1.0]]))
        self.assertEqual(float(forward), float(swapped))

    def test_opacity_targets_are_a_partition(self):
        targets_for(object_opacity=[[1.0, 0.0]]).clean()
        with self.assertRaises(ValidationError):
            targets_for(object_opacity=[[1.0, 1.0]]).clean()

    def test_eikonal(self):
        gradient = torch.tensor([[[2.0, 0.0, 0.0]]], dtype=torch.float64)
        self.assertAlmostEqual(float(loss_eikonal(gradient, gradient[:, 0])), 2.0, delta=1e-12)
        unit = torch.nn.functional.normalize(torch.randn(10, 3, 3, dtype=torch.float64), dim=-1)
        self.assertAlmostEqual(float(loss_eikonal(unit, unit[:, 1])), 0.0, delta=1e-12)

    def test_distinction_examples(self):
        cases = (
            ((-0.3, 0.1, 0.5), 0.2),
            ((0.2, 0.5), 0.0),
            ((-0.2, -0.1), 0.3),
        )
        for sdf, expected in cases:
            with self.subTest(sdf=sdf):
                tensor = torch.tensor([sdf], dtype=torch.float64)
                self.assertAlmostEqual(float(loss_distinction(tensor)), expected, delta=1e-12)
                self.assertAlmostEqual(float(loss_distinction_direct(tensor)), expected, delta=1e-12)

    def test_distinction_forms_agree(self):
        sdf = torch.randn(100_000, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
        self.assertAlmostEqual(float(loss_distinction(sdf)), float(loss_distinction_direct(sdf)), delta=1e-12)
        per_point = [float(loss_distinction(row[None])) for row in sdf[:200]]
        self.assertTrue(all(value >= 0.0 for value in per_point))

    def test_distinction_is_zero_without_double_inside(self):
        rng = np.random.default_rng(2)
        outside = torch.from_numpy(rng.uniform(0.01, 1.0, size=(500, 3)))
        single_inside = outside.clone()
        single_inside[:, 0] = -torch.from_numpy(rng.uniform(0.0, 0.005, size=500))
        self.assertEqual(float(loss_distinction(outside)), 0.0)
        self.assertEqual(float(loss_distinction(single_inside)), 0.0)
        double_inside = torch.tensor([[-0.3, -0.2, 0.4]], dtype=torch.float64)
        self.assertGreater(float(loss_distinction(double_inside)), 0.0)

    def test_depth_solve_examples(self):
        pseudo = torch.linspace(0.5, 3.0, 20, dtype=torch.float64)
        identity = solve_depth_scale_shift(pseudo, pseudo)
        self.assertAlmostEqual(float(identity.scale[0]), 1.0, delta=1e-12)
        self.assertAlmostEqual(float(identity.shift[0]), 0.0, delta=1e-12)
        self.assertAlmostEqual(float(loss_depth(pseudo, pseudo, identity)), 0.0, delta=1e-20)

        rendered = 2 * pseudo + 3
        affine = solve_depth_scale_shift(rendered, pseudo)
        self.assertAlmostEqual(float(affine.scale[0]), 0.5, delta=1e-12)
        self.assertAlmostEqual(float(affine.shift[0]), -1.5, delta=1e-12)
        self.assertAlmostEqual(float(loss_depth(rendered, pseudo, affine)), 0.0, delta=1e-20)

    def test_depth_solve_matches_normal_equations(self):
        rng = np.random.default_rng(3)
        for _index in range(1000):
            rendered, pseudo = rng.uniform(0.1, 5.0, size=100), rng.uniform(0.1, 5.0, size=100)
            design = np.stack([rendered, np.ones_like(rendered)], axis=-1)
            expected = np.linalg.solve(design.T @ design, design.T @ pseudo)
            alignment = solve_depth_scale_shift(torch.from_numpy(rendered), torch.from_numpy(pseudo))
            np.testing.assert_allclose(
                [float(alignment.scale[0]), float(alignment.shift[0])], expected, rtol=0, atol=1e-10,
            )

    def test_depth_solve_is_optimal(self):
        rng = np.random.default_rng(4)
        rendered = torch.from_numpy(rng.uniform(0.5, 2.0, size=50))
        pseudo = torch.from_numpy(rng.uniform(0.5, 2.0, size=50))
        alignment = solve_depth_scale_shift(rendered, pseudo)
        best = float(loss_depth(rendered, pseudo, alignment))
        w, q = float(alignment.scale[0]), float(alignment.shift[0])
        for dw in np.linspace(-0.2, 0.2, 9):
            for dq in np.linspace(-0.2, 0.2, 9):
                candidate = dataclasses.replace(
                    alignment, scale=alignment.scale * 0 + w + dw, shift=alignment.shift * 0 + q + dq,
                )
                self.assertGreaterEqual(float(loss_depth(rendered, pseudo, candidate)) + 1e-12, best)

    def test_depth_solve_per_image_and_singular(self):
        rendered = torch.tensor([1.0, 2.0, 3.0, 2.0, 2.0, 2.0], dtype=torch.float64)
        pseudo = torch.tensor([2.0, 4.0, 6.0, 1.0, 2.0, 3.0], dtype=torch.float64)
        image_ids = torch.tensor([0, 0, 0, 1, 1, 1])
        alignment = solve_depth_scale_shift(rendered, pseudo, image_ids)
        self.assertEqual(alignment.singular, [1])
        np.testing.assert_allclose(alignment.scale.numpy(), [2.0, 2.0, 2.0, 0.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(alignment.shift.numpy(), [0.0, 0.0, 0.0, 2.0, 2.0, 2.0], atol=1e-12)

        one_ray = solve_depth_scale_shift(rendered[:1], pseudo[:1])
        self.assertEqual(one_ray.singular, [0])

    def test_normal(self):
        pseudo = torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64)
        self.assertAlmostEqual(float(loss_normal(pseudo, pseudo)), 0.0, delta=1e-12)
        self.assertAlmostEqual(float(loss_normal(-pseudo, pseudo)), 4.0, delta=1e-12)
        valid = torch.tensor([False])
        self.assertEqual(float(loss_normal(-pseudo, pseudo, valid)), 0.0)

    def test_total(self):
        ones = LossComponents(*(torch.tensor(1.0, dtype=torch.float64) for _name in range(6)))
        self.assertAlmostEqual(float(loss_total(ones, LossWeights())), 2.75, delta=1e-12)
        zeros = LossComponents(*(torch.tensor(0.0, dtype=torch.float64) for _name in range(6)))
        self.assertEqual(float(loss_total(zeros, LossWeights())), 0.0)
        self.assertAlmostEqual(float(loss_total(ones, LossWeights().without_regularizer())), 2.25, delta=1e-12)
        self.assertAlmostEqual(float(loss_total(ones, LossWeights().without_monocular_cues())), 2.6, delta=1e-12)

    def test_total_is_linear_in_weights(self):
        components = LossComponents(*(torch.tensor(v, dtype=torch.float64) for v in (0.3, 0.2, 1.5, 0.7, 2.0, 0.4)))
        first, second = LossWeights(0.1, 0.2, 0.3, 0.4), LossWeights(0.5, 0.0, 0.2, 0.1)
        summed = LossWeights(0.6, 0.2, 0.5, 0.5)
        base = float(components.rec + components.opacity)
        expected = float(loss_total(components, first)) + float(loss_total(components, second)) - base
        self.assertAlmostEqual(float(loss_total(components, summed)), expected, delta=1e-12)

    def test_negative_weights_rejected(self):
        with self.assertRaises(ValidationError):
            LossWeights(distinction=-0.1).clean()


class LossGradientTestCase(SimpleTestCase):
    """Parameter gradients of every loss term against central differences, float64."""

    def setUp(self):
        directory = tempfile.TemporaryDirectory()
        self.addCleanup(directory.cleanup)
        self.trainer = Trainer(tiny_dataset(), tiny_run_config(), directory.name)
        field = self.trainer.field
        generator = torch.Generator().manual_seed(5)
        with torch.no_grad():
            # Включаем путь через сетку признаков.
            weight = field.sdf_layers[0].weight
            weight[:, 3:] = torch.randn(weight[:, 3:].shape, generator=generator, dtype=weight.dtype) * 0.1
        separate_channels(field)
        self.batch = self.trainer.sample_batch(0)
        self.samples = self.trainer.renderer.sample(self.batch.bundle, 0, self.batch.ray_ids)

    def _components(self) -> LossComponents:
        outputs = self.trainer.renderer.render_samples(self.batch.bundle, self.samples, create_graph=True)
        return self.trainer.compute_losses(self.batch, outputs, self.samples, seed=0)

    def test_every_component(self):
        field = self.trainer.field
        checks = [
            (field.log_beta, ()),
            (field.sdf_layers[0].weight, (3, 1)),
            (field.sdf_layers[0].weight, (5, 4)),
            (field.sdf_layers[-1].bias, (1,)),
            (field.sdf_layers[-1].weight, (2, 7)),
            (field.color_layers[0].weight, (2, 5)),
            (field.encoding.grid.tables[0], (62, 1)),
            (field.encoding.grid.tables[1], (40, 0)),
        ]
        for name in ('rec', 'opacity', 'eikonal', 'distinction', 'depth', 'normal'):
            field.zero_grad()
            getattr(self._components(), name).backward()
            for tensor, index in checks:
                with self.subTest(component=name, shape=tuple(tensor.shape), index=index):
                    analytic = float(tensor.grad[index]) if tensor.grad is not None else 0.0
                    numeric = central_difference(lambda: getattr(self._components(), name), tensor, index)
                    self.assertLess(relative_error(analytic, numeric), 1e-4)

    def test_total(self):
        field = self.trainer.field
        field.zero_grad()
        loss_total(self._components(), LossWeights()).backward()
        for tensor, index in ((field.sdf_layers[0].weight, (1, 2)), (field.encoding.grid.tables[0], (62, 0))):
            numeric = central_difference(lambda: loss_total(self._components(), LossWeights()), tensor, index)
            self.assertLess(relative_error(float(tensor.grad[index]), numeric), 1e-4)


class RunConfigTestCase(SimpleTestCase):
    def test_desk_config(self):
        config = RunConfig.from_toml(CONFIGS_DIR / 'desk.toml')
        self.assertEqual(config.train.iterations, 5000)
        self.assertEqual(config.grid.levels, 8)
        self.assertEqual(config.loss, LossWeights())
        self.assertEqual(Path(config.dataset), CONFIGS_DIR / '../data/three_objects')

    def test_defaults(self):
        config = RunConfig()
        self.assertEqual(config.train.rays_per_batch, 1024)
        self.assertEqual((config.train.lr_mlp, config.train.lr_grid), (5e-4, 1e-2))
        self.assertEqual(config.model.beta_init, 0.1)
        self.assertEqual(config.train.resolved_seed, settings.COMPSDF_SEED)

    def test_toml_and_overrides(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'run.toml'
            path.write_text('dataset = "data"\n[train]\niterations = 10\nadam_betas = [0.8, 0.99]\n')
            config = RunConfig.from_toml(path)
        self.assertEqual(config.dataset, str(Path(directory) / 'data'))
        self.assertEqual(config.train.adam_betas, (0.8, 0.99))
        overridden = config.with_overrides(iterations=None, seed=7)
        self.assertEqual((overridden.train.iterations, overridden.train.seed), (10, 7))
        self.assertEqual(config.with_overrides(dataset='other').dataset, 'other')

    def test_unknown_keys(self):
        for data in ({'optimizer': {}}, {'train': {'lr': 0.1}}):
            with self.subTest(data=data), self.assertRaises(ValidationError) as cm:
                RunConfig.from_dict(data)
            self.assertEqual(cm.exception.code, 'unknown_keys')

    def test_invalid_values_are_collected(self):
        with self.assertRaises(ValidationError) as cm:
            RunConfig.from_dict({'train': {'rays_per_batch': 1, 'lr_mlp': -1.0}, 'loss': {'depth': -1.0}})
        self.assertEqual({error.code for error in cm.exception.error_list}, {'rays_per_batch', 'lr', 'weights'})

    def test_broken_toml(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'run.toml'
            path.write_text('[train\n')
            with self.assertRaises(ValidationError) as cm:
                RunConfig.from_toml(path)
        self.assertEqual(cm.exception.code, 'toml')


class TrainerTestCase(SimpleTestCase):
    def setUp(self):
        self.dataset = tiny_dataset()
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        self.out = Path(self.directory.name)

    def test_batch_comes_from_one_image(self):
        trainer = Trainer(self.dataset, tiny_run_config(), self.out)
        batch = trainer.sample_batch(0)
        self.assertEqual(set(batch.targets.image_ids.tolist()), {batch.image_id})
        self.assertLessEqual(len(batch), 16)
        batch.targets.clean()
        again = trainer.sample_batch(0)
        np.testing.assert_array_equal(batch.pixel_ids, again.pixel_ids)

    def test_zero_gradient_leaves_parameters(self):
        trainer = Trainer(self.dataset, tiny_run_config(), self.out)
        before = {name: p.detach().clone() for name, p in trainer.field.named_parameters()}
        for parameter in trainer.field.parameters():
            parameter.grad = torch.zeros_like(parameter)
        trainer.optimizer.step()
        for name, parameter in trainer.field.named_parameters():
            self.assertTrue(torch.equal(parameter, before[name]), msg=name)

    def test_learning_rates_per_group(self):
        trainer = Trainer(self.dataset, tiny_run_config(), self.out)
        groups = {group['name']: group for group in trainer.optimizer.param_groups}
        self.assertEqual((groups['mlp']['lr'], groups['grid']['lr']), (5e-4, 1e-2))
        self.assertEqual(tuple(groups['mlp']['betas']), (0.9, 0.999))

    def test_zero_iterations_writes_initial_checkpoint(self):
        trainer = Trainer(self.dataset, tiny_run_config(iterations=0), self.out)
        self.assertEqual(trainer.fit(), [])
        checkpoint = load_checkpoint(self.out / 'checkpoints' / 'checkpoint_000000.bin')
        fresh = CompositionalField(self.dataset.num_objects, TINY_GRID, TINY_MODEL, seed=3)
        points = torch.rand(32, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        self.assertTrue(torch.equal(checkpoint.field(points).sdf, fresh(points).sdf))
        self.assertTrue((self.out / 'config.json').exists())

    def test_same_seed_same_checkpoints(self):
        first, second = self.out / 'first', self.out / 'second'
        Trainer(self.dataset, tiny_run_config(), first).fit()
        Trainer(self.dataset, tiny_run_config(), second).fit()
        for name in ('checkpoint_000002.bin', 'checkpoint_000004.bin'):
            self.assertEqual(
                (first / 'checkpoints' / name).read_bytes(), (second / 'checkpoints' / name).read_bytes(), msg=name,
            )
        self.assertEqual((first / 'losses.jsonl').read_text(), (second / 'losses.jsonl').read_text())

    def test_resume_matches_uninterrupted_run(self):
        fresh, resumed = self.out / 'fresh', self.out / 'resumed'
        Trainer(self.dataset, tiny_run_config(), fresh).fit()
        Trainer(self.dataset, tiny_run_config(iterations=2), resumed).fit()
        trainer = Trainer.resume(self.dataset, tiny_run_config(), resumed)
        self.assertEqual(trainer.iteration, 2)
        trainer.fit()
        name = 'checkpoint_000004.bin'
        self.assertEqual((fresh / 'checkpoints' / name).read_bytes(), (resumed / 'checkpoints' / name).read_bytes())
        self.assertEqual((fresh / 'losses.jsonl').read_text(), (resumed / 'losses.jsonl').read_text())

    def test_resume_truncates_loss_log(self):
        Trainer(self.dataset, tiny_run_config(), self.out).fit()
        (self.out / 'checkpoints' / 'checkpoint_000004.bin').unlink()
        trainer = Trainer.resume(self.dataset, tiny_run_config(), self.out)
        self.assertEqual(trainer.iteration, 2)
        iterations = [json.loads(line)['iter'] for line in (self.out / 'losses.jsonl').read_text().splitlines()]
        self.assertEqual(iterations, [1, 2])

    def test_loss_log(self):
        records = Trainer(self.dataset, tiny_run_config(iterations=5, log_interval=2), self.out).fit()
        lines = [json.loads(line) for line in (self.out / 'losses.jsonl').read_text().splitlines()]
        self.assertEqual([line['iter'] for line in lines], [2, 4, 5])
        self.assertEqual([record.iteration for record in records], [2, 4, 5])
        self.assertEqual(
            set(lines[0]), {'iter', 'rec', 'opacity', 'eikonal', 'distinction', 'depth', 'normal', 'total', 'beta'},
        )
        self.assertTrue(all(line['beta'] > 0 for line in lines))

    def test_preview(self):
        trainer = Trainer(self.dataset, tiny_run_config(iterations=2, preview_interval=2), self.out)
        trainer.fit()
        self.assertTrue((self.out / 'previews' / '000002.png').exists())

    def test_non_finite_loss_dumps_rays(self):
        trainer = Trainer(self.dataset, tiny_run_config(), self.out)
        batch = trainer.sample_batch(0)
        batch.targets.color[0, 0] = float('nan')
        with self.assertRaises(TrainingError) as cm:
            trainer.train_step(batch)
        dump = json.loads(Path(cm.exception.dump_path).read_text())
        self.assertEqual(dump['pixel_ids'], batch.pixel_ids.tolist())
        self.assertEqual(trainer.iteration, 0)

    def test_checkpoint_of_other_dataset_is_rejected(self):
        Trainer(self.dataset, tiny_run_config(iterations=0), self.out).fit()
        scene = AnalyticScene.from_dict({
            'bounds': [[-1.0] * 3, [1.0] * 3],
            'background': {},
            'primitives': [{'kind': 'sphere', 'center': [0.0, 0.0, 0.0], 'radius': 0.5}],
        })
        other = bake_dataset(scene, orbit_cameras(scene, 2, width=8, height=8), seed=0, threads=1)
        with self.assertRaises(ValidationError):
            Trainer.resume(other, tiny_run_config(), self.out)


@unittest.skipUnless(settings.COMPSDF_SLOW_TESTS, 'COMPSDF_SLOW_TESTS=1 включает длинные прогоны')
class EndToEndTestCase(SimpleTestCase):
    """Desk-scale runs on baked scenes; several minutes each on 8 CPU threads."""

    def _desk_config(self, **train) -> RunConfig:
        config = RunConfig.from_toml(CONFIGS_DIR / 'desk.toml')
        values = {'preview_interval': 0, 'seed': 0, 'threads': settings.COMPSDF_THREADS, **train}
        return dataclasses.replace(config, train=dataclasses.replace(config.train, **values))

    def _scene(self, name: str) -> AnalyticScene:
        return AnalyticScene.from_toml(CONFIGS_DIR / name)

    def test_loss_decreases(self):
        scene = self._scene('two_boxes.toml')
        dataset = bake_dataset(scene, orbit_cameras(scene, 16, width=64, height=64), seed=0)
        with tempfile.TemporaryDirectory() as directory:
            records = Trainer(dataset, self._desk_config(iterations=2000, log_interval=100), directory).fit()
        totals = {record.iteration: record.total for record in records}
        self.assertLess(totals[2000], 0.5 * totals[100])

    def test_regularizer_reduces_overlap(self):
        scene = self._scene('two_boxes.toml')
        dataset = bake_dataset(scene, orbit_cameras(scene, 24, width=64, height=64), seed=0)
        overlaps = {}
        for label, weights in (('reg', LossWeights()), ('no_reg', LossWeights().without_regularizer())):
            config = dataclasses.replace(self._desk_config(iterations=3000), loss=weights)
            with tempfile.TemporaryDirectory() as directory:
                trainer = Trainer(dataset, config, directory)
                trainer.fit()
                lattice = evaluate_lattice(trainer.field, 128, normalization=dataset.normalization)
            overlaps[label] = max(channel_overlap(lattice).values())
        self.assertLess(overlaps['reg'], 0.01)
        self.assertGreater(overlaps['no_reg'], overlaps['reg'])

    def test_closed_loop_reconstruction(self):
        scene = self._scene('three_objects.toml')
        dataset = bake_dataset(scene, orbit_cameras(scene, 48), seed=0)
        with tempfile.TemporaryDirectory() as directory:
            trainer = Trainer(dataset, self._desk_config(), directory)
            trainer.fit()
        for channel in ('scene', 1, 2):
            with self.subTest(channel=channel):
                predicted = extract_mesh(trainer.field, channel, 128, normalization=dataset.normalization)
                report = evaluate_meshes(extract_mesh(scene, channel, 128), predicted)
                self.assertLess(report.chamfer_l1, 0.05)
                self.assertGreater(report.f_score, 0.9)
