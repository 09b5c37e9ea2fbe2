import contextlib
import dataclasses
import io
import json
import logging
import tempfile
from pathlib import Path

import imageio.v3 as iio
import numpy as np
import torch
import trimesh
from django.conf import settings
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from compsdf.cli import COMMANDS, main
from compsdf.common.decorators import deterministic, log_duration
from compsdf.common.exceptions import TrainingError
from compsdf.common.management.base import RUNTIME_FAILURE, PipelineCommand
from compsdf.common.utils import (
    atomic_write_bytes,
    atomic_write_text,
    dataclass_from_dict,
    iteration_seed,
    ray_generator,
    ray_uniforms,
)

CONFIGS_DIR = Path(settings.BASE_DIR).parent / 'configs'
HELP_DIR = Path(__file__).resolve().parent / 'testdata' / 'help'

TINY_RUN_TOML = """
[train]
iterations = 2
rays_per_batch = 16
n_coarse = 8
n_fine = 4
distinction_points = 16
eikonal_points = 8
checkpoint_interval = 1
log_interval = 1

[grid]
levels = 4
base_resolution = 4
finest_resolution = 32
table_size = 1024
frequency_bands = 2

[model]
hidden_dim = 32
color_layers = 2
geometry_feature_dim = 8
dtype = "float64"
"""


def run_cli(*argv: str) -> tuple[int, str, str]:
    stdout, stderr = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
        code = main(list(argv))
    return code, stdout.getvalue(), stderr.getvalue()


@dataclasses.dataclass(frozen=True)
class Section:
    alpha: float = 1.0
    sizes: tuple[int, ...] = ()


class UtilsTestCase(SimpleTestCase):
    def test_dataclass_from_dict(self):
        section = dataclass_from_dict(Section, {'alpha': 2.0, 'sizes': [1, 2]})
        self.assertEqual(section, Section(alpha=2.0, sizes=(1, 2)))

        with self.assertRaises(ValidationError) as e:
            dataclass_from_dict(Section, {'alpha': 2.0, 'beta': 1, 'gamma': 2}, section='loss')
        self.assertEqual(e.exception.code, 'unknown_keys')
        self.assertEqual(e.exception.params['keys'], 'beta, gamma')

    def test_atomic_write(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'nested' / 'report.json'
            atomic_write_text(path, 'первый')
            atomic_write_bytes(path, b'second')
            self.assertEqual(path.read_bytes(), b'second')
            self.assertEqual([p.name for p in path.parent.iterdir()], ['report.json'])

    def test_iteration_seed(self):
        self.assertEqual(iteration_seed(7, 3), iteration_seed(7, 3))
        seeds = {iteration_seed(7, iteration) for iteration in range(1000)}
        self.assertEqual(len(seeds), 1000)
        self.assertNotEqual(iteration_seed(7, 3), iteration_seed(8, 3))
        self.assertLess(iteration_seed(7, 3), 2 ** 63)

    def test_ray_uniforms_do_not_depend_on_batch(self):
        ray_ids = np.arange(100)
        whole = ray_uniforms(5, ray_ids, 16)
        self.assertEqual(whole.shape, (100, 16))
        self.assertTrue(((whole >= 0) & (whole < 1)).all())

        parts = np.concatenate([ray_uniforms(5, ray_ids[:60], 16), ray_uniforms(5, ray_ids[:59:-1], 16)[::-1]])
        np.testing.assert_array_equal(parts, whole)
        self.assertFalse(np.array_equal(ray_uniforms(6, ray_ids, 16), whole))
        self.assertAlmostEqual(float(ray_uniforms(0, np.arange(10000), 8).mean()), 0.5, delta=0.01)

    def test_ray_stream_is_philox(self):
        expected = np.random.Generator(np.random.Philox(key=(7 << 64) | 5)).random(16)
        np.testing.assert_array_equal(ray_uniforms(5, np.array([3, 7]), 16)[1], expected)
        np.testing.assert_array_equal(ray_generator(5, 7).random(16), expected)


class DecoratorsTestCase(SimpleTestCase):
    def test_log_duration(self):
        @log_duration('Шаг')
        def step(value):
            return value * 2

        with self.assertLogs(__name__, level=logging.INFO) as logs:
            self.assertEqual(step(21), 42)
        self.assertEqual(len(logs.output), 1)
        self.assertIn('Шаг: ', logs.output[0])

    def test_deterministic_restores_mode(self):
        previous = torch.are_deterministic_algorithms_enabled()
        seen = []

        @deterministic
        def step():
            seen.append(torch.are_deterministic_algorithms_enabled())
            raise TrainingError('сбой')

        with self.assertRaises(TrainingError):
            step()
        self.assertEqual(seen, [True])
        self.assertEqual(torch.are_deterministic_algorithms_enabled(), previous)


class FailingCommand(PipelineCommand):
    def handle(self, *args, **options):
        raise TrainingError('потери не конечны')


class InvalidInputCommand(PipelineCommand):
    def handle(self, *args, **options):
        raise ValidationError('неверный параметр', code='invalid')


class PipelineCommandTestCase(SimpleTestCase):
    def run_command(self, command: PipelineCommand) -> int:
        with contextlib.redirect_stderr(io.StringIO()), self.assertRaises(SystemExit) as e:
            command.run_from_argv(['compsdf', 'failing'])
        return e.exception.code

    def test_exit_codes(self):
        with self.assertLogs('compsdf', level=logging.ERROR):
            self.assertEqual(self.run_command(FailingCommand()), RUNTIME_FAILURE)
        with self.assertLogs('compsdf', level=logging.ERROR):
            self.assertEqual(self.run_command(InvalidInputCommand()), 1)


class CliTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def test_usage(self):
        self.assertEqual(run_cli()[0], 1)
        code, _stdout, stderr = run_cli('--help')
        self.assertEqual(code, 0)
        self.assertIn('compare-opacity', stderr)
        self.assertEqual(run_cli('serve')[0], 1)

    def test_command_help(self):
        self.assertEqual({path.stem for path in HELP_DIR.glob('*.txt')}, set(COMMANDS))
        for command in COMMANDS:
            with self.subTest(command=command):
                code, stdout, _stderr = run_cli(command, '--help')
                self.assertEqual(code, 0)
                self.assertEqual(stdout, (HELP_DIR / f'{command}.txt').read_text(encoding='utf-8'))

    def test_invalid_input(self):
        bad_config = self.root / 'bad.toml'
        bad_config.write_text('[train]\nrays_per_batch = 0\n')
        no_background = self.root / 'sphere.toml'
        no_background.write_text('bounds = [[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]\n\n[[primitives]]\nkind = "sphere"\nradius = 0.5\n')
        cases = (
            ('eval', '--gt', str(self.root / 'missing.ply'), '--pred', str(self.root / 'missing.ply')),
            ('eval', '--unknown-flag'),
            ('train', '--config', str(bad_config), '--out', str(self.root / 'run')),
            ('bake', '--scene', str(CONFIGS_DIR / 'two_boxes.toml'), '--cameras', 'orbit:x', '--out', str(self.root)),
            ('bake', '--scene', str(no_background), '--cameras', 'orbit:2', '--out', str(self.root / 'sphere')),
            ('compare-opacity', '--scene', str(CONFIGS_DIR / 'two_boxes.toml'), '--beta', '-1'),
        )
        for argv in cases:
            with self.subTest(argv=argv):
                self.assertEqual(run_cli(*argv)[0], 1)

    def test_eval_same_mesh(self):
        path = self.root / 'box.ply'
        trimesh.creation.box(extents=(1.0, 1.0, 1.0)).export(path)
        out = self.root / 'report.json'

        code, stdout, _stderr = run_cli('eval', '--gt', str(path), '--pred', str(path), '--points', '5000', '--out', str(out))
        self.assertEqual(code, 0)
        report = json.loads(stdout)
        self.assertEqual((report['chamfer_l1'], report['f_score']), (0.0, 1.0))
        self.assertEqual(json.loads(out.read_text()), report)

    def test_compare_opacity(self):
        code, stdout, _stderr = run_cli(
            'compare-opacity', '--scene', str(CONFIGS_DIR / 'two_boxes.toml'), '--json', '--samples', '2048',
        )
        self.assertEqual(code, 0)
        result = json.loads(stdout)
        self.assertEqual(result['channels'], 3)
        # Второй ящик закрыт первым: без учета перекрытия он выглядит непрозрачным.
        self.assertGreater(result['opacity']['e1'][2], 0.99)
        self.assertLess(result['opacity']['occlusion-aware'][2], 0.01)
        self.assertGreater(result['opacity']['occlusion-aware'][1], 0.99)

    def test_pipeline(self):
        dataset = self.root / 'dataset'
        code, stdout, _stderr = run_cli(
            'bake', '--scene', str(CONFIGS_DIR / 'two_boxes.toml'), '--cameras', 'orbit:2',
            '--width', '8', '--height', '8', '--out', str(dataset), '--seed', '1',
        )
        self.assertEqual(code, 0)
        self.assertEqual(Path(stdout.strip()), dataset)

        config = self.root / 'tiny.toml'
        config.write_text(f'dataset = "dataset"\n{TINY_RUN_TOML}')
        with contextlib.chdir(self.root):
            code, stdout, _stderr = run_cli('train', '--config', str(config), '--iterations', '0')
        checkpoint = self.root / 'runs' / 'tiny' / 'checkpoints' / 'checkpoint_000000.bin'
        self.assertEqual(code, 0)
        self.assertTrue(checkpoint.is_file())
        self.assertEqual((self.root / Path(stdout.strip().splitlines()[-1])).resolve(), checkpoint.resolve())

        rendered = self.root / 'rendered'
        code, _stdout, _stderr = run_cli(
            'render', '--checkpoint', str(checkpoint), '--dataset', str(dataset), '--out', str(rendered),
            '--frames', '1', '--n-coarse', '8', '--n-fine', '4', '--threads', '1',
        )
        self.assertEqual(code, 0)
        self.assertEqual(sorted(p.name for p in (rendered / 'opacity').iterdir()), ['0001_0.png', '0001_1.png', '0001_2.png'])
        opacity = np.asarray(iio.imread(rendered / 'opacity' / '0001_1.png'))
        self.assertEqual((opacity.dtype, opacity.shape), (np.dtype(np.uint8), (8, 8)))
        self.assertEqual(np.asarray(iio.imread(rendered / 'rgb' / '0001.png')).shape, (8, 8, 3))
        self.assertTrue((rendered / 'depth' / '0001.bin').is_file())

        code, stdout, _stderr = run_cli('mesh', '--checkpoint', str(checkpoint), '--channel', 'obj:1', '--res', '16')
        self.assertEqual(code, 0)
        self.assertEqual(Path(stdout.strip()), checkpoint.with_name('checkpoint_000000_obj_1.ply'))
        self.assertTrue(Path(stdout.strip()).is_file())
