import json
import logging
from pathlib import Path

from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.management.base import PipelineCommand, existing_path
from compsdf.field.checkpoint import load_checkpoint
from compsdf.geometry.primitives import AnalyticScene
from compsdf.meshing.extraction import channel_overlap, evaluate_lattice, mesh_from_lattice, parse_channel

logger = logging.getLogger(__name__)


class Command(PipelineCommand):
    help = 'Извлечение сетки поверхности сцены или отдельного объекта методом марширующих кубов.'

    def add_arguments(self, parser):
        super().add_arguments(parser)

        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument(
            '--checkpoint',
            dest='checkpoint',
            type=existing_path,
            help='Чекпоинт обученного поля.',
        )
        source.add_argument(
            '--scene',
            dest='scene',
            type=existing_path,
            help='Аналитическая сцена в формате TOML (эталонная сетка).',
        )
        parser.add_argument(
            '--channel',
            dest='channel',
            default='scene',
            help='scene или obj:<номер канала>.',
        )
        parser.add_argument(
            '--res',
            '--resolution',
            dest='resolution',
            type=int,
            default=128,
            help='Число узлов решетки по каждой оси.',
        )
        parser.add_argument(
            '--out',
            dest='out',
            type=Path,
            default=None,
            help='Файл сетки .ply или .obj (по умолчанию <источник>_<канал>.ply рядом с источником).',
        )
        parser.add_argument(
            '--overlap',
            dest='overlap',
            action='store_true',
            help='Вывести долю пересечения объектов для каждого канала (JSON).',
        )

    def handle(self, *args, **options):
        channel = parse_channel(options['channel'])
        if options['checkpoint'] is not None:
            checkpoint = load_checkpoint(options['checkpoint'])
            if checkpoint.normalization is None:
                raise ValidationError(_('В чекпоинте нет нормализации сцены'), code='normalization')
            lattice = evaluate_lattice(
                checkpoint.field,
                options['resolution'],
                normalization=checkpoint.normalization,
                threads=options['threads'],
            )
            background_channel = checkpoint.field.background_channel
        else:
            scene = AnalyticScene.from_toml(options['scene'])
            lattice = evaluate_lattice(scene, options['resolution'], threads=options['threads'])
            background_channel = scene.background_channel

        if options['overlap']:
            overlap = channel_overlap(lattice, background_channel=background_channel)
            self.stdout.write(json.dumps({str(key): value for key, value in overlap.items()}, sort_keys=True))

        mesh = mesh_from_lattice(lattice, channel)
        out = options['out']
        if out is None:
            source = options['checkpoint'] or options['scene']
            out = source.with_name(f"{source.stem}_{options['channel'].replace(':', '_')}.ply")
        # Пустую сетку не записываем.
        if not mesh.is_empty:
            self.stdout.write(str(mesh.save(out)))
