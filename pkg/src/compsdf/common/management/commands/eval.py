import logging
from pathlib import Path

from compsdf.common.management.base import PipelineCommand, existing_path
from compsdf.common.utils import atomic_write_text, dump_json
from compsdf.evaluation.metrics import DEFAULT_POINTS, DEFAULT_TAU, evaluate_meshes
from compsdf.meshing.mesh import Mesh

logger = logging.getLogger(__name__)


class Command(PipelineCommand):
    help = 'Сравнение восстановленной сетки с эталонной: Chamfer-L1, точность, полнота и F-мера.'

    def add_arguments(self, parser):
        super().add_arguments(parser)

        parser.add_argument(
            '--gt',
            dest='gt',
            type=existing_path,
            required=True,
            help='Эталонная сетка .ply или .obj.',
        )
        parser.add_argument(
            '--pred',
            dest='pred',
            type=existing_path,
            required=True,
            help='Восстановленная сетка .ply или .obj.',
        )
        parser.add_argument(
            '--tau',
            dest='tau',
            type=float,
            default=DEFAULT_TAU,
            help='Порог расстояния для точности и полноты, в единицах сцены.',
        )
        parser.add_argument(
            '--points',
            dest='points',
            type=int,
            default=DEFAULT_POINTS,
            help='Число точек, выбираемых на каждой сетке.',
        )
        parser.add_argument(
            '--norm',
            dest='norm',
            type=int,
            choices=(1, 2),
            default=1,
            help='Норма расстояний: 1 (L1) или 2 (евклидова).',
        )
        parser.add_argument(
            '--out',
            dest='out',
            type=Path,
            default=None,
            help='Дополнительно записать отчет в JSON-файл.',
        )

    def handle(self, *args, **options):
        report = evaluate_meshes(
            Mesh.load(options['gt']),
            Mesh.load(options['pred']),
            count=options['points'],
            tau=options['tau'],
            seed=0 if options['seed'] is None else options['seed'],
            norm=options['norm'],
            workers=options['threads'],
        )
        text = dump_json(report.as_dict(), indent=2)
        if options['out'] is not None:
            atomic_write_text(options['out'], text + '\n')
        self.stdout.write(text)
