import logging

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.management.base import PipelineCommand, existing_path
from compsdf.common.utils import dump_json
from compsdf.geometry.primitives import AnalyticScene
from compsdf.rendering.renderer import AnalyticDensity
from compsdf.rendering.volume import OpacityVariant

logger = logging.getLogger(__name__)


def default_ray(scene: AnalyticScene) -> tuple[np.ndarray, np.ndarray]:
    """Along +x through the scene centre, starting a tenth of the extent inside the bounds."""
    lower, upper = (np.asarray(corner, dtype=np.float64) for corner in scene.bounds)
    origin = np.asarray(scene.center, dtype=np.float64).copy()
    origin[0] = lower[0] + 0.1 * (upper[0] - lower[0])
    return origin, np.array([1.0, 0.0, 0.0])


class Command(PipelineCommand):
    help = (
        'Сравнение формулировок непрозрачности объектов на одном луче через аналитическую сцену: '
        'собственное пропускание объекта, учет перекрытия и семантический вариант.'
    )

    def add_arguments(self, parser):
        super().add_arguments(parser)

        parser.add_argument(
            '--scene',
            dest='scene',
            type=existing_path,
            required=True,
            help='Аналитическая сцена в формате TOML.',
        )
        parser.add_argument('--beta', dest='beta', type=float, default=1e-3, help='Параметр β плотности.')
        parser.add_argument('--samples', dest='samples', type=int, default=1024, help='Точек на луче.')
        parser.add_argument(
            '--origin',
            dest='origin',
            type=float,
            nargs=3,
            default=None,
            help='Начало луча (по умолчанию у грани сцены со стороны -x).',
        )
        parser.add_argument(
            '--direction',
            dest='direction',
            type=float,
            nargs=3,
            default=None,
            help='Направление луча (по умолчанию +x).',
        )
        parser.add_argument('--json', dest='json', action='store_true', help='Вывести результат в JSON.')

    def handle(self, *args, **options):
        if not options['beta'] > 0:
            raise ValidationError(_('β должно быть положительным'), code='beta')
        if options['samples'] < 2:
            raise ValidationError(_('Нужно хотя бы 2 точки на луче'), code='samples')
        scene = AnalyticScene.from_toml(options['scene'])
        origin, direction = default_ray(scene)
        if options['origin'] is not None:
            origin = np.asarray(options['origin'], dtype=np.float64)
        if options['direction'] is not None:
            direction = np.asarray(options['direction'], dtype=np.float64)
        norm = np.linalg.norm(direction)
        if not norm > 0:
            raise ValidationError(_('Направление луча не может быть нулевым'), code='direction')
        direction = direction / norm

        density = AnalyticDensity(scene, beta=options['beta'])
        bundle = density.bundle(origin[None], direction[None])
        if not bool((bundle.far > bundle.near).all()):
            raise ValidationError(_('Луч не пересекает границы сцены'), code='ray')
        seed = settings.COMPSDF_SEED if options['seed'] is None else options['seed']
        samples = density.samples(bundle, options['samples'], seed=seed)

        table = {
            str(variant): density.variant_opacity(samples, variant)[0].tolist()
            for variant in OpacityVariant
        }
        if options['json']:
            self.stdout.write(dump_json({'channels': scene.num_objects, 'opacity': table}, indent=2))
            return

        variants = list(OpacityVariant)
        self.stdout.write('канал ' + ' '.join(f'{str(variant):>16}' for variant in variants))
        for channel in range(scene.num_objects):
            row = ' '.join(f'{table[str(variant)][channel]:>16.6f}' for variant in variants)
            self.stdout.write(f'{channel:>5} {row}')
