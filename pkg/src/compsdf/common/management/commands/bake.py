import json
import logging
from pathlib import Path

from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.management.base import PipelineCommand, existing_path
from compsdf.dataio.baker import bake_dataset, orbit_cameras
from compsdf.dataio.io import write_dataset
from compsdf.dataio.schema import Camera
from compsdf.geometry.primitives import AnalyticScene

logger = logging.getLogger(__name__)

ORBIT_PREFIX = 'orbit:'


def read_cameras(source: str, scene: AnalyticScene, width: int, height: int, fov: float) -> list[Camera]:
    """
    :param source: ``orbit:<n>`` or a JSON file with a list of cameras.
    """
    if source.startswith(ORBIT_PREFIX):
        count = source.removeprefix(ORBIT_PREFIX)
        if not count.isdigit() or int(count) < 1:
            raise ValidationError(
                _('Ожидалось orbit:<число камер>, получено %(source)s'), code='cameras', params={'source': source},
            )
        return orbit_cameras(scene, int(count), width=width, height=height, fov=fov)
    path = Path(source)
    if not path.is_file():
        raise ValidationError(_('Файл камер не найден: %(path)s'), code='cameras', params={'path': path})
    try:
        items = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(
            _('Ошибка разбора %(path)s: %(error)s'), code='cameras', params={'path': path, 'error': e},
        )
    return [Camera.from_dict(item) for item in items]


class Command(PipelineCommand):
    help = 'Генерация набора данных: изображения, маски объектов, глубина и нормали для аналитической сцены.'

    def add_arguments(self, parser):
        super().add_arguments(parser)

        parser.add_argument(
            '--scene',
            dest='scene',
            type=existing_path,
            required=True,
            help='Описание сцены в формате TOML.',
        )
        parser.add_argument(
            '--cameras',
            dest='cameras',
            required=True,
            help='JSON-файл со списком камер или orbit:<n> для n камер по кругу.',
        )
        parser.add_argument(
            '--out',
            dest='out',
            type=Path,
            required=True,
            help='Каталог набора данных.',
        )
        parser.add_argument(
            '--depth-noise',
            dest='depth_noise',
            action='store_true',
            help='Случайное аффинное искажение глубины каждого кадра.',
        )
        parser.add_argument('--width', dest='width', type=int, default=128, help='Ширина кадра для orbit.')
        parser.add_argument('--height', dest='height', type=int, default=128, help='Высота кадра для orbit.')
        parser.add_argument('--fov', dest='fov', type=float, default=60.0, help='Горизонтальный угол обзора для orbit.')

    def handle(self, *args, **options):
        scene = AnalyticScene.from_toml(options['scene'])
        cameras = read_cameras(options['cameras'], scene, options['width'], options['height'], options['fov'])

        logger.info(f'Генерируем кадры: {len(cameras)} ...')
        dataset = bake_dataset(
            scene, cameras, seed=options['seed'], depth_noise=options['depth_noise'], threads=options['threads'],
        )
        path = write_dataset(options['out'], dataset)
        self.stdout.write(str(path))
        logger.info('Готово')
