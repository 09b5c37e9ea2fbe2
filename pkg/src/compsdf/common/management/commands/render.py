import logging
from pathlib import Path

import torch
from django.conf import settings
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _
from tqdm import tqdm

from compsdf.common.decorators import gc_collect
from compsdf.common.management.base import PipelineCommand, existing_path
from compsdf.dataio.io import load_dataset, write_float_plane, write_gray, write_rgb
from compsdf.field.checkpoint import load_checkpoint
from compsdf.rendering.renderer import VolumeRenderer, render_image

logger = logging.getLogger(__name__)


class Command(PipelineCommand):
    help = 'Рендер обученного поля с камер набора данных: цвет, глубина, нормали и непрозрачности объектов.'

    def add_arguments(self, parser):
        super().add_arguments(parser)

        parser.add_argument(
            '--checkpoint',
            dest='checkpoint',
            type=existing_path,
            required=True,
            help='Файл чекпоинта.',
        )
        parser.add_argument(
            '--dataset',
            dest='dataset',
            type=existing_path,
            required=True,
            help='Каталог набора данных, из которого берутся камеры.',
        )
        parser.add_argument(
            '--out',
            dest='out',
            type=Path,
            required=True,
            help='Каталог для результатов.',
        )
        parser.add_argument(
            '--frames',
            dest='frames',
            type=int,
            nargs='*',
            default=None,
            help='Номера кадров (по умолчанию все).',
        )
        parser.add_argument('--n-coarse', dest='n_coarse', type=int, default=64, help='Равномерных точек на луч.')
        parser.add_argument('--n-fine', dest='n_fine', type=int, default=64, help='Точек по важности на луч.')

    @gc_collect
    def _render_frame(self, renderer: VolumeRenderer, frame, index: int, normalization, seed: int, out: Path):
        image = render_image(renderer, frame.camera, normalization, seed, frame_index=index)
        name = f'{index:04d}'
        write_rgb(out / 'rgb' / f'{name}.png', image.rgb)
        write_float_plane(out / 'depth' / f'{name}.bin', image.depth, units='scene')
        write_float_plane(out / 'normal' / f'{name}.bin', image.normal, frame='world')
        for channel in range(image.object_opacity.shape[-1]):
            write_gray(out / 'opacity' / f'{name}_{channel}.png', image.object_opacity[..., channel])

    def handle(self, *args, **options):
        checkpoint = load_checkpoint(options['checkpoint'])
        dataset = load_dataset(options['dataset'])
        normalization = checkpoint.normalization or dataset.normalization
        if checkpoint.field.num_objects != dataset.num_objects:
            raise ValidationError(
                _('Чекпоинт обучен на %(saved)s объектах, а в наборе данных %(actual)s'),
                code='num_objects',
                params={'saved': checkpoint.field.num_objects, 'actual': dataset.num_objects},
            )
        indices = range(len(dataset)) if options['frames'] is None else options['frames']
        for index in indices:
            if not 0 <= index < len(dataset):
                raise ValidationError(_('Нет кадра %(index)s'), code='frames', params={'index': index})

        seed = settings.COMPSDF_SEED if options['seed'] is None else options['seed']
        torch.set_num_threads(settings.COMPSDF_THREADS if options['threads'] is None else options['threads'])
        renderer = VolumeRenderer(checkpoint.field, options['n_coarse'], options['n_fine'], perturb=False)
        checkpoint.field.eval()
        with torch.no_grad():
            for index in tqdm(indices, desc='Рендер', unit='кадр'):
                self._render_frame(renderer, dataset.frames[index], index, normalization, seed, options['out'])
        self.stdout.write(str(options['out']))
        logger.info('Готово')
