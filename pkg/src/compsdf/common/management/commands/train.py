import logging
from pathlib import Path

from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.management.base import PipelineCommand, existing_path
from compsdf.dataio.io import load_dataset
from compsdf.training.config import RunConfig
from compsdf.training.trainer import Trainer

logger = logging.getLogger(__name__)


class Command(PipelineCommand):
    help = 'Обучение композиционного поля SDF. Прерванный запуск продолжается с последнего чекпоинта.'

    def add_arguments(self, parser):
        super().add_arguments(parser)

        parser.add_argument(
            '--config',
            dest='config',
            type=existing_path,
            required=True,
            help='Конфигурация запуска в формате TOML.',
        )
        parser.add_argument(
            '--out',
            dest='out',
            type=Path,
            default=None,
            help='Каталог запуска: чекпоинты, журнал потерь, превью (по умолчанию runs/<имя конфигурации>).',
        )
        parser.add_argument(
            '--dataset',
            dest='dataset',
            default=None,
            help='Каталог набора данных (заменяет значение из конфигурации).',
        )
        parser.add_argument(
            '--iterations',
            dest='iterations',
            type=int,
            default=None,
            help='Число итераций (заменяет значение из конфигурации).',
        )
        parser.add_argument(
            '--checkpoint-interval',
            dest='checkpoint_interval',
            type=int,
            default=None,
            help='Интервал сохранения чекпоинтов в итерациях.',
        )

    def handle(self, *args, **options):
        config = RunConfig.from_toml(options['config']).with_overrides(
            dataset=options['dataset'],
            iterations=options['iterations'],
            checkpoint_interval=options['checkpoint_interval'],
            seed=options['seed'],
            threads=options['threads'],
        )
        if config.dataset is None:
            raise ValidationError(_('Не указан набор данных'), code='dataset')

        dataset = load_dataset(config.dataset)
        out = options['out'] or Path('runs') / options['config'].stem
        trainer = Trainer.resume(dataset, config, out)
        records = trainer.fit()
        if records:
            self.stdout.write(f'{records[-1].iteration} {records[-1].total:.6f}')
        self.stdout.write(str(trainer.latest_checkpoint()))
