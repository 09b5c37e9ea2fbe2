import dataclasses
import tomllib
from pathlib import Path
from typing import Any, Mapping

from django.conf import settings
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.utils import dataclass_from_dict
from compsdf.field.encoding import GridConfig
from compsdf.field.network import ModelConfig
from compsdf.training.losses import LossWeights

SECTIONS = ('train', 'grid', 'loss', 'model')


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    rays_per_batch: int = 1024
    lr_mlp: float = 5e-4
    lr_grid: float = 1e-2
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    n_coarse: int = 64
    n_fine: int = 64
    distinction_points: int = 1024
    eikonal_points: int = 256
    """Ray-sample points per step; the same number of uniform points is added."""
    checkpoint_interval: int = 500
    log_interval: int = 10
    preview_interval: int = 0
    """0 disables preview renders."""
    seed: int | None = None
    """Defaults to ``settings.COMPSDF_SEED``."""
    threads: int | None = None
    """Defaults to ``settings.COMPSDF_THREADS``."""

    def clean(self):
        errors = []
        if self.iterations < 0:
            errors.append(ValidationError(_('Число итераций не может быть отрицательным'), code='iterations'))
        if self.rays_per_batch < 2:
            errors.append(ValidationError(_('В пакете должно быть хотя бы 2 луча'), code='rays_per_batch'))
        if not (self.lr_mlp > 0 and self.lr_grid > 0):
            errors.append(ValidationError(_('Скорости обучения должны быть положительными'), code='lr'))
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas) or not self.adam_eps > 0:
            errors.append(ValidationError(_('Некорректные параметры Adam'), code='adam'))
        if self.n_coarse < 2 or self.n_fine < 0:
            errors.append(ValidationError(_('Некорректное число точек на луче'), code='samples'))
        if self.distinction_points < 1 or self.eikonal_points < 1:
            errors.append(ValidationError(_('Число точек регуляризаторов должно быть положительным'), code='points'))
        if self.checkpoint_interval < 1 or self.log_interval < 1 or self.preview_interval < 0:
            errors.append(ValidationError(_('Некорректные интервалы сохранения'), code='intervals'))
        if self.threads is not None and self.threads < 1:
            errors.append(ValidationError(_('Число потоков должно быть положительным'), code='threads'))
        if errors:
            raise ValidationError(errors)

    @property
    def resolved_seed(self) -> int:
        return settings.COMPSDF_SEED if self.seed is None else self.seed

    @property
    def resolved_threads(self) -> int:
        return settings.COMPSDF_THREADS if self.threads is None else self.threads

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs, as read from one TOML file."""

    dataset: str | None = None
    train: TrainConfig = TrainConfig()
    grid: GridConfig = GridConfig()
    loss: LossWeights = LossWeights()
    model: ModelConfig = ModelConfig()

    def clean(self):
        errors = []
        for section in SECTIONS:
            try:
                getattr(self, section).clean()
            except ValidationError as e:
                errors.extend(e.error_list)
        if errors:
            raise ValidationError(errors)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'RunConfig':
        unknown = sorted(set(data) - {'dataset', *SECTIONS})
        if unknown:
            raise ValidationError(
                _('Неизвестные ключи конфигурации: %(keys)s'),
                code='unknown_keys',
                params={'keys': ', '.join(unknown)},
            )
        config = cls(
            dataset=data.get('dataset'),
            train=dataclass_from_dict(TrainConfig, data.get('train', {}), 'train'),
            grid=dataclass_from_dict(GridConfig, data.get('grid', {}), 'grid'),
            loss=dataclass_from_dict(LossWeights, data.get('loss', {}), 'loss'),
            model=dataclass_from_dict(ModelConfig, data.get('model', {}), 'model'),
        )
        config.clean()
        return config

    @classmethod
    def from_toml(cls, path: str | Path) -> 'RunConfig':
        path = Path(path)
        try:
            with path.open('rb') as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ValidationError(
                _('Ошибка разбора %(path)s: %(error)s'), code='toml', params={'path': path, 'error': e},
            )
        config = cls.from_dict(data)
        if config.dataset is not None and not Path(config.dataset).is_absolute():
            config = dataclasses.replace(config, dataset=str(path.parent / config.dataset))
        return config

    def with_overrides(self, dataset: str | None = None, **train) -> 'RunConfig':
        """
        Apply command-line values; ``None`` keeps the file value.
        :param dataset: Dataset directory.
        :param train: ``TrainConfig`` fields.
        """
        values = {key: value for key, value in train.items() if value is not None}
        config = dataclasses.replace(
            self,
            dataset=dataset if dataset is not None else self.dataset,
            train=dataclasses.replace(self.train, **values),
        )
        config.clean()
        return config

    def as_dict(self) -> dict:
        data = {section: getattr(self, section).as_dict() for section in SECTIONS}
        if self.dataset is not None:
            data['dataset'] = self.dataset
        return data
