"""
Object-compositional implicit field: one network predicts a signed distance per object
channel plus a geometry feature, the scene distance is the channel-wise minimum, and a
separate head predicts color.
"""
import dataclasses
import logging
import math
from typing import Literal

import torch
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _
from torch import nn
from torch.nn import functional as F

from compsdf.common.exceptions import FieldError
from compsdf.field.encoding import GridConfig, PointEncoding

logger = logging.getLogger(__name__)

GradientMode = Literal['analytic', 'central']

# Радиусы заданы в центрированном кубе x = 2p - 1, расстояния поля в единицах p.
CENTRED_TO_NORMALIZED = 0.5


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 256
    sdf_layers: int = 2
    color_layers: int = 4
    geometry_feature_dim: int = 256
    beta_init: float = 0.1
    background_radius: float = 0.9
    object_radius: float | None = None
    """Defaults to half of the background radius."""
    softplus_beta: float = 100.0
    calibrate_init: bool = True
    dtype: Literal['float32', 'float64'] = 'float32'

    def clean(self):
        if self.hidden_dim < 1 or self.sdf_layers < 1 or self.color_layers < 1:
            raise ValidationError(_('Размеры сети должны быть положительными'), code='layers')
        if not self.beta_init > 0:
            raise ValidationError(_('Начальное значение β должно быть положительным'), code='beta')
        object_radius = self.resolved_object_radius
        if not 0 < object_radius < self.background_radius:
            raise ValidationError(
                _('Должно быть 0 < r_obj < r_bg (r_obj=%(r_obj)s, r_bg=%(r_bg)s)'),
                code='radius',
                params={'r_obj': object_radius, 'r_bg': self.background_radius},
            )
        if self.dtype not in ('float32', 'float64'):
            raise ValidationError(_('Неизвестный тип чисел: %(dtype)s'), code='dtype', params={'dtype': self.dtype})

    @property
    def resolved_object_radius(self) -> float:
        return self.background_radius / 2 if self.object_radius is None else self.object_radius

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == 'float64' else torch.float32

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class FieldOutput:
    sdf: torch.Tensor
    """Per-object signed distances, shape (N, K)."""
    scene_sdf: torch.Tensor
    """Minimum over channels, shape (N,)."""
    scene_channel: torch.Tensor
    """Index of the minimum channel, shape (N,)."""
    geometry_feature: torch.Tensor
    """Shape (N, G)."""


@dataclasses.dataclass
class FieldGradient:
    objects: torch.Tensor | None
    """d(sdf_k)/dp, shape (N, K, 3); None when only the scene gradient was requested."""
    scene: torch.Tensor
    """Gradient of the minimum channel, shape (N, 3)."""
    output: FieldOutput


class CompositionalField(nn.Module):
    def __init__(
        self,
        num_objects: int,
        grid: GridConfig,
        model: ModelConfig = ModelConfig(),
        background_channel: int | None = 0,
        seed: int = 0,
        initialize: bool = True,
    ):
        super().__init__()
        model.clean()
        if num_objects < 1:
            raise ValidationError(_('Нужен хотя бы один объект'), code='num_objects')
        self.num_objects = num_objects
        self.background_channel = background_channel
        self.grid_config = grid
        self.model_config = model

        generator = torch.Generator().manual_seed(seed)
        self.encoding = PointEncoding(grid, generator=generator)

        dims = [self.encoding.out_dim] + [model.hidden_dim] * model.sdf_layers
        layers = [nn.Linear(dims[i], dims[i + 1]) for i in range(model.sdf_layers)]
        layers.append(nn.Linear(model.hidden_dim, num_objects + model.geometry_feature_dim))
        self.sdf_layers = nn.ModuleList(layers)

        # точка, направление взгляда, нормаль, геометрический признак
        color_in = 3 + 3 + 3 + model.geometry_feature_dim
        dims = [color_in] + [model.hidden_dim] * model.color_layers
        layers = [nn.Linear(dims[i], dims[i + 1]) for i in range(model.color_layers)]
        layers.append(nn.Linear(model.hidden_dim, 3))
        self.color_layers = nn.ModuleList(layers)

        self.log_beta = nn.Parameter(torch.tensor(math.log(model.beta_init)))

        if initialize:
            for layer in self.color_layers:
                nn.init.kaiming_uniform_(layer.weight, generator=generator)
                nn.init.zeros_(layer.bias)
            self.geometric_init(generator=generator)
        self.to(model.torch_dtype)

    @property
    def beta(self) -> torch.Tensor:
        return torch.exp(self.log_beta)

    @property
    def dtype(self) -> torch.dtype:
        return self.log_beta.dtype

    def parameter_groups(self, lr_grid: float, lr_mlp: float) -> list[dict]:
        grid_params = list(self.encoding.parameters())
        grid_ids = {id(p) for p in grid_params}
        mlp_params = [p for p in self.parameters() if id(p) not in grid_ids]
        groups = [{'params': mlp_params, 'lr': lr_mlp, 'name': 'mlp'}]
        if grid_params:
            groups.append({'params': grid_params, 'lr': lr_grid, 'name': 'grid'})
        return groups

    @torch.no_grad()
    def geometric_init(
        self,
        background_radius: float | None = None,
        object_radius: float | None = None,
        generator: torch.Generator | None = None,
    ):
        """
        Initialize the SDF network to spheres centred in the cube: object channels get
        ``‖x‖ - r_obj`` and the background channel ``r_bg - ‖x‖`` (inside positive), with
        ``r_obj`` half of ``r_bg`` unless given. Radii are measured in the centred cube
        ``x = 2p - 1``; the field itself is a distance in normalized coordinates ``p``, so every
        channel holds half of those values and has a unit gradient with respect to ``p``.
        :param background_radius: r_bg in centred cube units, defaults to the model config.
        :param object_radius: r_obj, defaults to ``r_bg / 2``.
        :param generator: Random source for the weights.
        """
        if background_radius is None:
            r_bg = self.model_config.background_radius
            r_obj = self.model_config.resolved_object_radius if object_radius is None else object_radius
        else:
            r_bg = background_radius
            r_obj = r_bg / 2 if object_radius is None else object_radius
        if not 0 < r_obj < r_bg:
            raise ValidationError(_('Должно быть 0 < r_obj < r_bg'), code='radius')

        *hidden, last = self.sdf_layers
        for index, layer in enumerate(hidden):
            out_dim = layer.weight.shape[0]
            layer.bias.zero_()
            layer.weight.normal_(0.0, math.sqrt(2) / math.sqrt(out_dim), generator=generator)
            if index == 0:
                # Только координаты: частотные признаки и сетка стартуют с нулевым вкладом.
                layer.weight[:, 3:] = 0.0

        in_dim = last.weight.shape[1]
        mean = math.sqrt(math.pi) / math.sqrt(in_dim)
        last.weight.normal_(0.0, 1e-4, generator=generator)
        last.bias.zero_()
        # Без калибровки выход приближает ‖x‖, переводим в единицы p.
        radial_weight = CENTRED_TO_NORMALIZED * last.weight.new_empty(in_dim).normal_(mean, 1e-4, generator=generator)
        radial_bias = 0.0

        if self.model_config.calibrate_init:
            radial_weight, radial_bias = self._calibrate_radial(generator)

        r_bg, r_obj = CENTRED_TO_NORMALIZED * r_bg, CENTRED_TO_NORMALIZED * r_obj
        for channel in range(self.num_objects):
            if channel == self.background_channel:
                last.weight[channel] = -radial_weight
                last.bias[channel] = r_bg - radial_bias
            else:
                last.weight[channel] = radial_weight
                last.bias[channel] = radial_bias - r_obj

    def _calibrate_radial(self, generator: torch.Generator | None, count: int = 8192) -> tuple[torch.Tensor, float]:
        """Least-squares output row so that the penultimate features reproduce ‖p - 0.5‖ on the cube."""
        dtype = self.sdf_layers[0].weight.dtype
        points = torch.rand(count, 3, generator=generator, dtype=torch.float64).to(dtype)
        hidden = self._hidden(self.encoding(points)).double()
        design = torch.cat([hidden, torch.ones_like(hidden[:, :1])], dim=-1)
        target = (points.double() - 0.5).norm(dim=-1)
        gram = design.T @ design
        ridge = 1e-8 * gram.diagonal().mean()
        solution = torch.linalg.solve(gram + ridge * torch.eye(gram.shape[0], dtype=gram.dtype), design.T @ target)
        residual = (design @ solution - target).abs().mean()
        logger.debug(f'Калибровка начальной сферы: средняя ошибка {float(residual):.2e}')
        return solution[:-1].to(dtype), float(solution[-1])

    def _hidden(self, h: torch.Tensor) -> torch.Tensor:
        for index, layer in enumerate(self.sdf_layers[:-1]):
            h = F.softplus(layer(h), beta=self.model_config.softplus_beta)
            self._check_finite(f'sdf.{index}', h)
        return h

    @staticmethod
    def _check_finite(name: str, tensor: torch.Tensor):
        finite = torch.isfinite(tensor)
        if not bool(finite.all()):
            bad = (~finite).any(dim=-1) if tensor.dim() > 1 else ~finite
            rows = torch.nonzero(bad).flatten()
            raise FieldError(
                f'Нечисловые значения в слое {name}: {int(rows.numel())} точек, первая #{int(rows[0])}',
                layer=name,
            )

    def forward(self, points: torch.Tensor) -> FieldOutput:
        """
        :param points: Points in the normalized cube [0, 1]^3, shape (N, 3).
        """
        h = self._hidden(self.encoding(points))
        h = self.sdf_layers[-1](h)
        self._check_finite('sdf.out', h)
        sdf, feature = h[:, :self.num_objects], h[:, self.num_objects:]
        scene_sdf, scene_channel = torch.min(sdf, dim=-1)
        return FieldOutput(sdf=sdf, scene_sdf=scene_sdf, scene_channel=scene_channel, geometry_feature=feature)

    def color(
        self,
        points: torch.Tensor,
        view_dirs: torch.Tensor,
        normals: torch.Tensor,
        geometry_feature: torch.Tensor,
    ) -> torch.Tensor:
        """RGB in [0, 1] for points seen along ``view_dirs``, shape (N, 3)."""
        h = torch.cat([2.0 * points - 1.0, view_dirs, normals, geometry_feature], dim=-1)
        for layer in self.color_layers[:-1]:
            h = F.relu(layer(h))
        return torch.sigmoid(self.color_layers[-1](h))

    def spatial_gradient(
        self,
        points: torch.Tensor,
        mode: GradientMode = 'analytic',
        eps: float = 1e-4,
        channels: Literal['all', 'scene'] = 'all',
        create_graph: bool = False,
    ) -> FieldGradient:
        """
        Spatial derivatives of the SDF channels with respect to the normalized coordinates.
        :param points: Shape (N, 3).
        :param mode: ``analytic`` differentiates the network, ``central`` uses central differences.
        :param eps: Step of the central differences.
        :param channels: ``scene`` skips the per-object gradients.
        :param create_graph: Keep the graph so that losses on the gradients can be differentiated
            with respect to the parameters.
        """
        if mode == 'central':
            return self._central_gradient(points, eps)
        if mode != 'analytic':
            raise ValidationError(_('Неизвестный режим градиента: %(mode)s'), code='mode', params={'mode': mode})

        with torch.enable_grad():
            p = points.detach().requires_grad_(True)
            output = self.forward(p)
            scene = torch.autograd.grad(
                output.scene_sdf.sum(), p, create_graph=create_graph, retain_graph=True,
            )[0]
            objects = None
            if channels == 'all':
                objects = torch.stack([
                    torch.autograd.grad(
                        output.sdf[:, k].sum(), p, create_graph=create_graph, retain_graph=True,
                    )[0]
                    for k in range(self.num_objects)
                ], dim=1)
        return FieldGradient(objects=objects, scene=scene, output=output)

    def _central_gradient(self, points: torch.Tensor, eps: float) -> FieldGradient:
        if not eps > 0:
            raise ValidationError(_('Шаг разностной схемы должен быть положительным'), code='eps')
        output = self.forward(points)
        columns = []
        for axis in range(3):
            offset = torch.zeros_like(points)
            offset[:, axis] = eps
            columns.append((self.forward(points + offset).sdf - self.forward(points - offset).sdf) / (2 * eps))
        objects = torch.stack(columns, dim=-1)
        scene = objects[torch.arange(points.shape[0]), output.scene_channel]
        return FieldGradient(objects=objects, scene=scene, output=output)
