"""
Training objectives: color reconstruction, object opacity, Eikonal, object distinction and the
monocular depth and normal cues, plus their weighted sum.
"""
import dataclasses
import logging

import torch
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _
from torch.nn import functional as F

logger = logging.getLogger(__name__)

COMPONENTS = ('rec', 'opacity', 'eikonal', 'distinction', 'depth', 'normal')


@dataclasses.dataclass(frozen=True)
class LossWeights:
    depth: float = 0.1
    normal: float = 0.05
    eikonal: float = 0.1
    distinction: float = 0.5

    def clean(self):
        negative = [name for name, value in dataclasses.asdict(self).items() if value < 0]
        if negative:
            raise ValidationError(
                _('Веса функции потерь не могут быть отрицательными: %(names)s'),
                code='weights',
                params={'names': ', '.join(negative)},
            )

    def without_regularizer(self) -> 'LossWeights':
        return dataclasses.replace(self, distinction=0.0)

    def without_monocular_cues(self) -> 'LossWeights':
        return dataclasses.replace(self, depth=0.0, normal=0.0)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class RayBatchTargets:
    color: torch.Tensor
    """(N, 3) in [0, 1]."""
    object_opacity: torch.Tensor
    """(N, K) one-hot rows from the instance mask."""
    depth: torch.Tensor
    """(N,) pseudo depth along the ray, normalized units."""
    normal: torch.Tensor
    """(N, 3) pseudo normal in the world frame."""
    image_ids: torch.Tensor
    """(N,) integer image index of every ray."""
    valid: torch.Tensor
    """(N,) rays with a usable depth/normal."""

    def clean(self):
        rows = self.object_opacity.sum(dim=-1)
        if not bool((rows == 1).all()):
            raise ValidationError(_('Каждый луч должен принадлежать ровно одному объекту'), code='opacity_targets')


@dataclasses.dataclass
class ScaleShift:
    scale: torch.Tensor
    """Per-ray w, shape (N,)."""
    shift: torch.Tensor
    """Per-ray q, shape (N,)."""
    singular: list[int]
    """Images whose system could not be solved."""


def loss_rec(color: torch.Tensor, targets: RayBatchTargets) -> torch.Tensor:
    """Sum over rays of the L1 color error."""
    if color.shape[0] == 0:
        raise ValidationError(_('Пустой пакет лучей'), code='empty_batch')
    return (color - targets.color).abs().sum()


def loss_opacity(object_opacity: torch.Tensor, targets: RayBatchTargets) -> torch.Tensor:
    """Mean over rays of the channel-averaged absolute opacity error; the background is a channel."""
    return (object_opacity - targets.object_opacity).abs().mean(dim=-1).mean()


def loss_eikonal(object_gradients: torch.Tensor, scene_gradients: torch.Tensor) -> torch.Tensor:
    """
    Σ_i E[(‖∇d_i‖ - 1)^2] + E[(‖∇d_Ω‖ - 1)^2].
    :param object_gradients: (M, K, 3).
    :param scene_gradients: (M, 3).
    """
    objects = ((object_gradients.norm(dim=-1) - 1.0) ** 2).mean(dim=0).sum()
    scene = ((scene_gradients.norm(dim=-1) - 1.0) ** 2).mean()
    return objects + scene


def loss_distinction(sdf: torch.Tensor) -> torch.Tensor:
    """
    Penalize points inside two objects at once: E_p[Σ_{i ≠ argmin} ReLU(-d_i - d_Ω)].
    The minimum channel is removed by subtracting its term, which keeps the expression free of
    indexing by the argmin.
    :param sdf: Per-object distances at uniformly drawn points, shape (M, K).
    """
    scene = sdf.min(dim=-1, keepdim=True).values
    terms = F.relu(-sdf - scene).sum(dim=-1) - F.relu(-2.0 * scene[:, 0])
    return terms.mean()


def loss_distinction_direct(sdf: torch.Tensor) -> torch.Tensor:
    """Same quantity with the minimum channel masked out explicitly."""
    scene, channel = sdf.min(dim=-1, keepdim=True)
    others = torch.ones_like(sdf, dtype=torch.bool).scatter(-1, channel, False)
    return torch.where(others, F.relu(-sdf - scene), torch.zeros_like(sdf)).sum(dim=-1).mean()


def _solve_group(rendered: torch.Tensor, pseudo: torch.Tensor) -> tuple[float, float, bool]:
    a00 = torch.sum(rendered * rendered)
    a01 = torch.sum(rendered)
    a11 = float(rendered.numel())
    b0 = torch.sum(rendered * pseudo)
    b1 = torch.sum(pseudo)
    det = a00 * a11 - a01 * a01
    if rendered.numel() < 2 or not float(det) > 1e-12 * float(a00) * a11:
        mean = float(pseudo.mean()) if pseudo.numel() else 0.0
        return 0.0, mean, True
    scale = (a11 * b0 - a01 * b1) / det
    shift = (-a01 * b0 + a00 * b1) / det
    return float(scale), float(shift), False


def solve_depth_scale_shift(
    rendered: torch.Tensor,
    pseudo: torch.Tensor,
    image_ids: torch.Tensor | None = None,
    valid: torch.Tensor | None = None,
) -> ScaleShift:
    """
    Least-squares ``(w, q)`` minimizing Σ (w D̂ + q - D̄)^2 independently for every image,
    through the 2x2 normal equations. The solution is returned detached: at the optimum the
    loss has zero derivative with respect to ``w`` and ``q``.
    :param rendered: D̂, shape (N,).
    :param pseudo: D̄, shape (N,).
    :param image_ids: Image of every ray, all rays belong to one image when omitted.
    :param valid: Rays taking part in the fit.
    :return: Per-ray scale and shift; singular images get ``w = 0, q = mean(D̄)``.
    """
    rendered = rendered.detach().double()
    pseudo = pseudo.detach().double()
    if image_ids is None:
        image_ids = torch.zeros(rendered.shape[0], dtype=torch.long)
    if valid is None:
        valid = torch.ones(rendered.shape[0], dtype=torch.bool)

    scale = torch.zeros_like(rendered)
    shift = torch.zeros_like(rendered)
    singular = []
    for image in torch.unique(image_ids).tolist():
        rows = image_ids == image
        fit = rows & valid
        w, q, failed = _solve_group(rendered[fit], pseudo[fit])
        if failed:
            singular.append(image)
            logger.debug(f'Вырожденная система масштаба глубины для кадра {image}')
        scale[rows] = w
        shift[rows] = q
    return ScaleShift(scale=scale, shift=shift, singular=singular)


def loss_depth(
    rendered: torch.Tensor,
    pseudo: torch.Tensor,
    alignment: ScaleShift,
    valid: torch.Tensor | None = None,
) -> torch.Tensor:
    """Σ (w D̂ + q - D̄)^2 over valid rays."""
    residual = alignment.scale.to(rendered.dtype) * rendered + alignment.shift.to(rendered.dtype) - pseudo
    if valid is not None:
        residual = residual[valid]
    return (residual ** 2).sum()


def loss_normal(rendered: torch.Tensor, pseudo: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
    """
    Σ ‖N̂ - N̄‖_1 + |1 - N̂ · N̄| over rays.
    :param rendered: Unnormalized rendered normals, shape (N, 3).
    :param pseudo: Unit pseudo normals in the same frame, shape (N, 3).
    """
    if valid is not None:
        rendered, pseudo = rendered[valid], pseudo[valid]
    l1 = (rendered - pseudo).abs().sum(dim=-1)
    angular = (1.0 - (rendered * pseudo).sum(dim=-1)).abs()
    return (l1 + angular).sum()


@dataclasses.dataclass
class LossComponents:
    rec: torch.Tensor
    opacity: torch.Tensor
    eikonal: torch.Tensor
    distinction: torch.Tensor
    depth: torch.Tensor
    normal: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {name: float(getattr(self, name).detach()) for name in COMPONENTS}


def loss_total(components: LossComponents, weights: LossWeights) -> torch.Tensor:
    """L_rec + L_O + λ_depth L_depth + λ_normal L_normal + λ_1 L_SDF + λ_2 L_reg."""
    return (
        components.rec
        + components.opacity
        + weights.depth * components.depth
        + weights.normal * components.normal
        + weights.eikonal * components.eikonal
        + weights.distinction * components.distinction
    )


@dataclasses.dataclass(frozen=True)
class LossRecord:
    iteration: int
    components: dict[str, float]
    total: float
    beta: float

    def as_dict(self) -> dict:
        return {'iter': self.iteration, **self.components, 'total': self.total, 'beta': self.beta}
