"""
Quadrature volume rendering of signed distance fields.

Densities come from the Laplace CDF of the negated SDF. Scene opacity, color, depth and normal
are weighted by ``w_i = T_i α_i``; object opacities reuse the scene transmittance so a surface
hidden behind another object receives no opacity.
"""
import dataclasses
import enum

import torch
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.rendering.rays import QuadratureSamples


class OpacityVariant(enum.StrEnum):
    E1 = 'e1'
    """Per-object transmittance, blind to occlusion by other objects."""
    OCCLUSION_AWARE = 'occlusion-aware'
    SEMANTIC = 'semantic'
    """Scene weights times a sigmoid of the object SDF."""


@dataclasses.dataclass
class RenderOutputs:
    weights: torch.Tensor
    """w_i = T_i α_i, shape (N, S)."""
    transmittance: torch.Tensor
    """T_i, shape (N, S)."""
    opacity: torch.Tensor
    """Scene opacity, shape (N,)."""
    depth: torch.Tensor
    """Expected depth Σ w_i t_i, shape (N,)."""
    color: torch.Tensor | None = None
    """Shape (N, 3)."""
    normal: torch.Tensor | None = None
    """Shape (N, 3), unnormalized."""
    object_opacity: torch.Tensor | None = None
    """Shape (N, K)."""
    sample_gradients: torch.Tensor | None = None
    """Scene SDF gradients at the samples, shape (N, S, 3)."""


def density_from_sdf(sdf: torch.Tensor, beta: torch.Tensor | float) -> torch.Tensor:
    """
    σ = Ψ_β(−d) / β with Ψ_β the CDF of a zero-mean Laplace distribution of scale β.
    Both branches are evaluated on clamped arguments so neither overflows and the derivative
    at ``d = 0`` is exact.
    :param sdf: Signed distances.
    :param beta: Positive sharpness.
    :return: Non-negative densities of the same shape.
    """
    outside = 0.5 * torch.exp(-sdf.clamp(min=0.0) / beta)
    inside = 1.0 - 0.5 * torch.exp(sdf.clamp(max=0.0) / beta)
    return torch.where(sdf >= 0, outside, inside) / beta


def _exclusive_transmittance(sigma_delta: torch.Tensor) -> torch.Tensor:
    """T_i = exp(-Σ_{j<i} σ_j δ_j) along the last dimension."""
    accumulated = torch.cumsum(sigma_delta, dim=-1)
    return torch.exp(-torch.cat([torch.zeros_like(accumulated[..., :1]), accumulated[..., :-1]], dim=-1))


def _accumulate(terms: torch.Tensor) -> torch.Tensor:
    """Sum per-sample terms laid out as (N, R, S) over samples, clamped to 1."""
    return terms.contiguous().sum(dim=-1).clamp(max=1.0)


def composite(
    samples: QuadratureSamples,
    sigma: torch.Tensor | None = None,
    colors: torch.Tensor | None = None,
    normals: torch.Tensor | None = None,
    object_sigma: torch.Tensor | None = None,
) -> RenderOutputs:
    """
    Alpha-composite samples along every ray.
    :param samples: Quadrature samples, shape (N, S).
    :param sigma: Scene density (N, S). Derived as the channel maximum when ``object_sigma``
        is given, since the scene SDF is the channel minimum and σ is monotone.
    :param colors: Per-sample RGB, shape (N, S, 3).
    :param normals: Per-sample unit normals, shape (N, S, 3).
    :param object_sigma: Per-object densities (N, S, K); adds occlusion-aware object opacities.
    """
    deltas = samples.deltas
    object_alpha = None
    if object_sigma is not None:
        object_alpha = -torch.expm1(-object_sigma * deltas[..., None])
        sigma, _index = object_sigma.max(dim=-1)
        # α^Ω_j = max_i α^(i)_j exactly, so every object term is bounded by the scene term.
        alpha, _index = object_alpha.max(dim=-1)
    elif sigma is not None:
        if bool((sigma < 0).any()):
            raise ValidationError(_('Плотность не может быть отрицательной'), code='sigma')
        alpha = -torch.expm1(-sigma * deltas)
    else:
        raise ValidationError(_('Нужна плотность сцены или объектов'), code='sigma')

    transmittance = _exclusive_transmittance(sigma * deltas)
    weights = transmittance * alpha

    object_opacity = None
    if object_alpha is not None:
        object_terms = transmittance[..., None] * object_alpha
        stacked = torch.cat([weights[:, None, :], object_terms.transpose(1, 2)], dim=1)
        totals = _accumulate(stacked)
        opacity, object_opacity = totals[:, 0], totals[:, 1:]
    else:
        opacity = _accumulate(weights[:, None, :])[:, 0]

    return RenderOutputs(
        weights=weights,
        transmittance=transmittance,
        opacity=opacity,
        depth=(weights * samples.t).sum(dim=-1),
        color=None if colors is None else (weights[..., None] * colors).sum(dim=1),
        normal=None if normals is None else (weights[..., None] * normals).sum(dim=1),
        object_opacity=object_opacity,
    )


def render_object_opacity(
    samples: QuadratureSamples,
    object_sigma: torch.Tensor,
    transmittance: torch.Tensor,
) -> torch.Tensor:
    """
    Ô_i = Σ_j T_j (1 - exp(-σ_i(p_j) δ_j)) with the scene transmittance T.
    :param samples: Quadrature samples, shape (N, S).
    :param object_sigma: Per-object densities, shape (N, S, K).
    :param transmittance: Scene transmittance, shape (N, S).
    :return: Opacities, shape (N, K).
    """
    object_alpha = -torch.expm1(-object_sigma * samples.deltas[..., None])
    return _accumulate((transmittance[..., None] * object_alpha).transpose(1, 2))


def variant_opacity(
    samples: QuadratureSamples,
    object_sigma: torch.Tensor,
    variant: OpacityVariant | str,
    object_sdf: torch.Tensor | None = None,
    gamma: float = 20.0,
) -> torch.Tensor:
    """
    Object opacities under one of the compared formulations.
    :param samples: Quadrature samples, shape (N, S).
    :param object_sigma: Per-object densities, shape (N, S, K).
    :param variant: Formulation.
    :param object_sdf: Per-object SDF (N, S, K), needed by the semantic variant.
    :param gamma: Sigmoid sharpness of the semantic variant.
    :return: Opacities, shape (N, K).
    """
    variant = OpacityVariant(variant)
    deltas = samples.deltas[..., None]
    if variant == OpacityVariant.E1:
        sigma_delta = (object_sigma * deltas).transpose(1, 2)
        own_transmittance = _exclusive_transmittance(sigma_delta)
        return _accumulate(own_transmittance * -torch.expm1(-sigma_delta))

    scene = composite(samples, object_sigma=object_sigma)
    if variant == OpacityVariant.OCCLUSION_AWARE:
        return scene.object_opacity

    if object_sdf is None:
        raise ValidationError(_('Семантическому варианту нужны SDF объектов'), code='object_sdf')
    semantic = torch.sigmoid(-gamma * object_sdf)
    return _accumulate((scene.weights[..., None] * semantic).transpose(1, 2))
