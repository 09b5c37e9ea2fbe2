import dataclasses
from typing import Callable

import numpy as np
import torch
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.utils import ray_uniforms


@dataclasses.dataclass
class RayBundle:
    origins: torch.Tensor
    """Shape (N, 3)."""
    directions: torch.Tensor
    """Unit vectors, shape (N, 3)."""
    near: torch.Tensor
    """Shape (N,)."""
    far: torch.Tensor
    """Shape (N,)."""

    def __len__(self) -> int:
        return self.origins.shape[0]

    def clean(self):
        norms = self.directions.norm(dim=-1)
        tolerance = 1e-9 if norms.dtype == torch.float64 else 1e-5
        if bool(((norms - 1.0).abs() > tolerance).any()):
            raise ValidationError(_('Направления лучей должны быть единичными'), code='direction')
        if not bool((self.near < self.far).all()):
            raise ValidationError(_('Для каждого луча должно быть near < far'), code='bounds')

    def subset(self, index: torch.Tensor | slice) -> 'RayBundle':
        return RayBundle(self.origins[index], self.directions[index], self.near[index], self.far[index])


@dataclasses.dataclass
class QuadratureSamples:
    t: torch.Tensor
    """Sorted sample depths, shape (N, S)."""
    deltas: torch.Tensor
    """Interval lengths, shape (N, S)."""
    points: torch.Tensor
    """Sample positions, shape (N, S, 3)."""

    @property
    def shape(self) -> tuple[int, int]:
        return self.t.shape[0], self.t.shape[1]


def intersect_aabb(
    origins: torch.Tensor,
    directions: torch.Tensor,
    lower: torch.Tensor | np.ndarray | tuple,
    upper: torch.Tensor | np.ndarray | tuple,
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Slab test against an axis-aligned box.
    :return: Entry and exit depths, shape (N,); entry > exit for rays missing the box.
    """
    lower = torch.as_tensor(lower, dtype=origins.dtype)
    upper = torch.as_tensor(upper, dtype=origins.dtype)
    safe = torch.where(directions.abs() < 1e-12, torch.full_like(directions, 1e-12), directions)
    t0 = (lower - origins) / safe
    t1 = (upper - origins) / safe
    t_enter = torch.minimum(t0, t1).amax(dim=-1)
    t_exit = torch.maximum(t0, t1).amin(dim=-1)
    return t_enter, t_exit


def make_samples(bundle: RayBundle, t: torch.Tensor) -> QuadratureSamples:
    """Wrap sorted depths into samples; the last interval runs to the far bound."""
    far = bundle.far[:, None].to(t.dtype)
    deltas = torch.cat([t[:, 1:] - t[:, :-1], far - t[:, -1:]], dim=-1).clamp_min(torch.finfo(t.dtype).tiny)
    points = bundle.origins[:, None, :] + t[..., None] * bundle.directions[:, None, :]
    return QuadratureSamples(t=t, deltas=deltas, points=points)


def sample_pdf(edges: torch.Tensor, weights: torch.Tensor, uniforms: torch.Tensor) -> torch.Tensor:
    """
    Inverse transform sampling of a piecewise-constant density.
    :param edges: Bin edges, shape (N, B + 1).
    :param weights: Non-negative bin masses, shape (N, B); all-zero rows fall back to uniform.
    :param uniforms: Numbers in [0, 1), shape (N, M).
    :return: Samples, shape (N, M).
    """
    totals = weights.sum(dim=-1, keepdim=True)
    degenerate = totals <= 1e-12
    weights = torch.where(degenerate, torch.ones_like(weights), weights)
    pdf = weights / weights.sum(dim=-1, keepdim=True)
    cdf = torch.cat([torch.zeros_like(pdf[:, :1]), torch.cumsum(pdf, dim=-1)], dim=-1)
    cdf[:, -1] = 1.0

    index = torch.searchsorted(cdf, uniforms.contiguous(), right=True)
    below = (index - 1).clamp(0, weights.shape[-1] - 1)
    above = below + 1
    cdf_below = torch.gather(cdf, 1, below)
    cdf_above = torch.gather(cdf, 1, above)
    edge_below = torch.gather(edges, 1, below)
    edge_above = torch.gather(edges, 1, above)
    span = cdf_above - cdf_below
    span = torch.where(span < 1e-12, torch.ones_like(span), span)
    return edge_below + (uniforms - cdf_below) / span * (edge_above - edge_below)


def stratified_depths(bundle: RayBundle, count: int, uniforms: torch.Tensor | None) -> tuple[torch.Tensor, torch.Tensor]:
    """
    One depth per equal-width bin between near and far, jittered by ``uniforms`` or at the bin
    centres when ``uniforms`` is None.
    :return: Depths (N, count) and bin edges (N, count + 1).
    """
    dtype = bundle.origins.dtype
    steps = torch.linspace(0.0, 1.0, count + 1, dtype=dtype)
    near, far = bundle.near[:, None], bundle.far[:, None]
    edges = near + (far - near) * steps[None, :]
    jitter = torch.full((len(bundle), count), 0.5, dtype=dtype) if uniforms is None else uniforms
    t = edges[:, :-1] + (edges[:, 1:] - edges[:, :-1]) * jitter
    return t, edges


@torch.no_grad()
def sample_ray(
    bundle: RayBundle,
    n_coarse: int,
    n_fine: int,
    density_fn: Callable[[torch.Tensor], torch.Tensor] | None,
    seed: int,
    ray_ids: np.ndarray | None = None,
    perturb: bool = True,
) -> QuadratureSamples:
    """
    Stratified samples plus importance samples drawn from the coarse rendering weights.
    :param bundle: Rays.
    :param n_coarse: Stratified samples per ray, at least 2.
    :param n_fine: Importance samples per ray; 0 keeps the stratified samples only.
    :param density_fn: Maps points (M, 3) to densities (M,); required when ``n_fine > 0``.
    :param seed: Global seed; ray ``i`` draws from the Philox stream keyed by ``(ray_ids[i], seed)``.
    :param ray_ids: Global indices of the rays, defaults to ``arange(N)``.
    :param perturb: Jitter stratified samples inside their bins (bin centres otherwise).
    """
    from compsdf.rendering.volume import composite

    if n_coarse < 2:
        raise ValidationError(_('Нужно хотя бы 2 равномерных отсчета на луч'), code='n_coarse')
    if n_fine < 0:
        raise ValidationError(_('Число уточняющих отсчетов не может быть отрицательным'), code='n_fine')
    n_rays = len(bundle)
    if ray_ids is None:
        ray_ids = np.arange(n_rays)
    uniforms = torch.from_numpy(ray_uniforms(seed, ray_ids, n_coarse + n_fine)).to(bundle.origins.dtype)

    coarse, edges = stratified_depths(bundle, n_coarse, uniforms[:, :n_coarse] if perturb else None)
    if n_fine == 0:
        return make_samples(bundle, coarse)
    if density_fn is None:
        raise ValidationError(_('Для уточняющих отсчетов нужна функция плотности'), code='density_fn')

    samples = make_samples(bundle, coarse)
    sigma = density_fn(samples.points.reshape(-1, 3)).reshape(n_rays, n_coarse)
    weights = composite(samples, sigma).weights
    fine = sample_pdf(edges, weights, uniforms[:, n_coarse:])
    t, _order = torch.sort(torch.cat([coarse, fine], dim=-1), dim=-1)
    return make_samples(bundle, t)
