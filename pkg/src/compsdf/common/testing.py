"""Helpers shared by the test modules of the apps."""
from typing import Callable

import numpy as np
import torch

from compsdf.field.encoding import GridConfig
from compsdf.field.network import CompositionalField, ModelConfig
from compsdf.geometry.primitives import AnalyticScene

TINY_GRID = GridConfig(levels=4, base_resolution=4, finest_resolution=32, table_size=2 ** 10, frequency_bands=2)
TINY_MODEL = ModelConfig(hidden_dim=32, color_layers=2, geometry_feature_dim=8, dtype='float64')


def tiny_field(num_objects: int = 3, seed: int = 0, **model_overrides) -> CompositionalField:
    """Shrunken float64 field for gradient checks."""
    model = ModelConfig(**{**TINY_MODEL.as_dict(), **model_overrides})
    field = CompositionalField(num_objects, TINY_GRID, model, seed=seed)
    # Ненулевые признаки сетки, чтобы проверка затрагивала ее путь.
    generator = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for table in field.encoding.grid.tables:
            table.copy_(torch.rand(table.shape, generator=generator, dtype=table.dtype) * 0.2 - 0.1)
    separate_channels(field)
    return field


def separate_channels(field: CompositionalField, step: float = 0.01):
    """
    Shift the output bias of every channel by a different amount. Object channels start out
    identical, and their minimum is not differentiable where they tie.
    """
    with torch.no_grad():
        bias = field.sdf_layers[-1].bias
        bias[:field.num_objects] += step * torch.arange(field.num_objects, dtype=bias.dtype)


def central_difference(
    objective: Callable[[], torch.Tensor],
    tensor: torch.Tensor,
    index: tuple[int, ...],
    eps: float = 1e-5,
) -> float:
    """Central difference of ``objective`` with respect to one entry of ``tensor``."""
    with torch.no_grad():
        original = tensor[index].item()
        tensor[index] = original + eps
        upper = float(objective())
        tensor[index] = original - eps
        lower = float(objective())
        tensor[index] = original
    return (upper - lower) / (2 * eps)


def relative_error(actual: float, expected: float, floor: float = 1e-8) -> float:
    return abs(actual - expected) / max(abs(expected), abs(actual), floor)


def two_box_scene(with_far_sphere: bool = False) -> AnalyticScene:
    """Two boxes on the x axis, the first hiding the second from rays going along +x."""
    primitives = [
        {'kind': 'box', 'center': [-0.5, 0.0, 0.0], 'half_extents': [0.25, 0.25, 0.25], 'albedo': [0.8, 0.2, 0.2]},
        {'kind': 'box', 'center': [0.5, 0.0, 0.0], 'half_extents': [0.25, 0.25, 0.25], 'albedo': [0.2, 0.2, 0.8]},
    ]
    if with_far_sphere:
        primitives.append({'kind': 'sphere', 'center': [1.5, 0.7, 0.7], 'radius': 0.1})
    return AnalyticScene.from_dict({
        'bounds': [[-2.0, -1.0, -1.0], [2.0, 1.0, 1.0]],
        'background': {},
        'primitives': primitives,
    })


def random_scene(rng: np.random.Generator, count: int = 3) -> AnalyticScene:
    """Random spheres and boxes inside [-1, 1]^3 with the background box on the bounds."""
    primitives = []
    for _index in range(count):
        center = rng.uniform(-0.5, 0.5, size=3)
        if rng.random() < 0.5:
            primitives.append({'kind': 'sphere', 'center': center.tolist(), 'radius': float(rng.uniform(0.1, 0.4))})
        else:
            primitives.append({
                'kind': 'box', 'center': center.tolist(), 'half_extents': rng.uniform(0.05, 0.4, size=3).tolist(),
            })
    return AnalyticScene.from_dict({'bounds': [[-1.0] * 3, [1.0] * 3], 'background': {}, 'primitives': primitives})
