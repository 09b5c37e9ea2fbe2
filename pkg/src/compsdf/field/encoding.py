"""
Multi-resolution feature grid with spatial hashing plus fixed-frequency position embedding.

Points enter in the normalized scene cube [0, 1]^3. Every level ``l`` holds a lattice of
resolution ``R_l``; coarse levels whose vertices fit into the table are stored densely,
finer levels are addressed through the XOR hash of the vertex coordinates.
"""
import dataclasses
import logging
import math

import torch
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _
from torch import nn

logger = logging.getLogger(__name__)

HASH_PRIMES = (1, 2654435761, 805459861)

_MASK32 = 0xFFFFFFFF

# 0->000, 1->001, ..., 7->111 (bit 0 is x).
_CORNERS = torch.tensor([[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=torch.long)


@dataclasses.dataclass(frozen=True)
class GridConfig:
    levels: int = 16
    base_resolution: int = 16
    finest_resolution: int = 2048
    table_size: int = 2 ** 19
    features_per_level: int = 2
    primes: tuple[int, int, int] = HASH_PRIMES
    frequency_bands: int = 6
    use_grid: bool = True
    """False gives the plain MLP variant: the network only sees the position embedding."""

    def clean(self):
        errors = []
        if self.levels < 2:
            errors.append(ValidationError(_('Нужно хотя бы 2 уровня сетки'), code='levels'))
        if not 0 < self.base_resolution < self.finest_resolution:
            errors.append(ValidationError(_('Должно быть 0 < R_min < R_max'), code='resolution'))
        if self.table_size < 2 or self.table_size & (self.table_size - 1):
            errors.append(ValidationError(_('Размер таблицы должен быть степенью двойки'), code='table_size'))
        if self.features_per_level < 1:
            errors.append(ValidationError(_('Нужен хотя бы один признак на уровень'), code='features'))
        if self.frequency_bands < 0:
            errors.append(ValidationError(_('Число частот не может быть отрицательным'), code='bands'))
        if len(self.primes) != 3 or self.primes[0] != 1 or any(
            p % 2 == 0 or p <= 1 or p > _MASK32 for p in self.primes[1:]
        ):
            errors.append(ValidationError(
                _('Простые числа хеша: π1 = 1, π2 и π3 нечетные, больше 1 и помещаются в 32 бита'),
                code='primes',
            ))
        if errors:
            raise ValidationError(errors)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def level_resolutions(config: GridConfig) -> list[int]:
    """
    Resolutions of the grid levels, geometrically spaced between the coarsest and the finest.
    :param config: Grid configuration.
    :return: ``L`` integers, first equals ``R_min``, last equals ``R_max``.
    """
    growth = math.exp((math.log(config.finest_resolution) - math.log(config.base_resolution)) / (config.levels - 1))
    # 1e-9 keeps exact powers (the last level in particular) from flooring one below.
    return [math.floor(config.base_resolution * growth ** level + 1e-9) for level in range(config.levels)]


def hash_index(cells: torch.Tensor, config: GridConfig) -> torch.Tensor:
    """
    Spatial hash of integer lattice vertices: XOR of ``x_i * π_i`` in 32-bit unsigned
    arithmetic, reduced modulo the table size.
    :param cells: Non-negative integer coordinates, shape (..., 3).
    :param config: Grid configuration.
    :return: Table indices in [0, T), shape (...).
    """
    cells = cells.long()
    result = torch.zeros_like(cells[..., 0])
    for axis, prime in enumerate(config.primes):
        result = result ^ ((cells[..., axis] * prime) & _MASK32)
    return result & (config.table_size - 1)


def frequency_encoding(x: torch.Tensor, bands: int) -> torch.Tensor:
    """``sin``/``cos`` of ``2^k π x`` for ``k < bands``, per coordinate."""
    if bands == 0:
        return x.new_zeros(*x.shape[:-1], 0)
    scales = (2.0 ** torch.arange(bands, dtype=x.dtype)) * math.pi
    scaled = (x[..., None, :] * scales[:, None]).flatten(-2)
    return torch.cat([torch.sin(scaled), torch.cos(scaled)], dim=-1)


class HashGrid(nn.Module):
    def __init__(self, config: GridConfig, generator: torch.Generator | None = None):
        super().__init__()
        config.clean()
        self.config = config
        self.resolutions = level_resolutions(config)
        self.dense = [(r + 1) ** 3 <= config.table_size for r in self.resolutions]
        tables = []
        for resolution, dense in zip(self.resolutions, self.dense):
            size = (resolution + 1) ** 3 if dense else config.table_size
            table = torch.empty(size, config.features_per_level)
            table.uniform_(-1e-4, 1e-4, generator=generator)
            tables.append(nn.Parameter(table))
        self.tables = nn.ParameterList(tables)

    @property
    def out_dim(self) -> int:
        return self.config.levels * self.config.features_per_level

    def vertex_index(self, level: int, vertices: torch.Tensor) -> torch.Tensor:
        resolution = self.resolutions[level]
        if self.dense[level]:
            side = resolution + 1
            return vertices[..., 0] + side * vertices[..., 1] + side * side * vertices[..., 2]
        return hash_index(vertices, self.config)

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        """
        Trilinearly interpolated features of every level, concatenated.
        :param points: Points in [0, 1]^3, shape (N, 3).
        :return: Features, shape (N, L * F).
        """
        corners = _CORNERS.to(points.device)
        features = []
        for level, (resolution, table) in enumerate(zip(self.resolutions, self.tables)):
            scaled = points * resolution
            # На границе ячейки берется ячейка со стороны +, на правой грани куба - последняя.
            cell = torch.floor(scaled.detach()).long().clamp(0, resolution - 1)
            local = scaled - cell.to(scaled.dtype)
            vertices = cell[:, None, :] + corners[None, :, :]
            values = table[self.vertex_index(level, vertices)]
            weights = torch.where(corners[None].bool(), local[:, None, :], 1.0 - local[:, None, :]).prod(dim=-1)
            features.append((weights[..., None] * values).sum(dim=1))
        return torch.cat(features, dim=-1)


class PointEncoding(nn.Module):
    """Network input: centred coordinates, their frequency embedding and the grid features."""

    def __init__(self, config: GridConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        self.grid = HashGrid(config, generator=generator) if config.use_grid else None
        self.out_of_bounds = 0

    @property
    def out_dim(self) -> int:
        grid_dim = self.grid.out_dim if self.grid is not None else 0
        return 3 + 6 * self.config.frequency_bands + grid_dim

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        """
        :param points: Points in the normalized cube, shape (N, 3); outside points are clamped.
        :return: Encoded features, shape (N, out_dim).
        """
        clamped = points.clamp(0.0, 1.0)
        outside = int((clamped != points).any(dim=-1).sum())
        if outside:
            self.out_of_bounds += outside
            logger.debug(f'Точки вне куба нормализации: {outside}, прижаты к границе')
        centred = 2.0 * clamped - 1.0
        parts = [centred, frequency_encoding(centred, self.config.frequency_bands)]
        if self.grid is not None:
            parts.append(self.grid(clamped))
        return torch.cat(parts, dim=-1)
