"""
Marching-cubes extraction of the scene surface or a single object channel, from a trained
field or an analytic scene.
"""
import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Literal

import numpy as np
import torch
from django.conf import settings
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _
from skimage import measure

from compsdf.common.decorators import gc_collect, log_duration
from compsdf.common.exceptions import MeshingError
from compsdf.dataio.schema import BOUNDS_MARGIN, SceneNormalization
from compsdf.field.network import CompositionalField
from compsdf.geometry.primitives import AnalyticScene
from compsdf.meshing.mesh import Mesh

logger = logging.getLogger(__name__)

PADDING = 0.05
MIN_RESOLUTION = 8
SLAB_POINTS = 2 ** 18

Channel = Literal['scene'] | int


def parse_channel(text: str) -> Channel:
    """``scene`` or ``obj:<i>``."""
    if text == 'scene':
        return 'scene'
    prefix, _sep, index = text.partition(':')
    if prefix != 'obj' or not index.isdigit():
        raise ValidationError(
            _('Канал должен быть scene или obj:<номер>, получено %(text)s'), code='channel', params={'text': text},
        )
    return int(index)


@dataclasses.dataclass
class SdfLattice:
    values: np.ndarray
    """Per-object distances at the lattice nodes, shape (n, n, n, K)."""
    lower: np.ndarray
    """Scene-unit position of node (0, 0, 0)."""
    spacing: np.ndarray
    """Node spacing per axis, scene units."""

    @property
    def num_objects(self) -> int:
        return self.values.shape[-1]

    def channel(self, channel: Channel) -> np.ndarray:
        if channel == 'scene':
            return self.values.min(axis=-1)
        if not 0 <= channel < self.num_objects:
            raise ValidationError(
                _('Нет канала %(channel)s, объектов всего %(count)s'),
                code='channel',
                params={'channel': channel, 'count': self.num_objects},
            )
        return self.values[..., channel]


def default_bounds(source: CompositionalField | AnalyticScene, normalization: SceneNormalization | None):
    if isinstance(source, AnalyticScene):
        lower, upper = (np.asarray(corner, dtype=np.float64) for corner in source.bounds)
    else:
        if normalization is None:
            raise ValidationError(_('Для поля нужна нормализация сцены'), code='normalization')
        half = 0.5 / (normalization.scale * BOUNDS_MARGIN)
        center = np.asarray(normalization.center)
        lower, upper = center - half, center + half
    pad = PADDING * (upper - lower)
    return lower - pad, upper + pad


def _sdf_function(source: CompositionalField | AnalyticScene, normalization: SceneNormalization | None):
    if isinstance(source, AnalyticScene):
        return lambda points: source.eval_sdf(points).objects

    def evaluate(points: np.ndarray) -> np.ndarray:
        unit = torch.from_numpy(normalization.to_unit(points)).to(source.dtype)
        with torch.no_grad():
            return source(unit).sdf.double().numpy()

    return evaluate


@log_duration('Вычисление решетки SDF')
def evaluate_lattice(
    source: CompositionalField | AnalyticScene,
    resolution: int,
    normalization: SceneNormalization | None = None,
    bounds: tuple | None = None,
    threads: int | None = None,
) -> SdfLattice:
    """
    Evaluate every SDF channel on an ``resolution^3`` node lattice, slab by slab along x.
    :param normalization: Required for a field: maps scene units into its cube.
    :param bounds: Scene-unit box, the scene bounds padded by 5% by default.
    """
    if resolution < MIN_RESOLUTION:
        raise ValidationError(
            _('Разрешение решетки должно быть не меньше %(min)s'), code='resolution', params={'min': MIN_RESOLUTION},
        )
    lower, upper = default_bounds(source, normalization) if bounds is None else map(np.asarray, bounds)
    axes = [np.linspace(lower[i], upper[i], resolution) for i in range(3)]
    spacing = (upper - lower) / (resolution - 1)
    sdf = _sdf_function(source, normalization)
    num_objects = source.num_objects
    rows = max(1, SLAB_POINTS // (resolution * resolution))

    @gc_collect
    def slab(start: int) -> np.ndarray:
        xs = axes[0][start:start + rows]
        grid = np.stack(np.meshgrid(xs, axes[1], axes[2], indexing='ij'), axis=-1)
        return sdf(grid.reshape(-1, 3)).reshape(len(xs), resolution, resolution, num_objects).astype(np.float32)

    threads = settings.COMPSDF_THREADS if threads is None else threads
    with ThreadPoolExecutor(max_workers=threads) as pool:
        slabs = list(pool.map(slab, range(0, resolution, rows)))
    return SdfLattice(values=np.concatenate(slabs, axis=0), lower=lower, spacing=spacing)


def mesh_from_lattice(lattice: SdfLattice, channel: Channel = 'scene') -> Mesh:
    """Zero level set of one channel; an empty mesh with a warning when the channel has no surface."""
    volume = lattice.channel(channel)
    object_id = None if channel == 'scene' else channel
    if not (volume.min() < 0.0 < volume.max()):
        logger.warning(f'Поверхность канала {channel} не найдена: сетка пуста')
        return Mesh.empty(object_id)
    try:
        vertices, faces, _normals, _values = measure.marching_cubes(
            volume, level=0.0, spacing=tuple(lattice.spacing), method='lewiner', allow_degenerate=False,
        )
    except (ValueError, RuntimeError) as e:
        raise MeshingError(f'Ошибка марширующих кубов для канала {channel}: {e}') from e
    mesh = Mesh(vertices.astype(np.float64) + lattice.lower, faces.astype(np.int64), object_id)
    return mesh.without_degenerate()


def extract_mesh(
    source: CompositionalField | AnalyticScene,
    channel: Channel = 'scene',
    resolution: int = 128,
    normalization: SceneNormalization | None = None,
    threads: int | None = None,
) -> Mesh:
    """
    Marching-cubes surface of the scene SDF or of one object channel, in scene units.
    :param source: Trained field (with ``normalization``) or analytic scene.
    :param channel: ``scene`` or an object index.
    :param resolution: Lattice nodes per axis, at least 8.
    """
    lattice = evaluate_lattice(source, resolution, normalization=normalization, threads=threads)
    return mesh_from_lattice(lattice, channel)


def channel_overlap(lattice: SdfLattice, background_channel: int | None = 0) -> dict[int, float]:
    """
    For every foreground channel, the fraction of its negative lattice nodes where another
    foreground channel is negative too.
    """
    foreground = [k for k in range(lattice.num_objects) if k != background_channel]
    inside = lattice.values[..., foreground] < 0
    overlap = {}
    for position, channel in enumerate(foreground):
        own = inside[..., position]
        others = np.delete(inside, position, axis=-1).any(axis=-1)
        count = int(own.sum())
        overlap[channel] = float((own & others).sum() / count) if count else 0.0
    return overlap
