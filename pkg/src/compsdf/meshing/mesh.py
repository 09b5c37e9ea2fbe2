import dataclasses
import logging
from pathlib import Path

import numpy as np
import trimesh
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.utils import atomic_write_bytes

logger = logging.getLogger(__name__)

MIN_TRIANGLE_AREA = 1e-14
FILE_TYPES = ('ply', 'obj')


@dataclasses.dataclass
class Mesh:
    vertices: np.ndarray
    """(V, 3) float64, scene units."""
    triangles: np.ndarray
    """(F, 3) int64 vertex indices."""
    object_id: int | None = None
    """Channel the mesh was extracted from; None for the whole scene."""

    @classmethod
    def empty(cls, object_id: int | None = None) -> 'Mesh':
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), object_id)

    @property
    def is_empty(self) -> bool:
        return self.triangles.shape[0] == 0

    def clean(self):
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= self.vertices.shape[0]):
            raise ValidationError(_('Индексы треугольников вне диапазона вершин'), code='triangles')

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)

    def without_degenerate(self) -> 'Mesh':
        """Drop zero-area triangles and the vertices no triangle uses."""
        keep = self.triangle_areas() > MIN_TRIANGLE_AREA
        triangles = self.triangles[keep]
        used, inverse = np.unique(triangles, return_inverse=True)
        dropped = int((~keep).sum())
        if dropped:
            logger.debug(f'Удалено вырожденных треугольников: {dropped}')
        return Mesh(self.vertices[used], inverse.reshape(-1, 3).astype(np.int64), self.object_id)

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.vertices, faces=self.triangles, process=False)

    def save(self, path: str | Path) -> Path:
        """Binary little-endian PLY or text OBJ, chosen by the file extension."""
        path = Path(path)
        file_type = path.suffix.lstrip('.').lower()
        if file_type not in FILE_TYPES:
            raise ValidationError(
                _('Неподдерживаемый формат сетки: %(suffix)s'), code='mesh_format', params={'suffix': path.suffix},
            )
        data = self.to_trimesh().export(file_type=file_type)
        atomic_write_bytes(path, data.encode('utf-8') if isinstance(data, str) else data)
        logger.info(f'Сетка сохранена: {path} ({self.vertices.shape[0]} вершин, {self.triangles.shape[0]} треугольников)')
        return path

    @classmethod
    def load(cls, path: str | Path) -> 'Mesh':
        path = Path(path)
        if not path.exists():
            raise ValidationError(_('Файл сетки не найден: %(path)s'), code='mesh_missing', params={'path': path})
        options = {'maintain_order': True} if path.suffix.lower() == '.obj' else {}
        loaded = trimesh.load(path, force='mesh', process=False, **options)
        mesh = cls(np.asarray(loaded.vertices, dtype=np.float64), np.asarray(loaded.faces, dtype=np.int64))
        mesh.clean()
        return mesh


def sample_surface_points(mesh: Mesh, count: int, seed: int) -> np.ndarray:
    """
    Area-weighted uniform samples on the surface, fixed by the seed.
    :return: (count, 3) points.
    """
    points, _faces = sample_surface(mesh, count, seed)
    return points


def sample_surface(mesh: Mesh, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Same as :func:`sample_surface_points`, also returning the triangle of every sample."""
    if mesh.is_empty:
        raise ValidationError(_('Нельзя выбрать точки на пустой сетке'), code='empty_mesh')
    if count < 1:
        raise ValidationError(_('Число точек должно быть положительным'), code='count')
    points, faces = trimesh.sample.sample_surface(mesh.to_trimesh(), count, seed=seed)
    return np.asarray(points, dtype=np.float64), np.asarray(faces, dtype=np.int64)
