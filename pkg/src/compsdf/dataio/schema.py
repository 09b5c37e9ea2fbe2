import dataclasses
from typing import Any, Mapping

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

BOUNDS_MARGIN = 1.1


@dataclasses.dataclass(frozen=True)
class SceneNormalization:
    """Uniform scale and shift taking scene units into the unit cube: ``(p - center) * scale + 0.5``."""

    center: tuple[float, float, float]
    scale: float

    @classmethod
    def for_bounds(cls, lower, upper, margin: float = BOUNDS_MARGIN) -> 'SceneNormalization':
        lower, upper = np.asarray(lower, dtype=np.float64), np.asarray(upper, dtype=np.float64)
        center = 0.5 * (lower + upper)
        extent = float(np.max(upper - lower)) * margin
        return cls(center=tuple(float(v) for v in center), scale=1.0 / extent)

    def clean(self):
        if not self.scale > 0:
            raise ValidationError(_('Масштаб нормализации должен быть положительным'), code='scale')

    def to_unit(self, points):
        return (points - np.asarray(self.center)) * self.scale + 0.5

    def from_unit(self, points):
        return (points - 0.5) / self.scale + np.asarray(self.center)

    def as_dict(self) -> dict:
        return {'center': list(self.center), 'scale': self.scale}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'SceneNormalization':
        normalization = cls(center=tuple(float(v) for v in data['center']), scale=float(data['scale']))
        normalization.clean()
        return normalization


@dataclasses.dataclass(frozen=True)
class Camera:
    """Pinhole camera looking along +z of its frame (x right, y down)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    c2w: tuple[tuple[float, ...], ...]
    """Camera-to-world rigid transform, 4x4 row-major."""

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.c2w, dtype=np.float64)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def clean(self):
        errors = []
        if not (self.fx > 0 and self.fy > 0):
            errors.append(ValidationError(_('Фокусные расстояния должны быть положительными'), code='focal'))
        if self.width < 1 or self.height < 1:
            errors.append(ValidationError(_('Размер кадра должен быть положительным'), code='size'))
        matrix = self.matrix
        if matrix.shape != (4, 4):
            errors.append(ValidationError(_('Матрица камеры должна быть 4x4'), code='c2w'))
        else:
            rotation = matrix[:3, :3]
            if np.max(np.abs(rotation @ rotation.T - np.eye(3))) > 1e-6 or np.linalg.det(rotation) < 0:
                errors.append(ValidationError(_('Блок поворота камеры не ортонормирован'), code='rotation'))
        if errors:
            raise ValidationError(errors)

    def pixel_rays(self, pixel_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        World rays through pixel centres.
        :param pixel_ids: Flat indices ``row * width + col``.
        :return: Origins and unit directions, shape (N, 3) each.
        """
        pixel_ids = np.asarray(pixel_ids)
        rows, cols = np.divmod(pixel_ids, self.width)
        local = np.stack([
            (cols + 0.5 - self.cx) / self.fx,
            (rows + 0.5 - self.cy) / self.fy,
            np.ones(pixel_ids.shape),
        ], axis=-1)
        directions = local @ self.rotation.T
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.position, directions.shape).copy()
        return origins, directions

    def to_camera_frame(self, vectors: np.ndarray) -> np.ndarray:
        return vectors @ self.rotation

    def to_world_frame(self, vectors: np.ndarray) -> np.ndarray:
        return vectors @ self.rotation.T

    def as_dict(self) -> dict:
        return {
            'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
            'width': self.width, 'height': self.height,
            'c2w': [list(row) for row in self.c2w],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'Camera':
        try:
            camera = cls(
                fx=float(data['fx']), fy=float(data['fy']), cx=float(data['cx']), cy=float(data['cy']),
                width=int(data['width']), height=int(data['height']),
                c2w=tuple(tuple(float(v) for v in row) for row in data['c2w']),
            )
        except KeyError as e:
            raise ValidationError(_('В описании камеры нет ключа %(key)s'), code='camera', params={'key': e.args[0]})
        camera.clean()
        return camera


@dataclasses.dataclass
class Frame:
    rgb: np.ndarray
    """(H, W, 3) uint8."""
    mask: np.ndarray
    """(H, W) integer object ids, 0 is the background channel."""
    depth: np.ndarray
    """(H, W) float32 along-ray depth in scene units, 0 where invalid."""
    normal: np.ndarray
    """(H, W, 3) float32 unit normals in the camera frame, 0 where invalid."""
    camera: Camera

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape[0], self.mask.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0


@dataclasses.dataclass
class SceneDataset:
    frames: list[Frame]
    num_objects: int
    normalization: SceneNormalization
    meta: dict = dataclasses.field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)
