"""
Analytic signed distance primitives and their union.

All functions accept point arrays of shape ``(..., 3)`` and broadcast over the leading
dimensions. Distances are negative inside, zero on the surface and positive outside, except
for the background primitive, whose sign is inverted so that the room interior is positive
and the union by minimum stays meaningful.
"""
import dataclasses
import logging
import tomllib
from enum import StrEnum
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

logger = logging.getLogger(__name__)

DISCONTINUITY_EPS = 1e-9
DEFAULT_HIT_EPS = 1e-5
DEFAULT_MAX_STEPS = 256

Vec3 = tuple[float, float, float]


class PrimitiveKind(StrEnum):
    SPHERE = 'sphere'
    BOX = 'box'
    PLANE = 'plane'


@dataclasses.dataclass(frozen=True)
class Primitive:
    kind: PrimitiveKind
    center: Vec3
    object_id: int
    radius: float = 0.0
    half_extents: Vec3 = (0.0, 0.0, 0.0)
    normal: Vec3 = (0.0, 0.0, 1.0)
    offset: float = 0.0
    albedo: Vec3 = (0.5, 0.5, 0.5)
    inverted: bool = False

    def clean(self):
        if self.kind == PrimitiveKind.SPHERE and not self.radius > 0:
            raise ValidationError(_('Радиус сферы должен быть положительным'), code='radius')
        if self.kind == PrimitiveKind.BOX and not all(h > 0 for h in self.half_extents):
            raise ValidationError(_('Полуразмеры коробки должны быть положительными'), code='half_extents')
        if self.kind == PrimitiveKind.PLANE and abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValidationError(_('Нормаль плоскости должна быть единичной'), code='normal')
        if not all(0.0 <= c <= 1.0 for c in self.albedo):
            raise ValidationError(_('Альбедо должно лежать в [0, 1]'), code='albedo')

    def _local(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) - np.asarray(self.center)

    def _raw_distance(self, points: np.ndarray) -> np.ndarray:
        p = self._local(points)
        match self.kind:
            case PrimitiveKind.SPHERE:
                return np.linalg.norm(p, axis=-1) - self.radius
            case PrimitiveKind.BOX:
                q = np.abs(p) - np.asarray(self.half_extents)
                outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
                return outside + np.minimum(np.max(q, axis=-1), 0.0)
            case PrimitiveKind.PLANE:
                return p @ np.asarray(self.normal) - self.offset
        raise ValueError(self.kind)

    def distance(self, points: np.ndarray) -> np.ndarray:
        d = self._raw_distance(points)
        return -d if self.inverted else d

    def gradient(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Closed-form gradient of :meth:`distance`.
        :param points: Points, shape (..., 3).
        :return: Unit gradients (..., 3) and a flag array (...) marking points within
            ``DISCONTINUITY_EPS`` of a gradient discontinuity.
        """
        p = self._local(points)
        match self.kind:
            case PrimitiveKind.SPHERE:
                norm = np.linalg.norm(p, axis=-1, keepdims=True)
                flags = norm[..., 0] < DISCONTINUITY_EPS
                grad = p / np.where(norm < DISCONTINUITY_EPS, 1.0, norm)
            case PrimitiveKind.BOX:
                sign = np.where(p < 0.0, -1.0, 1.0)
                q = np.abs(p) - np.asarray(self.half_extents)
                positive = np.maximum(q, 0.0)
                outside_norm = np.linalg.norm(positive, axis=-1, keepdims=True)
                outside = outside_norm[..., 0] > 0.0
                grad_out = sign * positive / np.where(outside_norm > 0.0, outside_norm, 1.0)

                axis = np.argmax(q, axis=-1)
                grad_in = sign * np.eye(3)[axis]
                ordered = np.sort(q, axis=-1)
                tie = (ordered[..., 2] - ordered[..., 1]) < DISCONTINUITY_EPS

                grad = np.where(outside[..., None], grad_out, grad_in)
                flags = ~outside & tie
            case PrimitiveKind.PLANE:
                grad = np.broadcast_to(np.asarray(self.normal), p.shape).copy()
                flags = np.zeros(p.shape[:-1], dtype=bool)
            case _:
                raise ValueError(self.kind)
        if self.inverted:
            grad = -grad
        return grad, flags

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Independent containment test, used as an oracle for the sign of the distance."""
        p = self._local(points)
        match self.kind:
            case PrimitiveKind.SPHERE:
                inside = np.sum(p * p, axis=-1) < self.radius ** 2
            case PrimitiveKind.BOX:
                inside = np.all(np.abs(p) < np.asarray(self.half_extents), axis=-1)
            case PrimitiveKind.PLANE:
                inside = p @ np.asarray(self.normal) < self.offset
            case _:
                raise ValueError(self.kind)
        return ~inside if self.inverted else inside

    def extent(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Axis-aligned bounds of the solid, None for unbounded solids."""
        c = np.asarray(self.center)
        match self.kind:
            case PrimitiveKind.SPHERE:
                return c - self.radius, c + self.radius
            case PrimitiveKind.BOX:
                return c - np.asarray(self.half_extents), c + np.asarray(self.half_extents)
        return None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], object_id: int, inverted: bool = False) -> 'Primitive':
        allowed = {'kind', 'center', 'radius', 'half_extents', 'normal', 'offset', 'albedo'}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ValidationError(
                _('Неизвестные ключи примитива %(id)d: %(keys)s'),
                code='unknown_keys',
                params={'id': object_id, 'keys': ', '.join(unknown)},
            )
        try:
            kind = PrimitiveKind(data.get('kind', PrimitiveKind.BOX if inverted else None))
        except ValueError:
            raise ValidationError(
                _('Неизвестный тип примитива: %(kind)s'), code='kind', params={'kind': data.get('kind')},
            )
        values: dict[str, Any] = {'kind': kind, 'object_id': object_id, 'inverted': inverted}
        for key in ('center', 'half_extents', 'normal', 'albedo'):
            if key in data:
                values[key] = tuple(float(v) for v in data[key])
        for key in ('radius', 'offset'):
            if key in data:
                values[key] = float(data[key])
        values.setdefault('center', (0.0, 0.0, 0.0))
        primitive = cls(**values)
        primitive.clean()
        return primitive


@dataclasses.dataclass(frozen=True)
class SdfVector:
    objects: np.ndarray
    """Per-channel signed distances, shape (..., K)."""
    scene: np.ndarray
    """Minimum over channels, shape (...)."""


@dataclasses.dataclass(frozen=True)
class SdfGradient:
    objects: np.ndarray
    """Per-channel unit gradients, shape (..., K, 3)."""
    scene: np.ndarray
    """Gradient of the argmin channel, shape (..., 3)."""
    flags: np.ndarray
    """Per-channel discontinuity flags, shape (..., K)."""
    scene_flags: np.ndarray
    """Points near a kink of the scene minimum or of the argmin channel, shape (...)."""


@dataclasses.dataclass(frozen=True)
class TraceResult:
    hit: np.ndarray
    t: np.ndarray
    object_id: np.ndarray
    """Argmin channel at the hit point, -1 on miss."""
    exhausted: np.ndarray
    """Step budget ran out before the ray hit or escaped."""


@dataclasses.dataclass(frozen=True)
class AnalyticScene:
    primitives: tuple[Primitive, ...]
    bounds: tuple[Vec3, Vec3]
    background_channel: int | None = None

    @property
    def num_objects(self) -> int:
        return len(self.primitives)

    @property
    def albedo(self) -> np.ndarray:
        return np.asarray([p.albedo for p in self.primitives], dtype=np.float64)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.bounds[0]) + np.asarray(self.bounds[1]))

    def clean(self):
        ids = [p.object_id for p in self.primitives]
        if ids != list(range(len(ids))):
            raise ValidationError(
                _('Идентификаторы объектов должны быть уникальны и идти подряд с 0: %(ids)s'),
                code='object_ids',
                params={'ids': ids},
            )
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        if not np.all(lo < hi):
            raise ValidationError(_('Некорректные границы сцены'), code='bounds')
        for primitive in self.primitives:
            primitive.clean()
            if primitive.object_id == self.background_channel:
                continue
            # Плоскости не ограничены, проверяем только тела конечного размера.
            extent = primitive.extent()
            if extent is not None and (np.any(extent[0] < lo) or np.any(extent[1] > hi)):
                raise ValidationError(
                    _('Объект %(id)d выходит за границы сцены'),
                    code='outside_bounds',
                    params={'id': primitive.object_id},
                )

    def eval_sdf(self, points: np.ndarray) -> SdfVector:
        """
        Evaluate every channel and the scene distance (their minimum).
        :param points: Points, shape (..., 3).
        :return: SdfVector with objects (..., K) and scene (...).
        """
        objects = np.stack([p.distance(points) for p in self.primitives], axis=-1)
        return SdfVector(objects=objects, scene=np.min(objects, axis=-1))

    def analytic_gradient(self, points: np.ndarray) -> SdfGradient:
        grads, flags = zip(*(p.gradient(points) for p in self.primitives))
        objects = np.stack(grads, axis=-2)
        flags = np.stack(flags, axis=-1)

        distances = self.eval_sdf(points).objects
        argmin = np.argmin(distances, axis=-1)
        scene = np.take_along_axis(objects, argmin[..., None, None], axis=-2)[..., 0, :]
        ordered = np.sort(distances, axis=-1)
        equidistant = (
            (ordered[..., 1] - ordered[..., 0]) < DISCONTINUITY_EPS
            if distances.shape[-1] > 1 else np.zeros(distances.shape[:-1], dtype=bool)
        )
        scene_flags = equidistant | np.take_along_axis(flags, argmin[..., None], axis=-1)[..., 0]
        return SdfGradient(objects=objects, scene=scene, flags=flags, scene_flags=scene_flags)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Union of the solids, computed without distances."""
        return np.any(np.stack([p.contains(points) for p in self.primitives], axis=-1), axis=-1)

    def sphere_trace(
        self,
        origins: np.ndarray,
        directions: np.ndarray,
        max_steps: int = DEFAULT_MAX_STEPS,
        hit_eps: float = DEFAULT_HIT_EPS,
        t_max: float | None = None,
    ) -> TraceResult:
        """
        March rays through the scene distance field.
        :param origins: Ray origins, shape (N, 3).
        :param directions: Unit directions, shape (N, 3).
        :param max_steps: Step budget per ray.
        :param hit_eps: A ray hits when the absolute scene distance drops to this value.
        :param t_max: Rays travelling further are misses. Defaults to the distance from the
            farthest origin to the scene centre plus the bounds diagonal.
        :return: TraceResult arrays of shape (N,).
        """
        if max_steps < 1:
            raise ValidationError(_('max_steps должен быть не меньше 1'), code='max_steps')
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        if np.any(np.abs(np.linalg.norm(directions, axis=-1) - 1.0) > 1e-9):
            raise ValidationError(_('Направления лучей должны быть единичными'), code='direction')
        if t_max is None:
            diagonal = float(np.linalg.norm(np.asarray(self.bounds[1]) - np.asarray(self.bounds[0])))
            t_max = float(np.max(np.linalg.norm(origins - self.center, axis=-1))) + diagonal

        n = origins.shape[0]
        t = np.zeros(n)
        hit = np.zeros(n, dtype=bool)
        active = np.ones(n, dtype=bool)
        for _step in range(max_steps):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            d = self.eval_sdf(origins[idx] + t[idx, None] * directions[idx]).scene
            reached = np.abs(d) <= hit_eps
            hit[idx[reached]] = True
            active[idx[reached]] = False
            marching = idx[~reached]
            t[marching] += np.abs(d[~reached])
            escaped = marching[t[marching] > t_max]
            active[escaped] = False

        exhausted = active.copy()
        if exhausted.any():
            logger.debug(f'Трассировка: {int(exhausted.sum())} лучей исчерпали бюджет шагов')
        object_id = np.full(n, -1, dtype=np.int64)
        if hit.any():
            points = origins[hit] + t[hit, None] * directions[hit]
            object_id[hit] = np.argmin(self.eval_sdf(points).objects, axis=-1)
        return TraceResult(hit=hit, t=np.where(hit, t, np.inf), object_id=object_id, exhausted=exhausted)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'AnalyticScene':
        """
        Build a scene from the structured config layout.

        Keys: ``bounds`` (two 3-vectors), optional ``background`` table (a box, inverted,
        defaults to the bounds), ``primitives`` list of tables with ``kind``, ``center``,
        ``radius``/``half_extents``/``normal``+``offset`` and ``albedo``.
        """
        unknown = sorted(set(data) - {'bounds', 'background', 'primitives'})
        if unknown:
            raise ValidationError(
                _('Неизвестные ключи сцены: %(keys)s'), code='unknown_keys', params={'keys': ', '.join(unknown)},
            )
        if 'bounds' not in data:
            raise ValidationError(_('В описании сцены нет границ (bounds)'), code='bounds')
        lo, hi = (tuple(float(v) for v in corner) for corner in data['bounds'])

        primitives: list[Primitive] = []
        background_channel = None
        if 'background' in data:
            background = dict(data['background'])
            background.setdefault('kind', PrimitiveKind.BOX.value)
            background.setdefault('center', [0.5 * (a + b) for a, b in zip(lo, hi)])
            background.setdefault('half_extents', [0.5 * (b - a) for a, b in zip(lo, hi)])
            primitives.append(Primitive.from_dict(background, object_id=0, inverted=True))
            background_channel = 0
        for item in data.get('primitives', []):
            primitives.append(Primitive.from_dict(item, object_id=len(primitives)))

        scene = cls(primitives=tuple(primitives), bounds=(lo, hi), background_channel=background_channel)
        scene.clean()
        return scene

    @classmethod
    def from_toml(cls, path: str | Path) -> 'AnalyticScene':
        try:
            with open(path, 'rb') as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ValidationError(
                _('Ошибка разбора %(path)s: %(error)s'), code='toml', params={'path': path, 'error': e},
            )
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        result: dict[str, Any] = {'bounds': [list(self.bounds[0]), list(self.bounds[1])], 'primitives': []}
        for primitive in self.primitives:
            item: dict[str, Any] = {
                'kind': primitive.kind.value,
                'center': list(primitive.center),
                'albedo': list(primitive.albedo),
            }
            match primitive.kind:
                case PrimitiveKind.SPHERE:
                    item['radius'] = primitive.radius
                case PrimitiveKind.BOX:
                    item['half_extents'] = list(primitive.half_extents)
                case PrimitiveKind.PLANE:
                    item['normal'] = list(primitive.normal)
                    item['offset'] = primitive.offset
            if primitive.object_id == self.background_channel:
                result['background'] = item
            else:
                result['primitives'].append(item)
        return result
