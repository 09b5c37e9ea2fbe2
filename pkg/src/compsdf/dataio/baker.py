"""
Synthetic supervision from analytic scenes: sphere-traced instance masks, depth and normals,
and Lambertian RGB under a fixed directional light.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.decorators import gc_collect, log_duration
from compsdf.dataio.schema import Camera, Frame, SceneDataset, SceneNormalization
from compsdf.geometry.primitives import AnalyticScene

logger = logging.getLogger(__name__)

AMBIENT = 0.2
LIGHT_DIRECTION = np.array([0.4, -0.3, 0.85]) / np.linalg.norm([0.4, -0.3, 0.85])
WORLD_UP = np.array([0.0, 0.0, 1.0])
DEPTH_SCALE_RANGE = (0.5, 2.0)
DEPTH_SHIFT_RANGE = (0.0, 1.0)


def look_at(position: np.ndarray, target: np.ndarray, up: np.ndarray = WORLD_UP) -> np.ndarray:
    """Camera-to-world matrix with +z towards ``target`` and y pointing down."""
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = right, down, forward, position
    return c2w


def orbit_cameras(
    scene: AnalyticScene,
    count: int,
    width: int = 128,
    height: int = 128,
    fov: float = 60.0,
    radius_fraction: float = 0.85,
    elevation_fraction: float = 0.5,
) -> list[Camera]:
    """
    Cameras on a horizontal ellipse inside the scene bounds, all looking at the scene centre.
    :param count: Number of cameras, evenly spaced in angle.
    :param fov: Horizontal field of view in degrees.
    :param radius_fraction: Ellipse semi-axes as a fraction of the bounds half extents.
    :param elevation_fraction: Height above the centre as a fraction of the vertical half extent.
    """
    if count < 1:
        raise ValidationError(_('Нужна хотя бы одна камера'), code='cameras')
    half = 0.5 * (np.asarray(scene.bounds[1]) - np.asarray(scene.bounds[0]))
    center = scene.center
    focal = 0.5 * width / math.tan(math.radians(fov) / 2)
    cameras = []
    for index in range(count):
        angle = 2 * math.pi * index / count
        position = center + np.array([
            radius_fraction * half[0] * math.cos(angle),
            radius_fraction * half[1] * math.sin(angle),
            elevation_fraction * half[2],
        ])
        c2w = look_at(position, center)
        camera = Camera(
            fx=focal, fy=focal, cx=width / 2, cy=height / 2, width=width, height=height,
            c2w=tuple(tuple(float(v) for v in row) for row in c2w),
        )
        camera.clean()
        cameras.append(camera)
    return cameras


def shade(albedo: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """albedo · (ambient + (1 - ambient) · max(0, n · l))."""
    lambert = np.clip(normals @ LIGHT_DIRECTION, 0.0, None)
    return albedo * (AMBIENT + (1.0 - AMBIENT) * lambert[..., None])


@gc_collect
def bake_frame(
    scene: AnalyticScene,
    camera: Camera,
    max_steps: int = 256,
    hit_eps: float = 1e-5,
) -> Frame:
    """
    Render one camera of an analytic scene.
    :raise ValidationError: When no pixel sees any geometry.
    """
    pixel_ids = np.arange(camera.height * camera.width)
    origins, directions = camera.pixel_rays(pixel_ids)
    trace = scene.sphere_trace(origins, directions, max_steps=max_steps, hit_eps=hit_eps)
    if not trace.hit.any():
        raise ValidationError(_('Камера не видит ни одного объекта'), code='no_geometry')

    count = pixel_ids.size
    mask = np.zeros(count, dtype=np.int64)
    depth = np.zeros(count)
    normal = np.zeros((count, 3))
    rgb = np.zeros((count, 3))

    hit = trace.hit
    points = origins[hit] + trace.t[hit, None] * directions[hit]
    gradient = scene.analytic_gradient(points)
    mask[hit] = np.argmin(scene.eval_sdf(points).objects, axis=-1)
    depth[hit] = trace.t[hit]
    world_normals = gradient.scene / np.linalg.norm(gradient.scene, axis=-1, keepdims=True)
    normal[hit] = camera.to_camera_frame(world_normals)
    rgb[hit] = shade(scene.albedo[mask[hit]], world_normals)

    shape = (camera.height, camera.width)
    return Frame(
        rgb=np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8).reshape(*shape, 3),
        mask=mask.reshape(shape),
        depth=depth.astype(np.float32).reshape(shape),
        normal=normal.astype(np.float32).reshape(*shape, 3),
        camera=camera,
    )


def corrupt_depth(frame: Frame, scale: float, shift: float) -> Frame:
    """Affine corruption ``scale · depth + shift`` of the valid pixels."""
    valid = frame.valid
    depth = frame.depth.astype(np.float64)
    depth[valid] = scale * depth[valid] + shift
    return Frame(rgb=frame.rgb, mask=frame.mask, depth=depth.astype(np.float32), normal=frame.normal, camera=frame.camera)


@log_duration('Генерация набора данных')
def bake_dataset(
    scene: AnalyticScene,
    cameras: list[Camera],
    seed: int | None = None,
    depth_noise: bool = False,
    threads: int | None = None,
) -> SceneDataset:
    """
    Render supervision for every camera.
    :param seed: Seeds the per-image depth corruption.
    :param depth_noise: Apply a random affine corruption to every depth image, as a monocular
        predictor with unknown scale and shift would.
    :param threads: Frames rendered in parallel; ``settings.COMPSDF_THREADS`` by default.
    :return: Dataset with the corruption parameters in ``meta['depth_corruption']``.
    :raise ValidationError: When the scene has no background channel: mask 0 of a miss pixel would
        otherwise be read as the first object.
    """
    if not cameras:
        raise ValidationError(_('Нужна хотя бы одна камера'), code='cameras')
    if scene.background_channel is None:
        raise ValidationError(_('Для набора данных нужна сцена с фоном (таблица background)'), code='background')
    seed = settings.COMPSDF_SEED if seed is None else seed
    threads = settings.COMPSDF_THREADS if threads is None else threads

    with ThreadPoolExecutor(max_workers=threads) as pool:
        frames = list(pool.map(lambda camera: bake_frame(scene, camera), cameras))
    logger.info(f'Создано кадров: {len(frames)}')

    corruption = None
    if depth_noise:
        corruption = []
        for index, frame in enumerate(frames):
            rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
            scale = float(rng.uniform(*DEPTH_SCALE_RANGE))
            shift = float(rng.uniform(*DEPTH_SHIFT_RANGE))
            frames[index] = corrupt_depth(frame, scale, shift)
            corruption.append({'scale': scale, 'shift': shift})

    normalization = SceneNormalization.for_bounds(*scene.bounds)
    meta = {
        'units': 'scene',
        'seed': seed,
        'scene': scene.to_dict(),
        'depth_corruption': corruption,
    }
    return SceneDataset(frames=frames, num_objects=scene.num_objects, normalization=normalization, meta=meta)
