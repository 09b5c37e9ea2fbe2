"""
Dataset directory reader, writer and validator.

Layout::

    meta.json            K, scene normalization, units, frame count
    cameras.json         list of cameras (intrinsics + row-major 4x4 camera-to-world)
    rgb/%04d.png         8-bit RGB
    mask/%04d.png        16-bit grayscale object ids, 0 is the background channel
    depth/%04d.bin       little-endian float32 H x W, along-ray depth in scene units, 0 = invalid
    depth/%04d.json      sidecar: dtype, shape, units
    normal/%04d.bin      little-endian float32 H x W x 3, unit normals in the camera frame
    normal/%04d.json     sidecar: dtype, shape, frame
"""
import dataclasses
import json
import logging
from pathlib import Path

import imageio.v3 as iio
import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.utils import atomic_write_bytes, atomic_write_text, dump_json
from compsdf.dataio.schema import Camera, Frame, SceneDataset, SceneNormalization

logger = logging.getLogger(__name__)

FLOAT_DTYPE = '<f4'
NORMAL_TOLERANCE = 1e-3


@dataclasses.dataclass(frozen=True)
class Violation:
    frame: int | None
    """None for dataset-level problems."""
    code: str
    detail: str

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class ValidationReport:
    frames: int
    violations: list[Violation] = dataclasses.field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, frame: int | None, code: str, detail: str):
        self.violations.append(Violation(frame, code, detail))

    def as_error(self) -> ValidationError:
        errors = []
        for item in self.violations:
            if item.frame is None:
                errors.append(ValidationError(item.detail, code=item.code))
            else:
                errors.append(ValidationError(
                    _('Кадр %(frame)s: %(detail)s'), code=item.code, params={'frame': item.frame, 'detail': item.detail},
                ))
        return ValidationError(errors)

    def as_dict(self) -> dict:
        return {'frames': self.frames, 'violations': [item.as_dict() for item in self.violations]}


def _encode_png(array: np.ndarray) -> bytes:
    return iio.imwrite('<bytes>', array, extension='.png')


def write_rgb(path: str | Path, rgb: np.ndarray):
    """Write an RGB image given as uint8 or as floats in [0, 1]."""
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    atomic_write_bytes(path, _encode_png(rgb))


def write_gray(path: str | Path, values: np.ndarray):
    """8-bit grayscale PNG of values in [0, 1], shape (H, W)."""
    gray = np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    atomic_write_bytes(path, _encode_png(gray))


def write_float_plane(path: Path, array: np.ndarray, **sidecar):
    """Raw little-endian float32 plane plus a JSON sidecar with the same stem."""
    data = np.ascontiguousarray(array, dtype=FLOAT_DTYPE)
    atomic_write_bytes(path, data.tobytes())
    atomic_write_text(
        path.with_suffix('.json'),
        dump_json({'dtype': FLOAT_DTYPE, 'shape': list(data.shape), **sidecar}, indent=2),
    )


def read_float_plane(path: Path) -> np.ndarray:
    sidecar = json.loads(path.with_suffix('.json').read_text())
    data = np.frombuffer(path.read_bytes(), dtype=sidecar['dtype'])
    expected = int(np.prod(sidecar['shape']))
    if data.size != expected:
        raise ValidationError(
            _('%(path)s: ожидалось %(expected)s значений, прочитано %(actual)s'),
            code='size',
            params={'path': path.name, 'expected': expected, 'actual': data.size},
        )
    return data.reshape(sidecar['shape']).astype(np.float32)


def write_dataset(path: str | Path, dataset: SceneDataset) -> Path:
    """Write every frame and the metadata; identical datasets give byte-identical files."""
    path = Path(path)
    for index, frame in enumerate(dataset.frames):
        name = f'{index:04d}'
        write_rgb(path / 'rgb' / f'{name}.png', frame.rgb)
        atomic_write_bytes(path / 'mask' / f'{name}.png', _encode_png(frame.mask.astype(np.uint16)))
        write_float_plane(path / 'depth' / f'{name}.bin', frame.depth, units='scene')
        write_float_plane(path / 'normal' / f'{name}.bin', frame.normal, frame='camera')
    atomic_write_text(path / 'cameras.json', dump_json([frame.camera.as_dict() for frame in dataset.frames], indent=2))
    meta = {
        **dataset.meta,
        'num_objects': dataset.num_objects,
        'normalization': dataset.normalization.as_dict(),
        'units': dataset.meta.get('units', 'scene'),
        'frames': len(dataset.frames),
    }
    atomic_write_text(path / 'meta.json', dump_json(meta, indent=2))
    logger.info(f'Набор данных записан: {path} ({len(dataset.frames)} кадров)')
    return path


def check_frame(frame: Frame, index: int, num_objects: int, report: ValidationReport):
    """In-memory invariants of one frame."""
    height, width = frame.shape
    shapes = []
    if frame.rgb.shape != (height, width, 3):
        shapes.append(f'rgb {frame.rgb.shape} при маске {frame.shape}')
    if frame.depth.shape != (height, width):
        shapes.append(f'depth {frame.depth.shape} при маске {frame.shape}')
    if frame.normal.shape != (height, width, 3):
        shapes.append(f'normal {frame.normal.shape} при маске {frame.shape}')
    if (frame.camera.height, frame.camera.width) != (height, width):
        shapes.append(f'камера {frame.camera.width}x{frame.camera.height} при кадре {width}x{height}')
    if shapes:
        report.add(index, 'shape', '; '.join(shapes))
        return

    bad_ids = np.unique(frame.mask[(frame.mask < 0) | (frame.mask >= num_objects)])
    if bad_ids.size:
        report.add(index, 'mask_range', f'идентификаторы вне [0, {num_objects}): {bad_ids.tolist()}')
    if not np.isfinite(frame.depth).all() or (frame.depth < 0).any():
        report.add(index, 'depth', 'отрицательная или нечисловая глубина')
    valid = frame.valid
    norms = np.linalg.norm(frame.normal[valid], axis=-1)
    if norms.size and np.abs(norms - 1.0).max() > NORMAL_TOLERANCE:
        report.add(index, 'normal', f'нормали не единичной длины: {int((np.abs(norms - 1.0) > NORMAL_TOLERANCE).sum())}')


def validate_dataset(dataset: SceneDataset) -> ValidationReport:
    report = ValidationReport(frames=len(dataset.frames))
    if not dataset.frames:
        report.add(None, 'no_frames', 'в наборе данных нет кадров')
    for index, frame in enumerate(dataset.frames):
        check_frame(frame, index, dataset.num_objects, report)
    return report


def _read_frames(
    path: Path,
    report: ValidationReport,
) -> tuple[list[tuple[int, Frame]], int, SceneNormalization | None, dict]:
    meta_path = path / 'meta.json'
    cameras_path = path / 'cameras.json'
    if not meta_path.exists() and not cameras_path.exists():
        report.add(None, 'no_frames', f'{path}: нет кадров')
        return [], 0, None, {}
    try:
        meta = json.loads(meta_path.read_text())
        num_objects = int(meta['num_objects'])
        normalization = SceneNormalization.from_dict(meta['normalization'])
        raw_cameras = json.loads(cameras_path.read_text())
    except (OSError, KeyError, ValueError, ValidationError) as e:
        report.add(None, 'meta', f'метаданные не прочитаны: {e}')
        return [], 0, None, {}
    if not raw_cameras:
        report.add(None, 'no_frames', f'{path}: нет кадров')

    frames = []
    for index, raw in enumerate(raw_cameras):
        name = f'{index:04d}'
        try:
            camera = Camera.from_dict(raw)
        except ValidationError as e:
            report.add(index, 'camera', '; '.join(str(message) for message in e.messages))
            continue
        files = {
            'rgb': path / 'rgb' / f'{name}.png',
            'mask': path / 'mask' / f'{name}.png',
            'depth': path / 'depth' / f'{name}.bin',
            'normal': path / 'normal' / f'{name}.bin',
        }
        missing = [str(file.relative_to(path)) for file in files.values() if not file.exists()]
        if missing:
            report.add(index, 'missing_file', ', '.join(missing))
            continue
        try:
            frame = Frame(
                rgb=np.asarray(iio.imread(files['rgb']))[..., :3],
                mask=np.asarray(iio.imread(files['mask'])).astype(np.int64),
                depth=read_float_plane(files['depth']),
                normal=read_float_plane(files['normal']),
                camera=camera,
            )
        except (OSError, KeyError, ValueError, ValidationError) as e:
            report.add(index, 'read', str(e))
            continue
        check_frame(frame, index, num_objects, report)
        frames.append((index, frame))
    return frames, num_objects, normalization, meta


def validate(path: str | Path) -> ValidationReport:
    """
    Check a dataset directory; problems are collected, not raised.
    :return: Report with one violation per problem and frame.
    """
    path = Path(path)
    report = ValidationReport(frames=0)
    frames, _num_objects, _normalization, _meta = _read_frames(path, report)
    report.frames = len(frames)
    return report


def load_dataset(path: str | Path, strict: bool = True) -> SceneDataset:
    """
    Read a dataset directory.
    :param strict: Raise when any frame violates the schema; otherwise skip such frames.
    :raise ValidationError: On violations in strict mode, and always when no frame is left.
    """
    path = Path(path)
    report = ValidationReport(frames=0)
    frames, num_objects, normalization, meta = _read_frames(path, report)
    report.frames = len(frames)
    if strict and not report.ok:
        raise report.as_error()
    if not frames:
        raise ValidationError(_('В наборе данных %(path)s нет кадров'), code='no_frames', params={'path': path})
    broken = {item.frame for item in report.violations if item.frame is not None}
    if broken:
        logger.warning(f'Пропущены кадры с ошибками: {sorted(broken)}')
    return SceneDataset(
        frames=[frame for index, frame in frames if index not in broken],
        num_objects=num_objects,
        normalization=normalization,
        meta=meta,
    )
