import dataclasses
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping, TypeVar

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

T = TypeVar('T')

_MASK64 = 0xFFFFFFFFFFFFFFFF


def dataclass_from_dict(cls: type[T], data: Mapping[str, Any], section: str = '') -> T:
    """
    Build a config dataclass from a mapping, rejecting keys the dataclass does not declare.
    :param cls: Dataclass type.
    :param data: Raw values, e.g. a TOML table.
    :param section: Section name used in error messages.
    :return: Instance of ``cls``; lists are converted to tuples.
    """
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValidationError(
            _('Неизвестные ключи в секции "%(section)s": %(keys)s'),
            code='unknown_keys',
            params={'section': section or cls.__name__, 'keys': ', '.join(unknown)},
        )
    values = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in data.items()
    }
    return cls(**values)


def dump_json(obj: Any, **kwargs) -> str:
    """Serialize with sorted keys so files written twice are byte-identical."""
    return json.dumps(obj, sort_keys=True, **kwargs)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """
    Write a file via a temporary sibling and rename, so readers never see a partial file.
    :param path: Destination.
    :param data: Content.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode('utf-8'))


def iteration_seed(seed: int, iteration: int) -> int:
    """Derive an independent 63-bit seed for one iteration of a seeded run."""
    state = np.random.SeedSequence([seed, iteration]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 ^ int(state[1])


def ray_generator(seed: int, ray_id: int) -> np.random.Generator:
    """Philox stream of one ray, keyed by the 128-bit pair ``(ray_id, seed)``."""
    return np.random.Generator(np.random.Philox(key=(int(ray_id) << 64) | (seed & _MASK64)))


def ray_uniforms(seed: int, ray_ids: np.ndarray, count: int) -> np.ndarray:
    """
    Uniform numbers in [0, 1) from independent per-ray streams.

    The stream of a ray does not depend on which other rays are in the batch, so any split
    of rays between workers reproduces the same samples.
    :param seed: Global seed.
    :param ray_ids: Non-negative integer ray indices, shape (N,).
    :param count: Numbers per ray.
    :return: float64 array of shape (N, count).
    """
    ray_ids = np.asarray(ray_ids, dtype=np.int64)
    result = np.empty((ray_ids.shape[0], count), dtype=np.float64)
    for row, ray_id in enumerate(ray_ids.tolist()):
        result[row] = ray_generator(seed, ray_id).random(count)
    return result
