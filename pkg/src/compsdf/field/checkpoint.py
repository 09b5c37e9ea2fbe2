"""
Binary checkpoint of a compositional field.

Layout (all integers little-endian)::

    8 bytes   magic b'CSDFCKPT'
    uint32    format version
    uint32    header length H
    H bytes   UTF-8 JSON header, keys sorted
    ...       tensor payload, each tensor as contiguous little-endian floats

The header records the grid and model configs, K, the background channel, β, the training
iteration, the scene normalization, the optimizer hyperparameters and one entry per tensor
(``name``, ``shape``, ``dtype`` of ``<f4``/``<f8``, byte ``offset`` into the payload).
Optimizer moments are stored as tensors named ``optimizer.<param index>.<key>``.
"""
import dataclasses
import json
import logging
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch
from django.conf import settings
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from compsdf.common.utils import atomic_write_bytes, dataclass_from_dict, dump_json
from compsdf.dataio.schema import SceneNormalization
from compsdf.field.encoding import GridConfig
from compsdf.field.network import CompositionalField, ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b'CSDFCKPT'
_PREFIX = struct.Struct('<8sII')
_DTYPES = {torch.float32: '<f4', torch.float64: '<f8'}


@dataclasses.dataclass
class Checkpoint:
    field: CompositionalField
    iteration: int = 0
    normalization: SceneNormalization | None = None
    optimizer_state: dict | None = None
    """``torch.optim`` state dict, ready for ``load_state_dict``."""
    extra: dict = dataclasses.field(default_factory=dict)


def _tensor_bytes(tensor: torch.Tensor) -> tuple[str, bytes]:
    tensor = tensor.detach().cpu()
    if tensor.dtype not in _DTYPES:
        tensor = tensor.to(torch.float64)
    code = _DTYPES[tensor.dtype]
    return code, np.ascontiguousarray(tensor.numpy()).astype(code, copy=False).tobytes()


def encode_checkpoint(
    field: CompositionalField,
    iteration: int = 0,
    normalization: SceneNormalization | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
) -> bytes:
    tensors: list[tuple[str, torch.Tensor]] = list(field.state_dict().items())
    optimizer_groups = None
    if optimizer is not None:
        state = optimizer.state_dict()
        optimizer_groups = [
            {key: list(value) if isinstance(value, tuple) else value for key, value in group.items()}
            for group in state['param_groups']
        ]
        for index in sorted(state['state']):
            for key, value in sorted(state['state'][index].items()):
                tensors.append((f'optimizer.{index}.{key}', torch.as_tensor(value)))

    entries = []
    chunks = []
    offset = 0
    for name, tensor in tensors:
        code, data = _tensor_bytes(tensor)
        entries.append({'name': name, 'shape': list(tensor.shape), 'dtype': code, 'offset': offset})
        chunks.append(data)
        offset += len(data)

    header = {
        'grid': field.grid_config.as_dict(),
        'model': field.model_config.as_dict(),
        'num_objects': field.num_objects,
        'background_channel': field.background_channel,
        'beta': float(field.beta),
        'iteration': iteration,
        'normalization': normalization.as_dict() if normalization is not None else None,
        'optimizer': optimizer_groups,
        'tensors': entries,
        'extra': extra or {},
    }
    header_bytes = dump_json(header).encode('utf-8')
    version = settings.COMPSDF_CHECKPOINT_VERSION
    return _PREFIX.pack(MAGIC, version, len(header_bytes)) + header_bytes + b''.join(chunks)


def save_checkpoint(path: str | Path, field: CompositionalField, **kwargs) -> Path:
    """
    Write a checkpoint atomically.
    :param path: Destination file.
    :param field: Field to store.
    :param kwargs: ``iteration``, ``normalization``, ``optimizer``, ``extra``.
    """
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(field, **kwargs))
    logger.debug(f'Чекпоинт сохранен: {path}')
    return path


def _invalid(message, **params) -> ValidationError:
    return ValidationError(message, code='checkpoint', params=params)


def read_header(data: bytes) -> tuple[dict[str, Any], memoryview]:
    if len(data) < _PREFIX.size:
        raise _invalid(_('Файл чекпоинта слишком короткий'))
    magic, version, header_length = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise _invalid(_('Файл не является чекпоинтом'))
    if version != settings.COMPSDF_CHECKPOINT_VERSION:
        raise _invalid(_('Неподдерживаемая версия чекпоинта: %(version)s'), version=version)
    start = _PREFIX.size + header_length
    header = json.loads(bytes(data[_PREFIX.size:start]).decode('utf-8'))
    return header, memoryview(data)[start:]


def load_checkpoint(path: str | Path) -> Checkpoint:
    """
    Read a checkpoint written by :func:`save_checkpoint`.
    :raise ValidationError: For foreign files, unknown versions and truncated payloads.
    """
    data = Path(path).read_bytes()
    header, payload = read_header(data)

    tensors: dict[str, torch.Tensor] = {}
    for entry in header['tensors']:
        code = entry['dtype']
        count = int(np.prod(entry['shape'], dtype=np.int64))
        end = entry['offset'] + count * np.dtype(code).itemsize
        if end > len(payload):
            raise _invalid(_('Чекпоинт обрезан: тензор %(name)s'), name=entry['name'])
        array = np.frombuffer(payload[entry['offset']:end], dtype=code).astype(code[1:], copy=True)
        tensors[entry['name']] = torch.from_numpy(array.reshape(entry['shape']))

    grid = dataclass_from_dict(GridConfig, header['grid'], 'grid')
    model = dataclass_from_dict(ModelConfig, header['model'], 'model')
    field = CompositionalField(
        header['num_objects'], grid, model, background_channel=header['background_channel'], initialize=False,
    )
    field_state = {name: tensor for name, tensor in tensors.items() if not name.startswith('optimizer.')}
    field.load_state_dict(field_state, strict=True)

    optimizer_state = None
    if header['optimizer'] is not None:
        state: dict[int, dict[str, torch.Tensor]] = {}
        for name, tensor in tensors.items():
            if name.startswith('optimizer.'):
                _prefix, index, key = name.split('.', 2)
                state.setdefault(int(index), {})[key] = tensor
        groups = [
            {key: tuple(value) if key == 'betas' else value for key, value in group.items()}
            for group in header['optimizer']
        ]
        optimizer_state = {'state': state, 'param_groups': groups}

    normalization = None
    if header['normalization'] is not None:
        normalization = SceneNormalization.from_dict(header['normalization'])
    return Checkpoint(
        field=field,
        iteration=header['iteration'],
        normalization=normalization,
        optimizer_state=optimizer_state,
        extra=header.get('extra', {}),
    )
