"""
Parameter file codec.

Layout::

    b'ROSA' | uint32 version | uint32 header length | header JSON (utf-8)
    | little-endian float64 tensors in declaration order
"""
import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from rosalab.config import dump_json
from rosalab.resources.errors import ParameterFileError
from rosalab.resources.predictor.features import FeatureConfig
from rosalab.resources.predictor.network import ModelConfig, ModelParameters
from rosalab.resources.predictor.training import TrainingHistory

MAGIC = b'ROSA'
FORMAT_VERSION = 1


def encode_parameters(params: ModelParameters) -> bytes:
    header = {
        'model_config': params.config.to_dict(),
        'feature_config': params.feature_config.to_dict(),
        'tensors': [
            {'name': name, 'shape': list(tensor.shape)}
            for name, tensor in params.tensors.items()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    chunks = [
        MAGIC,
        struct.pack('<II', FORMAT_VERSION, len(header_bytes)),
        header_bytes,
    ]
    for tensor in params.tensors.values():
        chunks.append(np.ascontiguousarray(tensor, dtype='<f8').tobytes())
    return b''.join(chunks)


def decode_parameters(data: bytes) -> ModelParameters:
    if data[:4] != MAGIC:
        raise ParameterFileError('✗ NOT A ROSA PARAMETER FILE (BAD MAGIC)')
    if len(data) < 12:
        raise ParameterFileError('✗ TRUNCATED PARAMETER FILE HEADER')
    version, header_length = struct.unpack('<II', data[4:12])
    if version != FORMAT_VERSION:
        raise ParameterFileError(
            f'✗ UNSUPPORTED PARAMETER FILE VERSION {version}', version=version
        )
    try:
        header = json.loads(data[12:12 + header_length].decode('utf-8'))
        config = ModelConfig.from_dict(header['model_config'])
        feature_config = FeatureConfig.from_dict(header['feature_config'])
    except (ValueError, KeyError, TypeError) as error:
        raise ParameterFileError(
            f'✗ UNREADABLE PARAMETER FILE HEADER: {error}', reason=str(error)
        )

    offset = 12 + header_length
    tensors = {}
    for item in header['tensors']:
        shape = tuple(item['shape'])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise ParameterFileError(
                f'✗ TRUNCATED TENSOR "{item["name"]}"', name=item['name']
            )
        tensor = np.frombuffer(data[offset:end], dtype='<f8').astype(np.float64)
        tensors[item['name']] = tensor.reshape(shape)
        offset = end
    if offset != len(data):
        raise ParameterFileError(
            '✗ TRAILING BYTES AFTER THE LAST TENSOR', extra=len(data) - offset
        )
    params = ModelParameters(config, feature_config, tensors)
    if not params.is_finite():
        raise ParameterFileError('✗ PARAMETER FILE HOLDS NON-FINITE VALUES')
    return params


def save_parameters(params: ModelParameters, target: str | Path | BinaryIO) -> None:
    data = encode_parameters(params)
    if hasattr(target, 'write'):
        target.write(data)
    else:
        Path(target).write_bytes(data)


def load_parameters(source: str | Path | BinaryIO) -> ModelParameters:
    if hasattr(source, 'read'):
        return decode_parameters(source.read())
    path = Path(source)
    if not path.is_file():
        raise ParameterFileError(
            f'✗ PARAMETER FILE "{path}" DOES NOT EXIST', path=str(path)
        )
    return decode_parameters(path.read_bytes())


def save_history(history: TrainingHistory, path: str | Path) -> None:
    dump_json(history.to_dict(), path)
