"""
ADSLT tensor container.

    magic   5 bytes  b'ADSLT'
    version u16 LE   1
    dtype   u8       Dtype.tag
    rank    u8
    dims    rank x u64 LE
    payload row-major, little-endian elements
"""

import os
from typing import Dict, Mapping

import bitstring
import numpy as np

from adsl_diagnostics import TensorFormatError
from adsl_kernels import numpy_dtype
from adsl_options import Dtype
from adsl_vm import TensorValue

MAGIC = b'ADSLT'
VERSION = 1
TENSOR_EXTENSION = '.adslt'


def encode_tensor(value: TensorValue) -> bytes:
    header = bitstring.pack('bytes:5, uintle:16, uint:8, uint:8', MAGIC, VERSION, value.dtype.tag, len(value.shape))
    for dim in value.shape:
        header.append(bitstring.pack('uintle:64', dim))
    return header.tobytes() + value.data.astype(numpy_dtype(value.dtype)).tobytes()


def decode_tensor(raw: bytes) -> TensorValue:
    stream = bitstring.ConstBitStream(bytes=raw)
    try:
        magic, version, tag, rank = stream.readlist('bytes:5, uintle:16, uint:8, uint:8')
        if magic != MAGIC:
            raise TensorFormatError('bad magic {!r}'.format(magic))
        if version != VERSION:
            raise TensorFormatError('unsupported container version {}'.format(version))
        dtype = Dtype.from_tag(tag)
        dims = tuple(stream.read('uintle:64') for _ in range(rank))
    except (bitstring.ReadError, ValueError) as failure:
        raise TensorFormatError('truncated or malformed header: {}'.format(failure))
    payload = raw[stream.pos // 8:]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.size
    if len(payload) != expected:
        raise TensorFormatError('payload has {} bytes, shape {} {} needs {}'.format(
            len(payload), list(dims), dtype.value, expected))
    data = np.frombuffer(payload, dtype=numpy_dtype(dtype)).copy()
    return TensorValue(dtype, dims, data)


def write_tensor(path: str, value: TensorValue):
    with open(path, mode='wb') as tensor_file:
        tensor_file.write(encode_tensor(value))


def read_tensor(path: str) -> TensorValue:
    with open(path, mode='rb') as tensor_file:
        return decode_tensor(tensor_file.read())


def read_tensor_dir(directory: str) -> Dict[str, TensorValue]:
    """Every <name>.adslt file in `directory`, keyed by name."""
    tensors = {}
    for entry in sorted(os.listdir(directory)):
        name, extension = os.path.splitext(entry)
        if extension == TENSOR_EXTENSION:
            tensors[name] = read_tensor(os.path.join(directory, entry))
    return tensors


def write_tensor_dir(directory: str, tensors: Mapping[str, TensorValue]):
    os.makedirs(directory, exist_ok=True)
    for name, value in sorted(tensors.items()):
        write_tensor(os.path.join(directory, name + TENSOR_EXTENSION), value)
