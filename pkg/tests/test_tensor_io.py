import numpy as np
import pytest

from adsl_diagnostics import TensorFormatError
from adsl_options import Dtype
from adsl_tensor_io import (
    MAGIC, TENSOR_EXTENSION, decode_tensor, encode_tensor, read_tensor, read_tensor_dir, write_tensor, write_tensor_dir,
)
from adsl_vm import TensorValue


def sample(dtype=Dtype.F32, shape=(2, 3)):
    return TensorValue.from_array(np.arange(np.prod(shape)).reshape(shape), dtype)


class TestEncoding:
    def test_header_layout(self):
        raw = encode_tensor(sample())
        assert raw[:5] == MAGIC
        assert raw[5:7] == b'\x01\x00'
        assert raw[7] == Dtype.F32.tag
        assert raw[8] == 2
        assert raw[9:17] == (2).to_bytes(8, 'little')
        assert len(raw) == 9 + 2 * 8 + 6 * 4

    def test_payload_is_little_endian(self):
        raw = encode_tensor(TensorValue.from_array(np.array([1], dtype=np.int32), Dtype.I32))
        assert raw[-4:] == b'\x01\x00\x00\x00'

    @pytest.mark.parametrize('dtype', list(Dtype))
    def test_decode_restores_bits(self, dtype):
        value = sample(dtype)
        decoded = decode_tensor(encode_tensor(value))
        assert decoded.bitwise_equal(value)

    def test_scalar_tensor(self):
        value = TensorValue(Dtype.F32, (), np.array([2.5], dtype=np.float32))
        decoded = decode_tensor(encode_tensor(value))
        assert decoded.shape == ()
        assert decoded.data.tolist() == [2.5]


class TestMalformed:
    def test_bad_magic(self):
        with pytest.raises(TensorFormatError, match='bad magic'):
            decode_tensor(b'NOTIT' + encode_tensor(sample())[5:])

    def test_bad_version(self):
        raw = bytearray(encode_tensor(sample()))
        raw[5] = 2
        with pytest.raises(TensorFormatError, match='version'):
            decode_tensor(bytes(raw))

    def test_unknown_dtype(self):
        raw = bytearray(encode_tensor(sample()))
        raw[7] = 99
        with pytest.raises(TensorFormatError):
            decode_tensor(bytes(raw))

    def test_truncated_header(self):
        with pytest.raises(TensorFormatError, match='header'):
            decode_tensor(encode_tensor(sample())[:12])

    def test_short_payload(self):
        with pytest.raises(TensorFormatError, match='payload'):
            decode_tensor(encode_tensor(sample())[:-1])

    def test_long_payload(self):
        with pytest.raises(TensorFormatError, match='payload'):
            decode_tensor(encode_tensor(sample()) + b'\x00')


class TestFiles:
    def test_file(self, tmp_path):
        path = str(tmp_path / ('x' + TENSOR_EXTENSION))
        write_tensor(path, sample(Dtype.F16))
        assert read_tensor(path).bitwise_equal(sample(Dtype.F16))

    def test_directory_keys_by_stem(self, tmp_path):
        directory = str(tmp_path / 'inputs')
        write_tensor_dir(directory, {'a': sample(), 'b': sample(Dtype.U8, (4,))})
        (tmp_path / 'inputs' / 'notes.txt').write_text('ignored')
        tensors = read_tensor_dir(directory)
        assert sorted(tensors) == ['a', 'b']
        assert tensors['b'].dtype == Dtype.U8
