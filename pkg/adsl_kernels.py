"""
Element-level semantics of the compute primitives, shared by the DSL
interpreter (adsl_vm) and the target interpreter (adsl_target) so the two agree
bit for bit. f16 data is computed in f32 and rounded to nearest even when
stored; reductions accumulate in the source dtype.
"""

from typing import Sequence

import numpy as np

from adsl_diagnostics import InternalError
from adsl_options import Dtype

NUMPY_DTYPES = {
    Dtype.F16: np.dtype('<f2'),
    Dtype.F32: np.dtype('<f4'),
    Dtype.I32: np.dtype('<i4'),
    Dtype.U8: np.dtype('u1'),
}


def numpy_dtype(dtype: Dtype) -> np.dtype:
    return NUMPY_DTYPES[dtype]


def _work(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32) if a.dtype == np.float16 else a


def _store(dst: np.ndarray, value) -> None:
    dst[...] = np.asarray(value).astype(dst.dtype, copy=False)


def _scalar(value, like: np.ndarray):
    # the scalar operand takes the buffer dtype first, as the vector unit sees it
    s = np.asarray(value).astype(like.dtype)
    return s.astype(np.float32) if like.dtype == np.float16 else s


_BINARY = {
    'vadd': np.add,
    'vsub': np.subtract,
    'vmul': np.multiply,
    'vdiv': np.divide,
    'vmax': np.maximum,
    'vmin': np.minimum,
}

_UNARY = {
    'vexp': np.exp,
    'vln': np.log,
    'vabs': np.abs,
    'vrelu': lambda a: np.maximum(a, np.zeros((), dtype=a.dtype)),
    'vcopy': lambda a: a,
}

_WITH_SCALAR = {
    'adds': np.add,
    'muls': np.multiply,
    'maxs': np.maximum,
}


def _convert(dst: np.ndarray, src: np.ndarray) -> None:
    if np.issubdtype(dst.dtype, np.integer) and np.issubdtype(src.dtype, np.floating):
        info = np.iinfo(dst.dtype)
        wide = np.trunc(src.astype(np.float64))
        wide = np.nan_to_num(wide, nan=0.0, posinf=info.max, neginf=info.min)
        dst[...] = np.clip(wide, info.min, info.max).astype(dst.dtype)
    else:
        _store(dst, src)


def execute(op: str, dst: np.ndarray, srcs: Sequence[np.ndarray], scalar=None) -> None:
    """Apply one primitive; `dst` and `srcs` are views of equal-length element runs."""
    with np.errstate(all='ignore'):
        if op in _BINARY:
            a, b = srcs
            if a.dtype == np.float32:
                _store(dst, _BINARY[op](a, b, dtype=np.float32))
            else:
                _store(dst, _BINARY[op](_work(a), _work(b)))
        elif op in _UNARY:
            (a,) = srcs
            _store(dst, _UNARY[op](_work(a)))
        elif op in _WITH_SCALAR:
            (a,) = srcs
            _store(dst, _WITH_SCALAR[op](_work(a), _scalar(scalar, a)))
        elif op == 'vsel':
            mask, a, b = srcs
            _store(dst, np.where(mask != 0, a, b))
        elif op == 'reduce_sum':
            (a,) = srcs
            dst[0] = np.add.reduce(a, dtype=a.dtype) if a.size else 0
        elif op == 'reduce_max':
            (a,) = srcs
            dst[0] = np.max(a) if a.size else 0
        elif op == 'broadcast':
            (a,) = srcs
            dst[...] = a[0]
        elif op == 'memset':
            dst[...] = np.asarray(scalar).astype(dst.dtype)
        elif op == 'cast':
            (a,) = srcs
            _convert(dst, a)
        elif op in ('copy_g2l', 'copy_l2g'):
            (a,) = srcs
            dst[...] = a
        else:
            raise InternalError('no semantics for primitive {}'.format(op))
