from enum import Enum


class Dtype(Enum):
    F16 = 'f16'
    F32 = 'f32'
    I32 = 'i32'
    U8 = 'u8'  # doubles as boolean mask

    @property
    def size(self) -> int:
        return _DTYPE_SIZES[self]

    @property
    def tag(self) -> int:
        return _DTYPE_TAGS[self]

    @classmethod
    def from_tag(cls, tag: int) -> 'Dtype':
        for dtype, dtype_tag in _DTYPE_TAGS.items():
            if dtype_tag == tag:
                return dtype
        raise ValueError('unknown dtype tag {}'.format(tag))


_DTYPE_SIZES = {Dtype.F16: 2, Dtype.F32: 4, Dtype.I32: 4, Dtype.U8: 1}
_DTYPE_TAGS = {Dtype.F16: 1, Dtype.F32: 2, Dtype.I32: 3, Dtype.U8: 4}


class MemorySpace(Enum):
    UB = 'alloc_ub'
    L1 = 'alloc_l1'


class BufferRole(Enum):
    STREAM_IN = 'stream_in'
    STREAM_OUT = 'stream_out'
    TEMP = 'temp'


class StageKind(Enum):
    COPY_IN = 'copyin'
    COMPUTE = 'compute'
    COPY_OUT = 'copyout'

    @property
    def title(self) -> str:
        return {StageKind.COPY_IN: 'CopyIn', StageKind.COMPUTE: 'Compute', StageKind.COPY_OUT: 'CopyOut'}[self]


class Severity(Enum):
    ERROR = 'error'
    WARNING = 'warning'


class HwQueue(Enum):
    # declaration order is the simulator's tie-break order
    MTE2 = 1
    VEC = 2
    SCALAR = 3
    MTE3 = 4


class QueuePosition(Enum):
    VECIN = 'VECIN'
    VECOUT = 'VECOUT'
    VECCALC = 'VECCALC'
    A1 = 'A1'  # L1 scratch


class Category(Enum):
    ACTIVATION = 'Activation'
    LOSS = 'Loss'
    MATH = 'Math'
    NORMALIZATION = 'Normalization'
    OPTIMIZER = 'Optimizer'
    REDUCE = 'Reduce'
    POOLING = 'Pooling'


class SymbolKind(Enum):
    TENSOR = 'tensor'
    SHAPE = 'shape'
    TILING = 'tiling'
    BUILTIN = 'builtin'
    KERNEL_TENSOR = 'kernel tensor'
    KERNEL_SCALAR = 'kernel scalar'
    BUFFER = 'buffer'
    LOOP_VAR = 'loop variable'
    SCALAR = 'scalar'
