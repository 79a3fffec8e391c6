"""
The virtual NPU.

`eval_host` runs the host function: it binds shape symbols from the inputs,
evaluates tiling values in dependency order and splits the launch workload
across blocks. `elaborate_block` then walks one block's kernel body with those
values and yields resolved events (primitive calls with concrete element
ranges, scalar assignments, stage boundaries, barriers). Kernel scalars never
read buffer data, so elaboration is data independent and the same event stream
drives the functional interpreter, the timed simulator and the semantic
checks.
"""

import logging
from collections import ChainMap
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from adsl_config import NpuConfig
from adsl_core import (
    PRIMITIVES, Assign, EvalFault, For, IntLit, Name, Primitive, PrimitiveCall, Program, Slice, StageBlock, Sync,
    TensorParam, evaluate, tiling_order,
)
from adsl_diagnostics import ComparisonError, DiagnosticError, InternalError, error
from adsl_kernels import execute, numpy_dtype
from adsl_options import BufferRole, Dtype, HwQueue, StageKind
from adsl_timing import STAGE_QUEUE, CostReport, Instr, Scoreboard, SlotTracker, simulate, transfer_latency

logger = logging.getLogger(__name__)

KERNEL_BUILTINS = ('block_idx', 'block_num', 'block_start', 'block_len')
HOST_BUILTINS = ('num_cores',)

TOLERANCES = {
    Dtype.F32: (1e-5, 1e-6),
    Dtype.F16: (1e-2, 1e-3),
    Dtype.I32: (0.0, 0.0),
    Dtype.U8: (0.0, 0.0),
}


# ---------------------------------------------------------------- tensors

@dataclass(frozen=True, eq=False)
class TensorValue:
    dtype: Dtype
    shape: Tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        flat = np.ascontiguousarray(self.data, dtype=numpy_dtype(self.dtype)).reshape(-1)
        if flat.size != int(np.prod(self.shape, dtype=np.int64)):
            raise ValueError('{} elements do not fill shape {}'.format(flat.size, list(self.shape)))
        object.__setattr__(self, 'shape', tuple(int(d) for d in self.shape))
        object.__setattr__(self, 'data', flat)

    @classmethod
    def from_array(cls, array, dtype: Dtype) -> 'TensorValue':
        array = np.asarray(array)
        return cls(dtype, array.shape, array.astype(numpy_dtype(dtype)))

    def to_array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def bitwise_equal(self, other: 'TensorValue') -> bool:
        return self.dtype == other.dtype and self.shape == other.shape and \
            self.data.tobytes() == other.data.tobytes()


# ---------------------------------------------------------------- host evaluation

@dataclass(frozen=True)
class LaunchPlan:
    num_blocks: int
    workload: int
    tiling_values: Dict[str, int]
    per_block_ranges: List[range]
    shape_env: Dict[str, int]
    tensor_shapes: Dict[str, Tuple[int, ...]]
    kernel_tensors: Dict[str, str]
    kernel_scalars: Dict[str, Union[int, float]]


def partition_ranges(workload: int, num_blocks: int) -> List[range]:
    """Split [0, workload) into contiguous ranges; the remainder goes one each to the lowest blocks."""
    base, extra = divmod(workload, num_blocks)
    ranges = []
    start = 0
    for block in range(num_blocks):
        length = base + (1 if block < extra else 0)
        ranges.append(range(start, start + length))
        start += length
    return ranges


def declared_shapes(p: Program) -> Optional[Dict[str, Tuple[int, ...]]]:
    """Input shapes when every input dim is a literal, else None."""
    shapes = {}
    for param in p.host.inputs:
        if not all(isinstance(d, IntLit) for d in param.dims):
            return None
        shapes[param.name] = tuple(d.value for d in param.dims)
    return shapes


def _int_value(value, span, what, diagnostics):
    if not isinstance(value, int):
        diagnostics.append(error('TIL-NONINT', span, '{} evaluates to {!r}, not an integer'.format(what, value)))
        return None
    if value <= 0:
        diagnostics.append(error('TIL-NONPOS', span, '{} evaluates to {}'.format(what, value),
                                 fix_hint='tile sizes, block counts and dims must be positive'))
        return None
    return value


def eval_host(p: Program, input_shapes: Mapping[str, Sequence[int]], cfg: NpuConfig = None) -> LaunchPlan:
    cfg = cfg or NpuConfig()
    host = p.host
    diagnostics = []
    shape_env: Dict[str, int] = {}
    tensor_shapes: Dict[str, Tuple[int, ...]] = {}
    for param in host.inputs:
        if param.name not in input_shapes:
            diagnostics.append(error('SEM-SHAPE', param.span, 'no shape given for input {}'.format(param.name)))
            continue
        given = tuple(int(d) for d in input_shapes[param.name])
        if len(given) != len(param.dims):
            diagnostics.append(error('SEM-SHAPE', param.span, '{} is rank {} but got shape {}'.format(
                param.name, len(param.dims), list(given))))
            continue
        for dim_expr, dim in zip(param.dims, given):
            if dim <= 0:
                diagnostics.append(error('TIL-NONPOS', dim_expr.span, '{} has dimension {}'.format(param.name, dim)))
            elif isinstance(dim_expr, Name):
                bound = shape_env.setdefault(dim_expr.ident, dim)
                if bound != dim:
                    diagnostics.append(error('SEM-SHAPE', dim_expr.span, '{} is {} here but {} elsewhere'.format(
                        dim_expr.ident, dim, bound)))
            elif evaluate(dim_expr, {}) != dim:
                diagnostics.append(error('SEM-SHAPE', dim_expr.span, '{} declares {} but got {}'.format(
                    param.name, evaluate(dim_expr, {}), dim)))
        tensor_shapes[param.name] = given
    if diagnostics:
        raise DiagnosticError(diagnostics)

    env: Dict[str, Union[int, float]] = dict(shape_env)
    env['num_cores'] = cfg.num_cores
    tiling_values: Dict[str, int] = {}
    ordered, cyclic = tiling_order(host)
    for decl in cyclic:
        diagnostics.append(error('TIL-CYCLE', decl.span, 'tiling {} depends on itself'.format(decl.name)))
    for decl in ordered:
        try:
            value = _int_value(evaluate(decl.expr, env), decl.span, 'tiling ' + decl.name, diagnostics)
        except EvalFault as fault:
            diagnostics.append(error('TIL-NONPOS', fault.span or decl.span, 'tiling {}: {}'.format(decl.name, fault)))
            continue
        if value is not None:
            tiling_values[decl.name] = value
            env[decl.name] = value
    if diagnostics:
        raise DiagnosticError(diagnostics)

    launch = host.launch
    try:
        num_blocks = _int_value(evaluate(launch.num_blocks, env), launch.num_blocks.span, 'block count', diagnostics)
        workload = num_blocks
        if launch.workload is not None:
            workload = _int_value(evaluate(launch.workload, env), launch.workload.span, 'partition workload',
                                  diagnostics)
        for param in host.outputs:
            dims = tuple(_int_value(evaluate(d, env), d.span, 'dimension of ' + param.name, diagnostics)
                         for d in param.dims)
            tensor_shapes[param.name] = dims
    except EvalFault as fault:
        diagnostics.append(error('TIL-NONPOS', fault.span or launch.span, str(fault)))
    if diagnostics:
        raise DiagnosticError(diagnostics)

    kernel_tensors: Dict[str, str] = {}
    kernel_scalars: Dict[str, Union[int, float]] = {}
    for param, arg in zip(p.kernel.params, launch.args):
        if isinstance(arg, Name) and host.param(arg.ident) is not None:
            kernel_tensors[param.name] = arg.ident
        else:
            try:
                kernel_scalars[param.name] = evaluate(arg, env)
            except EvalFault as fault:
                diagnostics.append(error('TIL-NONPOS', fault.span or arg.span, str(fault)))
    if diagnostics:
        raise DiagnosticError(diagnostics)
    plan = LaunchPlan(num_blocks, workload, tiling_values, partition_ranges(workload, num_blocks), shape_env,
                      tensor_shapes, kernel_tensors, kernel_scalars)
    if num_blocks > cfg.num_cores:
        logger.warning('%s launches %d blocks on %d cores; extra blocks serialize', p.name, num_blocks, cfg.num_cores)
    return plan


# ---------------------------------------------------------------- elaboration

@dataclass(frozen=True)
class Region:
    """A run of elements: `rows` runs of `length` elements, `stride` apart."""
    name: str
    is_global: bool
    start: int
    length: int
    rows: int = 1
    stride: int = 0

    @property
    def count(self) -> int:
        return self.length * self.rows

    def row_starts(self) -> range:
        return range(self.start, self.start + self.rows * self.stride, self.stride) if self.rows > 1 \
            else range(self.start, self.start + 1)


@dataclass(frozen=True, eq=False)
class OpEvent:
    call: PrimitiveCall
    prim: Primitive
    label: Optional[str]
    kind: Optional[StageKind]
    site: int
    operands: Tuple[Union[Region, int, float], ...]

    @property
    def op(self) -> str:
        return self.prim.op

    def bound_operands(self) -> Iterator[Tuple[str, Region]]:
        for role, operand in zip(self.prim.operands, self.operands):
            if role != 'scalar':
                yield role, operand

    @property
    def scalar(self):
        for role, operand in zip(self.prim.operands, self.operands):
            if role == 'scalar':
                return operand
        return None


@dataclass(frozen=True)
class ScalarEvent:
    name: str
    value: Union[int, float]
    label: Optional[str]


@dataclass(frozen=True)
class StageEvent:
    kind: StageKind
    label: str
    enter: bool


@dataclass(frozen=True)
class BarrierEvent:
    pass


@dataclass
class KernelLayout:
    """Per-launch facts the elaborator needs: capacities, dtypes and call sites."""
    buffers: Dict[str, Tuple[Dtype, int, BufferRole]]
    tensors: Dict[str, Tuple[Dtype, Tuple[int, ...]]]
    sites: Dict[int, int] = field(default_factory=dict)

    def dtype_sizes(self) -> Dict[str, int]:
        sizes = {name: spec[0].size for name, spec in self.buffers.items()}
        sizes.update({name: spec[0].size for name, spec in self.tensors.items()})
        return sizes

    def roles(self) -> Dict[str, BufferRole]:
        return {name: spec[2] for name, spec in self.buffers.items()}


def block_sites(p: Program) -> Dict[int, int]:
    """Index of each primitive call within its stage block, keyed by id() of the call node."""
    sites = {}

    def visit(stmts, counter):
        for s in stmts:
            if isinstance(s, PrimitiveCall):
                sites[id(s)] = counter[0]
                counter[0] += 1
            elif isinstance(s, StageBlock):
                visit(s.body, [0])
            elif isinstance(s, For):
                visit(s.body, counter)

    visit(p.kernel.body, [0])
    return sites


def kernel_layout(p: Program, plan: LaunchPlan) -> KernelLayout:
    tensors = {}
    for param in p.host.params:
        tensors[param.name] = (param.dtype, plan.tensor_shapes[param.name])
    buffers = {}
    for decl in p.kernel.buffers:
        capacity = evaluate(decl.capacity, plan.kernel_scalars)
        buffers[decl.name] = (decl.dtype, capacity, decl.role)
    return KernelLayout(buffers, tensors, block_sites(p))


def block_env(plan: LaunchPlan, block: int) -> Dict[str, Union[int, float]]:
    env = dict(plan.kernel_scalars)
    block_range = plan.per_block_ranges[block]
    env.update(block_idx=block, block_num=plan.num_blocks, block_start=block_range.start, block_len=len(block_range))
    return env


def _assign(env: ChainMap, name: str, value):
    for scope in env.maps:
        if name in scope:
            scope[name] = value
            return
    env.maps[0][name] = value


class _Elaborator:
    def __init__(self, p: Program, plan: LaunchPlan, layout: KernelLayout):
        self.p = p
        self.plan = plan
        self.layout = layout

    def region(self, operand, env) -> Region:
        if isinstance(operand, Slice):
            base = operand.base
            start = evaluate(operand.start, env)
            stop = evaluate(operand.stop, env)
        else:
            base = operand.ident
            start = 0
            stop = None
        if base in self.plan.kernel_tensors:
            tensor = self.plan.kernel_tensors[base]
            if stop is None:
                stop = int(np.prod(self.layout.tensors[tensor][1], dtype=np.int64))
            return Region(tensor, True, start, stop - start)
        if stop is None:
            stop = self.layout.buffers[base][1]
        return Region(base, False, start, stop - start)

    def call(self, s: PrimitiveCall, env, label, kind) -> OpEvent:
        prim = PRIMITIVES[s.op]
        operands = []
        for role, arg in zip(prim.operands, s.args):
            operands.append(evaluate(arg, env) if role == 'scalar' else self.region(arg, env))
        if prim.is_copy and len(s.args) == 4:
            rows = evaluate(s.args[2], env)
            stride = evaluate(s.args[3], env)
            g = 0 if operands[0].is_global else 1
            r = operands[g]
            operands[g] = Region(r.name, True, r.start, r.length, rows, stride)
        return OpEvent(s, prim, label, kind, self.layout.sites.get(id(s), 0), tuple(operands))

    def walk(self, stmts, env: ChainMap, label, kind) -> Iterator:
        for s in stmts:
            if isinstance(s, Assign):
                value = evaluate(s.value, env)
                _assign(env, s.target, value)
                yield ScalarEvent(s.target, value, label)
            elif isinstance(s, For):
                lo = evaluate(s.start, env)
                hi = evaluate(s.stop, env)
                for i in range(lo, hi):
                    yield from self.walk(s.body, env.new_child({s.var: i}), label, kind)
            elif isinstance(s, StageBlock):
                yield StageEvent(s.kind, s.label, True)
                yield from self.walk(s.body, env.new_child(), s.label, s.kind)
                yield StageEvent(s.kind, s.label, False)
            elif isinstance(s, Sync):
                yield BarrierEvent()
            elif isinstance(s, PrimitiveCall):
                yield self.call(s, env, label, kind)


def elaborate_block(p: Program, plan: LaunchPlan, layout: KernelLayout, block: int) -> Iterator:
    """Yield the events of one block in program order."""
    env = ChainMap({}, block_env(plan, block))
    return _Elaborator(p, plan, layout).walk(p.kernel.body, env, None, None)


# ---------------------------------------------------------------- functional execution

class DeviceMemory:
    """Global tensors shared by all blocks plus one block's zeroed local buffers."""

    def __init__(self, buffers: Mapping[str, Tuple[Dtype, int]], gm: Dict[str, np.ndarray]):
        self.gm = gm
        self.local: Dict[str, np.ndarray] = {
            name: np.zeros(size, dtype=numpy_dtype(dtype)) for name, (dtype, size) in buffers.items()}

    def _array(self, r: Region) -> np.ndarray:
        return self.gm[r.name] if r.is_global else self.local[r.name]

    def _indices(self, r: Region) -> np.ndarray:
        return (np.asarray(r.row_starts(), dtype=np.int64)[:, None] + np.arange(r.length, dtype=np.int64)).reshape(-1)

    def _check(self, r: Region):
        array = self._array(r)
        last = r.start + (r.rows - 1) * r.stride + r.length
        if r.start < 0 or r.length < 0 or last > array.size:
            raise InternalError('{} [{}..{}) outside {} elements'.format(r.name, r.start, last, array.size))

    def read(self, r: Region) -> np.ndarray:
        self._check(r)
        array = self._array(r)
        if r.rows == 1:
            return array[r.start:r.start + r.length]
        return array[self._indices(r)]

    def write(self, r: Region, op: str, srcs, scalar):
        self._check(r)
        array = self._array(r)
        if r.rows == 1:
            execute(op, array[r.start:r.start + r.length], srcs, scalar)
        else:
            staged = np.empty(r.count, dtype=array.dtype)
            execute(op, staged, srcs, scalar)
            array[self._indices(r)] = staged


def apply_event(memory: DeviceMemory, event: OpEvent):
    dst = None
    srcs = []
    for role, region in event.bound_operands():
        if role == 'dst':
            dst = region
        else:
            srcs.append(memory.read(region))
    memory.write(dst, event.op, srcs, event.scalar)


def bind_inputs(params: Sequence[TensorParam], inputs: Mapping[str, TensorValue]) -> Dict[str, Tuple[int, ...]]:
    """Input shapes, after checking every declared input is present with its declared dtype."""
    diagnostics = []
    for param in params:
        if param.is_output:
            continue
        if param.name not in inputs:
            diagnostics.append(error('SEM-SHAPE', param.span, 'missing input tensor {}'.format(param.name)))
        elif inputs[param.name].dtype != param.dtype:
            diagnostics.append(error('SEM-SHAPE', param.span, '{} is {} but got {}'.format(
                param.name, param.dtype.value, inputs[param.name].dtype.value)))
    if diagnostics:
        raise DiagnosticError(diagnostics)
    return {name: value.shape for name, value in inputs.items()}


def _run(p: Program, inputs: Mapping[str, TensorValue], cfg: NpuConfig, record: bool):
    plan = eval_host(p, bind_inputs(p.host.params, inputs), cfg)
    layout = kernel_layout(p, plan)
    gm: Dict[str, np.ndarray] = {}
    for param in p.host.params:
        if param.is_output:
            size = int(np.prod(plan.tensor_shapes[param.name], dtype=np.int64))
            gm[param.name] = np.zeros(size, dtype=numpy_dtype(param.dtype))
        else:
            gm[param.name] = inputs[param.name].data.copy()
    recorded: List[List] = [[] for _ in range(plan.num_blocks)]

    def run_block(block: int):
        memory = DeviceMemory({name: spec[:2] for name, spec in layout.buffers.items()}, gm)
        for event in elaborate_block(p, plan, layout, block):
            if record:
                recorded[block].append(event)
            if isinstance(event, OpEvent):
                apply_event(memory, event)
            elif isinstance(event, BarrierEvent):
                yield

    # blocks run in ascending id; a barrier parks a block until every block reaches it
    active = [run_block(b) for b in range(plan.num_blocks)]
    try:
        while active:
            still_running = []
            for runner in active:
                try:
                    next(runner)
                    still_running.append(runner)
                except StopIteration:
                    pass
            active = still_running
    except EvalFault as fault:
        raise InternalError('kernel evaluation fault: {}'.format(fault))
    outputs = {param.name: TensorValue(param.dtype, plan.tensor_shapes[param.name], gm[param.name])
               for param in p.host.outputs}
    return outputs, plan, layout, recorded


def run_functional(p: Program, inputs: Mapping[str, TensorValue], cfg: NpuConfig = None) -> Dict[str, TensorValue]:
    outputs, _, _, _ = _run(p, inputs, cfg or NpuConfig(), record=False)
    return outputs


# ---------------------------------------------------------------- timed execution

def block_instructions(events, block: int, layout: KernelLayout, cfg: NpuConfig, uid_base: int) -> List[Instr]:
    """Turn one block's events into queue instructions with scoreboard dependencies."""
    board = Scoreboard()
    slots = SlotTracker(layout.roles(), cfg)
    sizes = layout.dtype_sizes()
    instrs: List[Instr] = []
    phase = 0
    stage_kind = None
    for event in events:
        if isinstance(event, StageEvent):
            if event.enter:
                stage_kind = event.kind
            else:
                slots.stage_exit()
                stage_kind = None
            continue
        if isinstance(event, BarrierEvent):
            phase += 1
            continue
        uid = uid_base + len(instrs)
        if isinstance(event, ScalarEvent):
            instrs.append(Instr(uid, block, len(instrs), HwQueue.SCALAR, cfg.lat_scalar, phase, event.name))
            continue
        queue = STAGE_QUEUE[event.prim.stage]
        deps = []
        widest = 0
        for role, region in event.bound_operands():
            widest = max(widest, region.count * sizes[region.name])
            key = ('global', region.name) if region.is_global else slots.key(region.name, role == 'dst', stage_kind)
            deps += board.write(key, uid) if role == 'dst' else board.read(key, uid)
        per_256 = cfg.lat_vec_per_256B if queue == HwQueue.VEC else cfg.lat_mte_per_256B
        instr = Instr(uid, block, len(instrs), queue, transfer_latency(cfg, widest, per_256), phase, event.op)
        instr.deps = sorted(set(d for d in deps if d != uid))
        instrs.append(instr)
    return instrs


def run_timed(p: Program, inputs: Mapping[str, TensorValue], cfg: NpuConfig = None
              ) -> Tuple[Dict[str, TensorValue], CostReport]:
    cfg = cfg or NpuConfig()
    outputs, plan, layout, recorded = _run(p, inputs, cfg, record=True)
    blocks = []
    uid_base = 0
    for block, events in enumerate(recorded):
        instrs = block_instructions(events, block, layout, cfg, uid_base)
        uid_base += len(instrs)
        blocks.append(instrs)
    return outputs, simulate(cfg, blocks)


# ---------------------------------------------------------------- comparison

@dataclass(frozen=True)
class ComparisonReport:
    passed: bool
    worst_index: int
    worst_error: float
    worst_actual: float
    worst_expected: float
    mismatches: int
    rel_tol: float
    abs_tol: float

    def to_json(self) -> dict:
        return {
            'passed': self.passed, 'worst_index': self.worst_index, 'worst_error': self.worst_error,
            'worst_actual': self.worst_actual, 'worst_expected': self.worst_expected,
            'mismatches': self.mismatches, 'rel_tol': self.rel_tol, 'abs_tol': self.abs_tol,
        }


def tolerance_for(dtype: Dtype) -> Tuple[float, float]:
    return TOLERANCES[dtype]


def compare_tensors(a: TensorValue, b: TensorValue, rel_tol: float, abs_tol: float) -> ComparisonReport:
    """`a` is the value under test, `b` the expected value."""
    if a.shape != b.shape:
        raise ComparisonError('shape {} does not match {}'.format(list(a.shape), list(b.shape)))
    if a.dtype != b.dtype:
        raise ComparisonError('dtype {} does not match {}'.format(a.dtype.value, b.dtype.value))
    actual = a.data.astype(np.float64)
    expected = b.data.astype(np.float64)
    if actual.size == 0:
        return ComparisonReport(True, -1, 0.0, 0.0, 0.0, 0, rel_tol, abs_tol)
    with np.errstate(invalid='ignore'):
        err = np.abs(actual - expected)
        both_nan = np.isnan(actual) & np.isnan(expected)
        same_inf = np.isinf(actual) & (actual == expected)
        err = np.where(both_nan | same_inf, 0.0, err)
        err = np.where(np.isnan(err), np.inf, err)
        bad = err > abs_tol + rel_tol * np.abs(np.nan_to_num(expected))
    worst = int(np.argmax(err))
    return ComparisonReport(
        passed=not bool(bad.any()),
        worst_index=worst,
        worst_error=float(err[worst]),
        worst_actual=float(actual[worst]),
        worst_expected=float(expected[worst]),
        mismatches=int(bad.sum()),
        rel_tol=rel_tol,
        abs_tol=abs_tol,
    )
