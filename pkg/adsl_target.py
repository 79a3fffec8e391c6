"""
The AscendC-like target IR built by adsl_lowering, its structure checker, a
FIFO-functional interpreter and the text emitter.

A TargetUnit is immutable; each lowering pass returns a new unit with its own
sections filled in. Sections a pass has not produced yet are None, and
check_structure only looks at the sections present.

Scalar expressions and operands reuse the DSL expression nodes, so the
interpreter evaluates them with adsl_core.evaluate and the numerics come from
adsl_kernels, the same code the DSL interpreter runs.
"""

import logging
from collections import ChainMap, deque
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from adsl_config import NpuConfig
from adsl_core import (
    PRIMITIVES, BinOp, Call, EvalFault, Expr, FloatLit, IntLit, Name, Neg, Operand, Slice, TensorParam, evaluate,
    render_expr,
)
from adsl_diagnostics import Diagnostic, DiagnosticError, InternalError, dedupe, error
from adsl_kernels import execute, numpy_dtype
from adsl_options import Dtype, QueuePosition, StageKind
from adsl_semantic import AlignmentRecord, AlignmentReport, transfer_records
from adsl_vm import DeviceMemory, Region, TensorValue, bind_inputs, partition_ranges

logger = logging.getLogger(__name__)

WORKLOAD_ARG = 'workload'

C_TYPES = {Dtype.F16: 'half', Dtype.F32: 'float', Dtype.I32: 'int32_t', Dtype.U8: 'uint8_t'}


# ---------------------------------------------------------------- host and state sections

@dataclass(frozen=True)
class HostAssign:
    name: str
    expr: Expr


@dataclass(frozen=True)
class LaunchRecord:
    kernel: str
    num_blocks: Expr
    args: Tuple[Expr, ...]
    workload: Expr


@dataclass(frozen=True)
class StateField:
    name: str
    kind: str  # 'global', 'scalar', 'builtin', 'queue', 'buffer'
    dtype: Optional[Dtype] = None


# ---------------------------------------------------------------- init statements

@dataclass(frozen=True)
class InitGlobal:
    name: str
    dtype: Dtype


@dataclass(frozen=True)
class InitScalar:
    name: str


@dataclass(frozen=True)
class InitBlockIdx:
    pass


@dataclass(frozen=True)
class InitBlockRange:
    workload: str = WORKLOAD_ARG


@dataclass(frozen=True)
class InitQueue:
    queue: str
    position: QueuePosition
    depth: int
    buffer: str
    dtype: Dtype
    capacity: Expr


@dataclass(frozen=True)
class InitBuf:
    buffer: str
    position: QueuePosition
    dtype: Dtype
    capacity: Expr


InitStmt = Union[InitGlobal, InitScalar, InitBlockIdx, InitBlockRange, InitQueue, InitBuf]


# ---------------------------------------------------------------- instructions

@dataclass(frozen=True)
class DataCopy:
    dst: Operand
    src: Operand
    rows: Optional[Expr] = None
    stride: Optional[Expr] = None
    site: int = 0


@dataclass(frozen=True)
class DataCopyPad:
    dst: Operand
    src: Operand
    count: Expr
    byte_len: Expr
    right_pad: Expr
    left_pad: int = 0
    rows: Optional[Expr] = None
    stride: Optional[Expr] = None
    site: int = 0


@dataclass(frozen=True)
class EnQue:
    queue: str
    buffer: str


@dataclass(frozen=True)
class DeQue:
    queue: str
    buffer: str


@dataclass(frozen=True)
class VecInstr:
    name: str  # target instruction, e.g. Add
    op: str  # primitive whose numerics it carries
    args: Tuple[Operand, ...]


@dataclass(frozen=True)
class TScalar:
    name: str
    expr: Expr


@dataclass(frozen=True)
class TFor:
    var: str
    start: Expr
    stop: Expr
    body: Tuple['Instr', ...]


@dataclass(frozen=True)
class Barrier:
    pass


@dataclass(frozen=True)
class StageCall:
    fn: str
    args: Tuple[Expr, ...]


Instr = Union[DataCopy, DataCopyPad, EnQue, DeQue, VecInstr, TScalar, TFor, Barrier, StageCall]


@dataclass(frozen=True)
class StageFn:
    kind: StageKind
    name: str
    label: str
    params: Tuple[str, ...]
    body: Tuple[Instr, ...]


@dataclass(frozen=True)
class TargetUnit:
    name: str
    host_name: str
    host_params: Tuple[TensorParam, ...]
    tiling_record: Optional[Tuple[str, ...]] = None
    host_stmts: Optional[Tuple[HostAssign, ...]] = None
    launch: Optional[LaunchRecord] = None
    kernel_params: Optional[Tuple[str, ...]] = None
    kernel_state: Optional[Tuple[StateField, ...]] = None
    init_stmts: Optional[Tuple[InitStmt, ...]] = None
    stage_fns: Optional[Tuple[StageFn, ...]] = None
    process_body: Optional[Tuple[Instr, ...]] = None

    def stage_fn(self, name: str) -> Optional[StageFn]:
        for fn in self.stage_fns or ():
            if fn.name == name:
                return fn
        return None

    def globals(self) -> Set[str]:
        return {f.name for f in self.kernel_state or () if f.kind == 'global'}

    def queues(self) -> Dict[str, InitQueue]:
        return {s.queue: s for s in self.init_stmts or () if isinstance(s, InitQueue)}


def flat_instrs(body: Sequence[Instr]) -> Iterator[Instr]:
    for instr in body:
        yield instr
        if isinstance(instr, TFor):
            yield from flat_instrs(instr.body)


def _base(operand: Operand) -> Optional[str]:
    if isinstance(operand, Slice):
        return operand.base
    if isinstance(operand, Name):
        return operand.ident
    return None


def _reads(instr: Instr) -> List[str]:
    if isinstance(instr, (DataCopy, DataCopyPad)):
        return [_base(instr.src)]
    if isinstance(instr, VecInstr):
        roles = PRIMITIVES[instr.op].operands
        return [_base(a) for r, a in zip(roles, instr.args) if r in ('src', 'mask')]
    return []


# ---------------------------------------------------------------- structure checking

class _StructureChecker:
    def __init__(self, t: TargetUnit):
        self.t = t
        self.diagnostics: List[Diagnostic] = []
        self.globals = t.globals() if t.kernel_state is not None else None
        self.queues = t.queues() if t.init_stmts is not None else None
        self.by_buffer = {q.buffer: q for q in (self.queues or {}).values()}
        self.deq_flagged: Set[str] = set()

    def report(self, rule: str, where: str, message: str, fix_hint: str = None):
        self.diagnostics.append(error(rule, None, message, fix_hint=fix_hint, where=where))

    def is_global(self, operand) -> bool:
        return self.globals is not None and _base(operand) in self.globals

    def stage_fn(self, fn: StageFn):
        started = False
        for instr in fn.body:
            if isinstance(instr, DeQue):
                if started and fn.kind != StageKind.COPY_IN:
                    self.deq_flagged.add(instr.queue)
                    self.report('TGT-DEQ-FIRST', fn.name, 'DeQue of {} after other instructions'.format(instr.queue),
                                fix_hint='dequeue every input at the start of the function')
            else:
                started = True
        for instr in flat_instrs(fn.body):
            self.instr(fn, instr)

    def instr(self, fn: StageFn, instr: Instr):
        kind = fn.kind
        if isinstance(instr, Barrier):
            self.report('TGT-BARRIER-PLACE', fn.name, 'SyncAll inside stage function {}'.format(fn.name),
                        fix_hint='barriers belong to Process only')
        elif isinstance(instr, StageCall):
            self.report('TGT-STAGE-MIX', fn.name, 'stage function calls {}'.format(instr.fn))
        elif isinstance(instr, (DataCopy, DataCopyPad)):
            load = self.is_global(instr.src) and not self.is_global(instr.dst)
            store = self.is_global(instr.dst) and not self.is_global(instr.src)
            if kind == StageKind.COMPUTE:
                if self.is_global(instr.src) or self.is_global(instr.dst):
                    self.report('TGT-GM-IN-COMPUTE', fn.name, 'global memory copy inside {}'.format(fn.name))
            elif self.globals is not None and ((kind == StageKind.COPY_IN and not load) or
                                               (kind == StageKind.COPY_OUT and not store)):
                self.report('TGT-STAGE-MIX', fn.name, '{} cannot issue this copy'.format(kind.title))
        elif isinstance(instr, VecInstr):
            if kind != StageKind.COMPUTE:
                self.report('TGT-STAGE-MIX', fn.name, '{} inside {} function {}'.format(instr.name, kind.title, fn.name))
        elif isinstance(instr, (EnQue, DeQue)):
            self.queue_op(fn, instr)

    def queue_op(self, fn: StageFn, instr: Union[EnQue, DeQue]):
        verb = 'EnQue' if isinstance(instr, EnQue) else 'DeQue'
        if self.queues is None:
            return
        queue = self.queues.get(instr.queue)
        if queue is None:
            self.report('TGT-QUEUE-UNDECLARED', fn.name, '{} on undeclared queue {}'.format(verb, instr.queue))
            return
        if queue.buffer != instr.buffer:
            self.report('TGT-QUEUE-ROLE', fn.name, '{} moves {} through the queue of {}'.format(
                verb, instr.buffer, queue.buffer))
        allowed = {
            (QueuePosition.VECIN, 'EnQue'): StageKind.COPY_IN,
            (QueuePosition.VECIN, 'DeQue'): StageKind.COMPUTE,
            (QueuePosition.VECOUT, 'EnQue'): StageKind.COMPUTE,
            (QueuePosition.VECOUT, 'DeQue'): StageKind.COPY_OUT,
        }
        if allowed.get((queue.position, verb)) != fn.kind:
            if fn.kind == StageKind.COPY_IN and verb == 'DeQue' or fn.kind == StageKind.COPY_OUT and verb == 'EnQue':
                self.report('TGT-STAGE-MIX', fn.name, '{} inside {} function {}'.format(verb, fn.kind.title, fn.name))
            else:
                self.report('TGT-QUEUE-ROLE', fn.name, '{} on {} queue {} inside {}'.format(
                    verb, queue.position.value, instr.queue, fn.kind.title))

    # queue balance over the process body

    def flow(self):
        t = self.t
        pending: Dict[str, int] = {q: 0 for q in self.queues}
        held: Set[str] = set()
        calls: Dict[str, int] = {}
        imbalanced: Set[str] = set()

        def imbalance(queue, where, message):
            if queue not in self.deq_flagged and queue not in imbalanced:
                imbalanced.add(queue)
                self.report('TGT-QUEUE-IMBALANCE', where, message)

        def run_fn(fn: StageFn):
            for instr in flat_instrs(fn.body):
                if isinstance(instr, EnQue) and instr.queue in pending:
                    if pending[instr.queue]:
                        imbalance(instr.queue, fn.name, 'EnQue on {} while a tensor is still queued'.format(instr.queue))
                    pending[instr.queue] += 1
                    held.discard(instr.buffer)
                elif isinstance(instr, DeQue) and instr.queue in pending:
                    if not pending[instr.queue]:
                        imbalance(instr.queue, fn.name, 'DeQue on empty queue {}'.format(instr.queue))
                    else:
                        pending[instr.queue] -= 1
                    held.add(instr.buffer)
                else:
                    for name in _reads(instr):
                        queue = self.by_buffer.get(name)
                        if queue is None or name in held:
                            continue
                        wants = StageKind.COMPUTE if queue.position == QueuePosition.VECIN else StageKind.COPY_OUT
                        if fn.kind == wants and queue.queue not in self.deq_flagged:
                            self.deq_flagged.add(queue.queue)
                            self.report('TGT-DEQ-FIRST', fn.name, '{} reads {} before dequeuing it'.format(fn.name, name),
                                        fix_hint='start {} with {}.DeQue'.format(fn.name, queue.queue))

        def run(body):
            for instr in body:
                if isinstance(instr, StageCall):
                    calls[instr.fn] = calls.get(instr.fn, 0) + 1
                    fn = t.stage_fn(instr.fn)
                    if fn is not None:
                        run_fn(fn)
                elif isinstance(instr, TFor):
                    before = dict(pending)
                    run(instr.body)
                    for queue in pending:
                        if pending[queue] != before[queue]:
                            imbalance(queue, 'Process', 'queue {} is not balanced per iteration of loop {}'.format(
                                queue, instr.var))
                            pending[queue] = before[queue]

        run(t.process_body)
        for queue, count in pending.items():
            if count:
                imbalance(queue, 'Process', 'EnQue on {} without a matching DeQue'.format(queue))
        for fn in t.stage_fns:
            if calls.get(fn.name, 0) != 1:
                self.report('TGT-UNREACHABLE', 'Process', '{} is called {} times by Process'.format(
                    fn.name, calls.get(fn.name, 0)))
        for name in calls:
            if t.stage_fn(name) is None:
                self.report('TGT-UNREACHABLE', 'Process', 'Process calls undefined function {}'.format(name))

    def run(self) -> List[Diagnostic]:
        for fn in self.t.stage_fns or ():
            self.stage_fn(fn)
        if self.t.process_body is not None and self.t.stage_fns is not None and self.queues is not None:
            self.flow()
        return dedupe(self.diagnostics)


def check_structure(t: TargetUnit) -> List[Diagnostic]:
    return _StructureChecker(t).run()


# ---------------------------------------------------------------- interpretation

def physical_size(capacity: int, dtype: Dtype, alignment: int) -> int:
    """Elements actually reserved for a buffer: its capacity rounded up to the alignment."""
    nbytes = -(-capacity * dtype.size // alignment) * alignment
    return nbytes // dtype.size


@dataclass(frozen=True)
class HostRun:
    env: Dict[str, Union[int, float]]
    num_blocks: int
    workload: int
    args: Tuple
    tensor_shapes: Dict[str, Tuple[int, ...]]


def run_host(t: TargetUnit, input_shapes: Mapping[str, Sequence[int]], cfg: NpuConfig) -> HostRun:
    env: Dict[str, Union[int, float]] = {'num_cores': cfg.num_cores}
    shapes: Dict[str, Tuple[int, ...]] = {}
    for param in t.host_params:
        if param.is_output:
            continue
        given = tuple(int(d) for d in input_shapes[param.name])
        for dim_expr, dim in zip(param.dims, given):
            if isinstance(dim_expr, Name):
                env[dim_expr.ident] = dim
        shapes[param.name] = given
    for stmt in t.host_stmts:
        env[stmt.name] = evaluate(stmt.expr, env)
    for param in t.host_params:
        if param.is_output:
            shapes[param.name] = tuple(evaluate(d, env) for d in param.dims)
    launch = t.launch
    args = tuple(a.ident if isinstance(a, Name) and a.ident in shapes else evaluate(a, env) for a in launch.args)
    return HostRun(env, evaluate(launch.num_blocks, env), evaluate(launch.workload, env), args, shapes)


class _TargetMachine:
    """Runs one block of a TargetUnit; `dry` skips data movement and only evaluates regions."""

    def __init__(self, t: TargetUnit, host: HostRun, block: int, gm: Dict[str, np.ndarray], cfg: NpuConfig,
                 dry: bool = False, on_transfer: Callable = None):
        self.t = t
        self.cfg = cfg
        self.dry = dry
        self.on_transfer = on_transfer
        self.gm = gm
        self.state: Dict[str, Union[int, float]] = {}
        self.globals: Dict[str, str] = {}
        self.capacity: Dict[str, int] = {}
        self.dtypes: Dict[str, Dtype] = {}
        self.queues: Dict[str, deque] = {}
        self.tensor_sizes = {n: int(np.prod(s, dtype=np.int64)) for n, s in host.tensor_shapes.items()}
        args = dict(zip(t.kernel_params + (WORKLOAD_ARG,), host.args + (host.workload,)))
        buffers = {}
        for stmt in t.init_stmts:
            if isinstance(stmt, InitGlobal):
                self.globals[stmt.name] = args[stmt.name]
                self.dtypes[stmt.name] = stmt.dtype
            elif isinstance(stmt, InitScalar):
                self.state[stmt.name] = args[stmt.name]
            elif isinstance(stmt, InitBlockIdx):
                self.state.update(block_idx=block, block_num=host.num_blocks)
            elif isinstance(stmt, InitBlockRange):
                block_range = partition_ranges(args[stmt.workload], host.num_blocks)[block]
                self.state.update(block_start=block_range.start, block_len=len(block_range))
            elif isinstance(stmt, (InitQueue, InitBuf)):
                capacity = evaluate(stmt.capacity, self.state)
                self.capacity[stmt.buffer] = capacity
                self.dtypes[stmt.buffer] = stmt.dtype
                buffers[stmt.buffer] = (stmt.dtype, physical_size(capacity, stmt.dtype, cfg.alignment_bytes))
                if isinstance(stmt, InitQueue):
                    self.queues[stmt.queue] = deque()
        self.memory = None if dry else DeviceMemory(buffers, gm)

    def region(self, operand: Operand, env) -> Region:
        if isinstance(operand, Slice):
            base = operand.base
            start = evaluate(operand.start, env)
            stop = evaluate(operand.stop, env)
        else:
            base = operand.ident
            start, stop = 0, None
        if base in self.globals:
            tensor = self.globals[base]
            stop = self.tensor_sizes[tensor] if stop is None else stop
            return Region(tensor, True, start, stop - start)
        stop = self.capacity[base] if stop is None else stop
        return Region(base, False, start, stop - start)

    def copy_regions(self, instr, env) -> Tuple[Region, Region]:
        dst = self.region(instr.dst, env)
        src = self.region(instr.src, env)
        if instr.rows is not None:
            rows = evaluate(instr.rows, env)
            stride = evaluate(instr.stride, env)
            if dst.is_global:
                dst = Region(dst.name, True, dst.start, dst.length, rows, stride)
            else:
                src = Region(src.name, True, src.start, src.length, rows, stride)
        return dst, src

    def copy(self, fn: StageFn, instr, env):
        dst, src = self.copy_regions(instr, env)
        if self.on_transfer is not None and (dst.is_global or src.is_global):
            self.on_transfer(fn, instr, dst if dst.is_global else src, 'l2g' if dst.is_global else 'g2l')
        if self.dry:
            return
        self.memory.write(dst, 'copy_g2l', [self.memory.read(src)], None)
        if isinstance(instr, DataCopyPad) and not dst.is_global:
            dtype = self.dtypes[dst.name]
            pad = evaluate(instr.right_pad, env) // dtype.size
            end = dst.start + dst.count
            local = self.memory.local[dst.name]
            lo = max(end, self.capacity[dst.name])
            local[lo:min(end + pad, local.size)] = 0

    def vector(self, instr: VecInstr, env):
        if self.dry:
            return
        roles = PRIMITIVES[instr.op].operands
        dst, srcs, scalar = None, [], None
        for role, arg in zip(roles, instr.args):
            if role == 'scalar':
                scalar = evaluate(arg, env)
            elif role == 'dst':
                dst = self.region(arg, env)
            else:
                srcs.append(self.memory.read(self.region(arg, env)))
        self.memory.write(dst, instr.op, srcs, scalar)

    def run_fn(self, fn: StageFn, env):
        for instr in fn.body:
            self.step(fn, instr, env)

    def step(self, fn: StageFn, instr: Instr, env):
        if isinstance(instr, (DataCopy, DataCopyPad)):
            self.copy(fn, instr, env)
        elif isinstance(instr, VecInstr):
            self.vector(instr, env)
        elif isinstance(instr, EnQue):
            self.queues[instr.queue].append(instr.buffer)
        elif isinstance(instr, DeQue):
            fifo = self.queues[instr.queue]
            if not fifo:
                raise InternalError('{}: DeQue on empty queue {}'.format(fn.name, instr.queue))
            tensor = fifo.popleft()
            if tensor != instr.buffer:
                raise InternalError('{}: queue {} held {}, expected {}'.format(fn.name, instr.queue, tensor, instr.buffer))
        elif isinstance(instr, TScalar):
            _assign(env, instr.name, evaluate(instr.expr, env))
        elif isinstance(instr, TFor):
            for i in range(evaluate(instr.start, env), evaluate(instr.stop, env)):
                inner = env.new_child({instr.var: i})
                for nested in instr.body:
                    self.step(fn, nested, inner)
        else:
            raise InternalError('{} cannot run {}'.format(fn.name, type(instr).__name__))

    def process(self, body, env) -> Iterator[None]:
        for instr in body:
            if isinstance(instr, StageCall):
                fn = self.t.stage_fn(instr.fn)
                params = {name: evaluate(arg, env) for name, arg in zip(fn.params, instr.args)}
                self.run_fn(fn, ChainMap({}, params, self.state))
            elif isinstance(instr, TFor):
                for i in range(evaluate(instr.start, env), evaluate(instr.stop, env)):
                    yield from self.process(instr.body, env.new_child({instr.var: i}))
            elif isinstance(instr, TScalar):
                _assign(env, instr.name, evaluate(instr.expr, env))
            elif isinstance(instr, Barrier):
                yield

    def start(self) -> Iterator[None]:
        return self.process(self.t.process_body, ChainMap({}, self.state))


def _assign(env: ChainMap, name: str, value):
    for scope in env.maps[:-1]:
        if name in scope:
            scope[name] = value
            return
    env.maps[0][name] = value


def _run_blocks(runners: List[Iterator[None]]):
    active = list(runners)
    while active:
        still_running = []
        for runner in active:
            try:
                next(runner)
                still_running.append(runner)
            except StopIteration:
                pass
        active = still_running


def interpret_target(t: TargetUnit, inputs: Mapping[str, TensorValue], cfg: NpuConfig = None) -> Dict[str, TensorValue]:
    cfg = cfg or NpuConfig()
    if t.process_body is None:
        raise InternalError('{} has no process body to run'.format(t.name))
    host = run_host(t, bind_inputs(t.host_params, inputs), cfg)
    gm: Dict[str, np.ndarray] = {}
    for param in t.host_params:
        if param.is_output:
            size = int(np.prod(host.tensor_shapes[param.name], dtype=np.int64))
            gm[param.name] = np.zeros(size, dtype=numpy_dtype(param.dtype))
        else:
            gm[param.name] = inputs[param.name].data.copy()
    try:
        _run_blocks([_TargetMachine(t, host, b, gm, cfg).start() for b in range(host.num_blocks)])
    except EvalFault as fault:
        raise InternalError('target evaluation fault: {}'.format(fault))
    logger.debug('interpreted %s over %d blocks', t.name, host.num_blocks)
    return {p.name: TensorValue(p.dtype, host.tensor_shapes[p.name], gm[p.name]) for p in t.host_params if p.is_output}


def analyze_target_alignment(t: TargetUnit, cfg: NpuConfig, shapes: Sequence[Mapping[str, Sequence[int]]]
                             ) -> AlignmentReport:
    """Alignment of the plain DataCopy transfers left in a unit; padded copies are already handled."""
    report = AlignmentReport()
    seen = set()

    def on_transfer(fn: StageFn, instr, region: Region, direction: str):
        if isinstance(instr, DataCopyPad):
            return
        size = dtypes[region.name].size
        for record in transfer_records(fn.label, instr.site, direction, region, size, cfg.alignment_bytes):
            key = (record.label, record.site, record.byte_count, record.offset_bytes % cfg.alignment_bytes)
            if key not in seen:
                seen.add(key)
                report.records.append(record)

    dtypes = {p.name: p.dtype for p in t.host_params}
    for shape in shapes:
        host = run_host(t, shape, cfg)
        machines = [_TargetMachine(t, host, b, {}, cfg, dry=True, on_transfer=on_transfer)
                    for b in range(host.num_blocks)]
        _run_blocks([m.start() for m in machines])
    return report


# ---------------------------------------------------------------- text emission

_INDENT = '    '


def c_expr(e: Expr) -> str:
    if isinstance(e, Call) and e.func == 'ceil_div':
        return 'CeilDiv({})'.format(', '.join(c_expr(a) for a in e.args))
    if isinstance(e, Call):
        return '{}({})'.format(e.func, ', '.join(c_expr(a) for a in e.args))
    if isinstance(e, BinOp):
        return '({} {} {})'.format(c_expr(e.left), e.op, c_expr(e.right))
    if isinstance(e, Neg):
        return '-{}'.format(c_expr(e.operand))
    if isinstance(e, FloatLit):
        return render_expr(e) + 'f'
    return render_expr(e)


def _c_operand(o: Operand) -> str:
    if isinstance(o, Slice):
        return '{}[{}]'.format(o.base, c_expr(o.start))
    return c_expr(o)


def _c_count(o: Operand) -> Optional[str]:
    if isinstance(o, Slice):
        return c_expr(BinOp('-', o.stop, o.start)) if not (isinstance(o.start, IntLit) and o.start.value == 0) \
            else c_expr(o.stop)
    return None


def _is_float(e: Expr, floats: Set[str]) -> bool:
    if isinstance(e, FloatLit):
        return True
    if isinstance(e, Name):
        return e.ident in floats
    if isinstance(e, Neg):
        return _is_float(e.operand, floats)
    if isinstance(e, BinOp):
        return _is_float(e.left, floats) or _is_float(e.right, floats)
    if isinstance(e, Call):
        return any(_is_float(a, floats) for a in e.args)
    return False


def _float_scalars(assigns: Sequence[Tuple[str, Expr]], floats: Set[str]) -> Set[str]:
    """`floats` plus every name that some assignment gives a float value, grown until stable."""
    floats = set(floats)
    changed = True
    while changed:
        changed = False
        for name, e in assigns:
            if name not in floats and _is_float(e, floats):
                floats.add(name)
                changed = True
    return floats


def _scalar_assigns(body: Sequence[Instr]) -> List[Tuple[str, Expr]]:
    return [(i.name, i.expr) for i in flat_instrs(body) if isinstance(i, TScalar)]


def _host_floats(t: TargetUnit) -> Set[str]:
    return _float_scalars([(s.name, s.expr) for s in t.host_stmts or ()], set())


def _kernel_floats(t: TargetUnit) -> Set[str]:
    """Kernel parameters launched with a float argument."""
    if t.launch is None or t.kernel_params is None:
        return set()
    host_floats = _host_floats(t)
    return {name for name, arg in zip(t.kernel_params, t.launch.args) if _is_float(arg, host_floats)}


def _scalar_type(name: str, floats: Set[str]) -> str:
    return 'float' if name in floats else 'int64_t'


@dataclass
class _Scope:
    """What one emitted C++ block knows: declared names and which scalars are float."""
    queue_dtypes: Dict[str, Dtype]
    floats: Set[str]
    declared: Set[str]

    def child(self, var: str) -> '_Scope':
        return _Scope(self.queue_dtypes, self.floats, self.declared | {var})


def _emit_instr(instr: Instr, depth: int, lines: List[str], scope: _Scope):
    pad = _INDENT * depth
    if isinstance(instr, DataCopy):
        count = _c_count(instr.dst) or _c_count(instr.src) or '{}.GetSize()'.format(_base(instr.dst))
        if instr.rows is not None:
            lines.append('{}DataCopy({}, {}, {{{}, {}, {}}});'.format(pad, _c_operand(instr.dst), _c_operand(instr.src),
                                                                   c_expr(instr.rows), count, c_expr(instr.stride)))
        else:
            lines.append('{}DataCopy({}, {}, {});'.format(pad, _c_operand(instr.dst), _c_operand(instr.src), count))
    elif isinstance(instr, DataCopyPad):
        rows = c_expr(instr.rows) if instr.rows is not None else '1'
        stride = c_expr(instr.stride) if instr.stride is not None else '0'
        lines.append('{}DataCopyPad({}, {}, {{{}, {}, {}, 0}}, {{true, {}, {}, 0}});  // {} elements'.format(
            pad, _c_operand(instr.dst), _c_operand(instr.src), rows, c_expr(instr.byte_len), stride,
            instr.left_pad, c_expr(instr.right_pad), c_expr(instr.count)))
    elif isinstance(instr, EnQue):
        lines.append('{}{}.EnQue({});'.format(pad, instr.queue, instr.buffer))
    elif isinstance(instr, DeQue):
        lines.append('{}{} = {}.DeQue<{}>();'.format(pad, instr.buffer, instr.queue,
                                                     C_TYPES[scope.queue_dtypes.get(instr.queue, Dtype.F32)]))
    elif isinstance(instr, VecInstr):
        roles = PRIMITIVES[instr.op].operands
        args = [_c_operand(a) if r != 'scalar' else c_expr(a) for r, a in zip(roles, instr.args)]
        counted = [a for r, a in zip(roles, instr.args) if r == 'dst']
        count = _c_count(counted[0]) if counted else None
        if instr.op in ('reduce_sum', 'reduce_max', 'broadcast'):
            sources = [a for r, a in zip(roles, instr.args) if r == 'src']
            count = _c_count(sources[0]) if sources else count
        args.append(count or '{}.GetSize()'.format(_base(counted[0]) if counted else ''))
        lines.append('{}{}({});'.format(pad, instr.name, ', '.join(args)))
    elif isinstance(instr, TScalar):
        if instr.name in scope.declared:
            lines.append('{}{} = {};'.format(pad, instr.name, c_expr(instr.expr)))
        else:
            scope.declared.add(instr.name)
            lines.append('{}{} {} = {};'.format(pad, _scalar_type(instr.name, scope.floats), instr.name,
                                                c_expr(instr.expr)))
    elif isinstance(instr, TFor):
        lines.append('{}for (int64_t {v} = {}; {v} < {}; {v}++) {{'.format(
            pad, c_expr(instr.start), c_expr(instr.stop), v=instr.var))
        inner = scope.child(instr.var)
        for nested in instr.body:
            _emit_instr(nested, depth + 1, lines, inner)
        lines.append(pad + '}')
    elif isinstance(instr, Barrier):
        lines.append(pad + 'SyncAll();')
    elif isinstance(instr, StageCall):
        lines.append('{}{}({});'.format(pad, instr.fn, ', '.join(c_expr(a) for a in instr.args)))


def _class_name(t: TargetUnit) -> str:
    return 'Kernel' + ''.join(part.capitalize() for part in t.name.split('_'))


def emit_host(t: TargetUnit) -> str:
    struct = ''.join(part.capitalize() for part in t.name.split('_')) + 'TilingData'
    lines = ['// host side of {}'.format(t.name), '#include "kernel_operator.h"', '']
    host_floats = _host_floats(t)
    lines.append('struct {} {{'.format(struct))
    for name in t.tiling_record or ():
        lines.append('{}{} {};'.format(_INDENT, _scalar_type(name, host_floats), name))
    lines.append('};')
    lines.append('')
    params = ['GM_ADDR {}'.format(p.name) for p in t.host_params]
    shape_names = []
    for p in t.host_params:
        for d in p.dims:
            if isinstance(d, Name) and not p.is_output and d.ident not in shape_names:
                shape_names.append(d.ident)
    params += ['int64_t {}'.format(n) for n in shape_names]
    lines.append('void {}({}, uint32_t num_cores, void *stream)'.format(t.host_name, ', '.join(params)))
    lines.append('{')
    lines.append('{}{} tiling;'.format(_INDENT, struct))
    for stmt in t.host_stmts or ():
        lines.append('{}tiling.{} = {};'.format(_INDENT, stmt.name, c_expr(_qualify(stmt.expr, t.tiling_record))))
    if t.launch is not None:
        launch = t.launch
        args = [c_expr(_qualify(a, t.tiling_record)) for a in launch.args]
        args.append(c_expr(_qualify(launch.workload, t.tiling_record)))
        lines.append('{}{}<<<{}, nullptr, stream>>>({});'.format(
            _INDENT, launch.kernel, c_expr(_qualify(launch.num_blocks, t.tiling_record)), ', '.join(args)))
    lines.append('}')
    return '\n'.join(lines) + '\n'


def _qualify(e: Expr, fields) -> Expr:
    fields = set(fields or ())
    if isinstance(e, Name) and e.ident in fields:
        return Name('tiling.' + e.ident)
    if isinstance(e, BinOp):
        return BinOp(e.op, _qualify(e.left, fields), _qualify(e.right, fields))
    if isinstance(e, Neg):
        return Neg(_qualify(e.operand, fields))
    if isinstance(e, Call):
        return Call(e.func, tuple(_qualify(a, fields) for a in e.args))
    return e


def emit_kernel(t: TargetUnit) -> str:
    cls = _class_name(t)
    queue_dtypes = {q: s.dtype for q, s in t.queues().items()}
    floats = _kernel_floats(t)
    process_floats = _float_scalars(_scalar_assigns(t.process_body or ()), floats)
    state_names = {f.name for f in t.kernel_state or ()}
    lines = ['// kernel side of {}'.format(t.name), '#include "kernel_operator.h"', 'using namespace AscendC;', '']
    lines.append('class {} {{'.format(cls))
    lines.append('public:')
    lines.append('{}__aicore__ inline {}() {{}}'.format(_INDENT, cls))
    if t.init_stmts is not None:
        state = {f.name: f for f in t.kernel_state}
        params = []
        for name in t.kernel_params + (WORKLOAD_ARG,):
            field = state.get(name)
            params.append('GM_ADDR {}'.format(name) if field and field.kind == 'global'
                          else '{} {}'.format(_scalar_type(name, floats), name))
        lines.append('{}__aicore__ inline void Init({})'.format(_INDENT, ', '.join(params)))
        lines.append(_INDENT + '{')
        pad = _INDENT * 2
        for stmt in t.init_stmts:
            if isinstance(stmt, InitGlobal):
                lines.append('{}{}Gm.SetGlobalBuffer((__gm__ {} *){});'.format(pad, stmt.name, C_TYPES[stmt.dtype],
                                                                              stmt.name))
            elif isinstance(stmt, InitScalar):
                lines.append('{}this->{n} = {n};'.format(pad, n=stmt.name))
            elif isinstance(stmt, InitBlockIdx):
                lines.append('{}block_idx = GetBlockIdx();'.format(pad))
                lines.append('{}block_num = GetBlockNum();'.format(pad))
            elif isinstance(stmt, InitBlockRange):
                lines.append('{}block_len = {w} / block_num + (block_idx < {w} % block_num ? 1 : 0);'.format(
                    pad, w=stmt.workload))
                lines.append('{}block_start = block_idx * ({w} / block_num) + min(block_idx, {w} % block_num);'.format(
                    pad, w=stmt.workload))
            elif isinstance(stmt, InitQueue):
                lines.append('{}pipe.InitBuffer({}, {}, {} * sizeof({}));'.format(
                    pad, stmt.queue, stmt.depth, c_expr(stmt.capacity), C_TYPES[stmt.dtype]))
            elif isinstance(stmt, InitBuf):
                lines.append('{}pipe.InitBuffer({}_buf, {} * sizeof({}));'.format(
                    pad, stmt.buffer, c_expr(stmt.capacity), C_TYPES[stmt.dtype]))
                lines.append('{}{} = {}_buf.Get<{}>();'.format(pad, stmt.buffer, stmt.buffer, C_TYPES[stmt.dtype]))
        lines.append(_INDENT + '}')
    if t.process_body is not None:
        lines.append('{}__aicore__ inline void Process()'.format(_INDENT))
        lines.append(_INDENT + '{')
        scope = _Scope(queue_dtypes, process_floats, set(state_names))
        for instr in t.process_body:
            _emit_instr(instr, 2, lines, scope)
        lines.append(_INDENT + '}')
    lines.append('')
    lines.append('private:')
    for fn in t.stage_fns or ():
        fn_floats = _float_scalars(_scalar_assigns(fn.body), floats | (process_floats & set(fn.params)))
        params = ', '.join('{} {}'.format(_scalar_type(p, fn_floats), p) for p in fn.params)
        lines.append('{}__aicore__ inline void {}({})'.format(_INDENT, fn.name, params))
        lines.append(_INDENT + '{')
        scope = _Scope(queue_dtypes, fn_floats, state_names | set(fn.params))
        for instr in fn.body:
            _emit_instr(instr, 2, lines, scope)
        lines.append(_INDENT + '}')
    lines.append('')
    lines.append('{}TPipe pipe;'.format(_INDENT))
    for field in t.kernel_state or ():
        if field.kind == 'global':
            lines.append('{}GlobalTensor<{}> {}Gm;'.format(_INDENT, C_TYPES[field.dtype], field.name))
        elif field.kind in ('scalar', 'builtin'):
            lines.append('{}{} {};'.format(_INDENT, _scalar_type(field.name, floats), field.name))
    for stmt in t.init_stmts or ():
        if isinstance(stmt, InitQueue):
            lines.append('{}TQue<QuePosition::{}, {}> {};'.format(_INDENT, stmt.position.value, stmt.depth, stmt.queue))
            lines.append('{}LocalTensor<{}> {};'.format(_INDENT, C_TYPES[stmt.dtype], stmt.buffer))
        elif isinstance(stmt, InitBuf):
            lines.append('{}TBuf<QuePosition::{}> {}_buf;'.format(_INDENT, stmt.position.value, stmt.buffer))
            lines.append('{}LocalTensor<{}> {};'.format(_INDENT, C_TYPES[stmt.dtype], stmt.buffer))
    lines.append('};')
    lines.append('')
    if t.kernel_params is not None:
        args = ', '.join('GM_ADDR {}'.format(n) if n in t.globals() else '{} {}'.format(_scalar_type(n, floats), n)
                         for n in t.kernel_params + (WORKLOAD_ARG,))
        lines.append('extern "C" __global__ __aicore__ void {}({})'.format(t.name, args))
        lines.append('{')
        lines.append('{}{} op;'.format(_INDENT, cls))
        lines.append('{}op.Init({});'.format(_INDENT, ', '.join(t.kernel_params + (WORKLOAD_ARG,))))
        lines.append('{}op.Process();'.format(_INDENT))
        lines.append('}')
    return '\n'.join(lines) + '\n'


def emit_text(t: TargetUnit) -> Tuple[str, str]:
    """(host source, kernel source)."""
    return emit_host(t), emit_kernel(t)


def render_unit(t: TargetUnit) -> str:
    """Both sources in one listing, for intermediate units."""
    host, kernel = emit_text(t)
    return host + '\n' + kernel


def require_clean(t: TargetUnit):
    diagnostics = check_structure(t)
    if diagnostics:
        raise DiagnosticError(diagnostics)
