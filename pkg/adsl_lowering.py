"""
Four lowering passes from a checked DSL Program to a TargetUnit.

    1  host          tiling record, host statements, launch record
    2  kernel_init   kernel state, block range, queues and plain buffers
    3  kernel_compute  one stage function per stage block and the Process body
    4  alignment     unaligned global DataCopy -> DataCopyPad

After each pass check_structure gates the unit. A failing gate hands the unit
and its diagnostics to the repair hook, at most max_repairs times; the default
hook is the identity, so a failing gate aborts the pipeline.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from adsl_config import DEFAULT_MAX_REPAIRS, NpuConfig
from adsl_core import (
    PRIMITIVES, Assign, BinOp, Expr, For, IntLit, Name, Operand, PrimitiveCall, Program, Slice, StageBlock, Sync,
    evaluate, expr_names, operand_exprs, tiling_order,
)
from adsl_diagnostics import Diagnostic, DiagnosticError, InternalError, has_errors
from adsl_options import BufferRole, MemorySpace, QueuePosition, StageKind
from adsl_semantic import analyze_alignment, check_program, kernel_tensor_params, stream_flow
from adsl_target import (
    Barrier, DataCopy, DataCopyPad, DeQue, EnQue, HostAssign, InitBlockIdx, InitBlockRange, InitBuf, InitGlobal,
    InitQueue, InitScalar, LaunchRecord, StageCall, StageFn, StateField, TargetUnit, TFor, TScalar, VecInstr,
    check_structure,
)
from adsl_vm import KERNEL_BUILTINS, block_sites

logger = logging.getLogger(__name__)

# frozen mapping rules, mirrored in docs/mapping.md
PRIMITIVE_TO_TARGET = {
    'copy_g2l': 'DataCopy',
    'copy_l2g': 'DataCopy',
    'vcopy': 'DataCopy',
    'vadd': 'Add',
    'vsub': 'Sub',
    'vmul': 'Mul',
    'vdiv': 'Div',
    'vexp': 'Exp',
    'vln': 'Ln',
    'vabs': 'Abs',
    'vmax': 'Max',
    'vmin': 'Min',
    'vrelu': 'Relu',
    'adds': 'Adds',
    'muls': 'Muls',
    'maxs': 'Maxs',
    'vsel': 'Select',
    'reduce_sum': 'ReduceSum',
    'reduce_max': 'ReduceMax',
    'broadcast': 'Broadcast',
    'memset': 'Duplicate',
    'cast': 'Cast',
}

PASS_NAMES = {1: 'host', 2: 'kernel_init', 3: 'kernel_compute', 4: 'alignment'}

ShapeMap = Mapping[str, Sequence[int]]
RepairHook = Callable[[TargetUnit, List[Diagnostic]], TargetUnit]


def identity_hook(t: TargetUnit, diagnostics: List[Diagnostic]) -> TargetUnit:
    return t


def queue_name(buffer: str) -> str:
    return 'que_' + buffer


def stage_fn_name(kind: StageKind, label: str) -> str:
    return kind.title + label[:1].upper() + label[1:]


# ---------------------------------------------------------------- pass 1

def pass_host(p: Program) -> TargetUnit:
    host = p.host
    ordered, _ = tiling_order(host)
    launch = host.launch
    record = LaunchRecord(
        kernel=launch.kernel,
        num_blocks=launch.num_blocks,
        args=tuple(launch.args),
        workload=launch.workload if launch.workload is not None else launch.num_blocks,
    )
    return TargetUnit(
        name=p.kernel.name,
        host_name=host.name,
        host_params=tuple(host.params),
        tiling_record=tuple(d.name for d in host.tiling_decls),
        host_stmts=tuple(HostAssign(d.name, d.expr) for d in ordered),
        launch=record,
    )


# ---------------------------------------------------------------- pass 2

def pass_kernel_init(p: Program, t: TargetUnit, cfg: NpuConfig) -> TargetUnit:
    kernel = p.kernel
    tensors = kernel_tensor_params(p)
    state: List[StateField] = []
    init = []
    for param in kernel.params:
        if param.name in tensors:
            dtype = p.host.param(tensors[param.name]).dtype
            state.append(StateField(param.name, 'global', dtype))
            init.append(InitGlobal(param.name, dtype))
        else:
            state.append(StateField(param.name, 'scalar'))
            init.append(InitScalar(param.name))
    state.extend(StateField(name, 'builtin') for name in KERNEL_BUILTINS)
    init.append(InitBlockIdx())
    init.append(InitBlockRange())
    for decl in kernel.buffers:
        if decl.role == BufferRole.TEMP:
            position = QueuePosition.A1 if decl.space == MemorySpace.L1 else QueuePosition.VECCALC
            state.append(StateField(decl.name, 'buffer', decl.dtype))
            init.append(InitBuf(decl.name, position, decl.dtype, decl.capacity))
        else:
            position = QueuePosition.VECIN if decl.role == BufferRole.STREAM_IN else QueuePosition.VECOUT
            state.append(StateField(queue_name(decl.name), 'queue', decl.dtype))
            init.append(InitQueue(queue_name(decl.name), position, cfg.queue_depth(decl.role), decl.name, decl.dtype,
                                  decl.capacity))
    return dataclasses.replace(t, kernel_params=kernel.param_names, kernel_state=tuple(state), init_stmts=tuple(init))


# ---------------------------------------------------------------- pass 3

def _stmt_exprs(s) -> Iterator[Expr]:
    if isinstance(s, For):
        yield s.start
        yield s.stop
    elif isinstance(s, Assign):
        yield s.value
    elif isinstance(s, PrimitiveCall):
        for arg in s.args:
            yield from operand_exprs(arg)


def _names_in_order(stmts) -> List[str]:
    seen: List[str] = []
    for s in stmts:
        for e in _stmt_exprs(s):
            for n in expr_names(e):
                if n.ident not in seen:
                    seen.append(n.ident)
        if isinstance(s, (For, StageBlock)):
            for name in _names_in_order(s.body):
                if name not in seen:
                    seen.append(name)
    return seen


def _process_scalars(stmts) -> List[str]:
    """Loop variables and scalars bound outside any stage block."""
    bound = []
    for s in stmts:
        if isinstance(s, For):
            bound.append(s.var)
            bound += _process_scalars(s.body)
        elif isinstance(s, Assign):
            bound.append(s.target)
    return bound


def _operand_base(arg) -> Optional[str]:
    if isinstance(arg, Slice):
        return arg.base
    if isinstance(arg, Name):
        return arg.ident
    return None


def _buffers_in_order(block: StageBlock, roles: Sequence[str], pick: Callable[[str], bool]) -> List[str]:
    """Buffers of the block with an operand role in `roles`, by first appearance, filtered by `pick`."""
    found = []

    def visit(stmts):
        for s in stmts:
            if isinstance(s, For):
                visit(s.body)
            elif isinstance(s, PrimitiveCall) and s.op in PRIMITIVES:
                for role, arg in zip(PRIMITIVES[s.op].operands, s.args):
                    base = _operand_base(arg)
                    if role in roles and base is not None and pick(base) and base not in found:
                        found.append(base)

    visit(block.body)
    return found


class _ComputeLowering:
    def __init__(self, p: Program):
        self.p = p
        self.sites = block_sites(p)
        self.flow = stream_flow(p)
        self.roles = {b.name: b.role for b in p.kernel.buffers}
        self.process_scalars = set(_process_scalars(p.kernel.body))
        self.stage_fns: List[StageFn] = []

    def instr(self, s):
        if isinstance(s, For):
            return TFor(s.var, s.start, s.stop, tuple(self.instr(c) for c in s.body))
        if isinstance(s, Assign):
            return TScalar(s.target, s.value)
        if isinstance(s, PrimitiveCall):
            target = PRIMITIVE_TO_TARGET.get(s.op)
            if target is None:
                raise InternalError('no target instruction for primitive {}'.format(s.op))
            site = self.sites.get(id(s), 0)
            if PRIMITIVES[s.op].is_copy or s.op == 'vcopy':
                rows, stride = (s.args[2], s.args[3]) if len(s.args) == 4 else (None, None)
                return DataCopy(s.args[0], s.args[1], rows, stride, site)
            return VecInstr(target, s.op, tuple(s.args))
        raise InternalError('{} cannot appear inside a stage block'.format(type(s).__name__))

    def is_role(self, role: BufferRole) -> Callable[[str], bool]:
        return lambda name: self.roles.get(name) == role

    def stage_block(self, block: StageBlock) -> StageCall:
        body = [self.instr(s) for s in block.body]
        if block.kind == StageKind.COPY_IN:
            loaded = _buffers_in_order(block, ('dst',), self.is_role(BufferRole.STREAM_IN))
            body += [EnQue(queue_name(b), b) for b in loaded]
        elif block.kind == StageKind.COMPUTE:
            wanted = self.flow.dequeues.get(block.label, set())
            inputs = [b for b in _buffers_in_order(block, ('src', 'mask'), self.is_role(BufferRole.STREAM_IN))
                      if b in wanted]
            results = self.flow.enqueues.get(block.label, set())
            outputs = [b for b in _buffers_in_order(block, ('dst',), self.is_role(BufferRole.STREAM_OUT))
                       if b in results]
            body = [DeQue(queue_name(b), b) for b in inputs] + body + [EnQue(queue_name(b), b) for b in outputs]
        else:
            stored = _buffers_in_order(block, ('src',), self.is_role(BufferRole.STREAM_OUT))
            body = [DeQue(queue_name(b), b) for b in stored] + body
        params = tuple(n for n in _names_in_order(block.body) if n in self.process_scalars)
        name = stage_fn_name(block.kind, block.label)
        taken = {fn.name for fn in self.stage_fns}
        if name in taken:
            suffix = 2
            while '{}_{}'.format(name, suffix) in taken:
                suffix += 1
            name = '{}_{}'.format(name, suffix)
        self.stage_fns.append(StageFn(block.kind, name, block.label, params, tuple(body)))
        return StageCall(name, tuple(Name(n) for n in params))

    def process(self, stmts) -> Tuple:
        body = []
        for s in stmts:
            if isinstance(s, For):
                body.append(TFor(s.var, s.start, s.stop, self.process(s.body)))
            elif isinstance(s, Assign):
                body.append(TScalar(s.target, s.value))
            elif isinstance(s, StageBlock):
                body.append(self.stage_block(s))
            elif isinstance(s, Sync):
                body.append(Barrier())
            else:
                raise InternalError('{} outside a stage block survived semantic checks'.format(type(s).__name__))
        return tuple(body)


def pass_kernel_compute(p: Program, t: TargetUnit) -> TargetUnit:
    lowering = _ComputeLowering(p)
    process_body = lowering.process(p.kernel.body)
    return dataclasses.replace(t, stage_fns=tuple(lowering.stage_fns), process_body=process_body)


# ---------------------------------------------------------------- pass 4

def fold(e: Expr) -> Expr:
    """Collapse an expression without names into one literal."""
    if any(True for _ in expr_names(e)):
        return e
    value = evaluate(e, {})
    return IntLit(value) if isinstance(value, int) else e


def _length(operand: Operand, p: Program) -> Optional[Expr]:
    if isinstance(operand, Slice):
        stop = operand.stop
        if isinstance(stop, BinOp) and stop.op == '+' and stop.left == operand.start:
            return fold(stop.right)
        return fold(BinOp('-', stop, operand.start))
    decl = p.kernel.buffer(_operand_base(operand))
    return decl.capacity if decl is not None else None


def padded_copy(copy: DataCopy, global_operand: Operand, local_operand: Operand, elem_size: int, p: Program,
                alignment: int) -> DataCopyPad:
    count = _length(global_operand, p)
    if count is None or (copy.rows is not None and not isinstance(global_operand, Slice)):
        count = _length(local_operand, p)
    if count is None:
        raise InternalError('cannot size padded copy at site {}'.format(copy.site))
    byte_len = fold(BinOp('*', count, IntLit(elem_size)))
    right_pad = fold(BinOp('%', BinOp('-', IntLit(alignment), BinOp('%', byte_len, IntLit(alignment))),
                           IntLit(alignment)))
    return DataCopyPad(copy.dst, copy.src, count, byte_len, right_pad, 0, copy.rows, copy.stride, copy.site)


def pass_alignment(p: Program, t: TargetUnit, cfg: NpuConfig, shapes: Optional[Sequence[ShapeMap]] = None
                   ) -> TargetUnit:
    unaligned = analyze_alignment(p, cfg, shapes).unaligned_sites()
    if not unaligned:
        return t
    tensors = kernel_tensor_params(p)
    globals_ = t.globals()

    def rewrite(fn: StageFn, instr):
        if isinstance(instr, TFor):
            return dataclasses.replace(instr, body=tuple(rewrite(fn, c) for c in instr.body))
        if not isinstance(instr, DataCopy) or (fn.label, instr.site) not in unaligned:
            return instr
        dst, src = _operand_base(instr.dst), _operand_base(instr.src)
        if dst in globals_ and src not in globals_:
            global_operand, local_operand = instr.dst, instr.src
        elif src in globals_ and dst not in globals_:
            global_operand, local_operand = instr.src, instr.dst
        else:
            return instr
        elem_size = p.host.param(tensors[_operand_base(global_operand)]).dtype.size
        return padded_copy(instr, global_operand, local_operand, elem_size, p, cfg.alignment_bytes)

    fns = []
    for fn in t.stage_fns:
        if fn.kind == StageKind.COMPUTE:
            fns.append(fn)
        else:
            fns.append(dataclasses.replace(fn, body=tuple(rewrite(fn, i) for i in fn.body)))
    logger.debug('%s: padded %d transfer sites', t.name, len(unaligned))
    return dataclasses.replace(t, stage_fns=tuple(fns))


# ---------------------------------------------------------------- pipeline

@dataclass(frozen=True)
class PassRecord:
    pass_id: int
    name: str
    diagnostics_before: Tuple[Diagnostic, ...]
    diagnostics_after: Tuple[Diagnostic, ...]
    repair_attempts: int
    accepted: bool

    def to_json(self) -> dict:
        return {
            'pass_id': self.pass_id,
            'name': self.name,
            'diagnostics_before': [d.to_json() for d in self.diagnostics_before],
            'diagnostics_after': [d.to_json() for d in self.diagnostics_after],
            'repair_attempts': self.repair_attempts,
            'accepted': self.accepted,
        }


@dataclass
class PassTrace:
    records: List[PassRecord] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return all(r.accepted for r in self.records)

    @property
    def total_repairs(self) -> int:
        return sum(r.repair_attempts for r in self.records)

    def to_json(self) -> dict:
        return {'passes': [r.to_json() for r in self.records]}


class PipelineError(DiagnosticError):
    def __init__(self, pass_id: int, diagnostics: List[Diagnostic], trace: PassTrace):
        super().__init__(diagnostics)
        self.pass_id = pass_id
        self.trace = trace


PassFn = Callable[[Program, Optional[TargetUnit], NpuConfig, Optional[Sequence[ShapeMap]]], TargetUnit]

DEFAULT_PASSES: Dict[int, PassFn] = {
    1: lambda p, t, cfg, shapes: pass_host(p),
    2: lambda p, t, cfg, shapes: pass_kernel_init(p, t, cfg),
    3: lambda p, t, cfg, shapes: pass_kernel_compute(p, t),
    4: lambda p, t, cfg, shapes: pass_alignment(p, t, cfg, shapes),
}


def run_pipeline(p: Program, cfg: NpuConfig = None, hook: RepairHook = None, max_repairs: int = DEFAULT_MAX_REPAIRS,
                 shapes: Optional[Sequence[ShapeMap]] = None, passes: Mapping[int, PassFn] = None,
                 stop_after: int = 4) -> Tuple[TargetUnit, PassTrace]:
    """
    Lower `p` pass by pass. Raises DiagnosticError when `p` fails the semantic
    suite and PipelineError when a gate still fails after max_repairs repairs.
    """
    cfg = cfg or NpuConfig()
    hook = hook or identity_hook
    table = dict(DEFAULT_PASSES)
    table.update(passes or {})
    diagnostics = check_program(p, cfg, shapes)
    if has_errors(diagnostics):
        raise DiagnosticError([d for d in diagnostics if d.is_error])
    trace = PassTrace()
    t = None
    for pass_id in sorted(table):
        if pass_id > stop_after:
            break
        t = table[pass_id](p, t, cfg, shapes)
        before = check_structure(t)
        after = before
        attempts = 0
        while after and attempts < max_repairs:
            attempts += 1
            t = hook(t, list(after))
            after = check_structure(t)
        record = PassRecord(pass_id, PASS_NAMES.get(pass_id, 'pass_{}'.format(pass_id)), tuple(before), tuple(after),
                            attempts, not after)
        trace.records.append(record)
        logger.debug('%s pass %d: %d diagnostics, %d repairs, accepted=%s', p.name, pass_id, len(after), attempts,
                     record.accepted)
        if after:
            raise PipelineError(pass_id, list(after), trace)
    return t, trace

