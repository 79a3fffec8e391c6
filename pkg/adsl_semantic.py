"""
Static rules of the DSL: symbol resolution, staging discipline, buffer
legality, tiling coverage and transfer alignment.

Every check reports through Diagnostic records; only resolve_symbols raises,
because later checks need a resolved program to walk.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from adsl_config import NpuConfig
from adsl_core import (
    BUILTIN_FUNCS, PRIMITIVES, Assign, Call, EvalFault, For, IntLit, Name, PrimitiveCall, Program, Slice,
    StageBlock, Sync, evaluate, expr_names, tiling_order, walk_stmts,
)
from adsl_diagnostics import Diagnostic, DiagnosticError, InternalError, Span, dedupe, error, has_errors, warning
from adsl_options import BufferRole, Dtype, MemorySpace, StageKind, SymbolKind
from adsl_vm import (
    HOST_BUILTINS, KERNEL_BUILTINS, LaunchPlan, OpEvent, declared_shapes, elaborate_block, eval_host, kernel_layout,
)

logger = logging.getLogger(__name__)

ShapeMap = Mapping[str, Sequence[int]]


# ---------------------------------------------------------------- symbols

@dataclass(frozen=True)
class Symbol:
    name: str
    kind: SymbolKind
    span: Optional[Span]
    scope: str  # 'host', 'kernel' or the enclosing block label


@dataclass
class SymbolTable:
    host: Dict[str, Symbol] = field(default_factory=dict)
    kernel: Dict[str, Symbol] = field(default_factory=dict)
    entries: List[Symbol] = field(default_factory=list)
    uses: List[Tuple[str, Optional[Span], Symbol]] = field(default_factory=list)

    def of_kind(self, kind: SymbolKind) -> List[Symbol]:
        return [s for s in self.entries if s.kind == kind]

    def lookup(self, name: str) -> Optional[Symbol]:
        return self.kernel.get(name) or self.host.get(name)


def kernel_tensor_params(p: Program) -> Dict[str, str]:
    """Kernel parameters bound to a host tensor by the launch, mapped to that tensor's name."""
    bound = {}
    for param, arg in zip(p.kernel.params, p.host.launch.args):
        if isinstance(arg, Name) and p.host.param(arg.ident) is not None:
            bound[param.name] = arg.ident
    return bound


class _Resolver:
    def __init__(self, p: Program):
        self.p = p
        self.table = SymbolTable()
        self.diagnostics: List[Diagnostic] = []

    def declare(self, scope: Dict[str, Symbol], name: str, kind: SymbolKind, span, where: str) -> Symbol:
        symbol = Symbol(name, kind, span, where)
        if name in scope:
            self.diagnostics.append(error('SEM-DUP', span, '{} is already declared as {}'.format(
                name, scope[name].kind.value)))
        else:
            scope[name] = symbol
            self.table.entries.append(symbol)
        return symbol

    def use(self, name: Name, symbol: Symbol):
        self.table.uses.append((name.ident, name.span, symbol))

    def expr(self, e, scopes: Sequence[Dict[str, Symbol]], allowed: Set[SymbolKind], what: str):
        for call in _calls(e):
            if call.func not in BUILTIN_FUNCS:
                self.diagnostics.append(error('SEM-UNDEF', call.span, 'unknown function {}'.format(call.func),
                                              fix_hint='available: ' + ', '.join(sorted(BUILTIN_FUNCS))))
                continue
            low, high = BUILTIN_FUNCS[call.func]
            if len(call.args) < low or (high is not None and len(call.args) > high):
                self.diagnostics.append(error('SEM-ARITY', call.span, '{} takes {} arguments, got {}'.format(
                    call.func, low if high == low else '{} or more'.format(low), len(call.args))))
        for name in expr_names(e):
            symbol = _find(scopes, name.ident)
            if symbol is None:
                self.diagnostics.append(error('SEM-UNDEF', name.span, '{} is not declared'.format(name.ident)))
            elif symbol.kind not in allowed:
                self.diagnostics.append(error('SEM-KIND', name.span, '{} is a {} and cannot appear in {}'.format(
                    name.ident, symbol.kind.value, what)))
            else:
                self.use(name, symbol)

    # host

    def host(self):
        host = self.p.host
        scope = self.table.host
        for name in HOST_BUILTINS:
            self.declare(scope, name, SymbolKind.BUILTIN, None, 'host')
        for param in host.params:
            self.declare(scope, param.name, SymbolKind.TENSOR, param.span, 'host')
        for param in host.inputs:
            for dim in param.dims:
                if isinstance(dim, IntLit):
                    continue
                if not isinstance(dim, Name):
                    self.diagnostics.append(error('SEM-SHAPE', dim.span, 'input dims must be literals or shape names',
                                                  fix_hint='move the arithmetic into a tiling declaration'))
                elif dim.ident not in scope:
                    self.use(dim, self.declare(scope, dim.ident, SymbolKind.SHAPE, dim.span, 'host'))
                elif scope[dim.ident].kind != SymbolKind.SHAPE:
                    self.diagnostics.append(error('SEM-KIND', dim.span, '{} is a {}, not a shape name'.format(
                        dim.ident, scope[dim.ident].kind.value)))
                else:
                    self.use(dim, scope[dim.ident])
        for decl in host.tiling_decls:
            self.declare(scope, decl.name, SymbolKind.TILING, decl.span, 'host')
        host_values = {SymbolKind.SHAPE, SymbolKind.TILING, SymbolKind.BUILTIN}
        for decl in host.tiling_decls:
            self.expr(decl.expr, [scope], host_values, 'tiling ' + decl.name)
        _, cyclic = tiling_order(host)
        for decl in cyclic:
            self.diagnostics.append(error('TIL-CYCLE', decl.span, 'tiling {} depends on itself'.format(decl.name)))
        for param in host.outputs:
            for dim in param.dims:
                self.expr(dim, [scope], host_values, 'the shape of ' + param.name)

        launch = host.launch
        if launch.kernel != self.p.kernel.name:
            self.diagnostics.append(error('SEM-LAUNCH', launch.span, 'launch names {} but the kernel is {}'.format(
                launch.kernel, self.p.kernel.name)))
        if len(launch.args) != len(self.p.kernel.params):
            self.diagnostics.append(error('SEM-LAUNCH', launch.span, 'launch passes {} arguments, {} takes {}'.format(
                len(launch.args), self.p.kernel.name, len(self.p.kernel.params))))
        self.expr(launch.num_blocks, [scope], host_values, 'the block count')
        if launch.workload is not None:
            self.expr(launch.workload, [scope], host_values, 'the partition workload')
        for arg in launch.args:
            if isinstance(arg, Name) and scope.get(arg.ident) and scope[arg.ident].kind == SymbolKind.TENSOR:
                self.use(arg, scope[arg.ident])
            else:
                self.expr(arg, [scope], host_values, 'a scalar launch argument')

    # kernel

    def kernel(self):
        kernel = self.p.kernel
        scope = self.table.kernel
        tensors = kernel_tensor_params(self.p)
        for name in KERNEL_BUILTINS:
            self.declare(scope, name, SymbolKind.BUILTIN, None, 'kernel')
        for param in kernel.params:
            kind = SymbolKind.KERNEL_TENSOR if param.name in tensors else SymbolKind.KERNEL_SCALAR
            self.declare(scope, param.name, kind, param.span, 'kernel')
        for decl in kernel.buffers:
            self.declare(scope, decl.name, SymbolKind.BUFFER, decl.span, 'kernel')
        for decl in kernel.buffers:
            self.expr(decl.capacity, [scope], {SymbolKind.KERNEL_SCALAR}, 'the capacity of ' + decl.name)
        self.stmts(kernel.body, [scope], None, {})

    def stmts(self, stmts, scopes: List[Dict[str, Symbol]], label: Optional[str], process_scalars: Dict[str, Symbol]):
        local: Dict[str, Symbol] = {}
        scopes = [local] + scopes
        scalar_kinds = {SymbolKind.KERNEL_SCALAR, SymbolKind.BUILTIN, SymbolKind.LOOP_VAR, SymbolKind.SCALAR}
        for s in stmts:
            if isinstance(s, Assign):
                self.expr(s.value, scopes, scalar_kinds, 'a scalar expression')
                existing = _find(scopes, s.target)
                if existing is None:
                    symbol = self.declare(local, s.target, SymbolKind.SCALAR, s.span, label or 'kernel')
                    if label is None:
                        process_scalars[s.target] = symbol
                elif existing.kind != SymbolKind.SCALAR:
                    self.diagnostics.append(error('SEM-KIND', s.span, 'cannot assign to {} {}'.format(
                        existing.kind.value, s.target)))
                elif label is not None and process_scalars.get(s.target) is existing:
                    self.diagnostics.append(error(
                        'SEM-KIND', s.span, 'block {} assigns process-level scalar {}'.format(label, s.target),
                        fix_hint='assign it outside the block or use a block-local name'))
            elif isinstance(s, For):
                self.expr(s.start, scopes, scalar_kinds, 'a loop bound')
                self.expr(s.stop, scopes, scalar_kinds, 'a loop bound')
                shadowed = _find(scopes, s.var)
                if shadowed is not None:
                    self.diagnostics.append(error('SEM-DUP', s.span, 'loop variable {} shadows {} {}'.format(
                        s.var, shadowed.kind.value, s.var)))
                body_scope = {}
                self.declare(body_scope, s.var, SymbolKind.LOOP_VAR, s.span, label or 'kernel')
                self.stmts(s.body, [body_scope] + scopes, label, process_scalars)
            elif isinstance(s, StageBlock):
                self.stmts(s.body, scopes, s.label, process_scalars)
            elif isinstance(s, PrimitiveCall):
                self.call(s, scopes, scalar_kinds)

    def call(self, s: PrimitiveCall, scopes, scalar_kinds):
        prim = PRIMITIVES.get(s.op)
        if prim is None:
            self.diagnostics.append(error('SEM-UNDEF', s.span, 'unknown primitive {}'.format(s.op),
                                          fix_hint='see the primitive table in docs/grammar.md'))
            return
        arities = {len(prim.operands), len(prim.operands) + prim.optional}
        if len(s.args) not in arities:
            self.diagnostics.append(error('SEM-ARITY', s.span, '{} takes {} operands, got {}'.format(
                s.op, ' or '.join(str(a) for a in sorted(arities)), len(s.args))))
            return
        for index, (role, arg) in enumerate(zip(prim.operands, s.args)):
            if role == 'scalar':
                self.expr(arg, scopes, scalar_kinds, 'a scalar operand')
                continue
            base = arg.base if isinstance(arg, Slice) else (arg.ident if isinstance(arg, Name) else None)
            if base is None:
                self.diagnostics.append(error('SEM-KIND', _span_of(arg, s), '{} operand {} must name a buffer or tensor'.format(
                    s.op, index + 1)))
                continue
            symbol = _find(scopes, base)
            if symbol is None:
                self.diagnostics.append(error('SEM-UNDEF', _span_of(arg, s), '{} is not declared'.format(base)))
                continue
            if symbol.kind not in (SymbolKind.BUFFER, SymbolKind.KERNEL_TENSOR):
                self.diagnostics.append(error('SEM-KIND', _span_of(arg, s), '{} is a {}, not a buffer or tensor'.format(
                    base, symbol.kind.value)))
                continue
            if prim.is_copy:
                wants = _copy_kind(s.op, role)
                if symbol.kind != wants:
                    self.diagnostics.append(error('SEM-KIND', _span_of(arg, s), '{} {} must be a {}, {} is a {}'.format(
                        s.op, role, wants.value, base, symbol.kind.value)))
                    continue
            self.table.uses.append((base, _span_of(arg, s), symbol))
            if isinstance(arg, Slice):
                self.expr(arg.start, scopes, scalar_kinds, 'a slice bound')
                self.expr(arg.stop, scopes, scalar_kinds, 'a slice bound')
        for arg in s.args[len(prim.operands):]:
            self.expr(arg, scopes, scalar_kinds, 'a copy row count or stride')


def _calls(e) -> Iterable[Call]:
    if isinstance(e, Call):
        yield e
        for a in e.args:
            yield from _calls(a)
    elif hasattr(e, 'operand'):
        yield from _calls(e.operand)
    elif hasattr(e, 'left'):
        yield from _calls(e.left)
        yield from _calls(e.right)


def _find(scopes, name) -> Optional[Symbol]:
    for scope in scopes:
        if name in scope:
            return scope[name]
    return None


def _span_of(arg, call: PrimitiveCall):
    return getattr(arg, 'span', None) or call.span


def _copy_kind(op: str, role: str) -> SymbolKind:
    global_side = 'src' if op == 'copy_g2l' else 'dst'
    return SymbolKind.KERNEL_TENSOR if role == global_side else SymbolKind.BUFFER


def resolve_symbols(p: Program) -> SymbolTable:
    """Bind every identifier use; raises DiagnosticError when any use does not resolve."""
    resolver = _Resolver(p)
    resolver.host()
    resolver.kernel()
    if resolver.diagnostics:
        raise DiagnosticError(dedupe(resolver.diagnostics))
    logger.debug('%s: %d symbols, %d uses', p.name, len(resolver.table.entries), len(resolver.table.uses))
    return resolver.table


# ---------------------------------------------------------------- staging

NONE, PENDING, HELD, WRITTEN = 'none', 'pending', 'held', 'written'


@dataclass
class StreamFlow:
    """Where each stream buffer changes hands, as the lowering places queue operations."""
    dequeues: Dict[str, Set[str]] = field(default_factory=dict)  # compute label -> stream_in buffers
    enqueues: Dict[str, Set[str]] = field(default_factory=dict)  # compute label -> stream_out buffers
    diagnostics: List[Diagnostic] = field(default_factory=list)


def _operand_base(arg) -> Optional[str]:
    if isinstance(arg, Slice):
        return arg.base
    if isinstance(arg, Name):
        return arg.ident
    return None


def block_access(block: StageBlock) -> Tuple[Set[str], Set[str]]:
    """Names written and read by the primitives of one stage block."""
    written, read = set(), set()
    for s in walk_stmts(block.body):
        if isinstance(s, PrimitiveCall) and s.op in PRIMITIVES:
            for role, arg in zip(PRIMITIVES[s.op].operands, s.args):
                base = _operand_base(arg)
                if role == 'scalar' or base is None:
                    continue
                (written if role == 'dst' else read).add(base)
    return written, read


def stream_flow(p: Program) -> StreamFlow:
    kernel = p.kernel
    roles = {b.name: b.role for b in kernel.buffers}
    streams = [n for n, r in roles.items() if r != BufferRole.TEMP]
    flow = StreamFlow()
    diagnostics = flow.diagnostics
    last_writer: Dict[str, StageBlock] = {}

    def settle(state, where):
        for name in streams:
            if state[name] in (PENDING, WRITTEN):
                diagnostics.append(error('STG-STREAM-UNCONSUMED', where, '{} {} is produced but not consumed before {}'.format(
                    roles[name].value, name, 'the loop body ends' if where is not None else 'the kernel ends')))

    def run(stmts, state):
        for s in stmts:
            if isinstance(s, StageBlock):
                written, read = block_access(s)
                if s.kind == StageKind.COPY_IN:
                    for name in sorted(written):
                        if roles.get(name) != BufferRole.STREAM_IN:
                            continue
                        if state[name] == PENDING:
                            diagnostics.append(error('STG-STREAM-UNCONSUMED', s.span,
                                                     '{} is loaded again before compute consumed it'.format(name)))
                        state[name] = PENDING
                elif s.kind == StageKind.COMPUTE:
                    for name in sorted(read):
                        if roles.get(name) != BufferRole.STREAM_IN:
                            continue
                        if state[name] == PENDING:
                            state[name] = HELD
                            flow.dequeues.setdefault(s.label, set()).add(name)
                        elif state[name] != HELD:
                            diagnostics.append(error('STG-USE-BEFORE-DEF', s.span,
                                                     'compute {} reads {} before any copyin loads it'.format(s.label, name)))
                    for name in sorted(written):
                        if roles.get(name) == BufferRole.STREAM_OUT:
                            state[name] = WRITTEN
                            last_writer[name] = s
                else:
                    for name in sorted(read):
                        if roles.get(name) != BufferRole.STREAM_OUT:
                            continue
                        if state[name] == WRITTEN:
                            state[name] = NONE
                            flow.enqueues.setdefault(last_writer[name].label, set()).add(name)
                        else:
                            diagnostics.append(error('STG-USE-BEFORE-DEF', s.span,
                                                     'copyout {} reads {} before any compute writes it'.format(s.label, name)))
            elif isinstance(s, For):
                inner = {name: (HELD if state[name] == HELD else NONE) for name in streams}
                run(s.body, inner)
                settle(inner, s.span)
                touched = _touched_streams(s.body)
                for name in touched:
                    state[name] = HELD if inner[name] == HELD else NONE

    state = {name: NONE for name in streams}
    run(kernel.body, state)
    settle(state, None)
    return flow


def _touched_streams(stmts) -> Set[str]:
    touched = set()
    for s in walk_stmts(stmts):
        if isinstance(s, StageBlock):
            written, read = block_access(s)
            touched |= written | read
    return touched


def check_staging(p: Program) -> List[Diagnostic]:
    """Placement and stream-discipline rules. Depends only on which names each block touches."""
    kernel = p.kernel
    tensors = kernel_tensor_params(p)
    roles = {b.name: b.role for b in kernel.buffers}
    diagnostics: List[Diagnostic] = []

    def visit(stmts, kind: Optional[StageKind], label: Optional[str]):
        for s in stmts:
            if isinstance(s, For):
                visit(s.body, kind, label)
            elif isinstance(s, StageBlock):
                if kind is not None:
                    diagnostics.append(error('STG-BLOCK-NEST', s.span, '{} {} is nested inside {} {}'.format(
                        s.kind.value, s.label, kind.value, label)))
                visit(s.body, s.kind, s.label)
            elif isinstance(s, Sync) and kind is not None:
                diagnostics.append(error('STG-SYNC-PLACE', s.span, 'sync_all inside {} {}'.format(kind.value, label),
                                         fix_hint='place sync_all between blocks'))
            elif isinstance(s, PrimitiveCall) and s.op in PRIMITIVES:
                call(s, kind, label)

    def call(s: PrimitiveCall, kind, label):
        prim = PRIMITIVES[s.op]
        if prim.stage == StageKind.COPY_IN and kind != StageKind.COPY_IN:
            diagnostics.append(error('STG-G2L-PLACE', s.span, 'copy_g2l outside a copyin block'))
        elif prim.stage == StageKind.COPY_OUT and kind != StageKind.COPY_OUT:
            diagnostics.append(error('STG-L2G-PLACE', s.span, 'copy_l2g outside a copyout block'))
        elif prim.stage == StageKind.COMPUTE and kind != StageKind.COMPUTE:
            diagnostics.append(error('STG-COMPUTE-PLACE', s.span, '{} outside a compute block'.format(s.op)))
        for role, arg in zip(prim.operands, s.args):
            base = _operand_base(arg)
            if role == 'scalar' or base is None:
                continue
            if base in tensors and kind == StageKind.COMPUTE:
                diagnostics.append(error('STG-GM-IN-COMPUTE', _span_of(arg, s),
                                         'compute {} touches global tensor {}'.format(label, base)))
            role_of = roles.get(base)
            if role_of is None:
                continue
            if s.op == 'copy_g2l' and role == 'dst' and role_of != BufferRole.STREAM_IN:
                diagnostics.append(error('STG-ROLE', _span_of(arg, s), 'copy_g2l loads into {} buffer {}'.format(
                    role_of.value, base), fix_hint='global loads go through stream_in buffers'))
            elif s.op == 'copy_l2g' and role_of != BufferRole.STREAM_OUT:
                diagnostics.append(error('STG-ROLE', _span_of(arg, s), 'copy_l2g stores from {} buffer {}'.format(
                    role_of.value, base), fix_hint='global stores go through stream_out buffers'))
            elif prim.stage == StageKind.COMPUTE and role == 'dst' and role_of == BufferRole.STREAM_IN:
                diagnostics.append(error('STG-ROLE', _span_of(arg, s), '{} writes stream_in buffer {}'.format(
                    s.op, base)))
            elif prim.stage == StageKind.COMPUTE and role != 'dst' and role_of == BufferRole.STREAM_OUT:
                diagnostics.append(error('STG-ROLE', _span_of(arg, s), '{} reads stream_out buffer {}'.format(
                    s.op, base), fix_hint='keep intermediate values in a temp buffer'))

    visit(kernel.body, None, None)
    diagnostics.extend(stream_flow(p).diagnostics)
    return dedupe(diagnostics)


# ---------------------------------------------------------------- buffers

def shape_list(p: Program, shapes: Optional[Sequence[ShapeMap]]) -> List[ShapeMap]:
    if shapes:
        return list(shapes)
    declared = declared_shapes(p)
    if declared is None:
        raise DiagnosticError([error('SEM-SHAPE', p.host.span, 'symbolic input dims need concrete shapes',
                                     fix_hint='pass shapes, e.g. --shape x=64,512')])
    return [declared]


def _static_dtypes(p: Program) -> List[Diagnostic]:
    tensors = kernel_tensor_params(p)
    dtypes = {b.name: b.dtype for b in p.kernel.buffers}
    for param, host_name in tensors.items():
        dtypes[param] = p.host.param(host_name).dtype
    diagnostics = []
    for s in walk_stmts(p.kernel.body):
        if not isinstance(s, PrimitiveCall) or s.op not in PRIMITIVES:
            continue
        prim = PRIMITIVES[s.op]
        if prim.shape == 'convert':
            continue
        seen = []
        for role, arg in zip(prim.operands, s.args):
            base = _operand_base(arg)
            if role == 'scalar' or base not in dtypes:
                continue
            if role == 'mask':
                if dtypes[base] != Dtype.U8:
                    diagnostics.append(error('BUF-DTYPE-MISMATCH', _span_of(arg, s), 'mask {} is {}, not u8'.format(
                        base, dtypes[base].value)))
                continue
            seen.append((base, dtypes[base], arg))
        for base, dtype, arg in seen[1:]:
            if dtype != seen[0][1]:
                diagnostics.append(error('BUF-DTYPE-MISMATCH', _span_of(arg, s), '{} mixes {} {} with {} {}'.format(
                    s.op, seen[0][0], seen[0][1].value, base, dtype.value), fix_hint='insert a cast'))
    return diagnostics


def _event_checks(event: OpEvent, layout, diagnostics: List[Diagnostic]):
    counts = []
    for (role, region), arg in zip(event.bound_operands(), (a for r, a in zip(event.prim.operands, event.call.args)
                                                           if r != 'scalar')):
        span = _span_of(arg, event.call)
        if region.is_global:
            size = int(np.prod(layout.tensors[region.name][1], dtype=np.int64))
            last = region.start + (region.rows - 1) * region.stride + region.length
            if region.start < 0 or region.length < 0 or last > size:
                diagnostics.append(error('BUF-GM-OOB', span, '{} reaches [{}..{}) of {} with {} elements'.format(
                    event.op, region.start, last, region.name, size)))
        else:
            capacity = layout.buffers[region.name][1]
            stop = region.start + region.length
            if region.start < 0 or region.length < 0 or stop > capacity:
                diagnostics.append(error('BUF-SLICE-OOB', span, '{}[{}..{}] is outside capacity {}'.format(
                    region.name, region.start, stop, capacity)))
        counts.append((role, region.count))
    shape = event.prim.shape
    if shape in ('elementwise', 'select', 'copy', 'convert'):
        if len({c for _, c in counts}) > 1:
            diagnostics.append(error('BUF-COUNT-MISMATCH', event.call.span, '{} operand counts {}'.format(
                event.op, [c for _, c in counts])))
    elif shape == 'reduce' and counts[0][1] != 1:
        diagnostics.append(error('BUF-COUNT-MISMATCH', event.call.span, '{} writes {} elements, expected 1'.format(
            event.op, counts[0][1])))
    elif shape == 'broadcast' and counts[1][1] != 1:
        diagnostics.append(error('BUF-COUNT-MISMATCH', event.call.span, 'broadcast reads {} elements, expected 1'.format(
            counts[1][1])))


def _plan(p: Program, shape: ShapeMap, cfg: NpuConfig, diagnostics: List[Diagnostic]) -> Optional[LaunchPlan]:
    try:
        return eval_host(p, shape, cfg)
    except DiagnosticError as failure:
        diagnostics.extend(failure.diagnostics)
        return None


def _capacities(p: Program, plan: LaunchPlan, diagnostics: List[Diagnostic]) -> Optional[Dict[str, int]]:
    capacities = {}
    for decl in p.kernel.buffers:
        try:
            value = evaluate(decl.capacity, plan.kernel_scalars)
        except EvalFault as fault:
            diagnostics.append(error('TIL-NONPOS', fault.span or decl.span, 'capacity of {}: {}'.format(decl.name, fault)))
            continue
        if not isinstance(value, int):
            diagnostics.append(error('TIL-NONINT', decl.span, 'capacity of {} is {!r}'.format(decl.name, value)))
        elif value <= 0:
            diagnostics.append(error('TIL-NONPOS', decl.span, 'capacity of {} is {}'.format(decl.name, value)))
        else:
            capacities[decl.name] = value
    return capacities if len(capacities) == len(p.kernel.buffers) else None


def footprint(p: Program, capacities: Mapping[str, int], cfg: NpuConfig) -> Dict[MemorySpace, int]:
    """Bytes per memory space with every buffer live and stream buffers multiplied by their queue depth."""
    totals = {MemorySpace.UB: 0, MemorySpace.L1: 0}
    for decl in p.kernel.buffers:
        totals[decl.space] += capacities[decl.name] * decl.dtype.size * cfg.queue_depth(decl.role)
    return totals


def elaborate_all(p: Program, plan: LaunchPlan, diagnostics: List[Diagnostic]):
    """(block, layout, events) for every block; evaluation faults become diagnostics."""
    layout = kernel_layout(p, plan)
    for block in range(plan.num_blocks):
        try:
            yield block, layout, list(elaborate_block(p, plan, layout, block))
        except EvalFault as fault:
            diagnostics.append(error('TIL-NONPOS', fault.span, 'block {}: {}'.format(block, fault)))
            return


def check_buffers(p: Program, cfg: NpuConfig, shapes: Optional[Sequence[ShapeMap]] = None) -> List[Diagnostic]:
    diagnostics: List[Diagnostic] = []
    for decl in p.kernel.buffers:
        if decl.space == MemorySpace.L1 and decl.role != BufferRole.TEMP:
            diagnostics.append(error('BUF-L1-ROLE', decl.span, 'L1 buffer {} has role {}'.format(decl.name, decl.role.value),
                                     fix_hint='L1 holds scratch only; declare it temp'))
    diagnostics.extend(_static_dtypes(p))
    try:
        shape_maps = shape_list(p, shapes)
    except DiagnosticError as failure:
        return dedupe(diagnostics + failure.diagnostics)
    for shape in shape_maps:
        plan = _plan(p, shape, cfg, diagnostics)
        if plan is None:
            continue
        capacities = _capacities(p, plan, diagnostics)
        if capacities is None:
            continue
        totals = footprint(p, capacities, cfg)
        if totals[MemorySpace.UB] > cfg.ub_bytes:
            diagnostics.append(error('BUF-UB-OVERFLOW', p.kernel.span, 'UB buffers need {} bytes, the UB holds {}'.format(
                totals[MemorySpace.UB], cfg.ub_bytes), fix_hint='shrink the tile or lower the queue depth'))
        if totals[MemorySpace.L1] > cfg.l1_bytes:
            diagnostics.append(error('BUF-L1-OVERFLOW', p.kernel.span, 'L1 buffers need {} bytes, L1 holds {}'.format(
                totals[MemorySpace.L1], cfg.l1_bytes)))
        for _, layout, events in elaborate_all(p, plan, diagnostics):
            for event in events:
                if isinstance(event, OpEvent):
                    _event_checks(event, layout, diagnostics)
    return dedupe(diagnostics)


# ---------------------------------------------------------------- tiling

@dataclass(frozen=True)
class TilingRecord:
    shape: Dict[str, Tuple[int, ...]]
    num_blocks: int
    workload: int
    per_block_sizes: List[int]
    tiling_values: Dict[str, int]


@dataclass
class TilingSummary:
    records: List[TilingRecord] = field(default_factory=list)
    diagnostics: List[Diagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not has_errors(self.diagnostics)


def check_tiling(p: Program, cfg: NpuConfig, shapes: Optional[Sequence[ShapeMap]] = None) -> TilingSummary:
    summary = TilingSummary()
    diagnostics = summary.diagnostics
    try:
        shape_maps = shape_list(p, shapes)
    except DiagnosticError as failure:
        diagnostics.extend(failure.diagnostics)
        return summary
    has_sync = any(isinstance(s, Sync) for s in walk_stmts(p.kernel.body))
    launch = p.host.launch
    for shape in shape_maps:
        plan = _plan(p, shape, cfg, diagnostics)
        if plan is None:
            continue
        sizes = [len(r) for r in plan.per_block_ranges]
        covered = np.zeros(plan.workload, dtype=np.int64)
        for r in plan.per_block_ranges:
            covered[r.start:r.stop] += 1
        if sum(sizes) != plan.workload or not (covered == 1).all():
            raise InternalError('partition of {} over {} blocks is not exact'.format(plan.workload, plan.num_blocks))
        summary.records.append(TilingRecord({k: tuple(v) for k, v in shape.items()}, plan.num_blocks, plan.workload,
                                            sizes, dict(plan.tiling_values)))
        if plan.num_blocks > cfg.num_cores:
            diagnostics.append(warning('TIL-BLOCKS', launch.num_blocks.span, '{} blocks on {} cores'.format(
                plan.num_blocks, cfg.num_cores)))
            if has_sync:
                diagnostics.append(error('TIL-SYNC-BLOCKS', launch.num_blocks.span,
                                         'sync_all with {} blocks on {} cores cannot complete'.format(
                                             plan.num_blocks, cfg.num_cores),
                                         fix_hint='clamp the block count with min(..., num_cores)'))
        owners = {param.name: np.full(int(np.prod(plan.tensor_shapes[param.name], dtype=np.int64)), -1, dtype=np.int64)
                  for param in p.host.outputs}
        overlapping: Set[str] = set()
        for block, layout, events in elaborate_all(p, plan, diagnostics):
            for event in events:
                if not isinstance(event, OpEvent) or event.op != 'copy_l2g':
                    continue
                region = event.operands[0]
                owner = owners.get(region.name)
                if owner is None:
                    continue
                index = (np.asarray(region.row_starts(), dtype=np.int64)[:, None] +
                         np.arange(region.length, dtype=np.int64)).reshape(-1)
                index = index[(index >= 0) & (index < owner.size)]
                current = owner[index]
                if ((current != -1) & (current != block)).any() and region.name not in overlapping:
                    overlapping.add(region.name)
                    diagnostics.append(error('TIL-OVERLAP', event.call.span, 'block {} writes elements of {} '
                                             'already written by another block'.format(block, region.name)))
                owner[index] = block
        for param in p.host.outputs:
            gaps = np.flatnonzero(owners[param.name] == -1)
            if gaps.size:
                diagnostics.append(error('TIL-GAP', param.span, '{} of {} elements of {} are never written, '
                                         'first at {}'.format(gaps.size, owners[param.name].size, param.name, int(gaps[0]))))
    summary.diagnostics[:] = dedupe(diagnostics)
    return summary


# ---------------------------------------------------------------- alignment

@dataclass(frozen=True)
class AlignmentRecord:
    label: str
    site: int
    direction: str  # 'g2l' or 'l2g'
    byte_count: int
    offset_bytes: int
    aligned: bool


@dataclass
class AlignmentReport:
    records: List[AlignmentRecord] = field(default_factory=list)

    def unaligned_sites(self) -> Set[Tuple[str, int]]:
        return {(r.label, r.site) for r in self.records if not r.aligned}

    @property
    def all_aligned(self) -> bool:
        return all(r.aligned for r in self.records)


def transfer_records(label: str, site: int, direction: str, region, elem_size: int, alignment: int):
    byte_count = region.length * elem_size
    for row_start in region.row_starts():
        offset = row_start * elem_size
        yield AlignmentRecord(label, site, direction, byte_count, offset,
                              byte_count % alignment == 0 and offset % alignment == 0)


def analyze_alignment(p: Program, cfg: NpuConfig, shapes: Optional[Sequence[ShapeMap]] = None) -> AlignmentReport:
    report = AlignmentReport()
    seen = set()
    diagnostics: List[Diagnostic] = []
    for shape in shape_list(p, shapes):
        plan = _plan(p, shape, cfg, diagnostics)
        if plan is None:
            continue
        for _, layout, events in elaborate_all(p, plan, diagnostics):
            for event in events:
                if not isinstance(event, OpEvent) or not event.prim.is_copy:
                    continue
                g = 1 if event.op == 'copy_g2l' else 0
                region = event.operands[g]
                elem_size = layout.tensors[region.name][0].size
                direction = 'g2l' if g else 'l2g'
                for record in transfer_records(event.label, event.site, direction, region, elem_size,
                                               cfg.alignment_bytes):
                    key = (record.label, record.site, record.byte_count, record.offset_bytes % cfg.alignment_bytes)
                    if key not in seen:
                        seen.add(key)
                        report.records.append(record)
    if diagnostics:
        raise DiagnosticError(diagnostics)
    return report


# ---------------------------------------------------------------- full suite

def check_program(p: Program, cfg: NpuConfig, shapes: Optional[Sequence[ShapeMap]] = None) -> List[Diagnostic]:
    """Every semantic rule, in the order the CLI reports them."""
    try:
        resolve_symbols(p)
    except DiagnosticError as failure:
        return failure.diagnostics
    diagnostics = check_staging(p)
    diagnostics += check_buffers(p, cfg, shapes)
    if not has_errors(diagnostics):
        diagnostics += check_tiling(p, cfg, shapes).diagnostics
    return dedupe(diagnostics)
