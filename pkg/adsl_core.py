"""
The kernel DSL: AST, primitive table, parser and canonical renderer.

A program is one host function followed by one kernel function. The host
declares tensor parameters, tiling values (each with a rationale) and a single
launch; the kernel declares its buffers and a body of loops, scalar
assignments, copyin/compute/copyout blocks and sync statements.

    host softmax_host(x: [R, C] f32, out y: [R, C] f32) {
        tiling tile_cols = C rationale "one row per tile"
        launch softmax_kernel<min(R, num_cores)>(x, y, tile_cols) partition R
    }

Placement rules (what may appear inside which block) are not syntax; they are
checked by adsl_semantic.
"""

import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

from adsl_diagnostics import AdslError, Diagnostic, ParseError, Span, error
from adsl_options import BufferRole, Dtype, MemorySpace, StageKind

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1


def _span():
    return field(default=None, compare=False, repr=False)


# ---------------------------------------------------------------- expressions

@dataclass(frozen=True)
class IntLit:
    value: int
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class FloatLit:
    value: float
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Name:
    ident: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Neg:
    operand: 'Expr'
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: 'Expr'
    right: 'Expr'
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Call:
    func: str
    args: Tuple['Expr', ...]
    span: Optional[Span] = _span()


Expr = Union[IntLit, FloatLit, Name, Neg, BinOp, Call]

BUILTIN_FUNCS = {'min': (2, None), 'max': (2, None), 'ceil_div': (2, 2)}


@dataclass(frozen=True)
class Slice:
    base: str
    start: Expr
    stop: Expr
    span: Optional[Span] = _span()


Operand = Union[Slice, Expr]


# ---------------------------------------------------------------- statements

@dataclass(frozen=True)
class For:
    var: str
    start: Expr
    stop: Expr
    body: Tuple['Stmt', ...]
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class StageBlock:
    kind: StageKind
    label: str
    body: Tuple['Stmt', ...]
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Sync:
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Assign:
    target: str
    value: Expr
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class PrimitiveCall:
    op: str
    args: Tuple[Operand, ...]
    span: Optional[Span] = _span()


Stmt = Union[For, StageBlock, Sync, Assign, PrimitiveCall]


# ---------------------------------------------------------------- declarations

@dataclass(frozen=True)
class TensorParam:
    name: str
    dims: Tuple[Expr, ...]
    dtype: Dtype
    is_output: bool = False
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class TilingDecl:
    name: str
    expr: Expr
    rationale: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class LaunchStmt:
    kernel: str
    num_blocks: Expr
    args: Tuple[Expr, ...]
    workload: Optional[Expr] = None
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class HostFn:
    name: str
    params: Tuple[TensorParam, ...]
    tiling_decls: Tuple[TilingDecl, ...]
    launch: LaunchStmt
    span: Optional[Span] = _span()

    def param(self, name: str) -> Optional[TensorParam]:
        for p in self.params:
            if p.name == name:
                return p
        return None

    @property
    def inputs(self) -> Tuple[TensorParam, ...]:
        return tuple(p for p in self.params if not p.is_output)

    @property
    def outputs(self) -> Tuple[TensorParam, ...]:
        return tuple(p for p in self.params if p.is_output)


@dataclass(frozen=True)
class KernelParam:
    name: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class BufferDecl:
    name: str
    space: MemorySpace
    dtype: Dtype
    capacity: Expr
    role: BufferRole
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class KernelFn:
    name: str
    params: Tuple[KernelParam, ...]
    buffers: Tuple[BufferDecl, ...]
    body: Tuple[Stmt, ...]
    span: Optional[Span] = _span()

    def buffer(self, name: str) -> Optional[BufferDecl]:
        for b in self.buffers:
            if b.name == name:
                return b
        return None

    @property
    def param_names(self) -> Tuple[str, ...]:
        return tuple(p.name for p in self.params)


@dataclass(frozen=True)
class Program:
    host: HostFn
    kernel: KernelFn
    name: str


# ---------------------------------------------------------------- primitive table

@dataclass(frozen=True)
class Primitive:
    op: str
    operands: Tuple[str, ...]  # 'dst' | 'src' | 'mask' | 'scalar'
    shape: str  # how element counts relate, see docs/grammar.md
    stage: StageKind
    optional: int = 0  # trailing scalars of the 2-D copy form: rows, stride

    @property
    def is_copy(self) -> bool:
        return self.shape == 'copy'


def _prims(names, operands, shape, stage=StageKind.COMPUTE):
    return {n: Primitive(n, operands, shape, stage) for n in names}


PRIMITIVES: Dict[str, Primitive] = {
    'copy_g2l': Primitive('copy_g2l', ('dst', 'src'), 'copy', StageKind.COPY_IN, optional=2),
    'copy_l2g': Primitive('copy_l2g', ('dst', 'src'), 'copy', StageKind.COPY_OUT, optional=2),
    **_prims(('vadd', 'vsub', 'vmul', 'vdiv', 'vmax', 'vmin'), ('dst', 'src', 'src'), 'elementwise'),
    **_prims(('vexp', 'vln', 'vabs', 'vrelu', 'vcopy'), ('dst', 'src'), 'elementwise'),
    **_prims(('adds', 'muls', 'maxs'), ('dst', 'src', 'scalar'), 'elementwise'),
    'vsel': Primitive('vsel', ('dst', 'mask', 'src', 'src'), 'select', StageKind.COMPUTE),
    **_prims(('reduce_sum', 'reduce_max'), ('dst', 'src'), 'reduce'),
    'broadcast': Primitive('broadcast', ('dst', 'src'), 'broadcast', StageKind.COMPUTE),
    'memset': Primitive('memset', ('dst', 'scalar'), 'fill', StageKind.COMPUTE),
    'cast': Primitive('cast', ('dst', 'src'), 'convert', StageKind.COMPUTE),
}


# ---------------------------------------------------------------- lexer

KEYWORDS = {
    'host', 'kernel', 'tiling', 'rationale', 'launch', 'partition', 'out',
    'alloc_ub', 'alloc_l1', 'for', 'in', 'copyin', 'compute', 'copyout', 'sync_all',
}

_TOKEN_SPEC = [
    ('WS', r'[ \t\r\n]+'),
    ('COMMENT', r'#[^\n]*'),
    ('FLOAT', r'\d+\.\d+(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+'),
    ('INT', r'\d+'),
    ('STRING', r'"(?:[^"\\\n]|\\.)*"'),
    ('ID', r'[A-Za-z_][A-Za-z0-9_]*'),
    ('RANGE', r'\.\.'),
    ('PUNCT', r'[(){}\[\]<>,:=+\-*/%]'),
]
_TOKEN_RE = re.compile('|'.join('(?P<{}>{})'.format(kind, pattern) for kind, pattern in _TOKEN_SPEC))


@dataclass(frozen=True)
class Token:
    kind: str  # ID, KW, INT, FLOAT, STRING, PUNCT, RANGE, EOF
    text: str
    span: Span


def tokenize(source: str) -> Tuple[List[Token], List[Diagnostic]]:
    tokens = []
    diagnostics = []
    line, line_start, pos = 1, 0, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if not m:
            col = pos - line_start + 1
            ch = source[pos]
            if ch == '"':
                end = source.find('\n', pos)
                end = len(source) if end < 0 else end
                diagnostics.append(error('PARSE-LEX', Span(line, col, end - pos, pos), 'unterminated string literal'))
                pos = end
            else:
                diagnostics.append(error('PARSE-LEX', Span(line, col, 1, pos), 'unexpected character {!r}'.format(ch)))
                pos += 1
            continue
        kind, text = m.lastgroup, m.group()
        span = Span(line, pos - line_start + 1, len(text), pos)
        if kind not in ('WS', 'COMMENT'):
            if kind == 'ID' and text in KEYWORDS:
                kind = 'KW'
            tokens.append(Token(kind, text, span))
        newlines = text.count('\n')
        if newlines:
            line += newlines
            line_start = pos + text.rfind('\n') + 1
        pos = m.end()
    eof_col = pos - line_start + 1
    tokens.append(Token('EOF', '', Span(line, eof_col, 0, pos)))
    return tokens, diagnostics


def _unescape(literal: str) -> str:
    body = literal[1:-1]
    return re.sub(r'\\(.)', lambda m: m.group(1) if m.group(1) in '"\\' else m.group(0), body)


def _escape(text: str) -> str:
    return '"{}"'.format(text.replace('\\', '\\\\').replace('"', '\\"').replace('\n', '\\n'))


# ---------------------------------------------------------------- parser

class _Abort(Exception):
    def __init__(self, diagnostic: Diagnostic):
        super().__init__(diagnostic.message)
        self.diagnostic = diagnostic


class _Parser:
    def __init__(self, tokens: List[Token]):
        self.tokens = tokens
        self.pos = 0
        self.diagnostics: List[Diagnostic] = []

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def at(self, text: str) -> bool:
        return self.tok.kind in ('KW', 'PUNCT', 'RANGE') and self.tok.text == text

    def advance(self) -> Token:
        token = self.tok
        if token.kind != 'EOF':
            self.pos += 1
        return token

    def fail(self, expected: str):
        token = self.tok
        found = 'end of input' if token.kind == 'EOF' else repr(token.text)
        raise _Abort(error('PARSE-SYNTAX', token.span, 'expected {}, found {}'.format(expected, found)))

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(repr(text))
        return self.advance()

    def ident(self, what: str = 'identifier') -> Token:
        if self.tok.kind != 'ID':
            self.fail(what)
        return self.advance()

    def duplicate(self, seen: Dict[str, Span], name: str, span: Span, what: str):
        if name in seen:
            first = seen[name]
            self.diagnostics.append(error(
                'PARSE-DUP', span, '{} {} already declared at {}:{}'.format(what, name, first.line, first.col)))
        else:
            seen[name] = span

    # program structure

    def program(self) -> Program:
        host = self.host()
        kernel = self.kernel()
        if self.tok.kind != 'EOF':
            self.fail('end of input after the kernel function')
        return Program(host=host, kernel=kernel, name=kernel.name)

    def host(self) -> HostFn:
        start = self.expect('host').span
        name = self.ident('host function name')
        self.expect('(')
        params = []
        seen = {}
        if not self.at(')'):
            while True:
                param = self.tensor_param()
                self.duplicate(seen, param.name, param.span, 'parameter')
                params.append(param)
                if not self.at(','):
                    break
                self.advance()
        self.expect(')')
        self.expect('{')
        tiling_decls = []
        launch = None
        while not self.at('}'):
            if self.at('tiling'):
                decl = self.tiling_decl()
                self.duplicate(seen, decl.name, decl.span, 'tiling value')
                tiling_decls.append(decl)
            elif self.at('launch'):
                stmt = self.launch()
                if launch is not None:
                    self.diagnostics.append(error('PARSE-DUP', stmt.span, 'host function has a second launch'))
                else:
                    launch = stmt
            else:
                self.fail("'tiling' or 'launch'")
        end = self.expect('}')
        if launch is None:
            raise _Abort(error('PARSE-SYNTAX', end.span, 'host function {} has no launch statement'.format(name.text)))
        return HostFn(name.text, tuple(params), tuple(tiling_decls), launch, span=start)

    def tensor_param(self) -> TensorParam:
        is_output = False
        if self.at('out'):
            self.advance()
            is_output = True
        name = self.ident('parameter name')
        self.expect(':')
        self.expect('[')
        dims = [self.expr()]
        while self.at(','):
            self.advance()
            dims.append(self.expr())
        self.expect(']')
        dtype = self.dtype()
        return TensorParam(name.text, tuple(dims), dtype, is_output, span=name.span)

    def dtype(self) -> Dtype:
        token = self.ident('dtype (f16, f32, i32, u8)')
        try:
            return Dtype(token.text)
        except ValueError:
            raise _Abort(error('PARSE-SYNTAX', token.span, 'unknown dtype {!r}'.format(token.text),
                               fix_hint='use one of f16, f32, i32, u8'))

    def tiling_decl(self) -> TilingDecl:
        self.expect('tiling')
        name = self.ident('tiling name')
        self.expect('=')
        value = self.expr()
        rationale = ''
        if self.at('rationale'):
            self.advance()
            if self.tok.kind != 'STRING':
                self.fail('rationale string')
            literal = self.advance()
            rationale = _unescape(literal.text)
            if not rationale.strip():
                self.diagnostics.append(error('PARSE-RATIONALE', literal.span, 'rationale for {} is empty'.format(name.text)))
        else:
            self.diagnostics.append(error(
                'PARSE-RATIONALE', name.span, 'tiling {} has no rationale'.format(name.text),
                fix_hint='append rationale "..." stating the memory constraint behind the value'))
        return TilingDecl(name.text, value, rationale, span=name.span)

    def launch(self) -> LaunchStmt:
        start = self.expect('launch').span
        kernel = self.ident('kernel name')
        self.expect('<')
        num_blocks = self.expr()
        self.expect('>')
        self.expect('(')
        args = []
        if not self.at(')'):
            args.append(self.expr())
            while self.at(','):
                self.advance()
                args.append(self.expr())
        self.expect(')')
        workload = None
        if self.at('partition'):
            self.advance()
            workload = self.expr()
        return LaunchStmt(kernel.text, num_blocks, tuple(args), workload, span=start)

    def kernel(self) -> KernelFn:
        self.expect('kernel')
        name = self.ident('kernel name')
        self.expect('(')
        params = []
        seen = {}
        if not self.at(')'):
            while True:
                token = self.ident('kernel parameter')
                self.duplicate(seen, token.text, token.span, 'parameter')
                params.append(KernelParam(token.text, span=token.span))
                if not self.at(','):
                    break
                self.advance()
        self.expect(')')
        self.expect('{')
        buffers = []
        body = []
        labels = {}
        while not self.at('}'):
            if self.at('alloc_ub') or self.at('alloc_l1'):
                decl = self.buffer_decl()
                self.duplicate(seen, decl.name, decl.span, 'buffer')
                buffers.append(decl)
            else:
                body.append(self.stmt(labels))
        self.expect('}')
        return KernelFn(name.text, tuple(params), tuple(buffers), tuple(body), span=name.span)

    def buffer_decl(self) -> BufferDecl:
        space = MemorySpace(self.advance().text)
        name = self.ident('buffer name')
        self.expect(':')
        dtype = self.dtype()
        self.expect('[')
        capacity = self.expr()
        self.expect(']')
        role_token = self.ident('buffer role (stream_in, stream_out, temp)')
        try:
            role = BufferRole(role_token.text)
        except ValueError:
            raise _Abort(error('PARSE-SYNTAX', role_token.span, 'unknown buffer role {!r}'.format(role_token.text),
                               fix_hint='use one of stream_in, stream_out, temp'))
        return BufferDecl(name.text, space, dtype, capacity, role, span=name.span)

    def stmts(self, labels) -> Tuple[Stmt, ...]:
        self.expect('{')
        body = []
        while not self.at('}'):
            body.append(self.stmt(labels))
        self.expect('}')
        return tuple(body)

    def stmt(self, labels) -> Stmt:
        token = self.tok
        if self.at('for'):
            self.advance()
            var = self.ident('loop variable')
            self.expect('in')
            start = self.expr()
            self.expect('..')
            stop = self.expr()
            body = self.stmts(labels)
            return For(var.text, start, stop, body, span=token.span)
        if self.at('copyin') or self.at('compute') or self.at('copyout'):
            self.advance()
            label = self.ident('block label')
            self.duplicate(labels, label.text, label.span, 'block label')
            body = self.stmts(labels)
            return StageBlock(StageKind(token.text), label.text, body, span=label.span)
        if self.at('sync_all'):
            self.advance()
            return Sync(span=token.span)
        if token.kind == 'ID' and self.peek().kind == 'PUNCT' and self.peek().text == '=':
            self.advance()
            self.advance()
            return Assign(token.text, self.expr(), span=token.span)
        if token.kind == 'ID' and self.peek().kind == 'PUNCT' and self.peek().text == '(':
            self.advance()
            self.advance()
            args = []
            if not self.at(')'):
                args.append(self.operand())
                while self.at(','):
                    self.advance()
                    args.append(self.operand())
            self.expect(')')
            return PrimitiveCall(token.text, tuple(args), span=token.span)
        self.fail('statement')

    def operand(self) -> Operand:
        if self.tok.kind == 'ID' and self.peek().kind == 'PUNCT' and self.peek().text == '[':
            base = self.advance()
            self.advance()
            start = self.expr()
            self.expect('..')
            stop = self.expr()
            self.expect(']')
            return Slice(base.text, start, stop, span=base.span)
        return self.expr()

    # expressions

    def expr(self) -> Expr:
        left = self.term()
        while self.tok.kind == 'PUNCT' and self.tok.text in '+-':
            op = self.advance()
            left = BinOp(op.text, left, self.term(), span=op.span)
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.tok.kind == 'PUNCT' and self.tok.text in '*/%':
            op = self.advance()
            left = BinOp(op.text, left, self.unary(), span=op.span)
        return left

    def unary(self) -> Expr:
        if self.at('-'):
            op = self.advance()
            return Neg(self.unary(), span=op.span)
        return self.atom()

    def atom(self) -> Expr:
        token = self.tok
        if token.kind == 'INT':
            self.advance()
            return IntLit(int(token.text), span=token.span)
        if token.kind == 'FLOAT':
            self.advance()
            return FloatLit(float(token.text), span=token.span)
        if token.kind == 'ID':
            self.advance()
            if self.at('('):
                self.advance()
                args = []
                if not self.at(')'):
                    args.append(self.expr())
                    while self.at(','):
                        self.advance()
                        args.append(self.expr())
                self.expect(')')
                return Call(token.text, tuple(args), span=token.span)
            return Name(token.text, span=token.span)
        if self.at('('):
            self.advance()
            inner = self.expr()
            self.expect(')')
            return inner
        self.fail('expression')


def parse_program(source_text: str) -> Program:
    """Parse DSL source. Raises ParseError carrying every diagnostic found."""
    tokens, diagnostics = tokenize(source_text)
    if diagnostics:
        raise ParseError(diagnostics)
    parser = _Parser(tokens)
    try:
        program = parser.program()
    except _Abort as abort:
        raise ParseError(parser.diagnostics + [abort.diagnostic])
    except RecursionError:
        raise ParseError([error('PARSE-SYNTAX', parser.tok.span, 'nesting too deep')])
    if parser.diagnostics:
        raise ParseError(parser.diagnostics)
    return program


def parse_file(path: str) -> Program:
    with open(path, mode='r', encoding='utf-8') as source_file:
        return parse_program(source_file.read())


# ---------------------------------------------------------------- renderer

_PREC = {'+': 1, '-': 1, '*': 2, '/': 2, '%': 2}
_INDENT = '    '


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    return 4


def render_expr(e: Expr) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, FloatLit):
        return repr(float(e.value))
    if isinstance(e, Name):
        return e.ident
    if isinstance(e, Neg):
        inner = render_expr(e.operand)
        return '-({})'.format(inner) if _prec(e.operand) < 3 else '-' + inner
    if isinstance(e, BinOp):
        mine = _PREC[e.op]
        left = render_expr(e.left)
        right = render_expr(e.right)
        if _prec(e.left) < mine:
            left = '({})'.format(left)
        if _prec(e.right) <= mine:
            right = '({})'.format(right)
        return '{} {} {}'.format(left, e.op, right)
    if isinstance(e, Call):
        return '{}({})'.format(e.func, ', '.join(render_expr(a) for a in e.args))
    raise TypeError('not an expression: {!r}'.format(e))


def render_operand(o: Operand) -> str:
    if isinstance(o, Slice):
        return '{}[{}..{}]'.format(o.base, render_expr(o.start), render_expr(o.stop))
    return render_expr(o)


def _render_stmts(stmts, depth: int, lines: List[str]):
    pad = _INDENT * depth
    for s in stmts:
        if isinstance(s, For):
            lines.append('{}for {} in {}..{} {{'.format(pad, s.var, render_expr(s.start), render_expr(s.stop)))
            _render_stmts(s.body, depth + 1, lines)
            lines.append(pad + '}')
        elif isinstance(s, StageBlock):
            lines.append('{}{} {} {{'.format(pad, s.kind.value, s.label))
            _render_stmts(s.body, depth + 1, lines)
            lines.append(pad + '}')
        elif isinstance(s, Sync):
            lines.append(pad + 'sync_all')
        elif isinstance(s, Assign):
            lines.append('{}{} = {}'.format(pad, s.target, render_expr(s.value)))
        elif isinstance(s, PrimitiveCall):
            lines.append('{}{}({})'.format(pad, s.op, ', '.join(render_operand(a) for a in s.args)))
        else:
            raise TypeError('not a statement: {!r}'.format(s))


def render_program(p: Program) -> str:
    host = p.host
    params = []
    for param in host.params:
        params.append('{}{}: [{}] {}'.format(
            'out ' if param.is_output else '', param.name,
            ', '.join(render_expr(d) for d in param.dims), param.dtype.value))
    lines = ['host {}({}) {{'.format(host.name, ', '.join(params))]
    for decl in host.tiling_decls:
        lines.append('{}tiling {} = {} rationale {}'.format(_INDENT, decl.name, render_expr(decl.expr), _escape(decl.rationale)))
    launch = host.launch
    text = '{}launch {}<{}>({})'.format(
        _INDENT, launch.kernel, render_expr(launch.num_blocks), ', '.join(render_expr(a) for a in launch.args))
    if launch.workload is not None:
        text += ' partition ' + render_expr(launch.workload)
    lines.append(text)
    lines.append('}')
    lines.append('')
    kernel = p.kernel
    lines.append('kernel {}({}) {{'.format(kernel.name, ', '.join(kernel.param_names)))
    for b in kernel.buffers:
        lines.append('{}{} {}: {}[{}] {}'.format(
            _INDENT, b.space.value, b.name, b.dtype.value, render_expr(b.capacity), b.role.value))
    _render_stmts(kernel.body, 1, lines)
    lines.append('}')
    return '\n'.join(lines) + '\n'


# ---------------------------------------------------------------- queries

def walk_stmts(stmts) -> Iterator[Stmt]:
    """Pre-order over every statement, descending into loops and blocks."""
    for s in stmts:
        yield s
        if isinstance(s, (For, StageBlock)):
            yield from walk_stmts(s.body)


def list_stage_blocks(k: KernelFn) -> List[Tuple[StageKind, str, int]]:
    counters = {kind: 0 for kind in StageKind}
    blocks = []
    for s in walk_stmts(k.body):
        if isinstance(s, StageBlock):
            blocks.append((s.kind, s.label, counters[s.kind]))
            counters[s.kind] += 1
    return blocks


def expr_names(e: Expr) -> Iterator[Name]:
    if isinstance(e, Name):
        yield e
    elif isinstance(e, Neg):
        yield from expr_names(e.operand)
    elif isinstance(e, BinOp):
        yield from expr_names(e.left)
        yield from expr_names(e.right)
    elif isinstance(e, Call):
        for a in e.args:
            yield from expr_names(a)


def operand_exprs(o: Operand) -> Tuple[Expr, ...]:
    return (o.start, o.stop) if isinstance(o, Slice) else (o,)


def tiling_order(host: HostFn) -> Tuple[List[TilingDecl], List[TilingDecl]]:
    """Tiling declarations in dependency order, declaration order breaking ties.

    The second list holds declarations caught in a dependency cycle.
    """
    names = {d.name for d in host.tiling_decls}
    deps = {d.name: {n.ident for n in expr_names(d.expr)} & names for d in host.tiling_decls}
    ordered, done = [], set()
    pending = list(host.tiling_decls)
    progress = True
    while pending and progress:
        progress = False
        for decl in pending:
            if deps[decl.name] <= done:
                ordered.append(decl)
                done.add(decl.name)
                pending.remove(decl)
                progress = True
                break
    return ordered, pending


# ---------------------------------------------------------------- evaluation

class EvalFault(AdslError):
    def __init__(self, message: str, span: Optional[Span] = None):
        super().__init__(message)
        self.span = span


def _checked(value, span):
    if isinstance(value, int) and not INT64_MIN <= value <= INT64_MAX:
        raise EvalFault('integer overflow', span)
    return value


def evaluate(e: Expr, env: Dict[str, Union[int, float]]) -> Union[int, float]:
    """Evaluate with 64-bit checked integer arithmetic; `/` on integers floors."""
    if isinstance(e, IntLit):
        return _checked(e.value, e.span)
    if isinstance(e, FloatLit):
        return e.value
    if isinstance(e, Name):
        if e.ident not in env:
            raise EvalFault('{} has no value here'.format(e.ident), e.span)
        return env[e.ident]
    if isinstance(e, Neg):
        return _checked(-evaluate(e.operand, env), e.span)
    if isinstance(e, BinOp):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        both_int = isinstance(a, int) and isinstance(b, int)
        if e.op == '+':
            return _checked(a + b, e.span)
        if e.op == '-':
            return _checked(a - b, e.span)
        if e.op == '*':
            return _checked(a * b, e.span)
        if b == 0:
            raise EvalFault('division by zero', e.span)
        if e.op == '/':
            return a // b if both_int else a / b
        return a % b
    if isinstance(e, Call):
        args = [evaluate(a, env) for a in e.args]
        if e.func == 'min':
            return min(args)
        if e.func == 'max':
            return max(args)
        if e.func == 'ceil_div':
            a, b = args
            if not (isinstance(a, int) and isinstance(b, int)):
                raise EvalFault('ceil_div takes integers', e.span)
            if b == 0:
                raise EvalFault('division by zero', e.span)
            return -(-a // b)
        raise EvalFault('unknown function {}'.format(e.func), e.span)
    raise TypeError('not an expression: {!r}'.format(e))
