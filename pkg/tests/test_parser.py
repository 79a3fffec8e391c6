import pytest

from adsl_core import (
    BinOp, Call, FloatLit, IntLit, Name, Neg, Slice, StageBlock, evaluate, list_stage_blocks, parse_file,
    parse_program, render_expr, render_program, walk_stmts, EvalFault,
)
from adsl_diagnostics import ParseError
from adsl_options import BufferRole, Dtype, MemorySpace, StageKind
from conftest import FIXTURE_NAMES, data_path, fixture


def parse_error_ids(source):
    with pytest.raises(ParseError) as failure:
        parse_program(source)
    return failure.value.rule_ids


class TestFixturesParse:
    """Every fixture program parses and renders back to an equal program."""

    @pytest.mark.parametrize('name', FIXTURE_NAMES)
    def test_render_then_parse_is_identity(self, name):
        p = fixture(name).load_program()
        assert parse_program(render_program(p)) == p

    def test_softmax_structure(self):
        p = fixture('softmax').load_program()
        assert p.host.name == 'softmax_host'
        assert p.kernel.name == 'softmax_kernel'
        assert [t.name for t in p.host.params] == ['x', 'y']
        assert p.host.outputs[0].name == 'y'
        assert p.kernel.buffer('x_in').role == BufferRole.STREAM_IN
        assert p.kernel.buffer('stat').space == MemorySpace.UB
        assert list_stage_blocks(p.kernel) == [
            (StageKind.COPY_IN, 'row_in', 0), (StageKind.COMPUTE, 'softmax', 0), (StageKind.COPY_OUT, 'row_out', 0)]

    def test_rationale_escapes(self):
        p = parse_program(r'''
            host h(x: [4] f32, out y: [4] f32) {
                tiling t = 1 rationale "tab \t, quote \" and slash \\"
                launch k<1>(x, y)
            }
            kernel k(x, y) {}
        ''')
        assert p.host.tiling_decls[0].rationale == 'tab \\t, quote " and slash \\'
        assert parse_program(render_program(p)) == p

    def test_tiling_rationale_kept(self):
        p = parse_file(data_path('relu_small.adsl'))
        assert [d.rationale for d in p.host.tiling_decls][0] == 'four blocks of 250 elements'
        assert p.host.launch.workload == IntLit(1000)


class TestExpressions:
    def test_precedence_and_associativity(self):
        host = parse_program('''
            host h(x: [4] f32, out y: [4] f32) {
                tiling a = 1 - 2 - 3 rationale "r"
                tiling b = 2 + 3 * 4 rationale "r"
                tiling c = -(1 + 2) * 2 rationale "r"
                launch k<1>(x, y)
            }
            kernel k(x, y) {}
        ''').host
        a, b, c = (d.expr for d in host.tiling_decls)
        assert a == BinOp('-', BinOp('-', IntLit(1), IntLit(2)), IntLit(3))
        assert b == BinOp('+', IntLit(2), BinOp('*', IntLit(3), IntLit(4)))
        assert c == BinOp('*', Neg(BinOp('+', IntLit(1), IntLit(2))), IntLit(2))

    @pytest.mark.parametrize('expr, text', [
        (BinOp('-', IntLit(1), BinOp('-', IntLit(2), IntLit(3))), '1 - (2 - 3)'),
        (BinOp('*', BinOp('+', Name('a'), Name('b')), Name('c')), '(a + b) * c'),
        (Neg(Neg(Name('x'))), '--x'),
        (Call('ceil_div', (Name('n'), IntLit(64))), 'ceil_div(n, 64)'),
        (FloatLit(1e-05), '1e-05'),
    ])
    def test_render_expr(self, expr, text):
        assert render_expr(expr) == text

    def test_evaluate_integer_rules(self):
        env = {'n': 7}
        assert evaluate(BinOp('/', Name('n'), IntLit(2)), env) == 3
        assert evaluate(BinOp('/', Neg(Name('n')), IntLit(2)), env) == -4
        assert evaluate(Call('ceil_div', (Name('n'), IntLit(2))), env) == 4
        assert evaluate(BinOp('/', Name('n'), FloatLit(2.0)), env) == 3.5

    def test_evaluate_faults(self):
        with pytest.raises(EvalFault, match='division by zero'):
            evaluate(BinOp('%', IntLit(1), IntLit(0)), {})
        with pytest.raises(EvalFault, match='overflow'):
            evaluate(BinOp('*', IntLit(1 << 62), IntLit(4)), {})
        with pytest.raises(EvalFault, match='has no value'):
            evaluate(Name('missing'), {})


class TestParseErrors:
    def test_bad_character(self):
        assert parse_error_ids('host h(x: [4] f32) { @ }') == ['PARSE-LEX']

    def test_unterminated_string(self):
        assert 'PARSE-LEX' in parse_error_ids('host h(x: [4] f32) { tiling t = 1 rationale "open\n }')

    def test_missing_brace(self):
        with pytest.raises(ParseError) as failure:
            parse_program('host h(x: [4] f32, out y: [4] f32) {\n    launch k<1>(x, y)\n\nkernel k(x, y) {}')
        diagnostic = failure.value.diagnostics[-1]
        assert diagnostic.rule_id == 'PARSE-SYNTAX'
        assert diagnostic.span.line == 4

    def test_missing_launch(self):
        assert parse_error_ids('host h(x: [4] f32) {} kernel k(x) {}') == ['PARSE-SYNTAX']

    def test_unknown_dtype(self):
        assert parse_error_ids('host h(x: [4] f64) { launch k<1>(x) } kernel k(x) {}') == ['PARSE-SYNTAX']

    def test_missing_rationale(self):
        with pytest.raises(ParseError) as failure:
            parse_file(data_path('missing_rationale.adsl'))
        assert failure.value.rule_ids == ['PARSE-RATIONALE']

    def test_empty_rationale(self):
        source = 'host h(x: [4] f32) { tiling t = 4 rationale "  " launch k<1>(x) } kernel k(x) {}'
        assert parse_error_ids(source) == ['PARSE-RATIONALE']

    def test_duplicate_block_label(self):
        source = '''
            host h(x: [4] f32, out y: [4] f32) { launch k<1>(x, y) }
            kernel k(x, y) {
                alloc_ub a: f32[4] stream_in
                alloc_ub b: f32[4] stream_out
                copyin load { copy_g2l(a, x) }
                compute load { vcopy(b, a) }
                copyout store { copy_l2g(y, b) }
            }
        '''
        assert parse_error_ids(source) == ['PARSE-DUP']

    def test_duplicate_parameter(self):
        assert parse_error_ids('host h(x: [4] f32, x: [4] f32) { launch k<1>(x) } kernel k(x) {}') == ['PARSE-DUP']

    def test_trailing_tokens(self):
        assert parse_error_ids('host h(x: [4] f32) { launch k<1>(x) } kernel k(x) {} extra') == ['PARSE-SYNTAX']


class TestOperands:
    def test_slices_and_whole_buffers(self):
        p = parse_file(data_path('relu_small.adsl'))
        calls = [s for s in walk_stmts(p.kernel.body) if not isinstance(s, StageBlock) and hasattr(s, 'op')]
        load = calls[0]
        assert load.op == 'copy_g2l'
        assert load.args[0] == Slice('x_in', IntLit(0), Name('len'))
        assert load.args[1] == Slice('x', Name('start'), BinOp('+', Name('start'), Name('len')))

    def test_dtypes(self):
        p = fixture('masked_cumsum').load_program()
        assert p.host.param('mask').dtype == Dtype.U8
