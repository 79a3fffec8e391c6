import random

import numpy as np
import pytest

from adsl_core import parse_file, parse_program
from adsl_fixtures import generate_inputs
from adsl_lowering import run_pipeline
from adsl_reference import reference_eval
from adsl_semantic import check_program
from adsl_target import interpret_target
from adsl_vm import compare_tensors, run_functional
from conftest import FIXTURES, data_path, inputs_for

SEEDS = range(20)

CASES = [(entry.name, index) for entry in FIXTURES for index in range(len(entry.shapes))]

RANDOM_PROGRAM = '''
host rand_host(a: [N] {dt}, b: [N] {dt}, out y: [N] {dt}) {{
    tiling tile = {tile} rationale "random tile"
    launch rand_kernel<{blocks}>(a, b, y, tile) partition N
}}

kernel rand_kernel(a, b, y, tile) {{
    alloc_ub a_in: {dt}[tile] stream_in
    alloc_ub b_in: {dt}[tile] stream_in
    alloc_ub y_out: {dt}[tile] stream_out
    alloc_ub acc: {dt}[tile] temp

    for t in 0..ceil_div(block_len, tile) {{
        start = block_start + t * tile
        len = min(tile, block_start + block_len - start)
        copyin load {{
            copy_g2l(a_in[0..len], a[start..start + len])
            copy_g2l(b_in[0..len], b[start..start + len])
        }}
        compute mix {{
{body}
            vcopy(y_out[0..len], acc[0..len])
        }}
        copyout store {{
            copy_l2g(y[start..start + len], y_out[0..len])
        }}
    }}
}}
'''

BINARY = ('vadd', 'vmul', 'vmax', 'vmin', 'vsub')
UNARY = ('vabs', 'vrelu')
SCALAR = ('adds', 'muls')


def random_statement(rng: random.Random, first: bool) -> str:
    operand = '{}[0..len]'
    if first:
        return '{}(acc[0..len], a_in[0..len], b_in[0..len])'.format(rng.choice(BINARY))
    src = operand.format('acc')
    family = rng.choice(('binary', 'unary', 'scalar', 'carried'))
    if family == 'binary':
        other = operand.format(rng.choice(('a_in', 'b_in')))
        return '{}(acc[0..len], {}, {})'.format(rng.choice(BINARY), src, other)
    if family == 'unary':
        return '{}(acc[0..len], {})'.format(rng.choice(UNARY), src)
    if family == 'carried':
        step = rng.choice(('1', '0.5', '-0.25'))
        return 'k = 0\nfor i in 0..{} {{\n    k = k + {}\n}}\n{}(acc[0..len], {}, k)'.format(
            rng.randint(1, 5), step, rng.choice(SCALAR), src)
    return '{}(acc[0..len], {}, {})'.format(rng.choice(SCALAR), src, rng.choice(('0.5', '-1.25', '2.0')))


def random_program(seed: int):
    rng = random.Random(seed)
    statements = [random_statement(rng, i == 0) for i in range(rng.randint(1, 6))]
    text = RANDOM_PROGRAM.format(
        dt=rng.choice(('f32', 'f16')),
        tile=rng.choice((16, 64, 100, 256, 1000)),
        blocks=rng.randint(1, 8),
        body='\n'.join(' ' * 12 + line for s in statements for line in s.splitlines()),
    )
    n = rng.randint(1, 3000)
    return parse_program(text), {'a': [n], 'b': [n]}


class TestFixtureTriangle:
    @pytest.mark.parametrize('name, shape_index', CASES)
    def test_oracle_interpreter_and_target_agree(self, name, shape_index, compiled, cfg):
        entry = next(e for e in FIXTURES if e.name == name)
        p, unit, _ = compiled[name]
        for seed in SEEDS:
            inputs = inputs_for(name, shape_index, seed)
            outputs = run_functional(p, inputs, cfg)
            expected = reference_eval(entry.oracle, inputs, entry.oracle_params)
            for output in entry.outputs:
                rel_tol, abs_tol = entry.tolerance(outputs[output].dtype)
                report = compare_tensors(outputs[output], expected[output], rel_tol, abs_tol)
                assert report.passed, (seed, output, report.to_json())
            lowered = interpret_target(unit, inputs, cfg)
            for output in entry.outputs:
                assert lowered[output].bitwise_equal(outputs[output]), (seed, output)


class TestRandomPrograms:
    @pytest.mark.parametrize('seed', range(40))
    def test_lowering_preserves_values(self, seed, cfg):
        p, shape = random_program(seed)
        assert [d for d in check_program(p, cfg, [shape]) if d.is_error] == []
        unit, trace = run_pipeline(p, cfg, shapes=[shape])
        assert trace.accepted
        inputs = generate_inputs(p, shape, seed)
        expected = run_functional(p, inputs, cfg)['y']
        assert interpret_target(unit, inputs, cfg)['y'].bitwise_equal(expected)


class TestLoopCarriedScalar:
    """A scalar updated inside a loop of a stage block keeps its value."""

    @pytest.mark.parametrize('n', [64, 1000])
    def test_target_matches_interpreter(self, n, cfg):
        p = parse_file(data_path('loop_carried.adsl'))
        shape = {'x': [n]}
        unit, trace = run_pipeline(p, cfg, shapes=[shape])
        assert trace.accepted
        inputs = generate_inputs(p, shape, 7)
        expected = run_functional(p, inputs, cfg)['y']
        assert np.array_equal(expected.data, inputs['x'].data + np.float32(4))
        assert interpret_target(unit, inputs, cfg)['y'].bitwise_equal(expected)
