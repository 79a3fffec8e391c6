import os

import pytest

from adsl_config import NpuConfig
from adsl_core import parse_file, parse_program
from adsl_fixtures import fixture_inputs, load_manifest
from adsl_lowering import run_pipeline

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')

FIXTURES = load_manifest()
FIXTURE_NAMES = [entry.name for entry in FIXTURES]

COPY_PROBE_TEMPLATE = '''
host probe_host(x: [N] {dt}, out y: [n] {dt}) {{
    tiling n = N - {off} rationale "one tile holds everything past the offset"
    launch probe_kernel<1>(x, y, n)
}}

kernel probe_kernel(x, y, n) {{
    alloc_ub x_in: {dt}[n] stream_in
    alloc_ub y_out: {dt}[n] stream_out
    copyin load {{
        copy_g2l(x_in[0..n], x[{off}..{off} + n])
    }}
    compute move {{
        vcopy(y_out[0..n], x_in[0..n])
    }}
    copyout store {{
        copy_l2g(y[0..n], y_out[0..n])
    }}
}}
'''


def data_path(name: str) -> str:
    return os.path.join(DATA_DIR, name)


def load_sample(name: str):
    return parse_file(data_path(name))


def fixture(name: str):
    for entry in FIXTURES:
        if entry.name == name:
            return entry
    raise KeyError(name)


def rule_ids(diagnostics, errors_only: bool = True):
    return {d.rule_id for d in diagnostics if d.is_error or not errors_only}


def copy_probe(dtype: str = 'f32', offset: int = 0):
    """A single-block program copying x[offset..] to y through one tile."""
    return parse_program(COPY_PROBE_TEMPLATE.format(dt=dtype, off=offset))


def probe_shapes(n: int, offset: int = 0):
    """Shapes that make the probe move exactly n elements."""
    return [{'x': [n + offset]}]


@pytest.fixture
def cfg():
    return NpuConfig()


@pytest.fixture(scope='session')
def compiled():
    """Lowered unit of every fixture over all its manifest shapes, built once."""
    units = {}
    for entry in FIXTURES:
        p = entry.load_program()
        unit, trace = run_pipeline(p, NpuConfig(), shapes=list(entry.shapes))
        units[entry.name] = (p, unit, trace)
    return units


def inputs_for(name: str, shape_index: int = 0, seed: int = 0):
    entry = fixture(name)
    p = entry.load_program()
    return fixture_inputs(entry, p, entry.shapes[shape_index], seed)
