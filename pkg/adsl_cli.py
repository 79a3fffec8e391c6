"""
Command-line entry point of the toolchain.

    python adsl_cli.py check   PROGRAM [--shape x=64,512]
    python adsl_cli.py sim     PROGRAM (--inputs DIR | --random SEED) [--out DIR] [--timed]
    python adsl_cli.py compile PROGRAM [--out DIR] [--stop-after-pass N]
    python adsl_cli.py bench   [--manifest PATH]
    python adsl_cli.py goldens [--manifest PATH] [--update]

Exit codes: 0 success, 1 semantic/pipeline/comparison failure, 2 parse error,
3 I/O, container or config error.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from progressbar import ProgressBar

from adsl_config import ToolConfig, load_config
from adsl_core import Program, parse_file
from adsl_diagnostics import (
    ComparisonError, ConfigError, Diagnostic, DiagnosticError, InternalError, ParseError, TensorFormatError,
    has_errors, to_json_lines,
)
from adsl_fixtures import FIXTURE_ROOT, MANIFEST_NAME, FixtureManifest, find_fixture, fixture_inputs, generate_inputs, \
    load_manifest
from adsl_lowering import PipelineError, run_pipeline
from adsl_reference import reference_eval
from adsl_semantic import check_program, shape_list
from adsl_target import emit_text, render_unit
from adsl_tensor_io import TENSOR_EXTENSION, read_tensor_dir, write_tensor_dir
from adsl_vm import compare_tensors, run_functional, run_timed

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERRORS = 1
EXIT_PARSE = 2
EXIT_IO = 3

TRACE_NAME = 'trace.json'
COST_NAME = 'cost.json'
GOLDEN_KERNEL = 'expected_kernel'
GOLDEN_HOST = 'expected_host'
GOLDEN_TRACE = 'expected_trace.json'

ShapeMap = Mapping[str, Sequence[int]]


def shape_arg(text: str) -> Tuple[str, Tuple[int, ...]]:
    """NAME=d0,d1,... as given to --shape."""
    name, sep, dims = text.partition('=')
    try:
        shape = tuple(int(d) for d in dims.split(','))
    except ValueError:
        shape = ()
    if not sep or not name or not shape or min(shape) <= 0:
        raise argparse.ArgumentTypeError('expected NAME=d0,d1,... with positive dims, got {!r}'.format(text))
    return name, shape


def _emit(args, record: dict):
    if args.json:
        print(json.dumps(record, sort_keys=True))
    else:
        print(record)


def _print_diagnostics(diagnostics: List[Diagnostic]):
    sys.stdout.write(to_json_lines(diagnostics))


def _default_manifest(args) -> Optional[str]:
    path = args.manifest or os.path.join(FIXTURE_ROOT, MANIFEST_NAME)
    return path if os.path.isfile(path) else None


def _fixture_for(args, path: str) -> Optional[FixtureManifest]:
    manifest = _default_manifest(args)
    if manifest is None:
        return None
    return find_fixture(load_manifest(manifest), path)


def _shapes_for(args, path: str) -> Optional[List[ShapeMap]]:
    if args.shape:
        return [dict(args.shape)]
    entry = _fixture_for(args, path)
    return list(entry.shapes) if entry is not None else None


def _trace_text(trace) -> str:
    return json.dumps(trace.to_json(), indent=2, sort_keys=True) + '\n'


def _write_text(path: str, text: str):
    with open(path, mode='w', encoding='utf-8') as output_file:
        output_file.write(text)


# ---------------------------------------------------------------- commands

def cmd_check(args, cfg: ToolConfig) -> int:
    p = parse_file(args.program)
    diagnostics = check_program(p, cfg.npu, _shapes_for(args, args.program))
    _print_diagnostics(diagnostics)
    return EXIT_ERRORS if has_errors(diagnostics) else EXIT_OK


def _sim_inputs(args, p: Program):
    if args.inputs is not None:
        return read_tensor_dir(args.inputs)
    entry = _fixture_for(args, args.program)
    shape = shape_list(p, _shapes_for(args, args.program))[0]
    if entry is not None:
        return fixture_inputs(entry, p, shape, args.random)
    return generate_inputs(p, shape, args.random)


def cmd_sim(args, cfg: ToolConfig) -> int:
    p = parse_file(args.program)
    inputs = _sim_inputs(args, p)
    shapes = [{name: value.shape for name, value in inputs.items()}]
    diagnostics = [d for d in check_program(p, cfg.npu, shapes) if d.is_error]
    if diagnostics:
        _print_diagnostics(diagnostics)
        return EXIT_ERRORS
    if args.timed:
        outputs, report = run_timed(p, inputs, cfg.npu)
    else:
        outputs, report = run_functional(p, inputs, cfg.npu), None
    write_tensor_dir(args.out, outputs)
    for name in sorted(outputs):
        _emit(args, {'filename': os.path.join(args.out, name + TENSOR_EXTENSION), 'result': 'written'})
    if report is not None:
        cost_path = os.path.join(args.out, COST_NAME)
        _write_text(cost_path, json.dumps(report.to_json(), indent=2, sort_keys=True) + '\n')
        _emit(args, {'filename': cost_path, 'result': 'written', 'makespan_cycles': report.makespan_cycles})
    return EXIT_OK


def cmd_compile(args, cfg: ToolConfig) -> int:
    p = parse_file(args.program)
    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, TRACE_NAME)
    try:
        unit, trace = run_pipeline(p, cfg.npu, max_repairs=cfg.max_repairs, shapes=_shapes_for(args, args.program),
                                   stop_after=args.stop_after_pass)
    except PipelineError as failure:
        _write_text(trace_path, _trace_text(failure.trace))
        _print_diagnostics(failure.diagnostics)
        _emit(args, {'filename': trace_path, 'result': 'rejected', 'pass_id': failure.pass_id})
        return EXIT_ERRORS
    written = [trace_path]
    _write_text(trace_path, _trace_text(trace))
    if args.stop_after_pass < 4:
        unit_path = os.path.join(args.out, 'unit_after_pass_{}.txt'.format(args.stop_after_pass))
        _write_text(unit_path, render_unit(unit))
        written.append(unit_path)
    else:
        host_source, kernel_source = emit_text(unit)
        host_path = os.path.join(args.out, unit.host_name + cfg.emit_extension)
        kernel_path = os.path.join(args.out, unit.name + cfg.emit_extension)
        _write_text(host_path, host_source)
        _write_text(kernel_path, kernel_source)
        written += [host_path, kernel_path]
    for path in written:
        _emit(args, {'filename': path, 'result': 'written'})
    return EXIT_OK


@dataclass(frozen=True)
class BenchRow:
    fixture: str
    shape: Dict[str, Tuple[int, ...]]
    makespan_cycles: int
    naive_makespan_cycles: int
    speedup: float
    status: str = 'OK'

    def to_json(self) -> dict:
        return {
            'fixture': self.fixture,
            'shape': {k: list(v) for k, v in self.shape.items()},
            'makespan_cycles': self.makespan_cycles,
            'naive_makespan_cycles': self.naive_makespan_cycles,
            'speedup': self.speedup,
            'status': self.status,
        }


def check_against_oracle(entry: FixtureManifest, inputs, outputs) -> bool:
    expected = reference_eval(entry.oracle, inputs, entry.oracle_params)
    for name in entry.outputs:
        actual = outputs[name]
        rel_tol, abs_tol = entry.tolerance(actual.dtype)
        if not compare_tensors(actual, expected[name], rel_tol, abs_tol).passed:
            return False
    return True


def bench_fixture(entry: FixtureManifest, shape: ShapeMap, cfg: ToolConfig) -> BenchRow:
    shape = {k: tuple(v) for k, v in shape.items()}
    try:
        p = entry.load_program()
        inputs = fixture_inputs(entry, p, shape, 0)
        outputs, report = run_timed(p, inputs, cfg.npu)
        _, naive = run_timed(p, inputs, cfg.npu.naive())
        passed = check_against_oracle(entry, inputs, outputs)
    except (DiagnosticError, InternalError, ComparisonError) as failure:
        logger.warning('%s %s failed: %s', entry.name, shape, failure)
        return BenchRow(entry.name, shape, 0, 0, 0.0, 'FAILED')
    speedup = naive.makespan_cycles / report.makespan_cycles if report.makespan_cycles else 0.0
    return BenchRow(entry.name, shape, report.makespan_cycles, naive.makespan_cycles, round(speedup, 4),
                    'OK' if passed else 'FAILED')


def cmd_bench(args, cfg: ToolConfig) -> int:
    entries = load_manifest(args.manifest)
    jobs = [(entry, shape) for entry in entries for shape in entry.shapes]
    rows = []
    bench_progressbar = ProgressBar(min_value=0, max_value=len(jobs), prefix='{} - processing ...:'.format('bench'))
    for job_index, (entry, shape) in enumerate(jobs):
        bench_progressbar.update(job_index)
        rows.append(bench_fixture(entry, shape, cfg))
    bench_progressbar.finish()
    if args.json:
        print(json.dumps([r.to_json() for r in rows], indent=2, sort_keys=True))
    else:
        print('{:<16} {:<28} {:>12} {:>12} {:>8} {}'.format('fixture', 'shape', 'cycles', 'naive', 'speedup', 'status'))
        for r in rows:
            shape_text = ' '.join('{}={}'.format(k, ','.join(str(d) for d in v)) for k, v in sorted(r.shape.items()))
            print('{:<16} {:<28} {:>12} {:>12} {:>8.2f} {}'.format(
                r.fixture, shape_text, r.makespan_cycles, r.naive_makespan_cycles, r.speedup, r.status))
    return EXIT_ERRORS if any(r.status != 'OK' for r in rows) else EXIT_OK


def golden_texts(entry: FixtureManifest, cfg: ToolConfig) -> Dict[str, str]:
    """Emitted host, kernel and trace text of one fixture, keyed by golden file name."""
    p = entry.load_program()
    unit, trace = run_pipeline(p, cfg.npu, max_repairs=cfg.max_repairs, shapes=list(entry.shapes))
    host_source, kernel_source = emit_text(unit)
    return {
        GOLDEN_HOST + cfg.emit_extension: host_source,
        GOLDEN_KERNEL + cfg.emit_extension: kernel_source,
        GOLDEN_TRACE: _trace_text(trace),
    }


def cmd_goldens(args, cfg: ToolConfig) -> int:
    entries = load_manifest(args.manifest)
    mismatches = []
    goldens_progressbar = ProgressBar(min_value=0, max_value=len(entries), prefix='{} - processing ...:'.format(
        'goldens'))
    for entry_index, entry in enumerate(entries):
        goldens_progressbar.update(entry_index)
        for file_name, text in golden_texts(entry, cfg).items():
            path = os.path.join(entry.directory, file_name)
            if args.update:
                _write_text(path, text)
                continue
            if not os.path.isfile(path):
                mismatches.append({'filename': path, 'result': 'missing'})
                continue
            with open(path, mode='r', encoding='utf-8') as golden_file:
                if golden_file.read() != text:
                    mismatches.append({'filename': path, 'result': 'differs'})
    goldens_progressbar.finish()
    for mismatch in mismatches:
        _emit(args, mismatch)
    if not mismatches:
        _emit(args, {'fixtures': len(entries), 'result': 'updated' if args.update else 'passed'})
    return EXIT_ERRORS if mismatches else EXIT_OK


# ---------------------------------------------------------------- argument handling

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='adsl_cli.py', description='kernel DSL toolchain for a virtual NPU')
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument('--config', help='key = value NPU config file', type=str, default=None)
    shared.add_argument('--json', help='print results as JSON', action='store_true')
    shared.add_argument('--verbose', help='debug logging', action='store_true')
    shared.add_argument('--manifest', help='fixture manifest (default: fixtures/manifest.json)', type=str,
                        default=None)
    shaped = argparse.ArgumentParser(add_help=False)
    shaped.add_argument('program', help='path of the .adsl program', type=str)
    shaped.add_argument('--shape', help='input shape NAME=d0,d1 (repeat per input)', type=shape_arg,
                        action='append', default=[])
    commands = parser.add_subparsers(dest='command', required=True)

    check = commands.add_parser('check', parents=[shared, shaped], help='parse and run every semantic check')
    check.set_defaults(handler=cmd_check)

    sim = commands.add_parser('sim', parents=[shared, shaped], help='run a program on the virtual NPU')
    source = sim.add_mutually_exclusive_group(required=True)
    source.add_argument('--inputs', help='directory of .adslt input tensors', type=str)
    source.add_argument('--random', help='generate inputs from this seed', type=int)
    sim.add_argument('--out', help='output directory', type=str, default='sim_out')
    sim.add_argument('--timed', help='also write the cost report', action='store_true')
    sim.set_defaults(handler=cmd_sim)

    compile_ = commands.add_parser('compile', parents=[shared, shaped], help='lower a program to target sources')
    compile_.add_argument('--out', help='output directory', type=str, default='compile_out')
    compile_.add_argument('--stop-after-pass', help='stop after pass N and write the partial unit',
                          type=int, choices=[1, 2, 3, 4], default=4)
    compile_.set_defaults(handler=cmd_compile)

    bench = commands.add_parser('bench', parents=[shared], help='relative cycle speedups over the fixture corpus')
    bench.set_defaults(handler=cmd_bench)

    goldens = commands.add_parser('goldens', parents=[shared], help='compare emitted sources against goldens')
    goldens.add_argument('--update', help='rewrite the golden files', action='store_true')
    goldens.set_defaults(handler=cmd_goldens)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
        return args.handler(args, cfg)
    except ParseError as failure:
        _print_diagnostics(failure.diagnostics)
        return EXIT_PARSE
    except DiagnosticError as failure:
        _print_diagnostics(failure.diagnostics)
        return EXIT_ERRORS
    except (InternalError, ComparisonError) as failure:
        print('error: {}'.format(failure), file=sys.stderr)
        return EXIT_ERRORS
    except (OSError, TensorFormatError, ConfigError) as failure:
        print('error: {}'.format(failure), file=sys.stderr)
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(main())
