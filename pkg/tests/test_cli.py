import dataclasses
import json
import os
import shutil

import pytest

import adsl_lowering
from adsl_cli import EXIT_ERRORS, EXIT_IO, EXIT_OK, EXIT_PARSE, main
from adsl_fixtures import FIXTURE_ROOT
from adsl_reference import reference_eval
from adsl_target import EnQue
from adsl_tensor_io import read_tensor_dir, write_tensor_dir
from adsl_vm import compare_tensors
from conftest import data_path, fixture, inputs_for

RELU = os.path.join(FIXTURE_ROOT, 'relu', 'program.adsl')
SOFTMAX = os.path.join(FIXTURE_ROOT, 'softmax', 'program.adsl')


def write_manifest(tmp_path, fixtures):
    shutil.copytree(os.path.join(FIXTURE_ROOT, 'relu'), str(tmp_path / 'relu'))
    path = tmp_path / 'manifest.json'
    path.write_text(json.dumps({'version': 1, 'fixtures': fixtures}))
    return str(path)


class TestCheck:
    def test_clean_program(self, capsys):
        assert main(['check', RELU]) == EXIT_OK
        assert capsys.readouterr().out == ''

    def test_semantic_error(self, capsys):
        assert main(['check', data_path('ub_overflow.adsl')]) == EXIT_ERRORS
        (line,) = capsys.readouterr().out.splitlines()
        assert json.loads(line)['rule_id'] == 'BUF-UB-OVERFLOW'

    def test_parse_error(self, tmp_path, capsys):
        broken = tmp_path / 'broken.adsl'
        broken.write_text('host h(x: [N] f32 {\n')
        assert main(['check', str(broken)]) == EXIT_PARSE
        assert all(json.loads(line)['rule_id'].startswith('PARSE-')
                   for line in capsys.readouterr().out.splitlines())

    def test_missing_program(self, tmp_path):
        assert main(['check', str(tmp_path / 'nothing.adsl')]) == EXIT_IO

    def test_bad_config(self, tmp_path, capsys):
        config = tmp_path / 'npu.cfg'
        config.write_text('num_cores = many\n')
        assert main(['check', RELU, '--config', str(config)]) == EXIT_IO
        assert 'expects an integer' in capsys.readouterr().err

    def test_shape_argument_needs_positive_dims(self):
        with pytest.raises(SystemExit):
            main(['check', RELU, '--shape', 'x=0'])


class TestSim:
    def test_inputs_directory(self, tmp_path):
        inputs = inputs_for('relu', shape_index=1)
        write_tensor_dir(str(tmp_path / 'in'), inputs)
        out = str(tmp_path / 'out')
        assert main(['sim', RELU, '--inputs', str(tmp_path / 'in'), '--out', out]) == EXIT_OK
        y = read_tensor_dir(out)['y']
        expected = reference_eval('relu', inputs)['y']
        assert compare_tensors(y, expected, *fixture('relu').tolerance(y.dtype)).passed

    def test_timed_run_writes_cost_report(self, tmp_path, capsys):
        out = tmp_path / 'out'
        assert main(['sim', SOFTMAX, '--random', '3', '--out', str(out), '--timed', '--json']) == EXIT_OK
        report = json.loads((out / 'cost.json').read_text())
        assert set(report['per_queue_busy']) == {'MTE2', 'VEC', 'SCALAR', 'MTE3'}
        records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert records[-1]['makespan_cycles'] == report['makespan_cycles']

    def test_missing_input(self, tmp_path, capsys):
        (tmp_path / 'in').mkdir()
        assert main(['sim', RELU, '--inputs', str(tmp_path / 'in'), '--out', str(tmp_path / 'out')]) == EXIT_ERRORS
        assert 'SEM-SHAPE' in capsys.readouterr().out

    def test_broken_tensor_file(self, tmp_path):
        (tmp_path / 'in').mkdir()
        (tmp_path / 'in' / 'x.adslt').write_bytes(b'not a tensor')
        assert main(['sim', RELU, '--inputs', str(tmp_path / 'in'), '--out', str(tmp_path / 'out')]) == EXIT_IO


class TestCompile:
    def test_full_pipeline(self, tmp_path):
        out = tmp_path / 'out'
        assert main(['compile', SOFTMAX, '--out', str(out)]) == EXIT_OK
        assert sorted(os.listdir(str(out))) == ['softmax_host.txt', 'softmax_kernel.txt', 'trace.json']
        trace = json.loads((out / 'trace.json').read_text())
        assert [p['accepted'] for p in trace['passes']] == [True] * 4
        assert 'class KernelSoftmaxKernel {' in (out / 'softmax_kernel.txt').read_text()

    def test_stop_after_pass(self, tmp_path):
        out = tmp_path / 'out'
        assert main(['compile', RELU, '--out', str(out), '--stop-after-pass', '1']) == EXIT_OK
        assert sorted(os.listdir(str(out))) == ['trace.json', 'unit_after_pass_1.txt']
        assert len(json.loads((out / 'trace.json').read_text())['passes']) == 1

    def test_rejected_pass(self, tmp_path, monkeypatch, capsys):
        def without_enqueues(p, t, cfg, shapes):
            unit = adsl_lowering.pass_kernel_compute(p, t)
            load = unit.stage_fn('CopyInLoad')
            body = tuple(i for i in load.body if not isinstance(i, EnQue))
            fns = tuple(dataclasses.replace(fn, body=body) if fn is load else fn for fn in unit.stage_fns)
            return dataclasses.replace(unit, stage_fns=fns)

        monkeypatch.setitem(adsl_lowering.DEFAULT_PASSES, 3, without_enqueues)
        out = tmp_path / 'out'
        assert main(['compile', RELU, '--out', str(out), '--json']) == EXIT_ERRORS
        trace = json.loads((out / 'trace.json').read_text())
        assert trace['passes'][-1]['pass_id'] == 3
        assert not trace['passes'][-1]['accepted']
        assert 'TGT-QUEUE-IMBALANCE' in capsys.readouterr().out


class TestBench:
    def test_speedup(self, tmp_path, capsys):
        manifest = write_manifest(tmp_path, [
            {'name': 'relu', 'category': 'Activation', 'oracle': 'relu', 'shapes': [{'x': [16384]}],
             'outputs': ['y']}])
        assert main(['bench', '--manifest', manifest, '--json']) == EXIT_OK
        (row,) = json.loads(capsys.readouterr().out)
        assert row['status'] == 'OK'
        assert row['speedup'] > 1
        assert row['naive_makespan_cycles'] > row['makespan_cycles']

    def test_wrong_oracle_fails(self, tmp_path, capsys):
        manifest = write_manifest(tmp_path, [
            {'name': 'relu', 'category': 'Activation', 'oracle': 'sigmoid', 'shapes': [{'x': [1000]}],
             'outputs': ['y']}])
        assert main(['bench', '--manifest', manifest]) == EXIT_ERRORS
        assert 'FAILED' in capsys.readouterr().out


class TestGoldens:
    def test_update_then_compare(self, tmp_path, capsys):
        root = tmp_path / 'fixtures'
        shutil.copytree(FIXTURE_ROOT, str(root))
        manifest = str(root / 'manifest.json')
        assert main(['goldens', '--manifest', manifest, '--update']) == EXIT_OK
        assert (root / 'relu' / 'expected_kernel.txt').is_file()
        assert main(['goldens', '--manifest', manifest]) == EXIT_OK

        kernel = root / 'relu' / 'expected_kernel.txt'
        kernel.write_text(kernel.read_text() + '// edited\n')
        capsys.readouterr()
        assert main(['goldens', '--manifest', manifest, '--json']) == EXIT_ERRORS
        (line,) = capsys.readouterr().out.splitlines()
        assert json.loads(line) == {'filename': str(kernel), 'result': 'differs'}

    def test_missing_goldens(self, tmp_path, capsys):
        manifest = write_manifest(tmp_path, [
            {'name': 'relu', 'category': 'Activation', 'oracle': 'relu', 'shapes': [{'x': [1000]}],
             'outputs': ['y']}])
        assert main(['goldens', '--manifest', manifest, '--json']) == EXIT_ERRORS
        results = [json.loads(line)['result'] for line in capsys.readouterr().out.splitlines()]
        assert results == ['missing'] * 3

    def test_committed_goldens_match(self, capsys):
        assert main(['goldens', '--json']) == EXIT_OK
        (line,) = capsys.readouterr().out.splitlines()
        assert json.loads(line) == {'fixtures': 16, 'result': 'passed'}
