import random

import numpy as np
import pytest

from adsl_config import NpuConfig
from adsl_core import parse_program
from adsl_diagnostics import ComparisonError, DiagnosticError
from adsl_kernels import execute
from adsl_options import Dtype
from adsl_vm import (
    TensorValue, compare_tensors, declared_shapes, elaborate_block, eval_host, kernel_layout, partition_ranges,
    run_functional, tolerance_for, OpEvent,
)
from conftest import fixture, load_sample

BARRIER_PROGRAM = '''
host swap_host(x: [8] f32, out y: [8] f32) {
    launch swap_kernel<2>(x, y) partition 8
}

kernel swap_kernel(x, y) {
    alloc_ub a_in: f32[4] stream_in
    alloc_ub a_out: f32[4] stream_out
    alloc_ub b_in: f32[4] stream_in
    alloc_ub b_out: f32[4] stream_out
    copyin load {
        copy_g2l(a_in[0..4], x[block_start..block_start + 4])
    }
    compute double {
        adds(a_out[0..4], a_in[0..4], 1.0)
    }
    copyout store {
        copy_l2g(y[block_start..block_start + 4], a_out[0..4])
    }
    sync_all
    peer = (block_idx + 1) % block_num * 4
    copyin reload {
        copy_g2l(b_in[0..4], y[peer..peer + 4])
    }
    compute twice {
        muls(b_out[0..4], b_in[0..4], 2.0)
    }
    copyout restore {
        copy_l2g(x[block_start..block_start + 4], b_out[0..4])
    }
}
'''


class TestPartition:
    def test_remainder_goes_to_lowest_blocks(self):
        assert [len(r) for r in partition_ranges(10, 4)] == [3, 3, 2, 2]
        assert partition_ranges(10, 4)[1] == range(3, 6)

    def test_more_blocks_than_work(self):
        assert [len(r) for r in partition_ranges(3, 5)] == [1, 1, 1, 0, 0]

    def test_random_partitions_cover_exactly(self):
        rng = random.Random(7)
        for _ in range(1000):
            workload = rng.randint(1, 5000)
            blocks = rng.randint(1, 64)
            ranges = partition_ranges(workload, blocks)
            assert len(ranges) == blocks
            assert sum(len(r) for r in ranges) == workload
            covered = [0] * workload
            for r in ranges:
                for i in r:
                    covered[i] += 1
            assert covered == [1] * workload
            sizes = [len(r) for r in ranges]
            assert max(sizes) - min(sizes) <= 1
            assert sizes == sorted(sizes, reverse=True)


class TestHost:
    def test_relu_plan(self, cfg):
        plan = eval_host(fixture('relu').load_program(), {'x': [1000]}, cfg)
        assert plan.num_blocks == 8
        assert plan.workload == 1000
        assert plan.tiling_values['tile'] == 2048
        assert plan.kernel_tensors == {'x': 'x', 'y': 'y'}
        assert plan.kernel_scalars == {'tile': 2048}
        assert plan.tensor_shapes == {'x': (1000,), 'y': (1000,)}

    def test_small_input_clamps_blocks(self, cfg):
        assert eval_host(fixture('relu').load_program(), {'x': [3]}, cfg).num_blocks == 1

    def test_core_count_reaches_tiling(self):
        plan = eval_host(fixture('relu').load_program(), {'x': [4096]}, NpuConfig(num_cores=2))
        assert plan.num_blocks == 2

    def test_declared_shapes(self):
        assert declared_shapes(load_sample('relu_small.adsl')) == {'x': (1000,)}
        assert declared_shapes(fixture('relu').load_program()) is None

    @pytest.mark.parametrize('shapes, rule_id', [
        ({}, 'SEM-SHAPE'),
        ({'x': [4, 4]}, 'SEM-SHAPE'),
        ({'x': [999]}, 'SEM-SHAPE'),
        ({'x': [0]}, 'TIL-NONPOS'),
    ])
    def test_bad_shapes(self, shapes, rule_id, cfg):
        with pytest.raises(DiagnosticError) as failure:
            eval_host(load_sample('relu_small.adsl'), shapes, cfg)
        assert failure.value.rule_ids == [rule_id]

    def test_block_environment(self, cfg):
        p = load_sample('relu_small.adsl')
        plan = eval_host(p, {'x': [1000]}, cfg)
        layout = kernel_layout(p, plan)
        ops = [e for e in elaborate_block(p, plan, layout, 3) if isinstance(e, OpEvent)]
        loads = [e.operands[1] for e in ops if e.op == 'copy_g2l']
        assert [(r.start, r.length) for r in loads] == [(750, 128), (878, 122)]
        assert {e.label for e in ops} == {'load', 'act', 'store'}


class TestFunctional:
    def test_relu_small(self, cfg):
        x = np.linspace(-5.0, 5.0, 1000, dtype=np.float32)
        outputs = run_functional(load_sample('relu_small.adsl'), {'x': TensorValue.from_array(x, Dtype.F32)}, cfg)
        assert outputs['y'].shape == (1000,)
        assert np.array_equal(outputs['y'].to_array(), np.maximum(x, 0))

    def test_inputs_are_not_modified(self, cfg):
        x = TensorValue.from_array(np.arange(8, dtype=np.float32), Dtype.F32)
        run_functional(parse_program(BARRIER_PROGRAM), {'x': x}, cfg)
        assert np.array_equal(x.to_array(), np.arange(8, dtype=np.float32))

    def test_barrier_orders_blocks(self, cfg):
        x = TensorValue.from_array(np.arange(8, dtype=np.float32), Dtype.F32)
        outputs = run_functional(parse_program(BARRIER_PROGRAM), {'x': x}, cfg)
        assert outputs['y'].to_array().tolist() == [1, 2, 3, 4, 5, 6, 7, 8]

    def test_missing_input(self, cfg):
        with pytest.raises(DiagnosticError) as failure:
            run_functional(load_sample('relu_small.adsl'), {}, cfg)
        assert failure.value.rule_ids == ['SEM-SHAPE']

    def test_wrong_input_dtype(self, cfg):
        x = TensorValue.from_array(np.zeros(1000), Dtype.F16)
        with pytest.raises(DiagnosticError) as failure:
            run_functional(load_sample('relu_small.adsl'), {'x': x}, cfg)
        assert failure.value.rule_ids == ['SEM-SHAPE']


class TestPrimitives:
    def test_f16_sum_rounds_to_nearest_half(self):
        a = np.array([2048.0], dtype=np.float16)
        b = np.array([1.0], dtype=np.float16)
        dst = np.zeros(1, dtype=np.float16)
        execute('vadd', dst, [a, b])
        assert dst[0] == np.float16(2048.0)

    def test_reduce_writes_one_element(self):
        dst = np.zeros(1, dtype=np.float32)
        execute('reduce_sum', dst, [np.arange(5, dtype=np.float32)])
        assert dst[0] == 10.0

    def test_select(self):
        dst = np.zeros(4, dtype=np.float32)
        mask = np.array([1, 0, 1, 0], dtype=np.uint8)
        execute('vsel', dst, [mask, np.ones(4, dtype=np.float32), np.full(4, 7.0, dtype=np.float32)])
        assert dst.tolist() == [1.0, 7.0, 1.0, 7.0]

    def test_cast_saturates(self):
        dst = np.zeros(3, dtype=np.int32)
        execute('cast', dst, [np.array([1.9, -1e20, np.nan], dtype=np.float32)])
        assert dst.tolist() == [1, np.iinfo(np.int32).min, 0]


class TestTensors:
    def test_shape_must_match_data(self):
        with pytest.raises(ValueError):
            TensorValue(Dtype.F32, (3, 2), np.zeros(5, dtype=np.float32))

    def test_bitwise_equal_distinguishes_signed_zero(self):
        zero = TensorValue.from_array(np.array([0.0]), Dtype.F32)
        negative_zero = TensorValue.from_array(np.array([-0.0]), Dtype.F32)
        assert zero.bitwise_equal(zero)
        assert not zero.bitwise_equal(negative_zero)


class TestCompare:
    def values(self, *xs, dtype=Dtype.F32):
        return TensorValue.from_array(np.array(xs), dtype)

    def test_within_tolerance(self):
        report = compare_tensors(self.values(1.0, 2.0000001), self.values(1.0, 2.0), *tolerance_for(Dtype.F32))
        assert report.passed
        assert report.mismatches == 0

    def test_reports_worst_element(self):
        report = compare_tensors(self.values(1.0, 2.5, 3.0), self.values(1.0, 2.0, 3.1), 1e-5, 1e-6)
        assert not report.passed
        assert report.worst_index == 1
        assert report.mismatches == 2
        assert report.worst_actual == 2.5
        assert report.to_json()['worst_expected'] == 2.0

    def test_nan_matches_nan_only(self):
        nan = float('nan')
        assert compare_tensors(self.values(nan), self.values(nan), 0.0, 0.0).passed
        assert not compare_tensors(self.values(nan), self.values(1.0), 0.0, 0.0).passed

    def test_infinities(self):
        inf = float('inf')
        assert compare_tensors(self.values(inf), self.values(inf), 0.0, 0.0).passed
        assert not compare_tensors(self.values(-inf), self.values(inf), 1.0, 1.0).passed

    def test_shape_and_dtype_must_agree(self):
        with pytest.raises(ComparisonError):
            compare_tensors(self.values(1.0, 2.0), self.values(1.0), 0.0, 0.0)
        with pytest.raises(ComparisonError):
            compare_tensors(self.values(1.0, dtype=Dtype.F16), self.values(1.0), 0.0, 0.0)
