import numpy as np
import pytest

from adsl_config import NpuConfig, depth_sweep
from adsl_options import Dtype, HwQueue
from adsl_timing import Instr, simulate, transfer_latency
from adsl_vm import TensorValue, run_functional, run_timed
from conftest import FIXTURE_NAMES, fixture, inputs_for, load_sample

QUEUE_NAMES = {'MTE2', 'VEC', 'SCALAR', 'MTE3'}


def instr(uid, queue, latency, block=0, index=None, phase=0, deps=()):
    return Instr(uid, block, uid if index is None else index, queue, latency, phase, 'op', list(deps))


def relu_input(n, seed=0):
    return {'x': TensorValue.from_array(np.random.default_rng(seed).normal(size=n), Dtype.F32)}


class TestLatency:
    @pytest.mark.parametrize('byte_count, expected', [(0, 10), (1, 30), (256, 30), (257, 50), (8192, 650)])
    def test_transfer(self, byte_count, expected):
        assert transfer_latency(NpuConfig(), byte_count, 20) == expected


class TestQueueSimulator:
    def test_independent_queues_overlap(self):
        report = simulate(NpuConfig(), [[instr(0, HwQueue.MTE2, 30), instr(1, HwQueue.VEC, 50)]])
        assert report.makespan_cycles == 50
        assert report.total_latency == 80

    def test_one_queue_is_in_order(self):
        report = simulate(NpuConfig(), [[instr(0, HwQueue.VEC, 30), instr(1, HwQueue.VEC, 50)]])
        assert report.makespan_cycles == 80
        assert report.per_queue_busy['VEC'] == 80

    def test_dependency_across_queues(self):
        blocks = [[instr(0, HwQueue.MTE2, 30), instr(1, HwQueue.VEC, 5, deps=[0]), instr(2, HwQueue.MTE3, 7, deps=[1])]]
        report = simulate(NpuConfig(), blocks)
        assert report.makespan_cycles == 42
        assert [i.start for i in blocks[0]] == [0, 30, 35]

    def test_blocks_share_cores(self):
        blocks = [[instr(0, HwQueue.MTE2, 10, block=0, index=0)], [instr(1, HwQueue.VEC, 10, block=1, index=0)]]
        assert simulate(NpuConfig(num_cores=2), blocks).makespan_cycles == 10
        assert simulate(NpuConfig(num_cores=1), blocks).makespan_cycles == 20

    def test_barrier_phase_waits_for_every_block(self):
        blocks = [
            [instr(0, HwQueue.MTE2, 100, block=0, index=0), instr(1, HwQueue.VEC, 1, block=0, index=1, phase=1)],
            [instr(2, HwQueue.MTE2, 5, block=1, index=0), instr(3, HwQueue.VEC, 1, block=1, index=1, phase=1)],
        ]
        report = simulate(NpuConfig(num_cores=2), blocks)
        assert blocks[1][1].start == 100
        assert report.per_block_makespan == [101, 101]
        assert report.makespan_cycles == 101

    def test_empty_program(self):
        report = simulate(NpuConfig(), [[]])
        assert report.makespan_cycles == 0
        assert report.per_block_makespan == [0]
        assert set(report.instr_count) == QUEUE_NAMES


class TestTimedRun:
    def test_outputs_match_functional_run(self, cfg):
        p = load_sample('relu_small.adsl')
        inputs = relu_input(1000)
        outputs, _ = run_timed(p, inputs, cfg)
        assert outputs['y'].bitwise_equal(run_functional(p, inputs, cfg)['y'])

    def test_instruction_counts(self, cfg):
        _, report = run_timed(load_sample('relu_small.adsl'), relu_input(1000), cfg)
        assert report.instr_count == {'MTE2': 8, 'VEC': 8, 'SCALAR': 16, 'MTE3': 8}
        assert len(report.per_block_makespan) == 4
        assert set(report.to_json()['per_queue_busy']) == QUEUE_NAMES

    @pytest.mark.parametrize('name', FIXTURE_NAMES)
    def test_makespan_bounds(self, name, cfg):
        _, report = run_timed(fixture(name).load_program(), inputs_for(name), cfg)
        assert max(report.per_queue_busy.values()) <= report.makespan_cycles <= report.total_latency
        assert max(report.per_block_makespan) <= report.makespan_cycles

    @pytest.mark.parametrize('name', FIXTURE_NAMES)
    def test_double_buffering_never_hurts(self, name, cfg):
        p = fixture(name).load_program()
        inputs = inputs_for(name)
        single, double = (run_timed(p, inputs, c)[1].makespan_cycles for c in depth_sweep(cfg)[:2])
        assert double <= single

    def test_double_buffering_overlaps_tiles(self):
        p = fixture('relu').load_program()
        inputs = relu_input(16384)
        single = run_timed(p, inputs, NpuConfig(num_cores=1, queue_depth_in=1, queue_depth_out=1))[1]
        double = run_timed(p, inputs, NpuConfig(num_cores=1))[1]
        assert double.makespan_cycles < single.makespan_cycles
        assert double.total_latency == single.total_latency

    def test_more_cores_never_hurt(self):
        p = fixture('relu').load_program()
        inputs = relu_input(4096)
        four = run_timed(p, inputs, NpuConfig(num_cores=4))[1]
        eight = run_timed(p, inputs, NpuConfig(num_cores=8))[1]
        assert eight.makespan_cycles <= four.makespan_cycles

    def test_deterministic(self, cfg):
        p = fixture('softmax').load_program()
        inputs = inputs_for('softmax')
        assert run_timed(p, inputs, cfg)[1] == run_timed(p, inputs, cfg)[1]
