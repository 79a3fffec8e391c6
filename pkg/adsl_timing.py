"""
Event-driven model of the AI core's instruction queues.

Each core owns four in-order queues (MTE2 for global loads, VEC for vector
compute, SCALAR for scalar arithmetic, MTE3 for global stores). An instruction
starts once its queue is idle, every instruction it depends on has completed,
the previous block on the same core has finished and, after a SyncAll, every
block has reached the barrier. Dependencies come from a per-slot scoreboard:
stream buffers own `queue_depth` slots, so with depth 2 the load of tile i+1
lands in a different slot from the one tile i is being computed on.
"""

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from adsl_config import NpuConfig
from adsl_diagnostics import InternalError
from adsl_options import BufferRole, HwQueue, StageKind

logger = logging.getLogger(__name__)

STAGE_QUEUE = {StageKind.COPY_IN: HwQueue.MTE2, StageKind.COMPUTE: HwQueue.VEC, StageKind.COPY_OUT: HwQueue.MTE3}


@dataclass(frozen=True)
class CostReport:
    makespan_cycles: int
    per_queue_busy: Dict[str, int]
    per_block_makespan: List[int]
    instr_count: Dict[str, int]
    total_latency: int = 0

    def to_json(self) -> dict:
        return {
            'makespan_cycles': self.makespan_cycles,
            'per_queue_busy': dict(self.per_queue_busy),
            'per_block_makespan': list(self.per_block_makespan),
            'instr_count': dict(self.instr_count),
            'total_latency': self.total_latency,
        }


@dataclass
class Instr:
    uid: int
    block: int
    index: int
    queue: HwQueue
    latency: int
    phase: int
    what: str
    deps: List[int] = field(default_factory=list)
    start: int = -1
    end: int = -1


def transfer_latency(cfg: NpuConfig, byte_count: int, per_256: int) -> int:
    return cfg.lat_issue + math.ceil(byte_count / 256) * per_256


class Scoreboard:
    def __init__(self):
        self.last_writer: Dict[tuple, int] = {}
        self.readers: Dict[tuple, List[int]] = {}

    def read(self, key, uid: int) -> List[int]:
        self.readers.setdefault(key, []).append(uid)
        writer = self.last_writer.get(key)
        return [] if writer is None else [writer]

    def write(self, key, uid: int) -> List[int]:
        deps = list(self.readers.pop(key, []))
        writer = self.last_writer.get(key)
        if writer is not None:
            deps.append(writer)
        self.last_writer[key] = uid
        return deps


class SlotTracker:
    """Rotates stream buffers through their queue slots, one slot per production."""

    def __init__(self, roles: Dict[str, BufferRole], cfg: NpuConfig):
        self.roles = roles
        self.depth = {name: cfg.queue_depth(role) for name, role in roles.items()}
        self.slot = {name: -1 for name in roles}
        self.consumed = {name: True for name in roles}
        self.read_in_stage = set()

    def key(self, name: str, writing: bool, kind) -> tuple:
        role = self.roles[name]
        producer = (role == BufferRole.STREAM_IN and kind == StageKind.COPY_IN) or \
                   (role == BufferRole.STREAM_OUT and kind == StageKind.COMPUTE)
        if role != BufferRole.TEMP:
            if writing and producer and self.consumed[name]:
                self.slot[name] = (self.slot[name] + 1) % self.depth[name]
                self.consumed[name] = False
            consumer = (role == BufferRole.STREAM_IN and kind == StageKind.COMPUTE) or \
                       (role == BufferRole.STREAM_OUT and kind == StageKind.COPY_OUT)
            if not writing and consumer:
                self.read_in_stage.add(name)
        return ('local', name, max(self.slot[name], 0))

    def stage_exit(self):
        for name in self.read_in_stage:
            self.consumed[name] = True
        self.read_in_stage.clear()


class _Event:
    __slots__ = ('time', 'order', 'instr')

    def __init__(self, time: int, instr: Instr):
        self.time = time
        self.order = (instr.queue.value, instr.block, instr.index)
        self.instr = instr

    def __lt__(self, other):
        return (self.time, self.order) < (other.time, other.order)


class QueueSimulator:
    """Schedules per-block instruction lists onto `num_cores` cores."""

    def __init__(self, cfg: NpuConfig, blocks: Sequence[List[Instr]]):
        self.cfg = cfg
        self.blocks = blocks
        self.num_cores = cfg.num_cores
        self.now = 0
        self.event_queue: List[_Event] = []
        self.by_uid: Dict[int, Instr] = {i.uid: i for instrs in blocks for i in instrs}
        self.waiting_on: Dict[int, int] = {uid: len(i.deps) for uid, i in self.by_uid.items()}
        self.successors: Dict[int, List[int]] = {uid: [] for uid in self.by_uid}
        for instr in self.by_uid.values():
            for dep in instr.deps:
                self.successors[dep].append(instr.uid)
        self.block_left = [len(instrs) for instrs in blocks]
        phases = max((i.phase for i in self.by_uid.values()), default=0) + 1
        self.phase_left = [0] * phases
        for instr in self.by_uid.values():
            self.phase_left[instr.phase] += 1
        self.released = 0
        self._release_phases()
        self.queues: Dict[Tuple[int, HwQueue], deque] = {}
        for block, instrs in enumerate(blocks):
            core = block % self.num_cores
            for instr in instrs:
                self.queues.setdefault((core, instr.queue), deque()).append(instr)
        self.busy: Dict[Tuple[int, HwQueue], bool] = {key: False for key in self.queues}

    def _release_phases(self):
        while self.released + 1 < len(self.phase_left) and self.phase_left[self.released] == 0:
            self.released += 1

    def _ready(self, instr: Instr) -> bool:
        if self.waiting_on[instr.uid] or instr.phase > self.released:
            return False
        earlier = instr.block - self.num_cores
        return earlier < 0 or self.block_left[earlier] == 0

    def _dispatch(self):
        for key in sorted(self.queues, key=lambda k: (k[0], k[1].value)):
            fifo = self.queues[key]
            if self.busy[key] or not fifo or not self._ready(fifo[0]):
                continue
            instr = fifo.popleft()
            instr.start = self.now
            self.busy[key] = True
            heapq.heappush(self.event_queue, _Event(self.now + instr.latency, instr))

    def _complete(self, instr: Instr):
        instr.end = self.now
        self.busy[(instr.block % self.num_cores, instr.queue)] = False
        self.block_left[instr.block] -= 1
        self.phase_left[instr.phase] -= 1
        self._release_phases()
        for succ in self.successors[instr.uid]:
            self.waiting_on[succ] -= 1

    def run(self) -> CostReport:
        self._dispatch()
        while self.event_queue:
            event = heapq.heappop(self.event_queue)
            self.now = event.time
            self._complete(event.instr)
            while self.event_queue and self.event_queue[0].time == self.now:
                self._complete(heapq.heappop(self.event_queue).instr)
            self._dispatch()
        if any(self.queues.values()):
            raise InternalError('queue simulation stalled with instructions left')
        return self._report()

    def _report(self) -> CostReport:
        instrs = list(self.by_uid.values())
        busy: Dict[Tuple[int, HwQueue], int] = {}
        for instr in instrs:
            core = instr.block % self.num_cores
            busy[(core, instr.queue)] = busy.get((core, instr.queue), 0) + instr.latency
        per_queue_busy = {}
        instr_count = {}
        for queue in HwQueue:
            per_queue_busy[queue.name] = max((v for (c, q), v in busy.items() if q == queue), default=0)
            instr_count[queue.name] = sum(1 for i in instrs if i.queue == queue)
        per_block = []
        for block_instrs in self.blocks:
            if block_instrs:
                per_block.append(max(i.end for i in block_instrs) - min(i.start for i in block_instrs))
            else:
                per_block.append(0)
        makespan = max((i.end for i in instrs), default=0)
        logger.debug('simulated %d instructions on %d cores: makespan %d', len(instrs), self.num_cores, makespan)
        return CostReport(makespan, per_queue_busy, per_block, instr_count, sum(i.latency for i in instrs))


def simulate(cfg: NpuConfig, blocks: Sequence[List[Instr]]) -> CostReport:
    return QueueSimulator(cfg, blocks).run()
