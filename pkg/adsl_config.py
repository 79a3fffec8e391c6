import dataclasses
import logging
import re
from dataclasses import dataclass
from typing import Optional, Tuple

from adsl_diagnostics import ConfigError
from adsl_options import BufferRole

logger = logging.getLogger(__name__)

ALIGNMENT_BYTES = 32
MIN_QUEUE_DEPTH = 1
MAX_QUEUE_DEPTH = 4
DEFAULT_MAX_REPAIRS = 3
DEFAULT_EMIT_EXTENSION = '.txt'


@dataclass(frozen=True)
class NpuConfig:
    """
    The virtual NPU: core count, on-chip budgets, queue depths and latency
    coefficients. Cycles are a relative cost model only.
    """

    num_cores: int = 8
    ub_bytes: int = 196608
    l1_bytes: int = 1048576
    alignment_bytes: int = ALIGNMENT_BYTES
    queue_depth_in: int = 2
    queue_depth_out: int = 2
    lat_issue: int = 10
    lat_mte_per_256B: int = 20
    lat_vec_per_256B: int = 4
    lat_scalar: int = 1

    def validate(self) -> 'NpuConfig':
        for name in ('num_cores', 'ub_bytes', 'l1_bytes'):
            if getattr(self, name) <= 0:
                raise ConfigError('{} must be positive, got {}'.format(name, getattr(self, name)))
        if self.alignment_bytes != ALIGNMENT_BYTES:
            raise ConfigError('alignment_bytes is fixed at {}'.format(ALIGNMENT_BYTES))
        for name in ('queue_depth_in', 'queue_depth_out'):
            depth = getattr(self, name)
            if not MIN_QUEUE_DEPTH <= depth <= MAX_QUEUE_DEPTH:
                raise ConfigError('{} must be in [{}, {}], got {}'.format(name, MIN_QUEUE_DEPTH, MAX_QUEUE_DEPTH, depth))
        for name in ('lat_issue', 'lat_mte_per_256B', 'lat_vec_per_256B', 'lat_scalar'):
            if getattr(self, name) < 0:
                raise ConfigError('{} must not be negative'.format(name))
        return self

    def queue_depth(self, role: BufferRole) -> int:
        if role == BufferRole.STREAM_IN:
            return self.queue_depth_in
        if role == BufferRole.STREAM_OUT:
            return self.queue_depth_out
        return 1

    def naive(self) -> 'NpuConfig':
        """Single core, no double buffering: the bench baseline."""
        return dataclasses.replace(self, num_cores=1, queue_depth_in=1, queue_depth_out=1)

    def with_depth(self, depth: int) -> 'NpuConfig':
        return dataclasses.replace(self, queue_depth_in=depth, queue_depth_out=depth)


@dataclass(frozen=True)
class ToolConfig:
    npu: NpuConfig = NpuConfig()
    max_repairs: int = DEFAULT_MAX_REPAIRS
    emit_extension: str = DEFAULT_EMIT_EXTENSION


_NPU_KEYS = {f.name for f in dataclasses.fields(NpuConfig)}
_LINE = re.compile(r'^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$')


def parse_config_text(text: str, source: str = '<config>') -> ToolConfig:
    npu_values = {}
    tool_values = {}
    seen = set()
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split('#', 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError('{}:{}: expected key = value, got {!r}'.format(source, line_no, raw_line))
        key, value = m.group(1), m.group(2)
        if key in seen:
            raise ConfigError('{}:{}: duplicated key {}'.format(source, line_no, key))
        seen.add(key)
        if key == 'emit_extension':
            tool_values[key] = value if value.startswith('.') else '.' + value
            continue
        try:
            number = int(value)
        except ValueError:
            raise ConfigError('{}:{}: {} expects an integer, got {!r}'.format(source, line_no, key, value))
        if key in _NPU_KEYS:
            npu_values[key] = number
        elif key == 'max_repairs':
            if number < 0:
                raise ConfigError('{}:{}: max_repairs must not be negative'.format(source, line_no))
            tool_values[key] = number
        else:
            raise ConfigError('{}:{}: unknown key {}'.format(source, line_no, key))
    npu = NpuConfig(**npu_values).validate()
    logger.debug('config %s: %s', source, npu)
    return ToolConfig(npu=npu, **tool_values)


def load_config(path: Optional[str]) -> ToolConfig:
    """Read a key=value config file; no path means the built-in defaults."""
    if path is None:
        return ToolConfig()
    with open(path, mode='r', encoding='utf-8') as config_file:
        return parse_config_text(config_file.read(), source=path)


def depth_sweep(cfg: NpuConfig) -> Tuple[NpuConfig, ...]:
    return tuple(cfg.with_depth(d) for d in range(MIN_QUEUE_DEPTH, MAX_QUEUE_DEPTH + 1))
