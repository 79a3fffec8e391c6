import pytest

from adsl_config import NpuConfig, ToolConfig, depth_sweep, load_config, parse_config_text
from adsl_diagnostics import ConfigError
from adsl_options import BufferRole


class TestNpuConfig:
    def test_defaults(self):
        cfg = NpuConfig().validate()
        assert (cfg.num_cores, cfg.ub_bytes, cfg.l1_bytes, cfg.alignment_bytes) == (8, 196608, 1048576, 32)
        assert cfg.queue_depth(BufferRole.STREAM_IN) == 2
        assert cfg.queue_depth(BufferRole.TEMP) == 1

    def test_naive_baseline(self):
        naive = NpuConfig(lat_issue=3).naive()
        assert (naive.num_cores, naive.queue_depth_in, naive.queue_depth_out, naive.lat_issue) == (1, 1, 1, 3)

    def test_depth_sweep(self):
        assert [c.queue_depth_in for c in depth_sweep(NpuConfig())] == [1, 2, 3, 4]

    @pytest.mark.parametrize('field, value', [('num_cores', 0), ('ub_bytes', -1), ('alignment_bytes', 64),
                                              ('queue_depth_in', 5), ('queue_depth_out', 0), ('lat_scalar', -1)])
    def test_invalid(self, field, value):
        with pytest.raises(ConfigError):
            NpuConfig(**{field: value}).validate()


class TestConfigFile:
    def test_no_path_means_defaults(self):
        assert load_config(None) == ToolConfig()

    def test_parse(self):
        tool = parse_config_text('# smaller part\nnum_cores = 4\nqueue_depth_in=1  # no double buffering\n\n'
                                 'max_repairs = 0\nemit_extension = cc\n')
        assert tool.npu.num_cores == 4
        assert tool.npu.queue_depth_in == 1
        assert tool.npu.queue_depth_out == 2
        assert tool.max_repairs == 0
        assert tool.emit_extension == '.cc'

    def test_load_file(self, tmp_path):
        path = tmp_path / 'npu.cfg'
        path.write_text('ub_bytes = 65536\n')
        assert load_config(str(path)).npu.ub_bytes == 65536

    @pytest.mark.parametrize('text, fragment', [
        ('num_cores 4', 'expected key = value'),
        ('num_cores = four', 'expects an integer'),
        ('num_cores = 4\nnum_cores = 2', 'duplicated key'),
        ('clock_mhz = 1000', 'unknown key'),
        ('max_repairs = -1', 'must not be negative'),
        ('queue_depth_in = 9', 'queue_depth_in'),
    ])
    def test_errors(self, text, fragment):
        with pytest.raises(ConfigError) as failure:
            parse_config_text(text, source='npu.cfg')
        assert fragment in str(failure.value)

    def test_error_names_the_line(self):
        with pytest.raises(ConfigError) as failure:
            parse_config_text('num_cores = 4\n\nbogus', source='npu.cfg')
        assert str(failure.value).startswith('npu.cfg:3:')
