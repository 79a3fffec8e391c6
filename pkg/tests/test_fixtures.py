import json
import shutil
from collections import Counter

import pytest

from adsl_diagnostics import ConfigError
from adsl_fixtures import FIXTURE_ROOT, find_fixture, generate_inputs, load_manifest
from adsl_options import Category, Dtype
from conftest import FIXTURES, fixture


def write_manifest(tmp_path, fixtures):
    (tmp_path / 'relu').mkdir(exist_ok=True)
    shutil.copy(fixture('relu').program_path, str(tmp_path / 'relu' / 'program.adsl'))
    path = tmp_path / 'manifest.json'
    path.write_text(json.dumps({'version': 1, 'fixtures': fixtures}))
    return str(path)


RELU_ENTRY = {'name': 'relu', 'category': 'Activation', 'oracle': 'relu', 'shapes': [{'x': [64]}]}


class TestCorpus:
    def test_every_category_has_two_fixtures(self):
        counts = Counter(entry.category for entry in FIXTURES)
        assert all(counts[category] >= 2 for category in Category)

    def test_programs_live_under_the_fixture_root(self):
        assert all(entry.program_path.startswith(FIXTURE_ROOT) for entry in FIXTURES)

    @pytest.mark.parametrize('entry', FIXTURES, ids=lambda e: e.name)
    def test_shapes_cover_every_input_and_output(self, entry):
        p = entry.load_program()
        names = {param.name for param in p.host.inputs}
        for shape in entry.shapes:
            assert set(shape) == names
        assert set(entry.outputs) <= {param.name for param in p.host.outputs}

    def test_find_fixture(self):
        entry = fixture('softmax')
        assert find_fixture(FIXTURES, entry.program_path) is entry
        assert find_fixture(FIXTURES, '/nowhere/program.adsl') is None

    def test_manifest_tolerances(self):
        assert fixture('leaky_relu_f16').tolerance(Dtype.F16) == (0.01, 0.001)
        assert fixture('relu').tolerance(Dtype.I32) == (0.0, 0.0)


class TestInputs:
    def test_seeded(self):
        p = fixture('hinge_loss').load_program()
        entry = fixture('hinge_loss')
        first = generate_inputs(p, entry.shapes[0], 3, entry.inputs)
        second = generate_inputs(p, entry.shapes[0], 3, entry.inputs)
        assert all(first[name].bitwise_equal(second[name]) for name in first)
        assert set(first['target'].data.tolist()) <= {-1.0, 1.0}

    def test_u8_defaults_to_mask(self):
        p = fixture('masked_cumsum').load_program()
        mask = generate_inputs(p, fixture('masked_cumsum').shapes[0], 0)['mask']
        assert mask.dtype == Dtype.U8
        assert set(mask.data.tolist()) <= {0, 1}


class TestManifestErrors:
    def test_minimal_manifest(self, tmp_path):
        entries = load_manifest(write_manifest(tmp_path, [RELU_ENTRY]))
        assert entries[0].shapes == ({'x': (64,)},)
        assert entries[0].tolerance(Dtype.F32) == (1e-5, 1e-6)

    @pytest.mark.parametrize('change, fragment', [
        ({'category': 'Vision'}, 'category'),
        ({'oracle': 'gelu'}, 'no reference oracle'),
        ({'shapes': []}, 'at least one shape'),
        ({'shapes': [{'x': [0]}]}, 'positive integers'),
        ({'program': 'missing.adsl'}, 'does not exist'),
        ({'inputs': {'x': {'dist': 'cauchy'}}}, 'unknown distribution'),
    ])
    def test_rejected(self, tmp_path, change, fragment):
        with pytest.raises(ConfigError, match=fragment):
            load_manifest(write_manifest(tmp_path, [dict(RELU_ENTRY, **change)]))

    def test_duplicate_names(self, tmp_path):
        with pytest.raises(ConfigError, match='unique'):
            load_manifest(write_manifest(tmp_path, [RELU_ENTRY, RELU_ENTRY]))
