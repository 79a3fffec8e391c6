"""
This module loads the operator fixture corpus: fixtures/manifest.json names
every fixture, its category, the shapes it runs at, the oracle it is checked
against and how to draw random inputs for it.
"""

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from adsl_core import Program, parse_file
from adsl_diagnostics import ConfigError
from adsl_options import Category, Dtype
from adsl_reference import ORACLES
from adsl_vm import TOLERANCES, TensorValue

FIXTURE_ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures')
MANIFEST_NAME = 'manifest.json'
PROGRAM_NAME = 'program.adsl'
DISTRIBUTIONS = ('normal', 'uniform', 'sign', 'bernoulli')


@dataclass(frozen=True)
class FixtureManifest:
    name: str
    category: Category
    program_path: str
    shapes: Tuple[Dict[str, Tuple[int, ...]], ...]
    oracle: str
    oracle_params: Dict[str, float] = field(default_factory=dict)
    tolerances: Dict[Dtype, Tuple[float, float]] = field(default_factory=dict)
    inputs: Dict[str, Dict] = field(default_factory=dict)
    outputs: Tuple[str, ...] = ()
    forwarding: str = 'queue'

    @property
    def directory(self) -> str:
        return os.path.dirname(self.program_path)

    def tolerance(self, dtype: Dtype) -> Tuple[float, float]:
        return self.tolerances.get(dtype, TOLERANCES[dtype])

    def load_program(self) -> Program:
        return parse_file(self.program_path)


def _shape_map(raw: Mapping, where: str) -> Dict[str, Tuple[int, ...]]:
    shape = {}
    for name, dims in raw.items():
        if not isinstance(dims, list) or not all(isinstance(d, int) and d > 0 for d in dims):
            raise ConfigError('{}: shape of {} must be a list of positive integers'.format(where, name))
        shape[name] = tuple(dims)
    return shape


def _tolerances(raw: Mapping, where: str) -> Dict[Dtype, Tuple[float, float]]:
    tolerances = {}
    for dtype_name, pair in raw.items():
        try:
            dtype = Dtype(dtype_name)
        except ValueError:
            raise ConfigError('{}: unknown dtype {}'.format(where, dtype_name))
        rel_tol, abs_tol = pair
        tolerances[dtype] = (float(rel_tol), float(abs_tol))
    return tolerances


def load_manifest(path: Optional[str] = None) -> List[FixtureManifest]:
    """Parse a manifest; every entry must name an existing program and a registered oracle."""
    path = path or os.path.join(FIXTURE_ROOT, MANIFEST_NAME)
    root = os.path.dirname(os.path.abspath(path))
    with open(path, mode='r', encoding='utf-8') as manifest_file:
        try:
            raw = json.load(manifest_file)
        except json.JSONDecodeError as failure:
            raise ConfigError('{}: {}'.format(path, failure))
    shared = _tolerances(raw.get('tolerances', {}), path)
    entries = []
    seen = set()
    for item in raw.get('fixtures', []):
        name = item.get('name')
        where = '{}: fixture {}'.format(path, name)
        if not name or name in seen:
            raise ConfigError('{}: fixture names must be present and unique'.format(where))
        seen.add(name)
        try:
            category = Category(item['category'])
        except (KeyError, ValueError):
            raise ConfigError('{}: category must be one of {}'.format(where, ', '.join(c.value for c in Category)))
        program_path = os.path.join(root, item.get('program', os.path.join(name, PROGRAM_NAME)))
        if not os.path.isfile(program_path):
            raise ConfigError('{}: program {} does not exist'.format(where, program_path))
        oracle = item.get('oracle', name)
        if oracle not in ORACLES:
            raise ConfigError('{}: no reference oracle named {}'.format(where, oracle))
        shapes = tuple(_shape_map(s, where) for s in item.get('shapes', []))
        if not shapes:
            raise ConfigError('{}: at least one shape is required'.format(where))
        tolerances = dict(shared)
        tolerances.update(_tolerances(item.get('tolerances', {}), where))
        inputs = item.get('inputs', {})
        for input_name, spec in inputs.items():
            if spec.get('dist') not in DISTRIBUTIONS:
                raise ConfigError('{}: input {} has unknown distribution {!r}'.format(where, input_name, spec.get('dist')))
        entries.append(FixtureManifest(
            name=name,
            category=category,
            program_path=program_path,
            shapes=shapes,
            oracle=oracle,
            oracle_params=dict(item.get('params', {})),
            tolerances=tolerances,
            inputs=inputs,
            outputs=tuple(item.get('outputs', [])),
            forwarding=item.get('forwarding', 'queue'),
        ))
    return entries


def find_fixture(entries: Sequence[FixtureManifest], program_path: str) -> Optional[FixtureManifest]:
    target = os.path.realpath(program_path)
    for entry in entries:
        if os.path.realpath(entry.program_path) == target:
            return entry
    return None


def _draw(rng: np.random.Generator, spec: Mapping, shape: Tuple[int, ...]) -> np.ndarray:
    dist = spec.get('dist', 'normal')
    if dist == 'normal':
        return rng.normal(spec.get('mean', 0.0), spec.get('std', 1.0), size=shape)
    if dist == 'uniform':
        return rng.uniform(spec.get('low', -1.0), spec.get('high', 1.0), size=shape)
    if dist == 'sign':
        return rng.choice(np.array([-1.0, 1.0]), size=shape)
    return rng.integers(0, 2, size=shape)


def generate_inputs(p: Program, shape: Mapping[str, Sequence[int]], seed: int,
                    specs: Optional[Mapping[str, Mapping]] = None) -> Dict[str, TensorValue]:
    """Seeded inputs for every host input of `p`; u8 inputs default to a 0/1 mask."""
    rng = np.random.default_rng(seed)
    inputs = {}
    for param in p.host.inputs:
        dims = tuple(shape[param.name])
        spec = (specs or {}).get(param.name)
        if spec is None:
            spec = {'dist': 'bernoulli'} if param.dtype == Dtype.U8 else {'dist': 'normal'}
        inputs[param.name] = TensorValue.from_array(_draw(rng, spec, dims), param.dtype)
    return inputs


def fixture_inputs(entry: FixtureManifest, p: Program, shape: Mapping[str, Sequence[int]], seed: int
                   ) -> Dict[str, TensorValue]:
    return generate_inputs(p, shape, seed, entry.inputs)
