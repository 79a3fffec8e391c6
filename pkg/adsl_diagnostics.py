"""
Diagnostics shared by every stage of the toolchain: the source span type, the
Diagnostic record, the frozen rule catalog and the exception hierarchy.

A Diagnostic is the feedback currency between stages. Parser, semantic checks,
host evaluation and the target structure checker all report through it, and the
lowering gate hands the same records to a repair hook.
"""

import json
from dataclasses import dataclass, field
from typing import List, Optional

from adsl_options import Severity

RULES = {
    # parse
    'PARSE-LEX': 'character sequence is not a token',
    'PARSE-SYNTAX': 'token sequence does not match the grammar',
    'PARSE-DUP': 'name declared twice in one declaration list',
    'PARSE-RATIONALE': 'tiling declaration without a non-empty rationale',
    # symbols
    'SEM-UNDEF': 'identifier used without a declaration',
    'SEM-DUP': 'identifier bound twice in one scope',
    'SEM-KIND': 'identifier used as a different kind than declared',
    'SEM-ARITY': 'primitive called with the wrong number of operands',
    'SEM-LAUNCH': 'launch statement does not match the kernel signature',
    'SEM-SHAPE': 'input shape missing, unbound or inconsistent with its declaration',
    # staging
    'STG-G2L-PLACE': 'copy_g2l outside a copyin block',
    'STG-L2G-PLACE': 'copy_l2g outside a copyout block',
    'STG-COMPUTE-PLACE': 'compute primitive outside a compute block',
    'STG-GM-IN-COMPUTE': 'global tensor operand inside a compute block',
    'STG-USE-BEFORE-DEF': 'stream buffer consumed before it is produced',
    'STG-ROLE': 'stream buffer used against its declared role',
    'STG-STREAM-UNCONSUMED': 'stream buffer produced but never consumed in the same statement list',
    'STG-SYNC-PLACE': 'sync_all inside a stage block',
    'STG-BLOCK-NEST': 'stage block nested inside another stage block',
    # buffers
    'BUF-UB-OVERFLOW': 'declared UB buffers exceed the unified buffer',
    'BUF-L1-OVERFLOW': 'declared L1 buffers exceed the L1 budget',
    'BUF-L1-ROLE': 'L1 buffers must have role temp',
    'BUF-SLICE-OOB': 'slice outside the declared buffer capacity',
    'BUF-GM-OOB': 'slice outside the global tensor',
    'BUF-COUNT-MISMATCH': 'operand element counts disagree',
    'BUF-DTYPE-MISMATCH': 'operand dtypes disagree',
    # tiling
    'TIL-NONPOS': 'tile, block count or dimension is not positive',
    'TIL-NONINT': 'host expression does not evaluate to an integer',
    'TIL-CYCLE': 'tiling declarations depend on each other cyclically',
    'TIL-GAP': 'output elements not written by any block',
    'TIL-OVERLAP': 'output elements written by more than one block',
    'TIL-BLOCKS': 'more blocks than cores; extra blocks serialize',
    'TIL-SYNC-BLOCKS': 'sync_all requires every block resident on its own core',
    # target structure
    'TGT-STAGE-MIX': 'instruction not permitted in this stage function',
    'TGT-DEQ-FIRST': 'queue tensor used before the function dequeued it',
    'TGT-QUEUE-IMBALANCE': 'EnQue/DeQue not balanced per loop iteration',
    'TGT-GM-IN-COMPUTE': 'global memory instruction inside a compute function',
    'TGT-BARRIER-PLACE': 'barrier outside the process body',
    'TGT-QUEUE-UNDECLARED': 'queue referenced but not initialized',
    'TGT-QUEUE-ROLE': 'queue used against its position',
    'TGT-UNREACHABLE': 'stage function not called exactly once by the process body',
}


@dataclass(frozen=True)
class Span:
    line: int
    col: int
    length: int = 1
    offset: int = 0

    def to_json(self) -> dict:
        return {'line': self.line, 'col': self.col, 'len': self.length}


@dataclass(frozen=True)
class Diagnostic:
    rule_id: str
    severity: Severity
    span: Optional[Span]
    message: str
    fix_hint: Optional[str] = None
    where: Optional[str] = None  # target function or pass name when there is no source span

    def __post_init__(self):
        if self.rule_id not in RULES:
            raise ValueError('rule {} is not in the catalog'.format(self.rule_id))

    @property
    def is_error(self) -> bool:
        return self.severity == Severity.ERROR

    def to_json(self) -> dict:
        record = {
            'rule_id': self.rule_id,
            'severity': self.severity.value,
            'span': self.span.to_json() if self.span else None,
            'message': self.message,
        }
        if self.fix_hint:
            record['fix_hint'] = self.fix_hint
        if self.where:
            record['where'] = self.where
        return record


def error(rule_id: str, span: Optional[Span], message: str, fix_hint: str = None, where: str = None) -> Diagnostic:
    return Diagnostic(rule_id, Severity.ERROR, span, message, fix_hint, where)


def warning(rule_id: str, span: Optional[Span], message: str, fix_hint: str = None, where: str = None) -> Diagnostic:
    return Diagnostic(rule_id, Severity.WARNING, span, message, fix_hint, where)


def has_errors(diagnostics: List[Diagnostic]) -> bool:
    return any(d.is_error for d in diagnostics)


def dedupe(diagnostics: List[Diagnostic]) -> List[Diagnostic]:
    seen = set()
    unique = []
    for d in diagnostics:
        if d not in seen:
            seen.add(d)
            unique.append(d)
    return unique


def to_json_lines(diagnostics: List[Diagnostic]) -> str:
    return ''.join(json.dumps(d.to_json(), sort_keys=True) + '\n' for d in diagnostics)


class AdslError(RuntimeError):
    pass


@dataclass(eq=False)
class DiagnosticError(AdslError):
    diagnostics: List[Diagnostic] = field(default_factory=list)

    def __str__(self):
        return '; '.join('{} {}'.format(d.rule_id, d.message) for d in self.diagnostics)

    @property
    def rule_ids(self) -> List[str]:
        return [d.rule_id for d in self.diagnostics]


class ParseError(DiagnosticError):
    pass


class ConfigError(AdslError):
    pass


class TensorFormatError(AdslError):
    pass


class InternalError(AdslError):
    pass


class ComparisonError(AdslError):
    pass
