"""Execution-free text checks on modified plotting scripts.

Two hard constraints from the modification prompt are enforced before any
code runs: the save path must stay untouched, and the seed function must
stay byte-identical.  Syntactic parseability is checked later by the
render sandbox in parse-only mode, not here.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .errors import ChartCFError

# Bit-exact: exactly six ASCII digits, lowercase extension.
SAVE_PATH_RE = re.compile(r"rendered_images/[0-9]{6}\.png")

_SEED_DEF_RE = re.compile(r"^def\s+set_random_seed\s*\(")
_SEED_CALL_RE = re.compile(r"(?<![\w.])set_random_seed\s*\(\s*([^)]*?)\s*\)")


class EmptyCodeError(ChartCFError):
    """check_* called on an empty script."""


class Violation(enum.Enum):
    SAVE_PATH_CHANGED = "save_path_changed"
    SAVE_PATH_MALFORMED = "save_path_malformed"
    SEED_FUNCTION_MODIFIED = "seed_function_modified"
    EMPTY_CODE = "empty_code"


_ORDER = {v: i for i, v in enumerate(Violation)}


@dataclass(frozen=True)
class ValidationVerdict:
    ok: bool
    violations: tuple[Violation, ...]

    @staticmethod
    def from_violations(violations: list[Violation]) -> "ValidationVerdict":
        ordered = tuple(sorted(set(violations), key=_ORDER.__getitem__))
        return ValidationVerdict(ok=not ordered, violations=ordered)


def declared_save_paths(code: str) -> list[str]:
    """Well-formed save paths in first-occurrence order, deduplicated."""
    seen: list[str] = []
    for match in SAVE_PATH_RE.finditer(code):
        if match.group(0) not in seen:
            seen.append(match.group(0))
    return seen


def check_save_path(original_code: str, modified_code: str) -> list[Violation]:
    """Save-path sets must match exactly and be non-empty."""
    if not original_code.strip() or not modified_code.strip():
        raise EmptyCodeError("cannot compare save paths of empty code")
    original = set(declared_save_paths(original_code))
    modified = set(declared_save_paths(modified_code))
    if not modified:
        return [Violation.SAVE_PATH_MALFORMED]
    if modified != original:
        return [Violation.SAVE_PATH_CHANGED]
    return []


def _seed_function_block(code: str) -> str | None:
    """Text of the set_random_seed definition, def line through the line
    before the next top-level statement; None when the script has none."""
    lines = code.splitlines()
    start = next((i for i, ln in enumerate(lines) if _SEED_DEF_RE.match(ln)), None)
    if start is None:
        return None
    end = len(lines)
    for i in range(start + 1, len(lines)):
        line = lines[i]
        if line and not line[0].isspace() and not line.startswith("#"):
            end = i
            break
    return "\n".join(lines[start:end]).rstrip()


def _seed_call_literals(code: str) -> tuple[str, ...]:
    calls = []
    for match in _SEED_CALL_RE.finditer(code):
        line_start = code.rfind("\n", 0, match.start()) + 1
        if code[line_start:match.start()].lstrip().startswith("def "):
            continue
        calls.append(match.group(1))
    return tuple(calls)


def check_seed_preserved(original_code: str, modified_code: str) -> list[Violation]:
    """The seed function block and every call-site seed value must be
    byte-identical; vacuously passes when the original has neither."""
    if not original_code.strip() or not modified_code.strip():
        raise EmptyCodeError("cannot compare seed functions of empty code")
    if _seed_function_block(original_code) != _seed_function_block(modified_code):
        return [Violation.SEED_FUNCTION_MODIFIED]
    if _seed_call_literals(original_code) != _seed_call_literals(modified_code):
        return [Violation.SEED_FUNCTION_MODIFIED]
    return []


def validate(original_code: str, modified_code: str) -> ValidationVerdict:
    """Aggregate verdict over both static checks; never raises."""
    if not original_code.strip() or not modified_code.strip():
        return ValidationVerdict.from_violations([Violation.EMPTY_CODE])
    violations = check_save_path(original_code, modified_code)
    violations += check_seed_preserved(original_code, modified_code)
    return ValidationVerdict.from_violations(violations)
