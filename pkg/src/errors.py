# src/errors.py
"""
Error hierarchy for the pipeline model, control plane and compiler.

Data-path failures are never raised: the engine reports them as verdicts.
Everything here is for programming errors at API boundaries (bad widths,
bad indices), control-plane failures and compile failures.

CLI exit codes (see src/cli.py):
  2  DslSyntaxError
  3  CheckFailed(phase="static")
  4  CheckFailed(phase="resource")
  5  PlacementError
  6  ConfigError / ScenarioError
  1  anything else
"""

from __future__ import annotations

from typing import List, Optional


class PipelineError(Exception):
    """Root of every error raised by this package."""

    exit_code = 1


# -----------------------
# PHV
# -----------------------
class PhvError(PipelineError):
    pass


class IndexOutOfRange(PhvError):
    pass


class MetadataNotValueContainer(PhvError):
    pass


class ValueTooWide(PhvError):
    pass


# -----------------------
# CODECS / WIRE FORMAT
# -----------------------
class FormatError(PipelineError):
    pass


class ReservedBitsSet(FormatError):
    pass


class InvalidKind(FormatError):
    pass


class WidthMismatch(FormatError):
    pass


class InvalidOpcode(FormatError):
    pass


class LengthMismatch(FormatError):
    pass


class UnknownResource(FormatError):
    pass


# -----------------------
# CONTROL PLANE
# -----------------------
class ControlError(PipelineError):
    pass


class WriteToReadOnly(ControlError):
    pass


class ReconfigTimeout(ControlError):
    """Counter never reached its target; the bitmap bit is left set."""

    def __init__(self, slot: int, expected: int, observed: int):
        super().__init__(
            f"slot {slot}: reconfiguration counter at {observed}, expected {expected}"
        )
        self.slot = slot
        self.expected = expected
        self.observed = observed


class SessionBusy(ControlError):
    """Another slot's reconfiguration session is still open."""


class RegistryFull(ControlError):
    pass


class OwnershipError(ControlError):
    """A session packet targets a resource its slot does not own."""


class AllocationError(ControlError):
    pass


class CamExhausted(AllocationError):
    pass


class MemoryExhausted(AllocationError):
    pass


# -----------------------
# COMPILER
# -----------------------
class CompileError(PipelineError):
    pass


class DslSyntaxError(CompileError):
    exit_code = 2

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class CheckFailed(CompileError):
    """Static or resource check found violations; carries all of them."""

    def __init__(self, phase: str, violations: List["object"]):
        lines = "; ".join(str(v) for v in violations)
        super().__init__(f"{phase} check failed: {lines}")
        self.phase = phase
        self.violations = list(violations)

    @property
    def exit_code(self) -> int:  # type: ignore[override]
        return 3 if self.phase == "static" else 4


class PlacementError(CompileError):
    exit_code = 5


class TooManyDependencyLevels(PlacementError):
    pass


class ContainerExhausted(PlacementError):
    pass


class ActionConflict(PlacementError):
    pass


class SystemConfigError(PipelineError):
    exit_code = 6


class RouteTableOverflow(SystemConfigError):
    pass


class ConfigError(PipelineError):
    exit_code = 6


class ScenarioError(ConfigError):
    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
