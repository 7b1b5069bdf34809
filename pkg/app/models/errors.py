"""
Exception hierarchy for FormulaHunter
Every failure raised by the services derives from FormulaHunterError
"""

from typing import Iterable, List, Optional


class FormulaHunterError(Exception):
    """Base class for all pipeline errors"""


class ConfigError(FormulaHunterError):
    """Run configuration failed validation"""

    def __init__(self, messages: Iterable[str]):
        self.messages: List[str] = list(messages)
        super().__init__("; ".join(self.messages) or "invalid configuration")


class SchemaError(FormulaHunterError):
    """Elemental table is missing an element, phase or property"""


class TableParseError(FormulaHunterError):
    """A table row could not be parsed into finite numbers"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class PropertyLookupError(FormulaHunterError, KeyError):
    """Unknown elemental property name"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown property"


class DescriptorError(FormulaHunterError):
    """Descriptor scheme or label could not be built or parsed"""


class DatasetError(FormulaHunterError):
    """Dataset could not be assembled, read or split"""


class ModelTermError(DatasetError):
    """A planted-model term references a label the scheme does not provide"""

    def __init__(self, label: str, term: str):
        self.label = label
        self.term = term
        super().__init__(f"planted term '{term}' references unknown label '{label}'")


class KernelError(FormulaHunterError):
    """Kernel evaluation on incompatible inputs"""


class SolverError(FormulaHunterError):
    """Linear solve failed (non positive definite system)"""


class SupportTooLargeError(FormulaHunterError):
    """Exhaustive l0 search requested on a support above the guard"""


class MissingArtifactError(FormulaHunterError):
    """One or more files a stage depends on are absent"""

    def __init__(self, paths: Iterable[str]):
        self.paths: List[str] = [str(p) for p in paths]
        super().__init__("missing artifacts: " + ", ".join(self.paths))


class StageError(FormulaHunterError):
    """Failure inside a named pipeline stage"""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
