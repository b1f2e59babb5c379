"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class EndnError(Exception):
    exit_code = 1


class ConfigError(EndnError, ValueError):
    exit_code = 2


class ShapeError(ConfigError):
    """Operand dimensions disagree with an operation's contract."""


class ContractError(EndnError, RuntimeError):
    exit_code = 2


class EndnIOError(EndnError, OSError):
    exit_code = 3


class FormatError(EndnIOError):
    """File exists but is not a supported image (or bit depth)."""


class CorruptCheckpointError(EndnIOError):
    def __init__(self, field: str, detail: str = ""):
        self.field = field
        msg = f"corrupt checkpoint: bad {field}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class NumericError(EndnError, ArithmeticError):
    exit_code = 4
