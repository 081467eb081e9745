"""Exception types shared across the package.

ValidationError subclasses indicate bad inputs or configuration (CLI exit
code 1); NumericError subclasses indicate runtime numeric failures such as
diverged training (CLI exit code 2).
"""


class ValidationError(Exception):
    """Invalid input, configuration, or file content."""


class ManifestError(ValidationError):
    """Malformed manifest line or unresolvable referenced file."""


class PairingError(ValidationError):
    """Live/spoof pairing could not be constructed."""


class ConfigError(ValidationError):
    """Unknown, missing, or inconsistent configuration."""


class LabelError(ValidationError):
    """Class label outside the configured range."""


class NumericError(Exception):
    """Non-finite values encountered during computation."""


class TrainingDivergedError(NumericError):
    """Loss became non-finite during training."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")
