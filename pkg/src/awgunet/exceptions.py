"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError (and subclasses)
exit 2, NumericalAbort exits 3, anything else exits 1.
"""


class ShapeError(ValueError):
    """Tensor dimensions violate an operation's contract."""


class ConfigError(ValueError):
    """Invalid configuration, dataset layout, or command usage."""


class CheckpointError(ConfigError):
    """Checkpoint file is malformed or inconsistent with its config."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite value and cannot continue."""
