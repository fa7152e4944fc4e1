"""Exception types shared across the package."""


class NetAdaptError(Exception):
    """Base class for all package errors."""


class ConfigError(NetAdaptError):
    """Invalid configuration: bad shapes, unknown registry entries, mismatched dims."""


class InputError(NetAdaptError):
    """Invalid runtime input: empty sequences, non-finite values, shape mismatches."""


class ContextOverflowError(NetAdaptError):
    """Token sequence longer than the backbone's maximum context."""


class EnvError(NetAdaptError):
    """Invalid action or state transition inside a simulator."""


class InvariantViolation(NetAdaptError):
    """A hard contract was broken (e.g. frozen weights mutated). Maps to exit code 3."""


class UsageError(NetAdaptError):
    """Bad CLI usage: wrong task/dataset pairing, unknown setting id. Maps to exit code 2."""
