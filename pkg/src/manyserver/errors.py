"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the domain of a function (negative time, age beyond support)."""


class ConfigError(ValueError):
    """Invalid model, input or run configuration."""


class PreconditionError(RuntimeError):
    """A numerical precondition of an operation does not hold for the given solution."""


class InvariantError(AssertionError):
    """A sample path or solution violates one of its structural identities."""
