class DimensionError(ValueError):
    """Operand extents do not line up."""


class DegenerateNormalizationError(ValueError):
    """A channel that must be normalized sums to zero or less."""


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class DataError(RuntimeError):
    """Missing, unreadable, or malformed dataset files."""
