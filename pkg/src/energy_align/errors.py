"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with inputs violating its preconditions."""


class ConfigError(ValueError):
    """A run configuration is inconsistent or incomplete."""


class ParseError(ValueError):
    """An input file is malformed."""
