class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class ContractError(ValueError):
    """An input violates an operation's precondition."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""
