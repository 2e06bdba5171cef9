"""Exception types shared across the toolkit."""


class MTDenseError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MTDenseError):
    """Invalid configuration (bad value, missing path, broken invariant)."""


class ContractError(MTDenseError):
    """An operation was called outside its contract (e.g. bad input shape)."""


class DataError(MTDenseError):
    """Corrupt or out-of-contract data encountered while loading/consuming."""


class WeightLoadError(MTDenseError):
    """A weight archive does not match the network it is being loaded into."""
