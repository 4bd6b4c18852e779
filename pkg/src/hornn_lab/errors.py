"""Exception hierarchy shared by all modules.

ConfigError covers anything wrong with a requested configuration
(bad dimensions, invalid kinds, lag exceeding the unfold window);
the CLI maps it to exit code 2.  NumericError covers runtime numeric
failures (non-finite gradients); the CLI maps it to exit code 1.
"""


class HornnLabError(Exception):
    """Base class for all errors raised by hornn_lab."""


class ConfigError(HornnLabError):
    """Invalid configuration: dimensions, kinds, lags, file schemas."""


class ShapeError(ConfigError):
    """Array shape mismatch; message names both offending shapes."""


class NumericError(HornnLabError):
    """Non-finite values where finite ones are required."""
