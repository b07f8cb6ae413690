"""Transmit/receive signal-chain simulator for magneto-mechanical resonators."""

from mmrsim.errors import ConfigurationError, SingularityError

__version__ = "0.1.0"

__all__ = ["ConfigurationError", "SingularityError", "__version__"]
