"""Exception types shared across the simulator."""


class ConfigurationError(ValueError):
    """Invalid parameters, schedule, or solver settings."""


class SingularityError(ValueError):
    """Field evaluation point lies on a conductor."""
