class CrossingSimError(Exception):
    """Base class for errors raised by crossing_sim."""


class ConfigurationError(CrossingSimError, ValueError):
    """Invalid scenario, world or model configuration."""


class NumericFaultError(CrossingSimError, ArithmeticError):
    def __init__(self, step: int, message: str = "non-finite agent state"):
        super().__init__(f"{message} at step {step}")
        self.step = step


class UnboundedFreeSpeedError(CrossingSimError, ValueError):
    pass
