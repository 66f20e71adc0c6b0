"""User-space CAKE queue management with a small network simulator around it."""

from .scheduler import CakeConfig, CakeQdisc, FifoQdisc

__version__ = "0.1.0"
__all__ = ["CakeConfig", "CakeQdisc", "FifoQdisc", "__version__"]
