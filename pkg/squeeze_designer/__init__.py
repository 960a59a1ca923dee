"""squeeze-designer: simulation and automated design of squeezer-based photonic state sources."""

__version__ = '0.1.0'
