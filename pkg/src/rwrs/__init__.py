"""Random walks in random scenery: simulation, intersection local times and limit-theorem checks."""

__version__ = "0.1.0"
