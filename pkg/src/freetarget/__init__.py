"""Free-target optimal stopping: obstacle-problem targets, potential flows,
Stefan solutions and particle simulations on uniform grids."""

__version__ = "0.1.0"
