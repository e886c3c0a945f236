"""Machine-learned volume-of-fluid advection on 3D Cartesian grids."""

from . import dataset, experiments, geometry, network, solver, stencil

__all__ = ["dataset", "experiments", "geometry", "network", "solver", "stencil"]
__version__ = "0.1.0"
