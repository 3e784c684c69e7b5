"""Matrix-free stencil finite elements on hierarchically refined simplicial grids."""

__version__ = "0.1.0"
