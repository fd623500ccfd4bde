"""Numerical laboratory for correlated Jordan and Cartan spectra of free-group
representations: enumeration, spectral projections, limit cones, critical
vectors, hypertubes, integral asymptotics and box-counting experiments."""

__version__ = "0.1.0"
