"""Growth-fragmentation semigroups: simulation, densities and spectra."""

__version__ = "0.1.0"
