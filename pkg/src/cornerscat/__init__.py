"""Corner scattering toolkit: vanishing orders at impedance corners and
Helmholtz scattering by impedance polyhedra and bi-periodic gratings."""

__version__ = "0.1.0"
