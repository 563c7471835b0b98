"""FE2 homogenization of 2D neo-Hookean solids with a neural-network RVE surrogate."""

__version__ = "0.1.0"
