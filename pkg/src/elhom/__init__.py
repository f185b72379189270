"""elhom: cell-problem homogenization of nonconvex elastic densities and
diagnostics for the interplay of homogenization and linearization."""

__version__ = "0.1.0"
