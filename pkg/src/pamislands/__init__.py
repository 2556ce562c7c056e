"""Lattice toolkit for the parabolic Anderson model with double-exponential tails.

Optimal potential shapes, intermittency island construction, Cauchy problem
solvers and numerical checks of the geometric picture of intermittency.
"""

__version__ = "0.1.0"
