"""Numerics for the NLS with a focusing and a defocusing mass-critical power.

    i u_t + Lap u = |u|^{4/d} u - |u|^{p-1} u,   x in R^d, d = 1, 2, 3.

Submodules: ``core`` (parameters, grids, fields, quadrature), ``functionals``,
``groundstate``, ``evolution``, ``diagnostics``, ``config``, ``verify`` and ``cli``.
"""

__version__ = "0.1.0"
