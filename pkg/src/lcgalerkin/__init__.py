"""Stochastic Galerkin solver for compressible active nematic flow in a box.

Subpackages and modules:

* ``tensor``: Q-tensor algebra and the pointwise hot kernels,
* ``spectral``: cosine/sine Galerkin bases, transforms, exact parity changes,
* ``noise``: finite-dimensional Wiener forcing and its coefficient,
* ``solver``: the time stepper and initial data,
* ``monitors``: energy ledger and residual checks,
* ``checkpoint``: binary state files,
* ``experiments``: configuration, ensembles, sweeps, reports and the CLI.
"""
from ._backend import active_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "__version__"]
