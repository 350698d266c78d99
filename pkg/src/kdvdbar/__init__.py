"""KdV soliton-region reconstruction by dbar steepest descent.

Modules
-------
scattering   bound states, norming constants and reflection coefficient
phase        phase, cutoff and the non-analytic extension of ``r``
model_rhp    poles-only model problem (Cauchy-matrix systems)
dbar         the dbar integral equation and the error term ``E(x, t)``
kdv_direct   ETDRK4 pseudo-spectral reference integrator
harness      experiment configuration, runs, decay fits and reports
"""
from .errors import KdvDbarError

__version__ = "0.1.0"

__all__ = ["KdvDbarError", "__version__"]
