"""Numerical laboratory for scalar Euclidean fields carried between R^d and S^d.

Modules: ``sphere_harmonics`` (bases, grids, transforms), ``conformal``
(stereographic lifts, near-translations), ``covariance`` (sphere covariances,
reflection checks), ``mollifier``, ``interaction`` (densities), ``sampler``
(Gaussian and weighted ensembles), ``scaling_limit`` and ``cli``.
"""
__version__ = "0.1.0"
