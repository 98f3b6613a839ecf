"""conekit: regularized cone metrics on polydiscs and on the Riemann sphere.

Numerical laboratory for the epsilon-regularization of Kahler metrics with
cone singularities along a divisor, together with curvature audits, a
two-chart Monge-Ampere solver on P^1, orbifold tensor counts and a
cut-off/Bochner workbench.
"""

__version__ = "0.1.0"
