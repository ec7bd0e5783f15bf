"""covhedge: pricing and semi-static variance-optimal hedging of multi-asset
covariance-sensitive derivatives under affine stochastic covariance models.

Subpackages and modules
-----------------------
matcalc     dense symmetric/PSD matrix utilities (vec/mat, expm, pinv, PSD roots)
models      parameter containers, admissibility checks, covariance first moments
transforms  conditional exponential-affine transforms (phi, Psi) and basis claims
simulate    seeded Monte Carlo path generation with common-random-number replay
payoffs     Laplace payoff kernels, damping strips, quadrature contours
gbm         bivariate lognormal benchmark analytics (Genz CDF, quadrant prices)
hedging     Fourier pricing, dynamic hedge ratios, covariance-swap systems
static_opt  outer quadratic problem, greedy selection, instrument families
cli         experiment harness and the `covhedge` command line tool
"""

__version__ = "0.1.0"

from . import matcalc  # noqa: F401
