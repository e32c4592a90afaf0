"""Fractional Schrodinger operators on discrete manifolds.

Builds mass-weighted meshes, takes spectral fractional powers of their
Laplace operators, perturbs them by bounded nonnegative potentials, and
turns the quantitative relations between internal spectral data,
resolvents, semigroups and source-to-solution operators into checkable
numerics, including regularized recovery of the potential from
source-to-solution data.
"""

__version__ = "0.1.0"

from .domain import (DiscreteManifold, RegionConfig, build_graph, build_interval,
                     build_rect, inner, validate_regions)
from .spectral import (Potential, SchrodingerOperator, SpectralDecomposition,
                       coercivity_check, eig_sym, frac_power)
from .resolvent import Resolvent, Semigroup, laplace_check, resolvent_norm_check, semigroup
from .s2s import (density_rank_test, difference_decomposition,
                  orthogonality_identity_check, s2s_matrix, spectral_distance,
                  stability_bound_check)
from .specdata import (InternalSpectralData, align_gauges, compare, extract,
                       recover_rates, semigroup_samples)
from .inverse import (InverseProblem, identifiability, misfit, gradient,
                      reconstruct)

__all__ = [
    "__version__",
    "DiscreteManifold", "RegionConfig", "build_graph", "build_interval",
    "build_rect", "inner", "validate_regions",
    "Potential", "SchrodingerOperator", "SpectralDecomposition",
    "coercivity_check", "eig_sym", "frac_power",
    "Resolvent", "Semigroup", "laplace_check", "resolvent_norm_check", "semigroup",
    "density_rank_test", "difference_decomposition",
    "orthogonality_identity_check", "s2s_matrix", "spectral_distance",
    "stability_bound_check",
    "InternalSpectralData", "align_gauges", "compare", "extract",
    "recover_rates", "semigroup_samples",
    "InverseProblem", "identifiability", "misfit", "gradient", "reconstruct",
]
