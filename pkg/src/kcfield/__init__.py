"""Monte Carlo checks of moment-condition regularity predictions for Gaussian random fields."""

from .engine import MCConfig, RegularityReport, fit_moment_exponent, predict_t_max, run_verification, sobolev_boundary
from .grid import BoxDomain, Lattice, PointPairSet, covering_number, dyadic_pairs, make_lattice
from .manifold import bump_partition, chartwise_regularity, patch, pullback, stereographic_atlas
from .norms import holder_exponent_estimate, holder_norm, sobolev_norm_p
from .samplers import (FieldSpec, GridField, SphereField, brownian_motion, brownian_sheet, covariance_field,
                       fractional_bm, integrated_bm, sample, sample_sphere, sphere_isotropic)

__version__ = "0.1.0"
