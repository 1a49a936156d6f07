"""Hybrid shrinking-projection solvers for common solutions of equilibrium,
variational-inequality and fixed-point problems on R^n."""

from .geometry import (ConfigurationError, SpaceSpec, hilbert, lp, norm, dual_norm,
                       duality_map, duality_map_inverse, lyapunov_phi, v_functional)
from .sets import (Affine, Ball, Box, ConvexSet, CutAccumulator, Halfspace, InfeasibleError,
                   Intersection, ProjectionError, WholeSpace, gen_project, metric_project)
from .operators import (Averaged, Bifunction, EuclideanProjection, GeneralizedProjection,
                        Identity, IsmOperator, MonotoneMap, ResolventOf, Unchecked)

__version__ = "0.1.0"
