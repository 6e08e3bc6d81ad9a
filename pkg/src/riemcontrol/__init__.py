"""Optimal control on Riemannian manifolds: geometry, orientor checks and a direct solver."""

from .control import (Ball, Box, ControlSignal, ControlSystem, EndpointSet, FeasibilityTolerances,
                      FiniteSet, GrowthData, Trajectory, check_feasible, estimate_lipschitz,
                      evaluate_cost, integrate, verify_growth_bound)
from .geometry import (ChristoffelTable, GeodesicSegment, ManifoldPoint, TangentVector, christoffel,
                       distance, exp_map, geodesic, log_map, metric_inner, parallel_transport,
                       tangent_norm)
from .manifolds import EuclideanSpace, HyperbolicHalfSpace3, Sphere2
from .orientor import (ConvexityVerdict, OrientorSample, check_cesari_local, check_convex,
                       sample_orientor, transported_orientor)
from .problems import build_h3_example, build_nonconvex_synthetic, build_s2_example, make_problem
from .solver import (SolveConfig, SolveResult, analytic_optimum, refine, solve,
                     solve_with_refinement)

__version__ = "0.1.0"
