"""Chart-local Lorentz-Finsler geometry and a verification harness for the
curvature / concavity / capsule equivalences on Berwald spacetimes."""
from .errors import GeometryError
from .models import SpacetimeModel, eval_L, eval_partial, model_from_json, reverse_model, zoo_model, ZOO_NAMES
from .fundamental import classify, metric_tensor, norm_F
from .connection import berwald_deviation, connection_eval, covariant_derivative
from .geodesics import GeodesicPath, exp_map, integrate_geodesic, parallel_transport, solve_bvp, time_separation
from .curvature import curvature_R, flag_curvature, jacobi_F_second_derivative, jacobi_propagate
from .verify import (
    Budget,
    CapsuleSpec,
    check_capsule,
    check_concavity_pair,
    check_parallel_L_constancy,
    check_variation_concavity,
    verify_theorem_1_1,
)
from .transport_variance import (
    DiscreteMeasure,
    GroundSpace,
    check_sqrt_var_convexity,
    variance,
    w2_distance,
    w2_geodesic,
)

__version__ = "0.1.0"
