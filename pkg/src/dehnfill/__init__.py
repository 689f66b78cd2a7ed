"""Numerical toolkit for Einstein metrics on Dehn-filled hyperbolic ends.

Everything lives in the symmetry-reduced (torus-invariant, cohomogeneity
one) setting: closed-form model metrics, the reduced Einstein residual and
its linearization, weighted norms on the filled end, the glued
almost-Einstein profile, and Newton-type solvers that perturb it to a
discrete Einstein metric.
"""

from .geometry import (ArclengthMap, BlackHoleProfile, BlockMetricProfile,
                       DiagonalMetricProfile, FlatTorusData, RadialGrid,
                       TrivialVariation, apply_trivial_variation,
                       arclength_map, black_hole_profile, boundary_torus_data,
                       coordinate_curvature_oracle, cusp_profile,
                       cusp_volume_ratio, metric_gap, r_plus,
                       radius_for_meridian, sectional_curvatures,
                       theta_period, torus_diameter_bound, unit_ball_volume,
                       v_profile)
from .operators import (EinsteinResidual, GaugeField, InvariantTensor,
                        bh_kernel_variation, block_variation_of_tensor,
                        cusp_ode_residual, div_star_radial,
                        divergence_h1i_residual, einstein_residual,
                        explicit_kernel_element, gauge_fix_xi,
                        linearized_residual, sqrtdet_sinh_check,
                        trace_ode_residual)
from .asymptotics import (EulerODE, IndicialRoots, ResonanceError,
                          cusp_block_exponents, cusp_kernel_classification,
                          euler_particular_coefficient, indicial_roots,
                          solve_euler_bvp, ugly_estimate_harness)
from .gluing import (CutoffSpec, GluedEnd, NormReport, WeightFunction,
                     cutoff, double_star_decompose, double_star_norm, glue,
                     residual_decay_sweep, rho_cutoff, unit_frame_components,
                     weight, weighted_norms)
from .solver import (NewtonReport, SolverConfig, assemble_linearization,
                     kernel_spectrum, newton_solve, rayleigh_quotient,
                     trivial_direction, verify_einstein)

__version__ = "0.1.0"
