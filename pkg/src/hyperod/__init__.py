"""Orbit determination for parametric hyperbolic maps.

Estimates initial conditions (and optionally the map parameter) of chaotic
torus maps from noisy observations, and measures how the confidence
ellipsoid shrinks as the observation window grows: exponentially when only
initial conditions are estimated, sub-exponentially once the parameter is
co-estimated.
"""

from .dynamics import (AffineTorusMap, ParametricMap, PhasePoint, StandardMap,
                       map_from_json, wrap_coords, wrap_nearest_delta)
from .ddouble import DoubleDouble
from .tangent import (TangentState, advance_backward, advance_forward, csv_sink,
                      fd_jacobian, initial_state, iter_shells, iter_states, propagate)
from .spectra import (DegenerateFrame, SpectrumResult, backward_spectrum,
                      extended_spectrum, forward_backward_check, lyapunov_indicator,
                      lyapunov_qr, merged_multiplicities)
from .uncertainty import (ConfidenceEllipsoid, DecayPoint, EigenReport,
                          JacobiDidNotConverge, Mode, NotPositiveSemidefinite,
                          RankDeficientMatrix, SymmetricAccumulator,
                          accumulate_orbit, accumulate_shell, covariance_eigen,
                          decay_series, eigen, ellipsoid, jacobi_symmetric,
                          write_decay_csv)
from .estimation import (FitDiverged, FitSolution, GaussianStream,
                         ObservationSeries, SingularNormalMatrix, SolveConfig,
                         SplitMix64, residuals, solve, synthesize, target)
from .analysis import (CaseBBound, FitResult, cat_case_a_limits, cat_case_a_ratio,
                       cat_case_b_bound, cat_iterate_exact, exact_normal_matrix,
                       exact_smallest_eigen_interval, fit_rate)

__version__ = "0.1.0"
