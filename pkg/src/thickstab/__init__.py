"""Spectral toolkit for stabilizing diffusive equations from thick supports.

The model throughout is d_t f + F(|D_x|) f = 1_omega h on a periodic box:
`grid` holds the spectral fields and Gaussian probes, `symbols` the
multiplier families F, `thick` the control supports omega with their
thickness certificates, `stabilize` the low-mode feedback loop and its
Lyapunov bookkeeping, `observe` the observability estimates, cube
decompositions, and control synthesis, and `qa` the Bernstein moment
calculus behind the quasi-analyticity arguments. `cli` wires the pieces
into reproducible named experiments.
"""

from .errors import (ConvergenceError, IntegrationError,
                     MomentDivergenceError, NumericalError, ValidationError)
from .grid import (GaussianProbe, Grid, SpectralField, apply_multiplier,
                   apply_semigroup, ball_multiplier, field_from_values,
                   from_coefficients, inner, make_grid, norm, probe_admissible,
                   project_ball, read_field, restricted_norm, sample_probe,
                   semigroup_multiplier, to_coefficients, write_field,
                   zero_field)
from .observe import (classify_cubes, estimate_observability_constant,
                      kovrijkine_empirical, make_probe_set,
                      necessity_probe_scan, negative_limit_experiment,
                      shift_observability_identity_check, synthesize_control,
                      write_cube_csv, write_report_json)
from .qa import (build_sequence, dc_partial_sum, integral_test,
                 log_convexity_report, log_moment, ratio_lower_bound_check,
                 scaling_inequality_check, tk_bound_check, write_moments_csv)
from .stabilize import (FeedbackConfig, StabilizationResult,
                        calibrate_constant, design_feedback, duhamel_residual,
                        estimate_spectral_constant, lyapunov,
                        run_stabilization, step_closed_loop,
                        write_trajectory_csv)
from .symbols import (MultiplierSymbol, alpha_R, constant, custom, fractional,
                      halfheat, inf_F, iterated, loglog, saturating, shifted)
from .thick import (SupportMask, make_ball_complement, make_full,
                    make_periodic_thick, make_random_thick, mask_hash,
                    read_mask, thickness_certificate, write_mask)

__version__ = "0.1.0"
