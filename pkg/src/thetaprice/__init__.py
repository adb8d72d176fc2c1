"""Semi-closed-form pricing of barrier and American calls under a
time-dependent Ornstein-Uhlenbeck stock model.

The pricing PDE is mapped to the heat equation on a moving domain, the
boundary flux (or exercise boundary) is recovered from a first-kind
Fredholm equation with Tikhonov regularization, and prices are assembled
from Jacobi theta functions.  A Crank-Nicolson solver serves as an
independent check.
"""
from .errors import (BarrierBreached, BlowUp, ConfigError, EmptyPayoffRegion, InstabilityDetected,
                     InvalidNome, InvalidParameter, LatticeMismatch, NoConvergence,
                     NumericalOverflow, OutOfDomain, PricingError, QuadratureFailure,
                     SingularSystem, ValidityWarning)
from .fd import (FDGrid, fd_american_call, fd_barrier_uo_call, fd_surface, fd_vanilla_call,
                 make_grid, solve_american_projected, solve_backward)
from .fredholm import (FredholmSolution, assemble_kernel, build_flux_system, rhs_F,
                       solve_american_boundary, solve_barrier_flux, solve_psi)
from .pricer import (PriceSurface, PricingRequest, Product, american_surface, barrier_surface,
                     do_call_surface, price_american_call, price_barrier_do_call,
                     price_barrier_uo_call, price_vanilla, terminal_condition, vanilla_surface)
from .termstructure import (CoefficientCurve, CurveKind, ExponentialCurve, PiecewiseConstantCurve,
                            SampledCurve, evaluate, integrate)
from .theta import theta3, theta_diff
from .transform import (MovingBoundary, TransformBundle, WProfile, build_bundle, closed_form_w,
                        eval_f, invert_tau, moving_boundary, small_drift_w, solve_riccati)

__version__ = "0.1.0"
