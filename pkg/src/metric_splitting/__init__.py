"""Variable-metric splitting algorithms built on compositions of averaged operators."""

from .driver import (IterationTrace, OperatorSchedule, StopRule, fejer_monitor, iterate,
                     summability_monitor)
from .exceptions import (AdjointError, DimensionError, MetricError, NumericalError, OracleError,
                         ParameterWindowError, ScheduleValidationError, SplittingError,
                         UnknownProblemError, UnsupportedMetricError)
from .fb import (FBParams, FBProblem, fb_phi, fb_residuals, solve_fb, solve_fb_extended,
                 validate_fb_params)
from .metric import Metric, MetricSequence, loewner_geq, validate_sequence
from .operators import (AveragedMap, CocoerciveOp, LinearMap, MonotoneOp, StronglyMonotoneOp,
                        check_averaged, check_cocoercive, compose, compose_constants,
                        forward_step, resolvent_step)
from .pd import (CompositeProblem, DualBlock, PDParams, ProductSpace, compute_delta,
                 compute_zeta, pd_residuals, solve_pd, validate_pd_params)
from .problems import get_problem

__version__ = "0.1.0"
