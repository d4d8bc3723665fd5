"""Complex angular momentum analysis of state-to-state integral cross sections.

Rational continuation of sampled S-matrix elements into the complex J and
complex E planes, Regge trajectory tracking, and the decomposition of
integral cross sections into per-pole resonance terms and background.
"""

__version__ = "0.1.0"

from .errors import CamError, ChannelClosedError, NumericalError, ValidationError
from .scatter import (Kinematics, SMatrixTable, TransitionLabel, load_smatrix_table,
                      pws_ics, wavevector_squared)
from .pade import (ComplexPole, PadePolicy, RationalApproximant, build_rational,
                   ce_poles_at_j, conjugate_evaluate, evaluate, extract_poles,
                   filter_spurious, regge_poles_at_energy)
from .tracking import (CETrajectory, ReggeTrajectory, TrackPolicy, classify_type, track,
                       track_ce)
from .mulholland import (DecompositionResult, FanoFeature, attach_s_conj, background_integral,
                         decompose, fano_approx, find_integer_crossings, oscillation_approx,
                         resonance_term)
from .bridge import (JShiftingParams, LinearCEMap, ce_to_regge, fit_linear_ce,
                     j_shifting_params, predict_regge_trajectory, regge_to_ce)
from .synthetic import PoleModelSpec, exact_ics, exact_poles, generate_table, spec_from_json
