"""Quasi-stationary and quasi-ergodic distributions of absorbing birth-death chains."""

__version__ = "0.1.0"

from .errors import (NumericalError, PreconditionError, QuasiErgodicError)  # noqa: E402
from .expr import parse_rate, to_source  # noqa: E402
from .logweights import LogWeightVector  # noqa: E402
from .series import SeriesEstimate, Verdict, assess_series  # noqa: E402
from .chain_model import (BirthDeathSpec, BoundaryClass, BoundaryKind,  # noqa: E402
                          BoundarySeries, Convention, RateFunction, boundary_series,
                          classify_boundary, load_spec, potential_coefficients)
from .spectral import (PolynomialTable, SpectralSummary, decay_parameter,  # noqa: E402
                       eigenfunction, eval_polynomials, polynomial_zeros, spectrum)
from .distributions import (DistributionVector, HProcessSpec, h_process,  # noqa: E402
                            monotonicity_certificate, ordering_check, qed, qsd)
from .duality import (DualPair, dual_polynomials, dualize,  # noqa: E402
                      eigentime_identity, summability_check)
from .finite_chain import (FiniteAbsorbingChain, PerronData, conditional_marginal,  # noqa: E402
                           conditional_time_average, eta_limit_check, perron_data,
                           qed_finite)
from .simulator import (ConditionedEstimate, TrajectoryBatch, estimate_qed,  # noqa: E402
                        estimate_qsd, simulate, simulate_h_process)
