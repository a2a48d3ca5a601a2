"""Simulation toolkit for Lambda atoms in a periodic coupled-cavity array."""

__version__ = "0.1.0"

from .errors import (AccuracyError, ConfigError, LabFrameError, PreconditionError, RegimeWarning,
                     SelectivityError, SingularParameterError)
from .lattice import Dispersion, LatticeSpec, SiteIndex, fourier_matrix, hopping_matrix, momentum_modes
from .hilbert import AtomLevel, Basis, PhotonRep, SectorSpec, StateVector, enumerate_basis
from .hamiltonian import (EffectiveCoefficients, SiteParams, TimeDependentOperator, build_effective_general,
                          build_effective_pair, build_full_interaction, effective_coefficients,
                          full_interaction_operator, make_params, validate_regime)
from .dynamics import Method, PropagatorConfig, Trajectory, compare_models, fit_exchange_rate, propagate
from .protocols import (estimate_decoherence, plan_entanglement, plan_parallel, plan_state_transfer)

__all__ = [name for name in dir() if not name.startswith("_")]
