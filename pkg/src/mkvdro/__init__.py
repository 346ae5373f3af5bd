"""Particle engine for the Wasserstein sensitivity of McKean-Vlasov terminal criteria."""

from .model import (
    Additive, Criterion, DomainError, FunctionFamily, InitialLaw, ModelSpec,
    criterion_lgrad, criterion_value, eval_coefficients, sample_initial)
from .simulate import (
    FrozenFlow, NoiseGrid, PathBundle, SimulationError, extract_frozen_flow,
    simulate_decoupled, simulate_system)
from .tangent import (
    decomposition_check, dense_jacobian, linearize, pull_adjoint, push_tangent,
    tangent_frozen)
from .sensitivity import (
    AdjointField, FlatCriterionError, SensitivityReport, estimate_zeta, noise_set,
    sensitivity_norm, terminal_gradient, worst_case_direction)
from .dro import (
    DroCurve, OuOracle, ou_oracle, pga_maximize, phi_hat, push_curve, validate_curve)

__version__ = "0.1.0"
