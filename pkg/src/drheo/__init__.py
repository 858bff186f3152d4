"""Pseudo-spectral solver and certificate harness for implicitly constituted
incompressible fluids on the periodic torus."""
from .errors import (CertificateViolation, ConfigurationError, DomainError, DrheoError,
                     InputError, SequencingError, StabilityError)
from .rheology import (RheologyModel, asymptotic_F, eval_F, eval_F_star, fenchel_young_gap,
                       make_model, stress_from_D, sym_tensor, validate_hypotheses)
from .spectral import SpectralVelocity, TorusGrid

__version__ = "0.1.0"
