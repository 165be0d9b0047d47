"""Pseudo-spectral solver and verification harness for incompressible flow
with pressure- and shear-dependent viscosity on a periodic box."""

__version__ = "0.1.0"

from .constitutive import (AssumptionCertificate, ModelSpec, NotCertifiable, SampleSpec, certify_assumptions,
                           power_law_for_gamma0, stress)
from .fields import Grid, ScalarField, TensorField, VectorField
from .pressure import NoConvergence, NotCertified, PressureSolveReport, decompose_pressure, solve_pressure
from .timestepper import InitialData, SimConfig, SimState, delta_sweep, energy_audit, run

__all__ = [
    "AssumptionCertificate", "Grid", "InitialData", "ModelSpec", "NoConvergence", "NotCertifiable", "NotCertified",
    "PressureSolveReport", "SampleSpec", "ScalarField", "SimConfig", "SimState", "TensorField", "VectorField",
    "certify_assumptions", "decompose_pressure", "delta_sweep", "energy_audit", "power_law_for_gamma0", "run",
    "solve_pressure", "stress",
]
