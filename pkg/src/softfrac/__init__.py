"""Mixed displacement-pressure-phase-field FEM for finite-strain fracture
of nearly incompressible hyperelastic materials."""

from .constitutive import MaterialSpec, Model

__all__ = ["MaterialSpec", "Model"]
__version__ = "0.1.0"
