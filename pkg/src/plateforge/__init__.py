"""Modal Berger-plate solver, diagonal-LTI surrogate and evaluation metrics."""

from .plate import FieldSnapshot, ModalBasis, ModeIndex, PlateParams, build_basis
from .solver import ModalState, Trajectory, simulate

__all__ = [
    "FieldSnapshot",
    "ModalBasis",
    "ModeIndex",
    "ModalState",
    "PlateParams",
    "Trajectory",
    "build_basis",
    "simulate",
]
