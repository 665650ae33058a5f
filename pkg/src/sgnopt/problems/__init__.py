"""Benchmark problem instances exposing the full equilibrium-problem contract."""
from .barrier import log_barrier_terms
from .car import CarControlProblem, CarDynamics, build_car
from .cloth import ClothControlProblem, build_cloth, make_cloth_model
from .spring_bar import SpringBarProblem, build_spring_bar
from .toys import (
    CubicRootToy,
    LinearMapProblem,
    QuadraticConstraintToy,
    RandomLeastSquaresInstance,
)

__all__ = [
    "CarControlProblem",
    "CarDynamics",
    "ClothControlProblem",
    "CubicRootToy",
    "LinearMapProblem",
    "QuadraticConstraintToy",
    "RandomLeastSquaresInstance",
    "SpringBarProblem",
    "build_car",
    "build_cloth",
    "build_spring_bar",
    "log_barrier_terms",
    "make_cloth_model",
]
