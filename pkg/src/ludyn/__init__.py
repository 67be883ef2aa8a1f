"""Rigid-body dynamics of kinematic trees as one permuted sparse linear system."""

from .assembly import MeasurementSpec, measurement, two_feet_spec
from .classic import aba, rnea
from .estimate import SolverPlan, Wellposedness, check_wellposed, execute, plan
from .model import KinematicTree, kinematics, load_model, parse_model, random_tree, serial_chain

__all__ = [
    "KinematicTree", "MeasurementSpec", "SolverPlan", "Wellposedness", "aba", "check_wellposed",
    "execute", "kinematics", "load_model", "measurement", "parse_model", "plan", "random_tree",
    "rnea", "serial_chain", "two_feet_spec",
]
