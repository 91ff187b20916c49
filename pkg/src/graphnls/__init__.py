"""Nonlinear Schroedinger standing waves on star graphs with a delta vertex
coupling and an attractive inverse-power potential: spectrum, ground states,
the scaling instability criterion and conservative time evolution."""

__version__ = "0.1.0"

from .grid import GraphFunction, GraphGrid, make_grid
from .potentials import Potential
from .spectral import Hamiltonian, assemble, ground_eigenpair
from .functionals import (ModelParams, action, charge, energy, gamma_star, nehari,
                          nehari_projection, orbital_distance, pohozaev, scale)
from .groundstate import (find_omega_star, instability_criterion, rescaled_diagnostics,
                          solve_ground_state)
from .dynamics import (EvolutionConfig, apply_cutoff, evolve, instability_experiment,
                       virial_check)

__all__ = [
    "GraphFunction", "GraphGrid", "make_grid", "Potential", "Hamiltonian", "assemble",
    "ground_eigenpair", "ModelParams", "action", "charge", "energy", "gamma_star",
    "nehari", "nehari_projection", "orbital_distance", "pohozaev", "scale",
    "find_omega_star", "instability_criterion", "rescaled_diagnostics",
    "solve_ground_state", "EvolutionConfig", "apply_cutoff", "evolve",
    "instability_experiment", "virial_check",
]
