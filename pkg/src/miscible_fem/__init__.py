"""Galerkin finite elements for incompressible miscible displacement in porous media.

Submodules: :mod:`mesh`, :mod:`fe`, :mod:`sparse`, :mod:`dispersion`,
:mod:`assembly`, :mod:`timestep`, :mod:`manufactured` and :mod:`studies`.
"""
from .assembly import (assemble_load, assemble_mass, assemble_stiffness, l2_project,
                       ritz_project)
from .dispersion import (DispersionParams, SymMatrix2, bear_scheidegger, example51_coefficient,
                         lipschitz_probe, mixed_derivative_probe)
from .fe import FeFunction, FeSpace, build_space, interpolate
from .manufactured import error_norm, exact52, exact_velocity52, forcing52
from .mesh import Mesh, generate_disk_mesh, generate_square_mesh, mesh_stats
from .sparse import SparseMatrix, solve_general, solve_spd
from .studies import (StudyConfig, example51_problem, example52_problem, projection_lab, rate,
                      run_convergence, tensor_probe)
from .timestep import (CoupledProblem, LinearParabolicProblem, backward_euler_solve,
                       run_coupled)

__version__ = "0.1.0"

__all__ = [
    "CoupledProblem", "DispersionParams", "FeFunction", "FeSpace", "LinearParabolicProblem",
    "Mesh", "SparseMatrix", "StudyConfig", "SymMatrix2", "assemble_load", "assemble_mass",
    "assemble_stiffness", "backward_euler_solve", "bear_scheidegger", "build_space",
    "error_norm", "exact52", "exact_velocity52", "example51_coefficient", "example51_problem",
    "example52_problem", "forcing52", "generate_disk_mesh", "generate_square_mesh",
    "interpolate", "l2_project", "lipschitz_probe", "mesh_stats", "mixed_derivative_probe",
    "projection_lab", "rate", "ritz_project", "run_convergence", "run_coupled",
    "solve_general", "solve_spd", "tensor_probe",
]
