"""
sectorlab: a P1 finite element laboratory for Dirichlet boundary control
on polygonal sector domains.

The package solves the L2-regularized boundary control problem

    min 1/2 || S u - y_d ||^2_{L2(Omega)} + nu/2 || u ||^2_{L2(Gamma)},
    a <= u <= b on Gamma,

where S is the (discrete very weak) harmonic extension of boundary data
into a sector-shaped polygon, and measures experimental orders of
convergence of the control against manufactured exact solutions on two
mesh families: structured red-refined meshes and their randomly
perturbed quasi-uniform counterparts.
"""

__version__ = "0.1.0"

from . import cli, control, fem, manufactured, mesh, study
from .control import (ControlProblem, solve_constrained_pdas,
                      solve_unconstrained, verify_discrete_vi)
from .manufactured import ManufacturedProblem, interpolate_control
from .mesh import (build_family, build_sector_domain, check_h2_irregular,
                   load_mesh, save_mesh)
from .study import (RateQuery, StudyConfig, corner_flattening_report,
                    emit_report, run_study, theoretical_rate)
