from .field import (CouplingMatrix, LocalSampleSet, Partition,
                    PositivityGuard, assemble, coupling_matrix, stitch)
from .forward import KLForwardModel
from .gp import GPHyper, GPModel, active_fit, fit_hyper
from .kl import CovarianceSpec, FieldSample, KLBasis, build_basis
from .mesh import (BoundarySpec, DiffusionSolver, Dirichlet, Grid2D, Neumann,
                   Rectangle, Segment, SourceField, assemble_and_solve)

__all__ = [
    'Grid2D', 'Rectangle', 'Segment', 'Dirichlet', 'Neumann', 'BoundarySpec',
    'SourceField', 'DiffusionSolver', 'assemble_and_solve', 'CovarianceSpec',
    'KLBasis', 'FieldSample', 'build_basis', 'Partition', 'LocalSampleSet',
    'CouplingMatrix', 'PositivityGuard', 'coupling_matrix', 'stitch',
    'assemble', 'GPHyper', 'GPModel', 'fit_hyper', 'active_fit',
    'KLForwardModel'
]
