"""Hermite-spectral toolkit for a fourth-order stochastic drift-diffusion system.

Subpackages cover the orthonormal Hermite basis and weighted coefficient
norms, exact banded operator matrices, numerical verification of the
fourth-order energy inequality with sharp finite-truncation constants, a
deterministic semigroup solver, and a reproducible Monte-Carlo simulator
whose ensemble mean reproduces the deterministic solution at scheme level.
"""

from .hermite import (
    QuadratureRule,
    SobolevWeights,
    basis_vector,
    gauss_hermite_rule,
    hermite_eval,
    inner_p,
    norm_p,
    project,
    shift_down,
    sobolev_weights,
)
from .monotonicity import (
    ABCSequences,
    MonotonicityReport,
    abc_form,
    abc_sequences,
    bilap_form,
    estimate_constant,
    f_functions,
    g_at_zero,
    la_form,
)
from .operators import (
    A_matrices,
    BandMatrix,
    DriftSolver,
    L_matrix,
    OperatorParams,
    compose,
    d1_matrix,
    d2_matrix,
    d3_matrix,
    d4_matrix,
)
from .pde import (
    PdeRun,
    matrix_exponential,
    semigroup_energy_check,
    solve_pde,
)
from .spde import (
    NoiseDriver,
    PathEnsemble,
    energy_report,
    gaussian_increments,
    mc_mean,
    simulate,
    spde_step,
)

__version__ = "0.1.0"
