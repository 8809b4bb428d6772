"""Stable states of endofunction networks.

Machines are endofunctions f on R^n; feeding input g means solving
h = g + f(h).  The package computes these stable states by iteration or
by layering acyclic dependency graphs, solves the continuous-time analog
(nonlinear Volterra equations of the second kind), trains finite and
infinite-depth kernel machines built on growing filtrations, and searches
over hypergraph architectures with group-norm pruning.  Hot numeric
kernels run through numba when available (see ``endokit.backend``).
"""

from .backend import BACKEND
from .errors import (
    BadMagic,
    CyclicDependency,
    DimMismatch,
    EndokitError,
    NonConvergence,
    NonFinite,
    NotOnTape,
    ShapeMismatch,
)
from .machines import (
    INFINITE_DEPTH,
    DependencyGraph,
    Layering,
    Machine,
    StableState,
    build_dependency_graph,
    check_independence,
    compute_layering,
    coordinate_machine,
    gaussian_probes,
    independence_probes,
    machine_depth,
    stable_state_for,
    stable_state_layered,
    stable_state_picard,
    stable_state_residual,
    total_machine,
)
from .volterra import (
    SeparableKernel,
    TimeGrid,
    VolterraKernel,
    VolterraSolution,
    solve_picard,
    solve_separable,
    subdivision_count,
)
from .hypergraphs import (
    Hypergraph,
    HypergraphRepresentation,
    maximal_connectivity,
)
from .kernel_finite import Filtration, KernelMachineParams, TrainingObjective
from .kernel_infinite import (
    ContinuousFiltration,
    FourierCoefficients,
    InfiniteMachineParams,
    filtration_commutation_check,
    stable_state_continuous,
    train_infinite,
)
from .experiments import ExperimentConfig, default_options, run

__version__ = "0.1.0"
