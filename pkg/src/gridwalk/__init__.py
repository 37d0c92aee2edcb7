"""Simulation of general diffusions on finite metric graphs.

The pipeline: describe the graph and the diffusion's scales, speeds, bias
weights and stickiness; build a subdivision (uniform or thinness-adapted);
compute exact cell-exit probabilities and conditional mean exit times; sample
the resulting random walk and analyze path ensembles.
"""

from .analysis import (
    ConvergenceReport,
    EnsembleStats,
    kde,
    marginal_distance,
    run_ensemble,
    self_convergence,
)
from .diffusion import (
    DiffusionSpec,
    ScaleFn,
    SpeedMeasure,
    VertexCondition,
    check_speed_lower_bound,
    lebesgue_speed,
    power_boundary_speed,
    power_shifted_speed,
    reoriented,
    speed_mass,
    table_speed,
)
from .graph import Edge, GraphPoint, MetricGraph, build_graph
from .kernel import (
    CellKernel,
    GreenKernelEval,
    KernelTable,
    build_kernel_table,
    check_time_ratio_bound,
    dirichlet_solve,
    expected_occupation,
    interior_conditional_time,
    interior_exit_prob,
    vertex_asymptotic_kernel,
    vertex_conditional_time,
    vertex_exit_prob,
)
from .sampler import (
    InitialDistribution,
    Path,
    initial_distribution,
    run_walks,
    sample_path,
    value_at,
)
from .scenario import Scenario, parse_scenario, render_scenario
from .subdivision import (
    Cell,
    InteriorCell,
    Subdivision,
    VertexCell,
    adapted_subdivision,
    cell_thinness,
    uniform_subdivision,
)

__version__ = "0.1.0"
