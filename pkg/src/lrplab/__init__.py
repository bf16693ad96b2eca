"""Simulation and verification lab for random walk on long-range
percolation clusters of Z^d: exact environment sampling, heat kernels and
spectral-dimension fits, discrete potential theory, and capacitor-tiling
verification suites."""

__version__ = "0.1.0"

from .graph import (
    DisplacementClass,
    Environment,
    Graph,
    LrpParams,
    deserialize_environment,
    displacement_class,
    displacement_classes,
    edge_probability,
    expected_degree,
    nearest_neighbour_lattice,
    sample_environment,
    serialize_environment,
)
from .components import (
    BoxComponent,
    ComponentLabeling,
    find_cut_points,
    label_components,
    largest_component,
    largest_component_volume_scan,
    window_convergence_diagnostics,
)
from .walk import (
    AnnealedCurve,
    HeatKernelSeries,
    SpectralFit,
    annealed_curve,
    displacement_return_bound,
    fit_spectral_dimension,
    heat_kernel_exact,
    heat_kernel_mc,
)
from .potential import (
    Capacitor,
    CutoffSpec,
    PotentialSolution,
    dirichlet_energy,
    effective_resistance,
    energy_breakdown,
    exact_energy_covariance,
    expected_cutoff_energy,
    nash_williams_bound,
    solve_capacitor,
    zd_tiling_capacity_sum,
)
from .capacitors import (
    CapacitorDecomposition,
    RegimeParams,
    build_decomposition,
    capacity_return_inequality,
    evaluate_tiling_bounds,
    graph_moment_scan,
    top_mass_fraction,
)
