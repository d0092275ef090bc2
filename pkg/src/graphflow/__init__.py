"""Delayed transport flows on metric graphs: simulation, spectra, certificates."""

from .analysis import (
    ConvergenceReport,
    PositivityCertificate,
    convergence_study,
    empirical_positivity,
    growth_rate,
    positivity_certificate,
)
from .delay import (
    BoundaryAtom,
    BoundaryDelayFunctional,
    EdgeDelayMeasure,
    HistorySegment,
    Kernel,
    MeasureAtom,
    Multiplication,
    Scalar,
    apply_L,
    apply_P,
    small_time_variation,
)
from .graph import MetricGraph, build_graph, loop_graph, spectral_radius_b, two_cycle_graph
from .runfile import Scenario, load_runfile
from .solver import RunReport, SimConfig, SystemState, init_state, mass, run, step
from .spectral import (
    CharacteristicMatrix,
    SpectrumReport,
    boundary_eigvalue_term,
    char_matrix,
    edge_propagator,
    eigen_residual,
    find_roots,
    generator_residual,
    resolvent_apply,
    rightmost_root,
)

__all__ = [
    "BoundaryAtom",
    "BoundaryDelayFunctional",
    "CharacteristicMatrix",
    "ConvergenceReport",
    "EdgeDelayMeasure",
    "HistorySegment",
    "Kernel",
    "MeasureAtom",
    "MetricGraph",
    "Multiplication",
    "PositivityCertificate",
    "RunReport",
    "Scalar",
    "Scenario",
    "SimConfig",
    "SpectrumReport",
    "SystemState",
    "apply_L",
    "apply_P",
    "boundary_eigvalue_term",
    "build_graph",
    "char_matrix",
    "convergence_study",
    "edge_propagator",
    "eigen_residual",
    "empirical_positivity",
    "find_roots",
    "generator_residual",
    "growth_rate",
    "init_state",
    "load_runfile",
    "loop_graph",
    "mass",
    "positivity_certificate",
    "resolvent_apply",
    "rightmost_root",
    "run",
    "small_time_variation",
    "spectral_radius_b",
    "step",
    "two_cycle_graph",
]
