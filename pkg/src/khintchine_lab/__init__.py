"""Desk-scale checks for metric approximation on self-similar fractals.

The package walks both sides of the dictionary between approximation by
rationals and excursions of diagonal flows on the space of unimodular
lattices: sample a fractal, push it through the flow, time the excursions,
and compare against the series criteria on the function side.
"""

__version__ = "0.1.0"

from .constants import (
    AlphaPoint,
    CoverCertificate,
    ResourceLimitError,
    SubspaceQuery,
    alpha_estimate,
    axis_subspace_measure,
    bound_constant,
    cantor_axis_alpha,
    cantor_varpi,
    cover_hyperplane,
    measure_upper_bound,
    varpi_of,
)
from .dani import (
    ApproxFunction,
    EquivalenceReport,
    InvalidPsiError,
    RateFunction,
    SeriesVerdict,
    classify_khintchine_series,
    classify_rate_series,
    equivalence_check,
    psi_from_r,
    r_from_psi,
    t0_of,
)
from .excursion import (
    ExcursionRecord,
    InfeasibleBudgetError,
    NoWindowDataError,
    RateBudget,
    TailReport,
    diagonal_excursions,
    diagonal_heights,
    drift_estimate,
    excursions,
    growth_bound_check,
    rate_budget,
    return_times,
    tail_report,
    walk_heights,
)
from .flows import (
    FlowElement,
    GroupElement,
    assemble_P,
    decompose_P,
    diag_time,
    diagonal_point,
    rho_apply,
    shadowing_identity_residual,
    similarity_to_group,
    walk_matrix,
    walk_products,
    walk_steps,
)
from .ifs import (
    HypothesesReport,
    IfsSystem,
    SimilarityMap,
    cantor_product,
    check_hypotheses,
    coding_point,
    compose,
    load_system,
    sample_fractal,
    sample_words,
    save_system,
)
from .lattices import (
    CompactWindow,
    LatticePoint,
    brute_force_shortest,
    height,
    in_window,
    lattice_point,
    shortest_of_basis,
    shortest_vector,
)
from .scan import (
    BandStat,
    CrossCheckReport,
    HitRecord,
    dani_cross_check,
    parse_point,
    scan_hits,
    survey,
)

__all__ = [
    "__version__",
    "AlphaPoint",
    "ApproxFunction",
    "BandStat",
    "CompactWindow",
    "CoverCertificate",
    "CrossCheckReport",
    "EquivalenceReport",
    "ExcursionRecord",
    "FlowElement",
    "GroupElement",
    "HitRecord",
    "HypothesesReport",
    "IfsSystem",
    "InfeasibleBudgetError",
    "InvalidPsiError",
    "LatticePoint",
    "NoWindowDataError",
    "RateBudget",
    "RateFunction",
    "ResourceLimitError",
    "SeriesVerdict",
    "SimilarityMap",
    "SubspaceQuery",
    "TailReport",
    "alpha_estimate",
    "assemble_P",
    "axis_subspace_measure",
    "bound_constant",
    "brute_force_shortest",
    "cantor_axis_alpha",
    "cantor_product",
    "cantor_varpi",
    "check_hypotheses",
    "classify_khintchine_series",
    "classify_rate_series",
    "coding_point",
    "compose",
    "cover_hyperplane",
    "dani_cross_check",
    "decompose_P",
    "diag_time",
    "diagonal_excursions",
    "diagonal_heights",
    "diagonal_point",
    "drift_estimate",
    "equivalence_check",
    "excursions",
    "growth_bound_check",
    "height",
    "in_window",
    "lattice_point",
    "load_system",
    "measure_upper_bound",
    "parse_point",
    "psi_from_r",
    "r_from_psi",
    "rate_budget",
    "return_times",
    "rho_apply",
    "sample_fractal",
    "sample_words",
    "save_system",
    "scan_hits",
    "shadowing_identity_residual",
    "shortest_of_basis",
    "shortest_vector",
    "similarity_to_group",
    "survey",
    "t0_of",
    "tail_report",
    "varpi_of",
    "walk_heights",
    "walk_matrix",
    "walk_products",
    "walk_steps",
]
