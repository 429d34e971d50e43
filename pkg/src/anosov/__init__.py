"""Cartan projections, limit cones, growth indicators and orbit counts for
Anosov subgroups of products of SL(n, R)."""

from .boundary import (AtomicMeasure, Flag, busemann, conformality_residual, flag_distance,
                       flag_pair, iwasawa_cocycle, ps_atoms)
from .cone import (LimitConeEstimate, adapted_norm, estimate_growth_indicator,
                   estimate_limit_cone, maximal_growth_direction, tangent_form)
from .errors import AnosovError
from .experiments import ExperimentConfig, ExperimentResult, count_in_cone, run, verify_suite
from .fitting import CountRecord, FitResult, count_series, fit_exponential_polynomial
from .matgroup import (GroupDescriptor, GroupElement, cartan_projection, iwasawa_decompose,
                       jordan_projection, kak_decompose, opposition_involution)
from .symmetric import (SymmetricPair, compact_pair, gcartan_decompose, h_cartan_projection,
                        orthogonal_pair, swap_pair)
from .words import GeneratorSystem, OrbitTable, dedup_cosets, enumerate_ball, schottky_check

__version__ = "0.1.0"

__all__ = [
    "AnosovError", "AtomicMeasure", "CountRecord", "ExperimentConfig", "ExperimentResult",
    "FitResult", "Flag", "GeneratorSystem", "GroupDescriptor", "GroupElement",
    "LimitConeEstimate", "OrbitTable", "SymmetricPair", "adapted_norm", "busemann",
    "cartan_projection", "compact_pair", "conformality_residual", "count_in_cone",
    "count_series", "dedup_cosets", "enumerate_ball", "estimate_growth_indicator",
    "estimate_limit_cone", "fit_exponential_polynomial", "flag_distance", "flag_pair",
    "gcartan_decompose", "h_cartan_projection", "iwasawa_cocycle", "iwasawa_decompose",
    "jordan_projection", "kak_decompose", "maximal_growth_direction", "opposition_involution",
    "orthogonal_pair", "ps_atoms", "run", "schottky_check", "swap_pair", "tangent_form",
    "verify_suite",
]
