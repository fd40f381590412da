"""Ordinal confirmatory factor models under pluggable identification
constraints, with closed-form moves between constraint systems, latent
scoring, and a Monte Carlo study harness."""

from .model import (
    MINIMAL_REGIMES,
    REGIME_NAMES,
    ConstraintError,
    ConstraintSet,
    FixedMask,
    ModelSpec,
    ParameterSet,
    SpecError,
    build_model_spec,
    check_parameter_set,
    fixed_mask_from,
    free_parameter_count,
    make_constraints,
    max_constraint_residual,
    mixed_category_thresholds,
    project_onto_constraints,
)
from .transform import (
    TransformSet,
    apply_transform,
    between_regimes,
    compose,
    inverse,
    roundtrip_check,
    to_traditional,
    trad_to_regime,
)
from .likelihood import (
    QuadratureGrid,
    ResponseMatrix,
    gh_grid,
    marginal_loglik,
    rect_grid,
    shift_scale_grid,
)
from .identify import IdentificationReport, verify_identification
from .estimate import (
    FitError,
    FitResult,
    common_scale_loglik,
    default_grid,
    fit_mml,
    fit_statistics,
    standardize,
    starting_values,
    sumscore_lr_test,
)
from .score import (
    MLScore,
    SweepRow,
    map_score,
    ml_score,
    observed_average,
    pattern_sweep,
    rasch_reference_params,
)
from .simulate import (
    PopulationCondition,
    StudySummary,
    generate_dataset,
    make_population,
    reduced_study_conditions,
    run_study,
)
from .dataio import (
    DataError,
    load_params,
    load_responses,
    parse_model_spec,
    save_params,
)

__all__ = [
    "MINIMAL_REGIMES",
    "REGIME_NAMES",
    "ConstraintError",
    "ConstraintSet",
    "DataError",
    "FitError",
    "FitResult",
    "FixedMask",
    "IdentificationReport",
    "MLScore",
    "ModelSpec",
    "ParameterSet",
    "PopulationCondition",
    "QuadratureGrid",
    "ResponseMatrix",
    "SpecError",
    "StudySummary",
    "SweepRow",
    "TransformSet",
    "apply_transform",
    "between_regimes",
    "build_model_spec",
    "check_parameter_set",
    "common_scale_loglik",
    "compose",
    "default_grid",
    "fit_mml",
    "fit_statistics",
    "fixed_mask_from",
    "free_parameter_count",
    "generate_dataset",
    "gh_grid",
    "inverse",
    "load_params",
    "load_responses",
    "make_constraints",
    "make_population",
    "map_score",
    "marginal_loglik",
    "max_constraint_residual",
    "mixed_category_thresholds",
    "ml_score",
    "observed_average",
    "parse_model_spec",
    "pattern_sweep",
    "project_onto_constraints",
    "rasch_reference_params",
    "rect_grid",
    "reduced_study_conditions",
    "roundtrip_check",
    "run_study",
    "save_params",
    "shift_scale_grid",
    "standardize",
    "starting_values",
    "sumscore_lr_test",
    "to_traditional",
    "trad_to_regime",
    "verify_identification",
]
