"""Python access to the bhkle core library."""

from ._bhkle import (
    ConfigError,
    DipoleGeometry,
    Error,
    MaterialModel,
    MonotoneCurve,
    PermeameterTable,
    build_model,
    default_config,
    fit_monotone_spline,
    gap_field,
    minimize_swarm,
    model_from_json,
    normalize_config,
    spectrum,
    synth_ensemble,
)

__all__ = [
    "ConfigError",
    "DipoleGeometry",
    "Error",
    "MaterialModel",
    "MonotoneCurve",
    "PermeameterTable",
    "build_model",
    "default_config",
    "fit_monotone_spline",
    "gap_field",
    "minimize_swarm",
    "model_from_json",
    "normalize_config",
    "spectrum",
    "synth_ensemble",
]
