"""Samplers and optimizers over transformed programs."""
from minippl.inference.hmc import (
    AdaptationError,
    ChainStats,
    DualAveragingState,
    InitializationError,
    NutsConfig,
    TreeSummary,
    build_tree,
    dual_averaging_update,
    effective_sample_size,
    find_reasonable_step_size,
    initial_point,
    leapfrog,
    nuts_sample,
    nuts_transition,
)
from minippl.inference.potential import LatentSpec, Potential
