"""clickremoval: interactive, training-free object removal driven by clicks."""

from .attention_control import (GuidanceSchedule, LogitModulation, StagePlan,
                                build_stage_plan, modulation_for, redirect_logits)
from .guidance_pipeline import (RemovalRequest, RemovalResult, blend,
                                progressive_refine, remove_object)
from .semantic_map import (ClickSet, PropagationConfig, RemovalMaps,
                           SemanticDistanceMap, TransitionMatrix,
                           aggregate_attention, background_similarity,
                           combine_clicks, flood_fill_object, propagate,
                           resize_maps)

__version__ = "0.1.0"

__all__ = [
    "ClickSet", "PropagationConfig", "RemovalMaps", "SemanticDistanceMap",
    "TransitionMatrix", "aggregate_attention", "background_similarity",
    "combine_clicks", "flood_fill_object", "propagate", "resize_maps",
    "GuidanceSchedule", "LogitModulation", "StagePlan", "build_stage_plan",
    "modulation_for", "redirect_logits",
    "RemovalRequest", "RemovalResult", "blend", "progressive_refine",
    "remove_object",
]
